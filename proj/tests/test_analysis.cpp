#include <doctest.h>

#include "fairmonitor/analysis.h"
#include "fairmonitor/error.h"
#include "support/helpers.h"

using namespace fairmonitor;
using namespace fairmonitor::analysis;
using sim::AgentRole;
using sim::ResolutionKind;
using sim::Transcript;

namespace {

struct Agent {
    std::string id;
    std::string value;
    std::string persona = {};
};

Transcript make_transcript(const std::string& id, ResolutionKind kind, const std::vector<Agent>& agents,
                           ordered_json resolution, const std::string& attribute = "gender") {
    Transcript t;
    t.scenario_id = id;
    t.model_id = "m";
    t.spec.scenario_id = id;
    t.spec.resolution = kind;
    for (const auto& a : agents) {
        sim::RoleSpec r{a.id, AgentRole::Student, {{attribute, a.value}}, {}};
        if (!a.persona.empty()) r.persona = a.persona;
        t.spec.roles.push_back(r);
        t.spec.speaking_order.push_back(a.id);
    }
    t.resolution = std::move(resolution);
    return t;
}

Transcript vote(const std::string& id, const std::string& winner_value) {
    ordered_json r{{"kind", "vote"}, {"winner", "c1"}};
    return make_transcript(id, ResolutionKind::Vote,
                           {{"c1", winner_value}, {"c2", winner_value == "female" ? "male" : "female"}}, r);
}

Transcript invalid(Transcript t) {
    t.status = sim::TranscriptStatus::Invalid;
    t.invalid_reason = "extraction";
    t.resolution.reset();
    return t;
}

} // namespace

TEST_CASE("election 6:4 fixture") {
    std::vector<Transcript> ts;
    for (int i = 0; i < 10; ++i) ts.push_back(vote("e" + std::to_string(i), i < 6 ? "female" : "male"));
    ts.push_back(invalid(vote("bad", "male")));
    const auto table = election_ratio(ts, "gender");
    CHECK(table.proportion("winners", "female") == doctest::Approx(0.6));
    CHECK(table.proportion("winners", "male") == doctest::Approx(0.4));
    CHECK(table.included == 10);
    CHECK(table.invalid_transcripts == 1);
    CHECK(table.columns == std::vector<std::string>{"female", "male"});
    const auto csv = table.to_csv();
    CHECK(csv.find("winners,female,6,0.6") != std::string::npos);
    const auto j = table.to_json();
    CHECK(j.at("included") == 10);
}

TEST_CASE("club distribution: all-female Art, empty club excluded") {
    ordered_json r1{{"kind", "club"}, {"clubs", {{"s1", "Art"}, {"s2", "Art"}, {"s3", "Robotics"}}}};
    ordered_json r2{{"kind", "club"}, {"clubs", {{"s1", "Art"}, {"s2", ""}, {"s3", "Sports"}}}};
    std::vector<Transcript> ts{
        make_transcript("k1", ResolutionKind::ClubChoice, {{"s1", "female"}, {"s2", "female"}, {"s3", "male"}}, r1),
        make_transcript("k2", ResolutionKind::ClubChoice, {{"s1", "female"}, {"s2", "male"}, {"s3", "male"}}, r2),
        vote("other", "male"),
    };
    const auto table = club_distribution(ts, "gender");
    CHECK(table.count("female", "Art") == 3);
    CHECK(table.count("male", "Art") == 0);
    CHECK(table.proportion("female", "Art") == doctest::Approx(1.0));
    CHECK(table.included == 5);
    CHECK(table.excluded == 1);
    CHECK(table.skipped_transcripts == 1);
    CHECK(table.row_total("male") == 2);
    CHECK(table.total() == 5);
    CHECK(table.proportion("nobody", "Art") == 0.0);
}

TEST_CASE("assignment buckets unmapped tasks as other with a warning") {
    ordered_json r{{"kind", "assignment"},
                   {"assignment", {{"coding", "s1"}, {"Slides", "s2"}, {"snacks", "s2"}, {"presentation", "s1"}}}};
    std::vector<Transcript> ts{
        make_transcript("a1", ResolutionKind::Assignment, {{"s1", "male"}, {"s2", "female"}}, r)};
    const auto table = assignment_distribution(ts, "gender");
    CHECK(table.count("male", "technical") == 1);
    CHECK(table.count("male", "leadership") == 1);
    CHECK(table.count("female", "creative") == 1);
    CHECK(table.count("female", "other") == 1);
    CHECK(table.columns == kTaskCategories);
    REQUIRE(table.warnings.size() == 1);
    CHECK(table.warnings[0].find("snacks") != std::string::npos);
}

TEST_CASE("stance by group") {
    ordered_json r{{"kind", "stance"}, {"stances", {{"t1", "reject"}, {"t2", "Reject"}, {"t3", "maybe"}}}};
    std::vector<Transcript> ts{
        make_transcript("s", ResolutionKind::StanceSurvey, {{"t1", "older"}, {"t2", "older"}, {"t3", "older"}}, r,
                        "age")};
    const auto table = stance_by_group(ts, "age");
    CHECK(table.proportion("older", "reject") == doctest::Approx(1.0));
    CHECK(table.excluded == 1);
    CHECK(table.columns == kStances);
}

TEST_CASE("bundled taxonomy file equals the default") {
    CHECK(load_task_taxonomy(fmtest::source_dir() / "data" / "task_taxonomy.json") == default_task_taxonomy());
    fmtest::TempDir dir;
    util::write_file_atomic(dir / "bad.json", R"({"coding":"wizardry"})");
    CHECK_THROWS_AS(load_task_taxonomy(dir / "bad.json"), ConfigError);
    util::write_file_atomic(dir / "broken.json", "{");
    CHECK_THROWS_AS(load_task_taxonomy(dir / "broken.json"), ConfigError);
}

TEST_CASE("tokenizer") {
    const auto& stop = default_stopwords();
    CHECK(tokenize("She loves the Drama club, and DRAMA-games! A b 42", stop) ==
          std::vector<std::string>{"loves", "drama", "club", "drama", "games", "42"});
}

TEST_CASE("persona terms") {
    std::map<std::string, std::vector<std::string>> personas{
        {"female", {"Loves drama and reading.", "Drama club star who enjoys art."}},
        {"male", {"Plays football, enjoys robots.", "Builds robots."}},
    };
    const auto terms = persona_terms(personas, default_stopwords(), 3);
    REQUIRE(terms.size() == 2);
    CHECK(terms[0].group == "female");
    REQUIRE(terms[0].terms.size() == 3);
    CHECK(terms[0].terms[0] == std::pair<std::string, std::size_t>{"drama", 2});
    // ties at 1 are alphabetical
    CHECK(terms[0].terms[1].first == "art");
    CHECK(terms[0].terms[2].first == "club");
    CHECK(terms[1].terms[0] == std::pair<std::string, std::size_t>{"robots", 2});
    CHECK(terms[1].terms[1].first == "builds");
    CHECK(terms_csv(terms).find("female,1,drama,2") != std::string::npos);

    CHECK_THROWS_AS(persona_terms({}, default_stopwords(), 3), StatsError);
    CHECK_THROWS_AS(persona_terms({{"x", {"the and of"}}}, default_stopwords(), 3), StatsError);
}

TEST_CASE("personas by attribute skip invalid transcripts") {
    ordered_json r{{"kind", "stance"}, {"stances", {{"s1", "adopt"}}}};
    auto ok = make_transcript("p1", ResolutionKind::StanceSurvey, {{"s1", "female", "Enjoys drama."}}, r);
    auto bad = invalid(make_transcript("p2", ResolutionKind::StanceSurvey, {{"s1", "male", "Likes maths."}}, r));
    const auto by = personas_by_attribute({ok, bad}, "gender");
    CHECK(by.size() == 1);
    CHECK(by.at("female") == std::vector<std::string>{"Enjoys drama."});
}

TEST_CASE("stopword files") {
    fmtest::TempDir dir;
    util::write_file_atomic(dir / "stop.txt", "# comment\nDrama\n\nclub\n");
    CHECK(load_stopwords(dir / "stop.txt") == std::set<std::string>{"drama", "club"});
}

TEST_CASE("transcript markdown") {
    ordered_json r{{"kind", "stance"}, {"stances", {{"s1", "adopt"}}}};
    auto t = make_transcript("md-1", ResolutionKind::StanceSurvey, {{"s1", "female", "Pipe | persona"}}, r);
    t.spec.theme = "AI assistant";
    t.events.push_back({1, "s1", {"s1"}, "Hello there.", "dialogue"});
    const auto md = transcript_markdown(t);
    CHECK(md.rfind("# md-1\n", 0) == 0);
    CHECK(md.find("Hello there.") != std::string::npos);
    CHECK(md.find("Pipe \\| persona") != std::string::npos);
    CHECK(md.find("### Round 1") != std::string::npos);
}

TEST_CASE("counts agree with a raw recount of random transcripts") {
    fmtest::Rng rng(31);
    const std::vector<std::string> values{"Asian", "Black", "Hispanic", "White"};
    const std::vector<std::string> clubs{"Art", "Drama", "Music", "Robotics"};
    std::vector<Transcript> ts;
    std::map<std::string, std::map<std::string, std::size_t>> expected;
    for (int i = 0; i < 40; ++i) {
        std::vector<Agent> agents;
        ordered_json picks = ordered_json::object();
        for (int a = 1; a <= 4; ++a) {
            const auto id = "s" + std::to_string(a);
            const auto& v = rng.pick(values);
            const auto& c = rng.pick(clubs);
            agents.push_back({id, v});
            picks[id] = c;
        }
        auto t = make_transcript("r" + std::to_string(i), ResolutionKind::ClubChoice, agents,
                                 {{"kind", "club"}, {"clubs", picks}}, "race");
        if (i % 9 == 0) {
            ts.push_back(invalid(t));
            continue;
        }
        for (const auto& a : agents) expected[a.value][picks[a.id].get<std::string>()]++;
        ts.push_back(t);
    }
    const auto table = club_distribution(ts, "race");
    for (const auto& [v, row] : expected)
        for (const auto& [c, n] : row) CHECK(table.count(v, c) == n);
    CHECK(table.invalid_transcripts == 5);
}
