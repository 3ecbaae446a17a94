#include <doctest.h>

#include <fstream>
#include <set>

#include "fairmonitor/core.h"
#include "fairmonitor/error.h"
#include "fairmonitor/util.h"
#include "support/helpers.h"

using namespace fairmonitor;

namespace {

const auto kSample = fmtest::source_dir() / "data" / "sample_dataset.jsonl";

TestCase make_case(std::string id, Stage stage, SensitiveFactor f = SensitiveFactor::Gender) {
    TestCase c;
    c.id = std::move(id);
    c.stage = stage;
    c.factor = f;
    c.scenario = "lab work";
    c.question = "q " + c.id;
    c.reference_answer = "r " + c.id;
    return c;
}

/// Random valid dataset: singles for S1/S3, complete neutral/loaded pairs for S2.
std::vector<TestCase> random_dataset(fmtest::Rng& rng) {
    static const std::vector<std::string> words{"quiet", "group", "\"quoted\"", "naïve", "tab\there", "line\nbreak",
                                                "emoji 🙂", "back\\slash", "plain"};
    std::vector<TestCase> out;
    const int units = rng.range(1, 25);
    for (int u = 0; u < units; ++u) {
        const auto f = kAllFactors[rng.next() % kAllFactors.size()];
        const auto stage = kAllStages[rng.next() % 3];
        auto c = make_case("case-" + std::to_string(u), stage, f);
        c.question = rng.pick(words) + " " + rng.pick(words) + "?";
        c.reference_answer = rng.pick(words);
        if (stage == Stage::ImplicitAssociation) {
            c.pair_id = "pair-" + std::to_string(u);
            c.pair_role = PairRole::Neutral;
            auto loaded = c;
            loaded.id += "-l";
            loaded.pair_role = PairRole::Loaded;
            out.push_back(c);
            out.push_back(loaded);
        } else {
            out.push_back(c);
        }
    }
    return out;
}

} // namespace

TEST_CASE("nine factors round-trip case-insensitively") {
    std::set<std::string> names;
    for (auto f : kAllFactors) {
        const std::string key(to_string(f));
        names.insert(key);
        CHECK(parse_factor(key) == f);
        CHECK(parse_factor(util::to_lower(std::string(display_name(f)))) == f);
        std::string upper = key;
        for (auto& ch : upper) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
        CHECK(parse_factor(upper) == f);
    }
    CHECK(names.size() == 9);
    CHECK(parse_factor("RaceOrCulturalBackground") == SensitiveFactor::RaceOrCulturalBackground);
    CHECK_FALSE(parse_factor("height"));
}

TEST_CASE("stage codes are bijective") {
    for (int code = 1; code <= 3; ++code) {
        auto s = stage_from_code(code);
        REQUIRE(s);
        CHECK(stage_code(*s) == code);
        CHECK(parse_stage(stage_label(*s)) == s);
        CHECK(parse_stage(std::to_string(code)) == s);
    }
    CHECK_FALSE(stage_from_code(4));
    CHECK_FALSE(parse_stage("4"));
    CHECK(parse_stage("s2") == Stage::ImplicitAssociation);
}

TEST_CASE("sampling defaults per role") {
    CHECK(SamplingParams::subject().top_p == 0.9);
    CHECK(SamplingParams::subject().temperature == 1.0);
    CHECK(SamplingParams::judge().top_p == 0.9);
    CHECK(SamplingParams::judge().temperature == 0.0);
    CHECK(SamplingParams::agent().temperature == 1.0);
    SamplingParams bad;
    bad.top_p = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = {};
    bad.temperature = -1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = {};
    bad.max_tokens = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("bundled sample validates with the committed counts") {
    const auto cases = load_dataset(kSample);
    REQUIRE(cases.size() == 90);
    const auto report = validate_dataset(cases);
    CHECK(report.ok());
    CHECK(report.to_table() == util::read_file(fmtest::source_dir() / "tests" / "golden" / "sample_counts.txt"));

    // independent recount over the raw lines
    std::map<std::string, std::array<std::size_t, 3>> raw;
    std::size_t sum = 0, pairs = 0;
    for (const auto& line : util::split_lines(util::read_file(kSample))) {
        if (line.empty()) continue;
        auto j = json::parse(line);
        raw[j.at("factor").get<std::string>()][j.at("stage").get<int>() - 1]++;
        pairs += j.value("pair_role", "") == "neutral";
        ++sum;
    }
    CHECK(pairs == 15);
    std::size_t cells = 0;
    for (auto f : kAllFactors) {
        CHECK(report.counts.at(f) == raw[std::string(to_string(f))]);
        for (auto n : report.counts.at(f)) cells += n;
    }
    CHECK(cells == sum);
    std::array<std::size_t, 3> per_stage{};
    for (const auto& [f, c] : report.counts)
        for (int s = 0; s < 3; ++s) per_stage[s] += c[s];
    CHECK(per_stage == std::array<std::size_t, 3>{30, 30, 30});
}

TEST_CASE("sample round-trips byte for byte") {
    const auto text = util::read_file(kSample);
    const auto cases = parse_dataset(text);
    CHECK(serialize_dataset(cases) == text);
    fmtest::TempDir tmp;
    save_dataset(cases, tmp / "copy.jsonl");
    CHECK(load_dataset(tmp / "copy.jsonl") == cases);
}

TEST_CASE("validation errors") {
    CHECK_THROWS_WITH_AS(validate_dataset({}), "empty dataset", DatasetError);

    auto a = make_case("a", Stage::ImplicitAssociation);
    a.pair_id = "p1";
    a.pair_role = PairRole::Neutral;
    auto b = make_case("b", Stage::DirectInquiry);
    auto report = validate_dataset({a, b});
    REQUIRE(report.violations.size() == 1);
    CHECK(report.violations[0].message.find("unpaired pair_id") != std::string::npos);

    auto dup = make_case("a", Stage::DirectInquiry);
    report = validate_dataset({b, make_case("b", Stage::UnknownSituation)});
    CHECK(report.violations.size() == 1);
    CHECK(report.violations[0].message == "duplicate id");

    auto loaded = a;
    loaded.id = "a2";
    loaded.pair_role = PairRole::Neutral;
    report = validate_dataset({a, loaded});
    CHECK(report.violations.size() == 1);

    auto stray = make_case("s", Stage::DirectInquiry);
    stray.pair_id = "x";
    stray.pair_role = PairRole::Loaded;
    CHECK_FALSE(validate_dataset({stray}).ok());

    auto empty_q = make_case("e", Stage::DirectInquiry);
    empty_q.question = "  ";
    CHECK_FALSE(validate_dataset({empty_q}).ok());
}

TEST_CASE("parse errors carry line numbers and literals") {
    const std::string good = R"({"id":"a","stage":1,"factor":"gender","scenario":"s","question":"q","reference_answer":"r"})";
    const std::string bad_stage =
        R"({"id":"b","stage":4,"factor":"gender","scenario":"s","question":"q","reference_answer":"r"})";
    CHECK_THROWS_WITH_AS(parse_dataset(good + "\n" + bad_stage + "\n"), "unknown stage '4' at line 2", DatasetError);
    const std::string bad_factor =
        R"({"id":"b","stage":1,"factor":"height","scenario":"s","question":"q","reference_answer":"r"})";
    CHECK_THROWS_WITH_AS(parse_dataset(bad_factor), "unknown factor 'height' at line 1", DatasetError);
    CHECK_THROWS_WITH_AS(parse_dataset(good + "\n{oops\n"), "malformed JSON at line 2", DatasetError);
}

TEST_CASE("CRLF files parse like LF files") {
    const auto text = util::read_file(kSample);
    std::string crlf;
    for (char c : text) {
        if (c == '\n') crlf += '\r';
        crlf += c;
    }
    fmtest::TempDir tmp;
    {
        std::ofstream out(tmp / "crlf.jsonl", std::ios::binary);
        out << crlf;
    }
    CHECK(load_dataset(tmp / "crlf.jsonl") == parse_dataset(text));
}

TEST_CASE("random valid datasets: save, load, save is byte-identical and pairs partition") {
    fmtest::Rng rng(99);
    fmtest::TempDir tmp;
    for (int trial = 0; trial < 50; ++trial) {
        const auto cases = random_dataset(rng);
        const auto report = validate_dataset(cases);
        CHECK(report.ok());
        save_dataset(cases, tmp / "d.jsonl");
        const auto first = util::read_file(tmp / "d.jsonl");
        const auto loaded = load_dataset(tmp / "d.jsonl");
        CHECK(loaded == cases);
        save_dataset(loaded, tmp / "d.jsonl");
        CHECK(util::read_file(tmp / "d.jsonl") == first);

        std::map<std::string, std::multiset<PairRole>> members;
        for (const auto& c : loaded)
            if (c.pair_id) members[*c.pair_id].insert(*c.pair_role);
        for (const auto& [pid, roles] : members)
            CHECK(roles == std::multiset<PairRole>{PairRole::Neutral, PairRole::Loaded});
    }
}

TEST_CASE("model response json") {
    ModelResponse r;
    r.case_id = "c";
    r.model_id = "m";
    r.text = "hello";
    r.latency_ms = 12;
    r.token_usage = TokenUsage{3, 4};
    r.created_at = "2024-01-01T00:00:00Z";
    r.attempts = 2;
    CHECK(model_response_from_json(to_json(r)) == r);
}
