#include <doctest.h>

#include "fairmonitor/error.h"
#include "fairmonitor/gateway.h"
#include "fairmonitor/judge.h"
#include "fairmonitor/report.h"
#include "fairmonitor/runner.h"
#include "fairmonitor/sim.h"
#include "fairmonitor/store.h"
#include "support/helpers.h"

using namespace fairmonitor;

namespace {

const auto kSample = fmtest::source_dir() / "data" / "sample_dataset.jsonl";
const auto kStaticFixture = fmtest::source_dir() / "fixtures" / "mock" / "static.jsonl";
const auto kSimFixture = fmtest::source_dir() / "fixtures" / "mock" / "sim.jsonl";

void static_pipeline(Store& store) {
    RunConfig cfg;
    cfg.run_id = "static";
    cfg.dataset_path = kSample;
    cfg.subject_models = {"model-a", "model-b"};
    auto m = fmtest::make_mock_file(kStaticFixture);
    run_static(cfg, load_dataset(kSample), *m.gateway, store);
    judge_run("static", *m.gateway, store, {}, 8);
}

void dynamic_pipeline(Store& store) {
    auto specs = sim::build_batch("club", sim::Mode::Discussion, 4, sim::default_plan("gender"), {1, 2});
    auto more = sim::build_batch("election", sim::Mode::Competition, 4, sim::default_plan("gender"), {1, 2});
    specs.insert(specs.end(), more.begin(), more.end());
    auto m = fmtest::make_mock_file(kSimFixture);
    sim::run_batch(specs, *m.gateway, store, "dynamic", json{{"t", 1}}, {}, 4);
}

std::map<std::string, std::string> as_map(const std::vector<ReportFile>& files) {
    std::map<std::string, std::string> out;
    for (const auto& f : files) out[f.path] = f.content;
    return out;
}

} // namespace

TEST_CASE("static bundle contents") {
    fmtest::TempDir dir;
    Store store(dir.path());
    static_pipeline(store);
    const auto files = as_map(build_report(store, {"static"}));
    for (const auto* name : {"static/summary.json", "static/aggregate.csv", "static/aggregate.json", "static/boxplot.csv",
                             "static/pairs.json", "static/pairs.txt", "index.json"})
        CHECK(files.contains(name));
    CHECK_FALSE(files.contains("static/correlation.json"));

    // 2 models x (3 stages + all) x (9 factors + all), every group populated
    const auto lines = util::split_lines(files.at("static/aggregate.csv"));
    std::size_t rows = 0;
    for (const auto& l : lines) rows += !l.empty();
    CHECK(rows - 1 == 2 * 4 * 10);

    const auto summary = json::parse(files.at("static/summary.json"));
    CHECK(summary.at("responses") == 180);
    CHECK(summary.at("verdicts") == 180);
    CHECK(summary.at("scored") == 180);

    const auto pairs = json::parse(files.at("static/pairs.json"));
    CHECK(pairs.at("pairs").size() == 30);
    CHECK(pairs.at("incomplete").empty());

    // 2 models x 3 stages
    std::size_t box = 0;
    for (const auto& l : util::split_lines(files.at("static/boxplot.csv"))) box += !l.empty();
    CHECK(box - 1 == 6);
}

TEST_CASE("correlation is included after judge validation") {
    fmtest::TempDir dir;
    Store store(dir.path());
    static_pipeline(store);
    store.attach("static")->set_section("judge_validation", {{"pearson", 0.5}, {"spearman", 0.4}, {"n", 10}});
    const auto files = as_map(build_report(store, {"static"}));
    REQUIRE(files.contains("static/correlation.json"));
    CHECK(json::parse(files.at("static/correlation.json")).at("n") == 10);
}

TEST_CASE("dynamic bundle contents") {
    fmtest::TempDir dir;
    Store store(dir.path());
    dynamic_pipeline(store);
    const auto files = as_map(build_report(store, {"dynamic"}));
    CHECK(files.contains("dynamic/summary.json"));
    CHECK(files.contains("dynamic/club_gender.csv"));
    CHECK(files.contains("dynamic/election_gender.json"));
    CHECK(files.contains("dynamic/persona_terms_gender.csv"));
    const auto summary = json::parse(files.at("dynamic/summary.json"));
    CHECK(summary.at("transcripts") == 8);
    CHECK(summary.at("complete") == 8);
}

TEST_CASE("report is byte-identical across rebuilds and stores") {
    fmtest::TempDir a, b, out_a, out_b;
    Store sa(a.path()), sb(b.path());
    static_pipeline(sa);
    dynamic_pipeline(sa);
    static_pipeline(sb);
    dynamic_pipeline(sb);
    const auto fa = build_report(sa, {"static", "dynamic"});
    CHECK(as_map(fa) == as_map(build_report(sa, {"dynamic", "static"})));
    CHECK(as_map(fa) == as_map(build_report(sb, {"static", "dynamic"})));

    write_report(fa, out_a.path());
    write_report(build_report(sb, {"static", "dynamic"}), out_b.path());
    for (const auto& f : fa) CHECK(util::read_file(out_a / f.path) == util::read_file(out_b / f.path));
    const auto index = json::parse(util::read_file(out_a / "index.json"));
    CHECK(index.size() == 2);
    CHECK(index[0].at("run_id") == "dynamic");
}

TEST_CASE("report argument errors") {
    fmtest::TempDir dir;
    Store store(dir.path());
    CHECK_THROWS_AS(build_report(store, {}), ConfigError);
    CHECK_THROWS_AS(build_report(store, {"ghost"}), StoreError);
    store.open_run("x", RunKind::Dynamic, json::object());
    CHECK_THROWS_AS(build_report(store, {"x", "x"}), ConfigError);
}

TEST_CASE("half-scored pairs are left out and listed") {
    fmtest::TempDir dir;
    Store store(dir.path());
    RunConfig cfg;
    cfg.run_id = "half";
    cfg.dataset_path = kSample;
    cfg.subject_models = {"m"};
    cfg.stages = {Stage::ImplicitAssociation};
    auto m = fmtest::make_mock_file(kStaticFixture);
    const auto cases = load_dataset(kSample);
    run_static(cfg, cases, *m.gateway, store);

    // the loaded member of the first pair cannot be judged
    std::string loaded_question;
    for (const auto& c : cases)
        if (c.pair_role == PairRole::Loaded) {
            loaded_question = c.question;
            break;
        }
    auto fixture = MockFixture::parse(R"({"contains":")" + loaded_question + R"(","response":"N/A"})" "\n" +
                                      util::read_file(kStaticFixture));
    auto j = fmtest::make_mock(fixture);
    judge_run("half", *j.gateway, store, {}, 4);
    const auto pairs = json::parse(as_map(build_report(store, {"half"})).at("half/pairs.json"));
    CHECK(pairs.at("pairs").size() == 14);
    CHECK(pairs.at("incomplete").size() == 1);
}
