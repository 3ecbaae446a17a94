#include <doctest.h>

#include "fairmonitor/store.h"
#include "support/helpers.h"

using namespace fairmonitor;
namespace fs = std::filesystem;

namespace {

const auto kSrc = fmtest::source_dir();
const std::vector<std::string> kCommands{"generate",       "validate-dataset", "run-static",
                                         "judge",          "validate-judge",   "run-dynamic",
                                         "analyze",        "report",           "export-transcripts"};

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

} // namespace

TEST_CASE("help snapshots enumerate every flag") {
    fmtest::TempDir produced;
    auto top = fmtest::run_cli("--help");
    CHECK(top.exit_code == 0);
    for (const auto& cmd : kCommands) CHECK(top.out.find(cmd) != std::string::npos);
    util::write_file_atomic(produced / "help_main.txt", top.out);
    for (const auto& cmd : kCommands) {
        CAPTURE(cmd);
        const auto r = fmtest::run_cli(cmd + " --help");
        CHECK(r.exit_code == 0);
        CHECK(r.out.find("--help") != std::string::npos);
        if (cmd != "validate-dataset") CHECK(r.out.find("--store") != std::string::npos);
        CHECK(r.out.find("--config") != std::string::npos);
        util::write_file_atomic(produced / ("help_" + cmd + ".txt"), r.out);
    }
    const auto diffs = fmtest::diff_golden_dir(produced.path(), kSrc / "tests" / "golden" / "help");
    for (const auto& d : diffs) CAPTURE(d);
    CHECK(diffs.empty());
}

TEST_CASE("exit codes") {
    CHECK(fmtest::run_cli("").exit_code == 2);
    CHECK(fmtest::run_cli("--version").exit_code == 0);
    CHECK(fmtest::run_cli("bogus").exit_code == 2);
    CHECK(fmtest::run_cli("validate-dataset --frobnicate x").exit_code == 2);

    const auto missing = fmtest::run_cli("run-static --config missing.toml");
    CHECK(missing.exit_code == 2);
    CHECK(missing.out.empty());
    CHECK_FALSE(missing.err.empty());

    fmtest::TempDir dir;
    CHECK(fmtest::run_cli("run-static --store runs --run-id r", dir.path()).exit_code == 2);
    // domain errors
    const auto report = fmtest::run_cli("report --store runs --run ghost --out rep", dir.path());
    CHECK(report.exit_code == 1);
    CHECK(report.err.find("ghost") != std::string::npos);
    util::write_file_atomic(dir / "dup.jsonl",
                            util::split_lines(util::read_file(kSrc / "data" / "sample_dataset.jsonl"))[0] + "\n" +
                                util::split_lines(util::read_file(kSrc / "data" / "sample_dataset.jsonl"))[0] + "\n");
    const auto dup = fmtest::run_cli("validate-dataset dup.jsonl", dir.path());
    CHECK(dup.exit_code == 1);
    CHECK(dup.out.find("duplicate") != std::string::npos);
    util::write_file_atomic(dir / "empty.jsonl", "");
    CHECK(fmtest::run_cli("validate-dataset empty.jsonl", dir.path()).exit_code == 1);
    util::write_file_atomic(dir / "bad.toml", "store = [unterminated");
    CHECK(fmtest::run_cli("judge --config bad.toml --run x", dir.path()).exit_code == 1);
}

TEST_CASE("validate-dataset prints the committed counts table") {
    const auto r = fmtest::run_cli("validate-dataset " + q(kSrc / "data" / "sample_dataset.jsonl"));
    CHECK(r.exit_code == 0);
    CHECK(r.out == util::read_file(kSrc / "tests" / "golden" / "sample_counts.txt"));
    const auto j = fmtest::run_cli("validate-dataset --format json " + q(kSrc / "data" / "sample_dataset.jsonl"));
    CHECK(json::parse(j.out) == json::parse(util::read_file(kSrc / "tests" / "golden" / "sample_counts.json")));
    const auto via_config = fmtest::run_cli("validate-dataset --config " + q(kSrc / "configs" / "static.toml"));
    CHECK(via_config.exit_code == 0);
    CHECK(via_config.out == r.out);
}

TEST_CASE("end-to-end pipeline matches the golden report") {
    fmtest::TempDir work;
    const auto steps = fmtest::run_e2e(work.path());
    for (const auto& [name, r] : steps) {
        CAPTURE(name);
        CAPTURE(r.err);
        CHECK(r.exit_code == 0);
    }
    REQUIRE(steps.size() == 8);
    const auto judged = json::parse(steps[3].second.out);
    CHECK(judged.at("scored") == 32);
    const auto corr = json::parse(util::read_file(work / "correlation.json"));
    CHECK(corr.at("n") == 16);
    CHECK(util::read_file(work / "club.csv").rfind("attribute_value,outcome,count,proportion\n", 0) == 0);

    const auto diffs = fmtest::diff_golden_dir(work / "report", kSrc / "tests" / "golden" / "e2e_report");
    for (const auto& d : diffs) CAPTURE(d);
    CHECK(diffs.empty());

    // a second report from the same store is byte-identical
    const auto again = fmtest::run_cli("report --store runs --run gen --run dyn --out report2", work.path());
    REQUIRE(again.exit_code == 0);
    for (const auto& f : fmtest::list_files(work / "report"))
        CHECK(util::read_file(work / "report" / f) == util::read_file(work / "report2" / f));

    // reruns are pure resumes
    const auto rerun = fmtest::run_cli(
        "run-static --config " + q(kSrc / "configs" / "static.toml") + " --store runs --dataset gen.jsonl --run-id gen",
        work.path());
    CHECK(json::parse(rerun.out).at("gateway_calls") == 0);
    CHECK(json::parse(rerun.out).at("skipped") == 32);
    const auto no_resume = fmtest::run_cli("run-static --config " + q(kSrc / "configs" / "static.toml") +
                                               " --store runs --dataset gen.jsonl --run-id gen --no-resume",
                                           work.path());
    CHECK(no_resume.exit_code == 1);
}

TEST_CASE("dynamic commands") {
    fmtest::TempDir work;
    const auto mock = q(kSrc / "fixtures" / "mock" / "sim.jsonl");
    CHECK(fmtest::run_cli("run-dynamic --mock " + mock + " --store runs --theme election --n 2 --topology one_to_many",
                          work.path())
              .exit_code == 1);
    const auto run = fmtest::run_cli("run-dynamic --mock " + mock +
                                         " --store runs --theme technology --n 4 --seed 1 --topology one_to_many",
                                     work.path());
    REQUIRE(run.exit_code == 0);
    const auto summary = json::parse(run.out);
    CHECK(summary.at("run_id") == "dynamic-technology-gender");
    CHECK(summary.at("scenarios") == 4);
    CHECK(summary.at("invalid") == 0);

    for (const auto* format : {"table", "csv", "json"}) {
        const auto r = fmtest::run_cli(std::string("analyze --store runs --run dynamic-technology-gender --metric stance --format ") + format,
                                       work.path());
        CHECK(r.exit_code == 0);
        CHECK_FALSE(r.out.empty());
    }
    const auto terms = fmtest::run_cli("analyze --store runs --run dynamic-technology-gender --metric persona-terms --top-k 3",
                                       work.path());
    CHECK(terms.exit_code == 0);
    CHECK(terms.out.rfind("group,rank,term,count\n", 0) == 0);
    CHECK(fmtest::run_cli("analyze --store runs --run dynamic-technology-gender --metric nonsense", work.path())
              .exit_code == 2);
    CHECK(fmtest::run_cli("analyze --store runs --run nope --metric club", work.path()).exit_code == 1);

    const auto ex = fmtest::run_cli(
        "export-transcripts --store runs --run dynamic-technology-gender --out md --scenario technology-gender-0002",
        work.path());
    CHECK(ex.exit_code == 0);
    CHECK(fmtest::list_files(work / "md") == std::vector<std::string>{"technology-gender-0002.md"});
    CHECK(fmtest::run_cli("export-transcripts --store runs --run dynamic-technology-gender --out md --scenario zzz",
                          work.path())
              .exit_code == 1);

    // specs file path
    util::write_file_atomic(work / "one.json",
                            R"({"scenario_id":"custom-1","theme":"technology","mode":"discussion",)"
                            R"("resolution":"stance_survey","topology":"many_to_many","rounds":1,)"
                            R"("speaking_order":["a","b"],"roles":[)"
                            R"({"agent_id":"a","role":"teacher","attributes":{"age":"older"}},)"
                            R"({"agent_id":"b","role":"teacher","attributes":{"age":"younger"}}]})");
    const auto custom = fmtest::run_cli("run-dynamic --mock " + mock + " --store runs --specs one.json", work.path());
    CHECK(custom.exit_code == 0);
    CHECK(json::parse(custom.out).at("run_id") == "dynamic-one");
}

TEST_CASE("dynamic config drives a multi-batch run") {
    fmtest::TempDir work;
    util::write_file_atomic(work / "dyn.toml", "store = \"runs\"\n[dynamic]\nseed = 5\nrounds = 1\n"
                                               "[[dynamic.batches]]\ntheme = \"club\"\nattribute = \"race\"\nn = 3\n"
                                               "[[dynamic.batches]]\ntheme = \"group_project\"\nn = 2\n"
                                               "[backend]\nkind = \"mock\"\nfixture = \"" +
                                                   (kSrc / "fixtures" / "mock" / "sim.jsonl").string() + "\"\n");
    const auto r = fmtest::run_cli("run-dynamic --config dyn.toml", work.path());
    REQUIRE(r.exit_code == 0);
    const auto j = json::parse(r.out);
    CHECK(j.at("run_id") == "dynamic-batch");
    CHECK(j.at("scenarios") == 5);
    CHECK(j.at("complete") == 5);
    const auto a = fmtest::run_cli("analyze --config dyn.toml --run dynamic-batch --metric assignment --format json",
                                   work.path());
    CHECK(a.exit_code == 0);
    CHECK(json::parse(a.out).at("included").get<int>() > 0);
}

TEST_CASE("kill and resume issues exactly the remaining calls") {
    fmtest::TempDir work;
    const auto kr = fmtest::kill_and_resume(work.path());
    CAPTURE(kr.persisted);
    REQUIRE(kr.killed);
    REQUIRE(kr.persisted >= 50);
    REQUIRE(kr.persisted < 90);
    REQUIRE(kr.resumed.exit_code == 0);
    const auto j = json::parse(kr.resumed.out);
    CHECK(j.at("gateway_calls") == 90 - kr.persisted);
    CHECK(j.at("skipped") == kr.persisted);
    Store s(work / "runs");
    CHECK(s.completed_ids("k", RecordKind::Response).size() == 90);
    CHECK(s.manifest("k").status == RunStatus::Complete);
}

TEST_CASE("generate from flags") {
    fmtest::TempDir work;
    const auto r = fmtest::run_cli("generate --mock " + q(kSrc / "fixtures" / "mock" / "static.jsonl") +
                                       " --exemplars " + q(kSrc / "data" / "exemplars.jsonl") +
                                       " --factor subject --stage S2 --scenario homework --count 2",
                                   work.path());
    REQUIRE(r.exit_code == 0);
    const auto lines = util::split_lines(r.out);
    CHECK(json::parse(lines[0]).at("id") == "subject-2-00001");
    CHECK(json::parse(lines[1]).at("pair_id") == "subject-pair-00001");
    CHECK(fmtest::run_cli("generate --mock " + q(kSrc / "fixtures" / "mock" / "static.jsonl") + " --factor subject",
                          work.path())
              .exit_code == 2);
    CHECK(fmtest::run_cli("generate --mock " + q(kSrc / "fixtures" / "mock" / "static.jsonl") + " --exemplars " +
                              q(kSrc / "data" / "exemplars.jsonl") + " --factor wizardry --count 1",
                          work.path())
              .exit_code == 2);
}
