// fairmonitor command-line entry point.
#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "fairmonitor/analysis.h"
#include "fairmonitor/core.h"
#include "fairmonitor/error.h"
#include "fairmonitor/gateway.h"
#include "fairmonitor/judge.h"
#include "fairmonitor/report.h"
#include "fairmonitor/runner.h"
#include "fairmonitor/sim.h"
#include "fairmonitor/store.h"
#include "fairmonitor/templates.h"
#include "fairmonitor/util.h"

namespace fs = std::filesystem;
using namespace fairmonitor;

namespace {

/// Problems with how the tool was invoked; exit code 2.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    std::string config;
    std::string backend;
    std::string mock;
    int mock_delay_ms = 0;
    std::string store;
    std::string prompts;

    json file;        // parsed --config, or {}
    fs::path base;    // directory of --config (absolute), or cwd

    CLI::Option* store_opt = nullptr;
};

void add_common(CLI::App* sub, Common& c, bool backend) {
    sub->add_option("--config", c.config, "TOML or JSON config file; command-line flags take precedence")
        ->check(CLI::ExistingFile);
    c.store_opt = sub->add_option("--store", c.store, "Run store directory (default: runs)");
    if (backend) {
        sub->add_option("--backend", c.backend, "Backend config file (TOML or JSON, [backend] table)")
            ->check(CLI::ExistingFile);
        sub->add_option("--mock", c.mock, "Use the offline mock backend with this fixture (JSONL)")
            ->check(CLI::ExistingFile);
        sub->add_option("--mock-delay-ms", c.mock_delay_ms, "Artificial latency per mock call");
        sub->add_option("--prompts", c.prompts, "Directory of prompt templates overriding the built-in ones")
            ->check(CLI::ExistingDirectory);
    }
}

void load_common(Common& c) {
    c.base = fs::current_path();
    c.file = json::object();
    if (!c.config.empty()) {
        c.file = load_config_file(c.config);
        if (!c.file.is_object()) throw UsageError("config file must hold a table/object");
        c.base = fs::absolute(c.config).parent_path();
    }
    if (c.store_opt->count() == 0) {
        c.store = "runs";
        if (c.file.contains("store")) c.store = (c.base / c.file.at("store").get<std::string>()).string();
    }
}

const json& section(const Common& c, const char* name) {
    static const json empty = json::object();
    return c.file.contains(name) ? c.file.at(name) : empty;
}

/// Flag value when given, else the config key, else the fallback.
template <class T>
T pick(const CLI::Option* opt, const T& flag, const json& sec, const char* key, const T& fallback) {
    if (opt && opt->count() > 0) return flag;
    if (sec.contains(key)) return sec.at(key).get<T>();
    return fallback;
}

std::string abs_from(const fs::path& base, const std::string& p) {
    if (p.empty()) return p;
    fs::path path(p);
    return (path.is_relative() ? base / path : path).lexically_normal().string();
}

std::shared_ptr<Gateway> make_gateway(const Common& c, int concurrency) {
    BackendConfig cfg;
    if (!c.mock.empty()) {
        cfg.kind = BackendKind::Mock;
        cfg.fixture_path = fs::absolute(c.mock);
        cfg.rate_limit_per_min = 100000000;
        cfg.retry.base_backoff_ms = 1;
        cfg.max_in_flight = std::max(concurrency, 1);
        cfg.mock_delay_ms = c.mock_delay_ms;
    } else if (!c.backend.empty()) {
        const auto j = load_config_file(c.backend);
        cfg = BackendConfig::from_json(j, fs::absolute(c.backend).parent_path());
    } else if (c.file.contains("backend")) {
        cfg = BackendConfig::from_json(c.file, c.base);
    } else {
        throw UsageError("no backend configured: pass --mock, --backend or a config with a [backend] table");
    }
    if (c.mock_delay_ms && cfg.kind == BackendKind::Mock) cfg.mock_delay_ms = c.mock_delay_ms;
    return Gateway::create(cfg);
}

std::optional<std::size_t> mock_calls(Gateway& g) {
    if (auto* m = dynamic_cast<MockBackend*>(&g.backend())) return m->call_count();
    return std::nullopt;
}

const PromptLibrary& prompt_library(const Common& c) {
    static std::optional<PromptLibrary> lib;
    if (c.prompts.empty()) return PromptLibrary::builtin();
    if (!lib) lib = PromptLibrary::with_overrides(c.prompts);
    return *lib;
}

void emit(const std::string& text, const std::string& out) {
    if (out.empty()) {
        std::cout << text;
        if (!text.empty() && text.back() != '\n') std::cout << '\n';
    } else {
        util::write_file_atomic(out, text);
    }
}

Stage stage_arg(const std::string& s) {
    auto st = parse_stage(s);
    if (!st) throw UsageError("unknown stage '" + s + "'");
    return *st;
}

SensitiveFactor factor_arg(const std::string& s) {
    auto f = parse_factor(s);
    if (!f) throw UsageError("unknown factor '" + s + "'");
    return *f;
}

std::vector<std::string> split_list(const std::vector<std::string>& items) {
    std::vector<std::string> out;
    for (const auto& item : items) {
        std::size_t start = 0;
        while (start <= item.size()) {
            auto comma = item.find(',', start);
            if (comma == std::string::npos) comma = item.size();
            auto v = util::trim(std::string_view(item).substr(start, comma - start));
            if (!v.empty()) out.push_back(v);
            start = comma + 1;
        }
    }
    return out;
}

std::string json_field_string(const json& j) { return j.is_string() ? j.get<std::string>() : j.dump(); }

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateArgs {
    Common common;
    std::string factor, scenario, stage, exemplars, model, out;
    int count = 0, batch_size = 5, first_index = 1;
    std::uint64_t seed = 0;
    std::map<std::string, CLI::Option*> opts;
};

int run_generate(GenerateArgs& a) {
    auto& c = a.common;
    load_common(c);
    const json& sec = section(c, "generate");
    json specs = json::array();
    if (sec.contains("specs") && a.opts["--factor"]->count() == 0) {
        specs = sec.at("specs");
    } else {
        json one = json::object();
        specs.push_back(one);
    }
    const auto model = pick<std::string>(a.opts["--model"], a.model, sec, "model", "mock-generator");
    const auto exemplar_path = a.opts["--exemplars"]->count() ? abs_from(fs::current_path(), a.exemplars)
                                                              : abs_from(c.base, sec.value("exemplars", ""));
    const auto batch = pick<int>(a.opts["--batch-size"], a.batch_size, sec, "batch_size", 5);
    const auto seed = pick<std::uint64_t>(a.opts["--seed"], a.seed, sec, "seed", 0);
    const auto out = a.opts["--out"]->count() ? a.out : abs_from(c.base, sec.value("out", ""));
    if (exemplar_path.empty()) throw UsageError("--exemplars is required");
    const auto exemplars = load_dataset(exemplar_path);

    auto gateway = make_gateway(c, 1);
    std::map<std::pair<SensitiveFactor, Stage>, int> next_index;
    std::map<SensitiveFactor, int> next_pair;
    std::vector<TestCase> all;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const auto& sj = specs[i];
        GenerationSpec spec;
        spec.factor = factor_arg(pick<std::string>(a.opts["--factor"], a.factor, sj, "factor", ""));
        spec.stage = stage_arg(a.opts["--stage"]->count() ? a.stage
                                                          : (sj.contains("stage") ? json_field_string(sj.at("stage")) : "1"));
        spec.scenario = pick<std::string>(a.opts["--scenario"], a.scenario, sj, "scenario", "");
        spec.count = pick<int>(a.opts["--count"], a.count, sj, "count", 0);
        spec.generator_model = model;
        for (const auto& e : exemplars)
            if (e.stage == spec.stage) spec.exemplars.push_back(e);
        spec.validate();

        GenerationOptions opt;
        opt.batch_size = batch;
        opt.seed = seed + i;
        auto& idx = next_index[{spec.factor, spec.stage}];
        if (idx == 0) idx = pick<int>(a.opts["--first-index"], a.first_index, sj, "first_index", 1);
        auto& pidx = next_pair[spec.factor];
        if (pidx == 0) pidx = 1;
        opt.first_index = idx;
        opt.first_pair_index = pidx;
        auto cases = generate_cases(spec, *gateway, opt, prompt_library(c));
        idx += static_cast<int>(cases.size());
        if (spec.stage == Stage::ImplicitAssociation) pidx += static_cast<int>(cases.size() / 2);
        all.insert(all.end(), cases.begin(), cases.end());
    }
    if (!all.empty()) {
        const auto report = validate_dataset(all);
        if (!report.ok()) {
            std::cerr << report.to_table();
            throw DatasetError("generated dataset has violations");
        }
    }
    emit(serialize_dataset(all), out);
    std::cerr << "generated " << all.size() << " case(s)";
    if (auto calls = mock_calls(*gateway)) std::cerr << " with " << *calls << " gateway call(s)";
    std::cerr << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// run-static / judge / validate-judge
// ---------------------------------------------------------------------------

struct StaticArgs {
    Common common;
    std::string run_id, dataset;
    std::vector<std::string> models, stages, factors;
    int concurrency = 4;
    bool no_resume = false;
    std::map<std::string, CLI::Option*> opts;
};

json merged_run_config(const Common& c, StaticArgs* a) {
    json run = section(c, "run");
    if (!a) return run;
    if (a->opts["--run-id"]->count()) run["run_id"] = a->run_id;
    if (a->opts["--dataset"]->count()) run["dataset"] = abs_from(fs::current_path(), a->dataset);
    else if (run.contains("dataset")) run["dataset"] = abs_from(c.base, run["dataset"].get<std::string>());
    if (a->opts["--model"]->count()) run["subject_models"] = a->models;
    if (a->opts["--stage"]->count()) run["stages"] = a->stages;
    if (a->opts["--factor"]->count()) run["factors"] = a->factors;
    if (a->opts["--concurrency"]->count()) run["concurrency"] = a->concurrency;
    if (a->no_resume) run["resume"] = false;
    return run;
}

int run_static_cmd(StaticArgs& a) {
    auto& c = a.common;
    load_common(c);
    const auto cfg = RunConfig::from_json(merged_run_config(c, &a));
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
    const auto cases = load_dataset(cfg.dataset_path);
    auto gateway = make_gateway(c, cfg.concurrency);
    Store store(c.store);
    const auto summary = run_static(cfg, cases, *gateway, store);
    auto j = summary.to_json();
    j["run_id"] = cfg.run_id;
    if (auto calls = mock_calls(*gateway)) j["gateway_calls"] = *calls;
    std::cout << j.dump(2) << '\n';
    return 0;
}

struct JudgeArgs {
    Common common;
    std::string run_id, judge_model, human, out;
    int concurrency = 4;
    std::map<std::string, CLI::Option*> opts;
};

std::string judge_run_id(const JudgeArgs& a) {
    const auto& c = a.common;
    if (a.opts.at("--run")->count()) return a.run_id;
    const json& js = section(c, "judge");
    if (js.contains("run")) return js.at("run").get<std::string>();
    const json& rs = section(c, "run");
    if (rs.contains("run_id")) return rs.at("run_id").get<std::string>();
    throw UsageError("--run is required");
}

int judge_cmd(JudgeArgs& a) {
    auto& c = a.common;
    load_common(c);
    const json& sec = section(c, "judge");
    const auto run_id = judge_run_id(a);
    JudgeSettings settings;
    settings.judge_model = pick<std::string>(a.opts["--judge-model"], a.judge_model, sec, "judge_model",
                                             settings.judge_model);
    if (sec.contains("params")) settings.params = sampling_params_from_json(sec.at("params"), settings.params);
    settings.prompts = &prompt_library(c);
    const auto concurrency = pick<int>(a.opts["--concurrency"], a.concurrency, sec, "concurrency", 4);
    Store store(c.store);
    if (!store.exists(run_id)) throw StoreError("run '" + run_id + "' not found");
    auto gateway = make_gateway(c, concurrency);
    const auto s = judge_run(run_id, *gateway, store, settings, static_cast<std::size_t>(std::max(concurrency, 1)));
    ordered_json j;
    j["run_id"] = run_id;
    j["scored"] = s.scored;
    j["failed"] = s.failed;
    j["skipped"] = s.skipped;
    if (auto calls = mock_calls(*gateway)) j["gateway_calls"] = *calls;
    std::cout << j.dump(2) << '\n';
    return 0;
}

int validate_judge_cmd(JudgeArgs& a) {
    auto& c = a.common;
    load_common(c);
    const json& sec = section(c, "judge");
    const auto run_id = judge_run_id(a);
    const auto human = a.opts["--human"]->count() ? a.human : abs_from(c.base, sec.value("human", ""));
    if (human.empty()) throw UsageError("--human is required");
    Store store(c.store);
    if (!store.exists(run_id)) throw StoreError("run '" + run_id + "' not found");
    const auto corr = validate_judge(load_verdicts(store, run_id), load_human_scores(human));
    auto j = corr.to_json();
    {
        auto handle = store.attach(run_id);
        handle->set_section("judge_validation", j);
    }
    emit(j.dump(2) + "\n", a.out);
    return 0;
}

// ---------------------------------------------------------------------------
// run-dynamic
// ---------------------------------------------------------------------------

struct DynamicArgs {
    Common common;
    std::string theme, mode, attribute, topology, run_id, model, specs;
    std::vector<std::string> values;
    int n = 100, rounds = 3, parallelism = 4;
    std::uint64_t seed = 0;
    bool record_prompts = false;
    std::map<std::string, CLI::Option*> opts;
};

int run_dynamic_cmd(DynamicArgs& a) {
    auto& c = a.common;
    load_common(c);
    const json& sec = section(c, "dynamic");
    const auto seed = pick<std::uint64_t>(a.opts["--seed"], a.seed, sec, "seed", 0);
    const auto rounds = pick<int>(a.opts["--rounds"], a.rounds, sec, "rounds", 3);
    const auto topo_name = pick<std::string>(a.opts["--topology"], a.topology, sec, "topology", "many_to_many");
    const auto topology = sim::parse_topology(topo_name);
    if (!topology) throw UsageError("unknown topology '" + topo_name + "'");
    const auto parallelism = pick<int>(a.opts["--parallelism"], a.parallelism, sec, "parallelism", 4);

    sim::SimSettings settings;
    settings.model_id = pick<std::string>(a.opts["--model"], a.model, sec, "model", "mock-agent");
    settings.record_prompts = a.record_prompts || sec.value("record_prompts", false);
    settings.prompts = &prompt_library(c);
    if (sec.contains("params")) settings.params = sampling_params_from_json(sec.at("params"), settings.params);

    std::vector<sim::ScenarioSpec> specs;
    ordered_json snapshot;
    snapshot["model"] = settings.model_id;
    snapshot["params"] = to_json(settings.params);
    snapshot["record_prompts"] = settings.record_prompts;
    std::string default_run_id;

    const auto specs_file = a.opts["--specs"]->count() ? a.specs : abs_from(c.base, sec.value("specs", ""));
    if (!specs_file.empty()) {
        const auto text = util::read_file(specs_file);
        json arr;
        try {
            arr = json::parse(text);
        } catch (const json::parse_error&) {
            throw ConfigError("scenario spec file '" + specs_file + "' is not valid JSON");
        }
        if (arr.is_object()) arr = json::array({arr});
        for (const auto& sj : arr) specs.push_back(sim::scenario_spec_from_json(sj));
        snapshot["specs_hash"] = util::hex64(util::fnv1a64(text));
        default_run_id = "dynamic-" + fs::path(specs_file).stem().string();
    } else {
        json batches = json::array();
        if (a.opts["--theme"]->count() || !sec.contains("batches")) {
            json b;
            b["theme"] = pick<std::string>(a.opts["--theme"], a.theme, sec, "theme", "");
            if (b["theme"].get<std::string>().empty()) throw UsageError("--theme is required");
            b["mode"] = pick<std::string>(a.opts["--mode"], a.mode, sec, "mode", "");
            b["n"] = pick<int>(a.opts["--n"], a.n, sec, "n", 100);
            b["attribute"] = pick<std::string>(a.opts["--attribute"], a.attribute, sec, "attribute", "gender");
            if (a.opts["--values"]->count()) b["values"] = split_list(a.values);
            else if (sec.contains("values")) b["values"] = sec.at("values");
            batches.push_back(b);
        } else {
            batches = sec.at("batches");
        }
        ordered_json snap_batches = ordered_json::array();
        for (const auto& b : batches) {
            const auto theme = b.at("theme").get<std::string>();
            const auto& info = sim::theme_info(theme);
            const auto mode_name = b.value("mode", "");
            auto mode = mode_name.empty() ? std::optional<sim::Mode>(info.default_mode) : sim::parse_mode(mode_name);
            if (!mode) throw UsageError("unknown mode '" + mode_name + "'");
            sim::AttributePlan plan;
            plan.attribute = b.value("attribute", "gender");
            if (b.contains("values")) plan.values = b.at("values").get<std::vector<std::string>>();
            else plan = sim::default_plan(plan.attribute);
            sim::BatchOptions bo;
            bo.seed = seed;
            bo.rounds = rounds;
            bo.topology = *topology;
            const int n = b.value("n", 100);
            auto part = sim::build_batch(info.key, *mode, n, plan, bo);
            specs.insert(specs.end(), part.begin(), part.end());
            ordered_json sb;
            sb["theme"] = info.key;
            sb["mode"] = sim::to_string(*mode);
            sb["n"] = n;
            sb["attribute"] = plan.attribute;
            sb["values"] = plan.values;
            snap_batches.push_back(sb);
            if (default_run_id.empty()) default_run_id = "dynamic-" + info.key + "-" + plan.attribute;
        }
        if (batches.size() > 1) default_run_id = "dynamic-batch";
        snapshot["seed"] = seed;
        snapshot["rounds"] = rounds;
        snapshot["topology"] = sim::to_string(*topology);
        snapshot["batches"] = snap_batches;
    }
    const auto run_id = pick<std::string>(a.opts["--run-id"], a.run_id, sec, "run_id", default_run_id);

    auto gateway = make_gateway(c, parallelism);
    Store store(c.store);
    const auto summary = sim::run_batch(specs, *gateway, store, run_id, snapshot, settings,
                                        static_cast<std::size_t>(std::max(parallelism, 1)));
    auto j = summary.to_json();
    j["run_id"] = run_id;
    j["scenarios"] = specs.size();
    if (auto calls = mock_calls(*gateway)) j["gateway_calls"] = *calls;
    std::cout << j.dump(2) << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// analyze / report / export-transcripts
// ---------------------------------------------------------------------------

struct AnalyzeArgs {
    Common common;
    std::string run_id, metric, attribute, format = "table", taxonomy, stopwords, out;
    std::vector<std::string> runs;
    int top_k = 20;
    double threshold = 2;
    std::vector<std::string> scenarios;
    std::map<std::string, CLI::Option*> opts;
};

std::string run_arg(const AnalyzeArgs& a, const char* sec_name) {
    if (a.opts.at("--run")->count()) return a.run_id;
    const json& sec = section(a.common, sec_name);
    if (sec.contains("run")) return sec.at("run").get<std::string>();
    throw UsageError("--run is required");
}

int analyze_cmd(AnalyzeArgs& a) {
    auto& c = a.common;
    load_common(c);
    const json& sec = section(c, "analyze");
    const auto run_id = run_arg(a, "analyze");
    const auto metric = pick<std::string>(a.opts["--metric"], a.metric, sec, "metric", "");
    const auto attribute = pick<std::string>(a.opts["--attribute"], a.attribute, sec, "attribute", "gender");
    const auto format = pick<std::string>(a.opts["--format"], a.format, sec, "format", "table");
    const auto top_k = pick<int>(a.opts["--top-k"], a.top_k, sec, "top_k", 20);
    Store store(c.store);
    if (!store.exists(run_id)) throw StoreError("run '" + run_id + "' not found");
    const auto transcripts = sim::load_transcripts(store, run_id);

    if (metric == "persona-terms" || metric == "persona_terms") {
        const auto stop_path = a.opts["--stopwords"]->count() ? a.stopwords : abs_from(c.base, sec.value("stopwords", ""));
        const auto stop = stop_path.empty() ? analysis::default_stopwords() : analysis::load_stopwords(stop_path);
        if (top_k < 1) throw UsageError("--top-k must be positive");
        const auto terms = analysis::persona_terms(analysis::personas_by_attribute(transcripts, attribute), stop,
                                                   static_cast<std::size_t>(top_k));
        if (format == "json") emit(analysis::terms_json(terms).dump(2) + "\n", a.out);
        else emit(analysis::terms_csv(terms), a.out);
        return 0;
    }

    analysis::FrequencyTable table;
    if (metric == "election") table = analysis::election_ratio(transcripts, attribute);
    else if (metric == "club") table = analysis::club_distribution(transcripts, attribute);
    else if (metric == "stance") table = analysis::stance_by_group(transcripts, attribute);
    else if (metric == "assignment") {
        const auto tax_path = a.opts["--taxonomy"]->count() ? a.taxonomy : abs_from(c.base, sec.value("taxonomy", ""));
        table = analysis::assignment_distribution(
            transcripts, attribute,
            tax_path.empty() ? analysis::default_task_taxonomy() : analysis::load_task_taxonomy(tax_path));
    } else {
        throw UsageError("unknown metric '" + metric + "'");
    }
    for (const auto& w : table.warnings) spdlog::warn("{}", w);
    if (format == "json") emit(table.to_json().dump(2) + "\n", a.out);
    else if (format == "csv") emit(table.to_csv(), a.out);
    else if (format == "table") emit(table.to_table(), a.out);
    else throw UsageError("unknown format '" + format + "'");
    return 0;
}

int report_cmd(AnalyzeArgs& a) {
    auto& c = a.common;
    load_common(c);
    const json& sec = section(c, "report");
    std::vector<std::string> runs = a.runs;
    if (runs.empty() && sec.contains("runs")) runs = sec.at("runs").get<std::vector<std::string>>();
    if (runs.empty()) throw UsageError("--run is required");
    const auto out = a.opts["--out"]->count() ? a.out : abs_from(c.base, sec.value("out", ""));
    if (out.empty()) throw UsageError("--out is required");
    ReportOptions options;
    options.pair_threshold = static_cast<int>(pick<double>(a.opts["--threshold"], a.threshold, sec, "threshold", 2));
    options.top_k = static_cast<std::size_t>(std::max(pick<int>(a.opts["--top-k"], a.top_k, sec, "top_k", 20), 1));
    const auto tax_path = a.opts["--taxonomy"]->count() ? a.taxonomy : abs_from(c.base, sec.value("taxonomy", ""));
    if (!tax_path.empty()) options.taxonomy = analysis::load_task_taxonomy(tax_path);
    const auto stop_path = a.opts["--stopwords"]->count() ? a.stopwords : abs_from(c.base, sec.value("stopwords", ""));
    if (!stop_path.empty()) options.stopwords = analysis::load_stopwords(stop_path);

    Store store(c.store);
    const auto files = build_report(store, runs, options);
    write_report(files, out);
    for (const auto& f : files) std::cout << (fs::path(out) / f.path).generic_string() << '\n';
    return 0;
}

int export_cmd(AnalyzeArgs& a) {
    auto& c = a.common;
    load_common(c);
    const auto run_id = run_arg(a, "export");
    if (a.out.empty()) throw UsageError("--out is required");
    Store store(c.store);
    if (!store.exists(run_id)) throw StoreError("run '" + run_id + "' not found");
    const std::set<std::string> only(a.scenarios.begin(), a.scenarios.end());
    std::size_t written = 0;
    fs::create_directories(a.out);
    for (const auto& t : sim::load_transcripts(store, run_id)) {
        if (!only.empty() && !only.contains(t.scenario_id)) continue;
        util::write_file_atomic(fs::path(a.out) / (t.scenario_id + ".md"), analysis::transcript_markdown(t));
        ++written;
    }
    for (const auto& id : only)
        if (written == 0 || !fs::exists(fs::path(a.out) / (id + ".md")))
            throw StoreError("scenario '" + id + "' not found in run '" + run_id + "'");
    std::cout << "exported " << written << " transcript(s) to " << a.out << '\n';
    return 0;
}

int validate_dataset_cmd(std::string path, const std::string& format, const std::string& config) {
    if (path.empty() && !config.empty()) {
        const auto file = load_config_file(config);
        const json& run = file.contains("run") ? file.at("run") : file;
        if (run.contains("dataset"))
            path = abs_from(fs::absolute(config).parent_path(), run.at("dataset").get<std::string>());
    }
    if (path.empty()) throw UsageError("a dataset path is required");
    const auto cases = load_dataset(path);
    const auto report = validate_dataset(cases);
    if (format == "json") std::cout << report.to_json().dump(2) << '\n';
    else std::cout << report.to_table();
    return report.ok() ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    auto logger = spdlog::stderr_color_mt("fairmonitor");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%l] %v");
    spdlog::set_level(spdlog::level::warn);

    CLI::App app{"fairmonitor: bias auditing toolkit for language models (static tests, LLM judge, "
                 "multi-agent simulation)",
                 "fairmonitor"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "fairmonitor 0.1.0");
    std::string log_level = "warn";
    app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")
        ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

    // generate
    GenerateArgs gen;
    auto* g = app.add_subcommand("generate", "Generate test cases with few-shot prompts");
    add_common(g, gen.common, true);
    gen.opts["--factor"] = g->add_option("--factor", gen.factor, "Sensitive factor, e.g. gender");
    gen.opts["--scenario"] = g->add_option("--scenario", gen.scenario, "Scenario label");
    gen.opts["--stage"] = g->add_option("--stage", gen.stage, "Stage: 1|2|3 or S1|S2|S3");
    gen.opts["--count"] = g->add_option("--count", gen.count, "Number of cases (even for stage 2)");
    gen.opts["--exemplars"] = g->add_option("--exemplars", gen.exemplars, "JSONL of expert-written exemplar cases");
    gen.opts["--model"] = g->add_option("--model", gen.model, "Generator model id");
    gen.opts["--seed"] = g->add_option("--seed", gen.seed, "Sampling seed");
    gen.opts["--batch-size"] = g->add_option("--batch-size", gen.batch_size, "Cases per generation call");
    gen.opts["--first-index"] = g->add_option("--first-index", gen.first_index, "First case counter");
    gen.opts["--out"] = g->add_option("--out", gen.out, "Output JSONL (default: stdout)");

    // validate-dataset
    std::string vd_path, vd_format = "table", vd_config;
    auto* vd = app.add_subcommand("validate-dataset", "Check dataset invariants and print the factor x stage counts");
    vd->add_option("dataset", vd_path, "Dataset JSONL")->check(CLI::ExistingFile);
    vd->add_option("--config", vd_config, "Config file; its [run] dataset is used when no path is given")
        ->check(CLI::ExistingFile);
    vd->add_option("--format", vd_format, "table|json")->check(CLI::IsMember({"table", "json"}));

    // run-static
    StaticArgs st;
    auto* rs = app.add_subcommand("run-static", "Ask subject models every selected test case");
    add_common(rs, st.common, true);
    st.opts["--run-id"] = rs->add_option("--run-id", st.run_id, "Run identifier");
    st.opts["--dataset"] = rs->add_option("--dataset", st.dataset, "Dataset JSONL");
    st.opts["--model"] = rs->add_option("--model", st.models, "Subject model id (repeatable)");
    st.opts["--stage"] = rs->add_option("--stage", st.stages, "Stage filter (repeatable)");
    st.opts["--factor"] = rs->add_option("--factor", st.factors, "Factor filter (repeatable)");
    st.opts["--concurrency"] = rs->add_option("--concurrency", st.concurrency, "Requests in flight");
    rs->add_flag("--no-resume", st.no_resume, "Fail instead of resuming an existing run");

    // judge
    JudgeArgs jd;
    auto* jc = app.add_subcommand("judge", "Score every answered case of a static run with the LLM judge");
    add_common(jc, jd.common, true);
    jd.opts["--run"] = jc->add_option("--run", jd.run_id, "Static run id");
    jd.opts["--judge-model"] = jc->add_option("--judge-model", jd.judge_model, "Judge model id");
    jd.opts["--concurrency"] = jc->add_option("--concurrency", jd.concurrency, "Requests in flight");

    // validate-judge
    JudgeArgs vj;
    auto* vjc = app.add_subcommand("validate-judge", "Correlate judge scores with human scores");
    add_common(vjc, vj.common, false);
    vj.opts["--run"] = vjc->add_option("--run", vj.run_id, "Judged static run id");
    vj.opts["--human"] = vjc->add_option("--human", vj.human, "CSV case_id,grader_id,score")->check(CLI::ExistingFile);
    vj.opts["--out"] = vjc->add_option("--out", vj.out, "Write the correlation JSON here (default: stdout)");

    // run-dynamic
    DynamicArgs dy;
    auto* rd = app.add_subcommand("run-dynamic", "Simulate a batch of multi-agent scenarios");
    add_common(rd, dy.common, true);
    dy.opts["--theme"] = rd->add_option("--theme", dy.theme, "election|group_project|technology|club");
    dy.opts["--mode"] = rd->add_option("--mode", dy.mode, "cooperation|competition|discussion");
    dy.opts["--n"] = rd->add_option("--n", dy.n, "Number of scenarios");
    dy.opts["--attribute"] = rd->add_option("--attribute", dy.attribute, "Contrast attribute, e.g. gender");
    dy.opts["--values"] = rd->add_option("--values", dy.values, "Contrast values (comma separated)");
    dy.opts["--seed"] = rd->add_option("--seed", dy.seed, "Batch seed");
    dy.opts["--rounds"] = rd->add_option("--rounds", dy.rounds, "Interaction rounds");
    dy.opts["--topology"] = rd->add_option("--topology", dy.topology, "one_to_one|one_to_many|many_to_many");
    dy.opts["--parallelism"] = rd->add_option("--parallelism", dy.parallelism, "Scenarios run at once");
    dy.opts["--run-id"] = rd->add_option("--run-id", dy.run_id, "Run identifier");
    dy.opts["--model"] = rd->add_option("--model", dy.model, "Model playing every agent");
    dy.opts["--specs"] = rd->add_option("--specs", dy.specs, "JSON file of scenario specs")->check(CLI::ExistingFile);
    rd->add_flag("--record-prompts", dy.record_prompts, "Keep every prompt in the transcripts");

    // analyze
    AnalyzeArgs an;
    auto* ac = app.add_subcommand("analyze", "Frequency tables and persona terms for a dynamic run");
    add_common(ac, an.common, false);
    an.opts["--run"] = ac->add_option("--run", an.run_id, "Dynamic run id");
    an.opts["--metric"] = ac->add_option("--metric", an.metric, "election|club|assignment|stance|persona-terms");
    an.opts["--attribute"] = ac->add_option("--attribute", an.attribute, "Attribute to group by");
    an.opts["--format"] = ac->add_option("--format", an.format, "table|csv|json");
    an.opts["--taxonomy"] = ac->add_option("--taxonomy", an.taxonomy, "Task taxonomy JSON")->check(CLI::ExistingFile);
    an.opts["--stopwords"] = ac->add_option("--stopwords", an.stopwords, "Stopword list")->check(CLI::ExistingFile);
    an.opts["--top-k"] = ac->add_option("--top-k", an.top_k, "Terms per group");
    an.opts["--out"] = ac->add_option("--out", an.out, "Output file (default: stdout)");

    // report
    AnalyzeArgs rp;
    auto* rc = app.add_subcommand("report", "Write the plot-ready report bundle for one or more runs");
    add_common(rc, rp.common, false);
    rp.opts["--run"] = rc->add_option("--run", rp.runs, "Run id (repeatable)");
    rp.opts["--out"] = rc->add_option("--out", rp.out, "Output directory");
    rp.opts["--threshold"] = rc->add_option("--threshold", rp.threshold, "Pair divergence threshold");
    rp.opts["--top-k"] = rc->add_option("--top-k", rp.top_k, "Persona terms per group");
    rp.opts["--taxonomy"] = rc->add_option("--taxonomy", rp.taxonomy, "Task taxonomy JSON")->check(CLI::ExistingFile);
    rp.opts["--stopwords"] = rc->add_option("--stopwords", rp.stopwords, "Stopword list")->check(CLI::ExistingFile);

    // export-transcripts
    AnalyzeArgs ex;
    auto* ec = app.add_subcommand("export-transcripts", "Render transcripts of a dynamic run as Markdown");
    add_common(ec, ex.common, false);
    ex.opts["--run"] = ec->add_option("--run", ex.run_id, "Dynamic run id");
    ec->add_option("--out", ex.out, "Output directory")->required();
    ec->add_option("--scenario", ex.scenarios, "Only these scenario ids (repeatable)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc_code = app.exit(e);
        return rc_code == 0 ? 0 : 2;
    }
    spdlog::set_level(spdlog::level::from_str(log_level));

    try {
        if (*g) return run_generate(gen);
        if (*vd) return validate_dataset_cmd(vd_path, vd_format, vd_config);
        if (*rs) return run_static_cmd(st);
        if (*jc) return judge_cmd(jd);
        if (*vjc) return validate_judge_cmd(vj);
        if (*rd) return run_dynamic_cmd(dy);
        if (*ac) return analyze_cmd(an);
        if (*rc) return report_cmd(rp);
        if (*ec) return export_cmd(ex);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\nRun with --help for usage.\n";
        return 2;
    } catch (const fairmonitor::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const json::exception& e) {
        std::cerr << "error: bad config value: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
