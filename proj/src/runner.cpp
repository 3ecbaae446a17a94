#include "fairmonitor/runner.h"

#include <algorithm>
#include <cstdio>
#include <mutex>
#include <sstream>

#include <spdlog/spdlog.h>

#include "fairmonitor/error.h"
#include "fairmonitor/gateway.h"
#include "fairmonitor/store.h"
#include "fairmonitor/templates.h"
#include "fairmonitor/util.h"

namespace fairmonitor {

void RunConfig::validate() const {
    if (run_id.empty()) throw ConfigError("run_id is required");
    if (dataset_path.empty()) throw ConfigError("dataset path is required");
    if (subject_models.empty()) throw ConfigError("subject_models must not be empty");
    std::set<std::string> seen;
    for (const auto& m : subject_models) {
        if (m.empty()) throw ConfigError("empty model id in subject_models");
        if (!seen.insert(m).second) throw ConfigError("duplicate subject model '" + m + "'");
    }
    for (const auto& [model, p] : params) {
        if (!seen.contains(model)) throw ConfigError("params given for unknown model '" + model + "'");
        p.validate();
    }
    if (concurrency < 1) throw ConfigError("concurrency must be positive");
}

SamplingParams RunConfig::params_for(const std::string& model) const {
    auto it = params.find(model);
    return it == params.end() ? SamplingParams::subject() : it->second;
}

ordered_json RunConfig::to_json() const {
    ordered_json j;
    j["run_id"] = run_id;
    j["dataset"] = dataset_path.generic_string();
    j["subject_models"] = subject_models;
    ordered_json p = ordered_json::object();
    for (const auto& m : subject_models) p[m] = fairmonitor::to_json(params_for(m));
    j["params"] = p;
    ordered_json st = ordered_json::array();
    for (auto s : stages) st.push_back(stage_code(s));
    j["stages"] = st;
    ordered_json fs = ordered_json::array();
    for (auto f : factors) fs.push_back(std::string(to_string(f)));
    j["factors"] = fs;
    return j;
}

RunConfig RunConfig::from_json(const json& root, const std::filesystem::path& base_dir) {
    const json& j = root.contains("run") ? root.at("run") : root;
    RunConfig c;
    try {
        c.run_id = j.value("run_id", "");
        std::filesystem::path ds = j.value("dataset", "");
        if (!ds.empty() && ds.is_relative() && !base_dir.empty()) ds = base_dir / ds;
        c.dataset_path = ds.lexically_normal();
        if (j.contains("subject_models"))
            c.subject_models = j.at("subject_models").get<std::vector<std::string>>();
        if (j.contains("params")) {
            for (const auto& [model, pj] : j.at("params").items())
                c.params[model] = sampling_params_from_json(pj, SamplingParams::subject());
        }
        if (j.contains("stages")) {
            for (const auto& s : j.at("stages")) {
                const std::string lit = s.is_number() ? std::to_string(s.get<int>()) : s.get<std::string>();
                auto st = parse_stage(lit);
                if (!st) throw ConfigError("unknown stage '" + lit + "'");
                c.stages.insert(*st);
            }
        }
        if (j.contains("factors")) {
            for (const auto& f : j.at("factors")) {
                const auto lit = f.get<std::string>();
                auto fa = parse_factor(lit);
                if (!fa) throw ConfigError("unknown factor '" + lit + "'");
                c.factors.insert(*fa);
            }
        }
        c.concurrency = j.value("concurrency", 4);
        c.resume = j.value("resume", true);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad run config: ") + e.what());
    }
    return c;
}

ordered_json RunSummary::to_json() const {
    ordered_json j;
    j["selected"] = selected;
    j["answered"] = answered;
    j["failed"] = failed;
    j["skipped"] = skipped;
    ordered_json ps = ordered_json::object();
    for (const auto& [s, n] : per_stage) ps[stage_label(s)] = n;
    j["per_stage"] = ps;
    j["failed_keys"] = failed_keys;
    return j;
}

std::vector<TestCase> select_cases(const std::vector<TestCase>& cases, const RunConfig& config) {
    std::vector<TestCase> out;
    for (const auto& c : cases) {
        if (!config.stages.empty() && !config.stages.contains(c.stage)) continue;
        if (!config.factors.empty() && !config.factors.contains(c.factor)) continue;
        out.push_back(c);
    }
    return out;
}

ChatRequest subject_request(const TestCase& c, const std::string& model, const SamplingParams& params) {
    ChatRequest r;
    r.model_id = model;
    r.params = params;
    r.case_id = c.id;
    r.messages = {{"user", render(PromptLibrary::builtin().get("subject_question"), {{"question", c.question}})}};
    return r;
}

RunSummary run_static(const RunConfig& config, const std::vector<TestCase>& cases, Gateway& gateway,
                      Store& store) {
    config.validate();
    const auto report = validate_dataset(cases);
    if (!report.ok()) {
        const auto& v = report.violations.front();
        throw DatasetError("dataset has " + std::to_string(report.violations.size()) +
                           " violation(s); first: " + v.case_id + ": " + v.message);
    }
    if (!config.resume && store.exists(config.run_id))
        throw StoreError("run '" + config.run_id + "' already exists and resume is disabled");

    auto handle = store.open_run(config.run_id, RunKind::Static, config.to_json());
    const auto selected = select_cases(cases, config);
    const auto done = store.completed_ids(config.run_id, RecordKind::Response);

    RunSummary summary;
    summary.selected = selected.size();
    std::vector<ChatRequest> requests;
    std::vector<const TestCase*> owners;
    for (const auto& model : config.subject_models) {
        const auto params = config.params_for(model);
        for (const auto& c : selected) {
            if (done.contains(c.id + "|" + model)) {
                ++summary.skipped;
                continue;
            }
            requests.push_back(subject_request(c, model, params));
            owners.push_back(&c);
        }
    }
    spdlog::info("run '{}': {} selected x {} model(s), {} pending, {} already answered", config.run_id,
                 selected.size(), config.subject_models.size(), requests.size(), summary.skipped);

    std::mutex mu;
    auto on_done = [&](std::size_t i, const Gateway::Outcome& outcome) {
        const auto key = requests[i].case_id + "|" + requests[i].model_id;
        if (outcome.ok() && !util::trim(outcome.response->text).empty()) {
            handle->append(RecordKind::Response, to_json(*outcome.response));
            std::lock_guard lock(mu);
            ++summary.answered;
            ++summary.per_stage[owners[i]->stage];
            return;
        }
        ordered_json f;
        f["phase"] = "static";
        f["key"] = key;
        f["case_id"] = requests[i].case_id;
        f["model_id"] = requests[i].model_id;
        f["error"] = outcome.ok() ? std::string("empty response") : outcome.error;
        handle->append(RecordKind::Failure, f);
        std::lock_guard lock(mu);
        ++summary.failed;
        summary.failed_keys.push_back(key);
    };
    gateway.complete_batch(requests, on_done);

    std::sort(summary.failed_keys.begin(), summary.failed_keys.end());
    handle->add_counter("responses", static_cast<std::int64_t>(summary.answered));
    handle->add_counter("failures", static_cast<std::int64_t>(summary.failed));
    if (summary.failed == 0) handle->finish(RunStatus::Complete);
    handle->checkpoint();
    return summary;
}

std::vector<ModelResponse> load_responses(const Store& store, const std::string& run_id) {
    std::map<std::string, ModelResponse> latest;
    for (const auto& item : store.scan(run_id, RecordKind::Response)) {
        if (!item.ok()) continue;
        try {
            auto r = model_response_from_json(*item.record);
            latest[r.case_id + "|" + r.model_id] = std::move(r);
        } catch (const std::exception& e) {
            spdlog::warn("skipping unreadable response at line {}: {}", item.line, e.what());
        }
    }
    std::vector<ModelResponse> out;
    out.reserve(latest.size());
    for (auto& [_, r] : latest) out.push_back(std::move(r));
    return out;
}

ScoredCase make_scored(TestCase c, ModelResponse r, JudgeVerdict v) {
    if (v.score < 1 || v.score > 5) throw StatsError("verdict score outside 1..5");
    ScoredCase s{std::move(c), std::move(r), std::move(v), 0.0};
    s.normalized = s.verdict.score / 5.0 * 100.0;
    return s;
}

ordered_json to_json(const ScoredCase& s) {
    ordered_json j;
    j["case"] = to_json(s.test_case);
    j["response"] = to_json(s.response);
    j["verdict"] = to_json(s.verdict);
    j["normalized"] = s.normalized;
    return j;
}

ScoredCase scored_case_from_json(const json& j) {
    try {
        return make_scored(test_case_from_json(j.at("case")), model_response_from_json(j.at("response")),
                           judge_verdict_from_json(j.at("verdict")));
    } catch (const json::exception& e) {
        throw DatasetError(std::string("bad scored case: ") + e.what());
    }
}

std::vector<ScoredCase> load_scored(const Store& store, const std::string& run_id,
                                    const std::vector<TestCase>& cases) {
    std::map<std::string, const TestCase*> by_id;
    for (const auto& c : cases) by_id[c.id] = &c;
    std::map<std::string, JudgeVerdict> verdicts;
    for (auto& v : load_verdicts(store, run_id)) verdicts[v.case_id + "|" + v.model_id] = std::move(v);

    std::vector<ScoredCase> out;
    for (auto& r : load_responses(store, run_id)) {
        auto v = verdicts.find(r.case_id + "|" + r.model_id);
        auto c = by_id.find(r.case_id);
        if (v == verdicts.end() || c == by_id.end()) continue;
        out.push_back(make_scored(*c->second, std::move(r), v->second));
    }
    return out;
}

std::vector<PairDelta> compare_pairs(const std::vector<ScoredCase>& scored, int threshold) {
    struct Members {
        std::optional<int> neutral;
        std::optional<int> loaded;
    };
    std::map<std::pair<std::string, std::string>, Members> groups;
    for (const auto& s : scored) {
        const auto& c = s.test_case;
        if (!c.pair_id) continue;
        if (!c.pair_role) throw DatasetError("case '" + c.id + "' has a pair_id but no pair_role");
        auto& m = groups[{s.response.model_id, *c.pair_id}];
        auto& slot = *c.pair_role == PairRole::Neutral ? m.neutral : m.loaded;
        if (slot) throw DatasetError("pair '" + *c.pair_id + "' has a duplicate " +
                                     std::string(to_string(*c.pair_role)) + " member");
        slot = s.verdict.score;
    }
    std::vector<PairDelta> out;
    for (const auto& [key, m] : groups) {
        if (!m.neutral || !m.loaded)
            throw DatasetError("pair '" + key.second + "' is missing its " +
                               (m.neutral ? "loaded" : "neutral") + " member");
        PairDelta d;
        d.model_id = key.first;
        d.pair_id = key.second;
        d.neutral_score = *m.neutral;
        d.loaded_score = *m.loaded;
        d.delta = d.neutral_score - d.loaded_score;
        d.flagged = std::abs(d.delta) >= threshold;
        out.push_back(std::move(d));
    }
    return out;
}

ordered_json pairs_json(const std::vector<PairDelta>& pairs, int threshold) {
    ordered_json j;
    j["threshold"] = threshold;
    std::size_t flagged = 0;
    ordered_json arr = ordered_json::array();
    for (const auto& p : pairs) {
        ordered_json e;
        e["model_id"] = p.model_id;
        e["pair_id"] = p.pair_id;
        e["neutral_score"] = p.neutral_score;
        e["loaded_score"] = p.loaded_score;
        e["delta"] = p.delta;
        e["flagged"] = p.flagged;
        arr.push_back(std::move(e));
        flagged += p.flagged ? 1 : 0;
    }
    j["total"] = pairs.size();
    j["flagged"] = flagged;
    j["pairs"] = std::move(arr);
    return j;
}

std::string pairs_table(const std::vector<PairDelta>& pairs) {
    std::size_t wm = 5, wp = 7;
    for (const auto& p : pairs) {
        wm = std::max(wm, p.model_id.size());
        wp = std::max(wp, p.pair_id.size());
    }
    auto pad = [](const std::string& s, std::size_t w) { return s + std::string(w - s.size(), ' '); };
    std::ostringstream out;
    out << pad("model", wm) << "  " << pad("pair_id", wp) << "  neutral  loaded  delta  flagged\n";
    for (const auto& p : pairs) {
        char nums[64];
        std::snprintf(nums, sizeof nums, "%7d  %6d  %5d  %s", p.neutral_score, p.loaded_score, p.delta,
                      p.flagged ? "yes" : "no");
        out << pad(p.model_id, wm) << "  " << pad(p.pair_id, wp) << "  " << nums << '\n';
    }
    return out.str();
}

} // namespace fairmonitor
