#include "fairmonitor/report.h"

#include <map>
#include <set>

#include <spdlog/spdlog.h>

#include "fairmonitor/error.h"
#include "fairmonitor/judge.h"
#include "fairmonitor/sim.h"
#include "fairmonitor/stats.h"
#include "fairmonitor/store.h"
#include "fairmonitor/util.h"

namespace fairmonitor {

std::string boxplot_csv(const std::vector<ScoredCase>& scored) {
    using util::format_double;
    std::string out = "model_id,stage,n,min,q1,median,q3,max\n";
    for (const auto& r : stats::aggregate(scored, stats::GroupBy{true, true, false})) {
        const auto& s = r.summary;
        out += util::csv_escape(r.key.model_id) + "," + stage_label(*r.key.stage) + "," + std::to_string(s.n) + "," +
               format_double(s.min) + "," + format_double(s.q1) + "," + format_double(s.median) + "," +
               format_double(s.q3) + "," + format_double(s.max) + "\n";
    }
    return out;
}

namespace {

std::size_t valid_lines(const Store& store, const std::string& run_id, RecordKind kind) {
    std::size_t n = 0;
    for (const auto& item : store.scan(run_id, kind)) n += item.ok() ? 1 : 0;
    return n;
}

void static_bundle(const Store& store, const RunManifest& m, const ReportOptions& options,
                   std::vector<ReportFile>& files) {
    const auto dir = m.run_id + "/";
    const auto cfg = RunConfig::from_json(m.config);
    const auto cases = load_dataset(cfg.dataset_path);
    const auto scored = load_scored(store, m.run_id, cases);

    ordered_json summary;
    summary["run_id"] = m.run_id;
    summary["kind"] = to_string(m.kind);
    summary["status"] = to_string(m.status);
    summary["subject_models"] = cfg.subject_models;
    summary["selected_cases"] = select_cases(cases, cfg).size();
    summary["responses"] = load_responses(store, m.run_id).size();
    summary["verdicts"] = load_verdicts(store, m.run_id).size();
    summary["failure_records"] = valid_lines(store, m.run_id, RecordKind::Failure);
    summary["scored"] = scored.size();
    files.push_back({dir + "summary.json", summary.dump(2) + "\n"});

    const auto cube = stats::aggregate_cube(scored);
    files.push_back({dir + "aggregate.csv", stats::aggregate_csv(cube)});
    files.push_back({dir + "aggregate.json", stats::aggregate_json(cube).dump(2) + "\n"});
    files.push_back({dir + "boxplot.csv", boxplot_csv(scored)});

    // only pairs with both members scored can be compared
    std::map<std::pair<std::string, std::string>, int> members;
    for (const auto& s : scored)
        if (s.test_case.pair_id) ++members[{s.response.model_id, *s.test_case.pair_id}];
    std::vector<ScoredCase> paired;
    std::set<std::string> incomplete;
    for (const auto& s : scored) {
        if (!s.test_case.pair_id) continue;
        if (members[{s.response.model_id, *s.test_case.pair_id}] == 2) paired.push_back(s);
        else incomplete.insert(s.response.model_id + "|" + *s.test_case.pair_id);
    }
    const auto pairs = compare_pairs(paired, options.pair_threshold);
    auto pj = pairs_json(pairs, options.pair_threshold);
    pj["incomplete"] = std::vector<std::string>(incomplete.begin(), incomplete.end());
    files.push_back({dir + "pairs.json", pj.dump(2) + "\n"});
    files.push_back({dir + "pairs.txt", pairs_table(pairs)});

    auto it = m.sections.find("judge_validation");
    if (it != m.sections.end()) files.push_back({dir + "correlation.json", ordered_json(it->second).dump(2) + "\n"});
}

void dynamic_bundle(const Store& store, const RunManifest& m, const ReportOptions& options,
                    std::vector<ReportFile>& files) {
    const auto dir = m.run_id + "/";
    const auto transcripts = sim::load_transcripts(store, m.run_id);
    std::set<sim::ResolutionKind> kinds;
    std::set<std::string> attributes;
    std::size_t complete = 0;
    for (const auto& t : transcripts) {
        kinds.insert(t.spec.resolution);
        complete += t.complete() ? 1 : 0;
        for (const auto& r : t.spec.roles)
            for (const auto& [k, _] : r.attributes) attributes.insert(k);
    }

    ordered_json summary;
    summary["run_id"] = m.run_id;
    summary["kind"] = to_string(m.kind);
    summary["status"] = to_string(m.status);
    summary["transcripts"] = transcripts.size();
    summary["complete"] = complete;
    summary["invalid"] = transcripts.size() - complete;
    files.push_back({dir + "summary.json", summary.dump(2) + "\n"});

    for (auto kind : kinds) {
        for (const auto& attr : attributes) {
            analysis::FrequencyTable table;
            try {
                switch (kind) {
                case sim::ResolutionKind::Vote: table = analysis::election_ratio(transcripts, attr); break;
                case sim::ResolutionKind::ClubChoice: table = analysis::club_distribution(transcripts, attr); break;
                case sim::ResolutionKind::Assignment:
                    table = analysis::assignment_distribution(transcripts, attr, options.taxonomy);
                    break;
                case sim::ResolutionKind::StanceSurvey: table = analysis::stance_by_group(transcripts, attr); break;
                }
            } catch (const StatsError& e) {
                spdlog::info("run '{}': no {} table for '{}': {}", m.run_id, sim::to_string(kind), attr, e.what());
                continue;
            }
            if (table.included == 0) continue;
            const auto base = dir + table.metric + "_" + attr;
            files.push_back({base + ".csv", table.to_csv()});
            files.push_back({base + ".json", table.to_json().dump(2) + "\n"});
        }
    }
    for (const auto& attr : attributes) {
        const auto personas = analysis::personas_by_attribute(transcripts, attr);
        if (personas.empty()) continue;
        const auto terms = analysis::persona_terms(personas, options.stopwords, options.top_k);
        files.push_back({dir + "persona_terms_" + attr + ".csv", analysis::terms_csv(terms)});
    }
}

} // namespace

std::vector<ReportFile> build_report(const Store& store, const std::vector<std::string>& run_ids,
                                     const ReportOptions& options) {
    if (run_ids.empty()) throw ConfigError("no runs given for the report");
    std::set<std::string> seen;
    for (const auto& id : run_ids) {
        if (!seen.insert(id).second) throw ConfigError("run '" + id + "' listed twice");
        if (!store.exists(id)) throw StoreError("run '" + id + "' not found in " + store.root().string());
    }
    std::vector<ReportFile> files;
    ordered_json index = ordered_json::array();
    for (const auto& id : std::set<std::string>(run_ids.begin(), run_ids.end())) {
        const auto m = store.manifest(id);
        index.push_back({{"run_id", id}, {"kind", to_string(m.kind)}});
        if (m.kind == RunKind::Dynamic) dynamic_bundle(store, m, options, files);
        else static_bundle(store, m, options, files);
    }
    files.push_back({"index.json", index.dump(2) + "\n"});
    return files;
}

void write_report(const std::vector<ReportFile>& files, const std::filesystem::path& out_dir) {
    for (const auto& f : files) {
        const auto path = out_dir / f.path;
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec) throw StoreError("cannot create '" + path.parent_path().string() + "'");
        util::write_file_atomic(path, f.content);
    }
}

} // namespace fairmonitor
