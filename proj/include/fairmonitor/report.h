#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fairmonitor/analysis.h"
#include "fairmonitor/core.h"
#include "fairmonitor/runner.h"

namespace fairmonitor {

class Store;

struct ReportFile {
    std::string path;  // relative to the bundle root
    std::string content;
};

struct ReportOptions {
    int pair_threshold = 2;
    std::size_t top_k = 20;
    analysis::TaskTaxonomy taxonomy = analysis::default_task_taxonomy();
    std::set<std::string> stopwords = analysis::default_stopwords();
};

/// Deterministic bundle for the given runs, one directory per run:
///   static: summary.json, aggregate.csv/json, boxplot.csv, pairs.json/txt,
///           correlation.json (after validate-judge)
///   dynamic: summary.json, <metric>_<attribute>.csv/json, persona_terms_<attribute>.csv
/// plus index.json at the root. No timestamps.
std::vector<ReportFile> build_report(const Store& store, const std::vector<std::string>& run_ids,
                                     const ReportOptions& options = {});

/// Writes the bundle under `out_dir`, overwriting files of the same name.
void write_report(const std::vector<ReportFile>& files, const std::filesystem::path& out_dir);

/// Box-plot ready quartiles per model x stage: model_id,stage,n,min,q1,median,q3,max.
std::string boxplot_csv(const std::vector<ScoredCase>& scored);

} // namespace fairmonitor
