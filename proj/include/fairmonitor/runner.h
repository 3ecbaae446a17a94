#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fairmonitor/core.h"
#include "fairmonitor/judge.h"

namespace fairmonitor {

class Gateway;
class Store;

struct RunConfig {
    std::string run_id;
    std::filesystem::path dataset_path;
    std::vector<std::string> subject_models;
    std::map<std::string, SamplingParams> params;  // per model; defaults to subject()
    std::set<Stage> stages;                        // empty = all
    std::set<SensitiveFactor> factors;             // empty = all
    int concurrency = 4;
    bool resume = true;

    void validate() const;
    SamplingParams params_for(const std::string& model) const;
    /// Snapshot stored in the run manifest; equal configs reopen the same run.
    ordered_json to_json() const;
    /// Reads a `[run]` table (TOML or JSON). Relative dataset paths resolve
    /// against base_dir.
    static RunConfig from_json(const json& j, const std::filesystem::path& base_dir = {});
};

struct RunSummary {
    std::size_t selected = 0;
    std::size_t answered = 0;
    std::size_t failed = 0;
    std::size_t skipped = 0;  // already answered before this invocation
    std::map<Stage, std::size_t> per_stage;  // responses persisted this invocation
    std::vector<std::string> failed_keys;    // "case|model"

    ordered_json to_json() const;
};

/// Cases passing the stage/factor filters, in dataset order.
std::vector<TestCase> select_cases(const std::vector<TestCase>& cases, const RunConfig& config);

/// Subject models see only the question text.
ChatRequest subject_request(const TestCase& c, const std::string& model, const SamplingParams& params);

RunSummary run_static(const RunConfig& config, const std::vector<TestCase>& cases, Gateway& gateway,
                      Store& store);

/// Latest response per (case, model).
std::vector<ModelResponse> load_responses(const Store& store, const std::string& run_id);

struct ScoredCase {
    TestCase test_case;
    ModelResponse response;
    JudgeVerdict verdict;
    double normalized = 0.0;  // verdict.score / 5 * 100
};

ScoredCase make_scored(TestCase c, ModelResponse r, JudgeVerdict v);

ordered_json to_json(const ScoredCase& s);
ScoredCase scored_case_from_json(const json& j);

/// Joins dataset, responses and verdicts of a run.
std::vector<ScoredCase> load_scored(const Store& store, const std::string& run_id,
                                    const std::vector<TestCase>& cases);

struct PairDelta {
    std::string model_id;
    std::string pair_id;
    int neutral_score = 0;
    int loaded_score = 0;
    int delta = 0;  // neutral - loaded
    bool flagged = false;

    bool operator==(const PairDelta&) const = default;
};

inline constexpr int kDefaultPairThreshold = 2;

/// Sorted by (model, pair_id). Throws DatasetError naming the pair when a
/// member is missing.
std::vector<PairDelta> compare_pairs(const std::vector<ScoredCase>& scored,
                                     int threshold = kDefaultPairThreshold);

ordered_json pairs_json(const std::vector<PairDelta>& pairs, int threshold);
std::string pairs_table(const std::vector<PairDelta>& pairs);

} // namespace fairmonitor
