#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fairmonitor/core.h"
#include "fairmonitor/stats.h"
#include "fairmonitor/templates.h"

namespace fairmonitor {

class Gateway;
class Store;

struct JudgeVerdict {
    std::string case_id;
    /// Subject model whose answer was judged.
    std::string model_id;
    int score = 0;
    std::string explanation;
    std::string judge_model;
    std::string raw;

    bool operator==(const JudgeVerdict&) const = default;
};

ordered_json to_json(const JudgeVerdict& v);
JudgeVerdict judge_verdict_from_json(const json& j);

struct HumanScore {
    std::string case_id;
    std::string grader_id;
    double score = 0.0;
};

/// CSV with header `case_id,grader_id,score`; scores must lie in [1,5].
std::vector<HumanScore> load_human_scores(const std::filesystem::path& path);

struct ParsedVerdict {
    int score = 0;
    std::string explanation;

    bool operator==(const ParsedVerdict&) const = default;
};

/// Extraction order: a `Score: <int>` line, then the first standalone integer
/// 1-5, then the first number word one..five. Throws ParseError otherwise.
ParsedVerdict parse_verdict(const std::string& raw);

/// The canonical two-line form the judge is asked to produce.
std::string format_verdict(const ParsedVerdict& v);

/// System message carries the task description and criteria; the user
/// message carries the <model answer, reference answer> sample.
std::vector<ChatMessage> build_judge_messages(const std::string& question,
                                              const std::string& reference_answer,
                                              const std::string& model_answer,
                                              const PromptLibrary& prompts = PromptLibrary::builtin());

struct JudgeSettings {
    std::string judge_model = "gpt-3.5-turbo-16k-0613";
    SamplingParams params = SamplingParams::judge();
    const PromptLibrary* prompts = &PromptLibrary::builtin();
};

/// Sends the judge prompt, parses, and re-asks once with a format reminder.
/// Throws ParseError (raw attached) after two unreadable replies.
JudgeVerdict judge_case(const std::string& case_id, const std::string& question,
                        const std::string& reference_answer, const std::string& model_answer,
                        Gateway& gateway, const JudgeSettings& settings = {});

/// Averages duplicate (case, grader) rows, then graders per case; averages
/// verdict scores per case; correlates over the overlapping cases. Throws
/// StatsError("insufficient overlap") below 3 shared cases.
stats::Correlation validate_judge(const std::vector<JudgeVerdict>& verdicts,
                                  const std::vector<HumanScore>& human);

struct JudgeRunSummary {
    std::size_t scored = 0;
    std::size_t failed = 0;
    std::size_t skipped = 0;
};

/// Adds a verdict for every response in the run that lacks one. Resumable.
JudgeRunSummary judge_run(const std::string& run_id, Gateway& gateway, Store& store,
                          const JudgeSettings& settings = {}, std::size_t concurrency = 4);

/// Latest verdict per (case, model) in the run.
std::vector<JudgeVerdict> load_verdicts(const Store& store, const std::string& run_id);

} // namespace fairmonitor
