#include "fairmonitor/judge.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <mutex>

#include <spdlog/spdlog.h>

#include "fairmonitor/error.h"
#include "fairmonitor/gateway.h"
#include "fairmonitor/runner.h"
#include "fairmonitor/store.h"
#include "fairmonitor/util.h"

namespace fairmonitor {

ordered_json to_json(const JudgeVerdict& v) {
    ordered_json j;
    j["case_id"] = v.case_id;
    j["model_id"] = v.model_id;
    j["score"] = v.score;
    j["explanation"] = v.explanation;
    j["judge_model"] = v.judge_model;
    j["raw"] = v.raw;
    return j;
}

JudgeVerdict judge_verdict_from_json(const json& j) {
    JudgeVerdict v;
    v.case_id = j.at("case_id").get<std::string>();
    v.model_id = j.at("model_id").get<std::string>();
    v.score = j.at("score").get<int>();
    v.explanation = j.value("explanation", "");
    v.judge_model = j.value("judge_model", "");
    v.raw = j.value("raw", "");
    if (v.score < 1 || v.score > 5) throw StatsError("verdict score outside 1..5");
    return v;
}

std::vector<HumanScore> load_human_scores(const std::filesystem::path& path) {
    std::string text;
    try {
        text = util::read_file(path);
    } catch (const Error&) {
        throw DatasetError("cannot read human scores '" + path.string() + "'");
    }
    const auto rows = util::parse_csv(text);
    if (rows.empty()) throw DatasetError("human score file is empty");
    const auto& h = rows.front();
    if (h.size() < 3 || util::trim(h[0]) != "case_id" || util::trim(h[1]) != "grader_id" ||
        util::trim(h[2]) != "score")
        throw DatasetError("human score CSV header must be case_id,grader_id,score");
    std::vector<HumanScore> out;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& r = rows[i];
        const auto at = " at row " + std::to_string(i);
        if (r.size() < 3) throw DatasetError("too few fields" + at);
        HumanScore s{util::trim(r[0]), util::trim(r[1]), 0.0};
        try {
            std::size_t used = 0;
            const auto field = util::trim(r[2]);
            s.score = std::stod(field, &used);
            if (used != field.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw DatasetError("invalid score '" + r[2] + "'" + at);
        }
        if (!(s.score >= 1.0 && s.score <= 5.0)) throw DatasetError("score outside 1..5" + at);
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Verdict parsing
// ---------------------------------------------------------------------------

namespace {

std::string strip_decoration(std::string_view s) {
    std::string t = util::trim(s);
    while (!t.empty() && (t.front() == '*' || t.front() == '#' || t.front() == '_'))
        t = util::trim(t.substr(1));
    return t;
}

// "Score: 4", "**Score**: 4/5", "score = 3" -> 4, 4, 3
std::optional<int> labeled_score(const std::string& line) {
    std::string t = strip_decoration(line);
    if (!util::starts_with_ci(t, "score")) return std::nullopt;
    std::size_t i = 5;
    auto skip = [&](auto pred) {
        while (i < t.size() && pred(static_cast<unsigned char>(t[i]))) ++i;
    };
    skip([](unsigned char c) { return c == '*' || c == '_' || std::isspace(c); });
    if (i >= t.size() || (t[i] != ':' && t[i] != '=')) return std::nullopt;
    ++i;
    skip([](unsigned char c) { return c == '*' || c == '_' || std::isspace(c); });
    const std::size_t start = i;
    skip([](unsigned char c) { return std::isdigit(c) != 0; });
    if (i - start != 1) return std::nullopt;
    if (i + 1 < t.size() && t[i] == '.' && std::isdigit(static_cast<unsigned char>(t[i + 1])))
        return std::nullopt;
    const int v = t[start] - '0';
    if (v < 1 || v > 5) return std::nullopt;
    return v;
}

std::optional<int> first_standalone_digit(const std::string& text) {
    std::size_t i = 0;
    while (i < text.size()) {
        if (!std::isdigit(static_cast<unsigned char>(text[i]))) {
            ++i;
            continue;
        }
        const std::size_t start = i;
        while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
        const bool decimal_before = start >= 2 && text[start - 1] == '.' &&
                                    std::isdigit(static_cast<unsigned char>(text[start - 2]));
        const bool decimal_after = i + 1 < text.size() && text[i] == '.' &&
                                   std::isdigit(static_cast<unsigned char>(text[i + 1]));
        if (i - start == 1 && !decimal_before && !decimal_after) {
            const int v = text[start] - '0';
            if (v >= 1 && v <= 5) return v;
        }
    }
    return std::nullopt;
}

std::optional<int> first_number_word(const std::string& text) {
    static const std::map<std::string, int> kWords = {
        {"one", 1}, {"two", 2}, {"three", 3}, {"four", 4}, {"five", 5}};
    std::string word;
    auto flush = [&]() -> std::optional<int> {
        if (word.empty()) return std::nullopt;
        auto it = kWords.find(word);
        word.clear();
        if (it != kWords.end()) return it->second;
        return std::nullopt;
    };
    for (char c : text) {
        if (std::isalpha(static_cast<unsigned char>(c))) {
            word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        } else if (auto v = flush()) {
            return v;
        }
    }
    return flush();
}

} // namespace

ParsedVerdict parse_verdict(const std::string& raw) {
    const auto lines = util::split_lines(raw);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        auto score = labeled_score(lines[i]);
        if (!score) continue;
        std::string rest;
        for (std::size_t k = 0; k < lines.size(); ++k) {
            if (k == i) continue;
            if (!rest.empty()) rest += '\n';
            rest += lines[k];
        }
        rest = util::trim(rest);
        const auto head = strip_decoration(rest);
        if (util::starts_with_ci(head, "explanation")) {
            auto colon = head.find(':');
            if (colon != std::string::npos && colon <= 14) {
                std::string after = head.substr(colon + 1);
                while (!after.empty() && (after.front() == '*' || after.front() == '_'))
                    after.erase(0, 1);
                rest = util::trim(after);
            }
        }
        return {*score, rest};
    }
    if (auto v = first_standalone_digit(raw)) return {*v, util::trim(raw)};
    if (auto v = first_number_word(raw)) return {*v, util::trim(raw)};
    throw ParseError("no score found in judge output", raw);
}

std::string format_verdict(const ParsedVerdict& v) {
    return "Score: " + std::to_string(v.score) + "\nExplanation: " + v.explanation;
}

std::vector<ChatMessage> build_judge_messages(const std::string& question,
                                              const std::string& reference_answer,
                                              const std::string& model_answer,
                                              const PromptLibrary& prompts) {
    return {
        {"system", render(prompts.get("judge_system"), {})},
        {"user", render(prompts.get("judge_user"), {{"question", question},
                                                    {"model_answer", model_answer},
                                                    {"reference_answer", reference_answer}})},
    };
}

JudgeVerdict judge_case(const std::string& case_id, const std::string& question,
                        const std::string& reference_answer, const std::string& model_answer,
                        Gateway& gateway, const JudgeSettings& settings) {
    if (util::trim(question).empty() || util::trim(reference_answer).empty() ||
        util::trim(model_answer).empty())
        throw DatasetError("judge_case needs non-empty question, reference and answer");

    ChatRequest request;
    request.model_id = settings.judge_model;
    request.params = settings.params;
    request.case_id = case_id;
    request.messages = build_judge_messages(question, reference_answer, model_answer, *settings.prompts);

    auto first = gateway.complete(request);
    JudgeVerdict v;
    v.case_id = case_id;
    v.judge_model = settings.judge_model;
    try {
        const auto p = parse_verdict(first.text);
        v.score = p.score;
        v.explanation = p.explanation;
        v.raw = first.text;
        return v;
    } catch (const ParseError&) {
        spdlog::debug("judge output for '{}' unreadable, re-asking", case_id);
    }
    request.messages.push_back({"assistant", first.text});
    request.messages.push_back({"user", render(settings.prompts->get("judge_reminder"), {})});
    auto second = gateway.complete(request);
    try {
        const auto p = parse_verdict(second.text);
        v.score = p.score;
        v.explanation = p.explanation;
        v.raw = second.text;
        return v;
    } catch (const ParseError&) {
        throw ParseError("judge output for '" + case_id + "' unreadable after 2 attempts", second.text);
    }
}

stats::Correlation validate_judge(const std::vector<JudgeVerdict>& verdicts,
                                  const std::vector<HumanScore>& human) {
    std::map<std::string, std::map<std::string, std::vector<double>>> by_grader;
    for (const auto& h : human) by_grader[h.case_id][h.grader_id].push_back(h.score);
    std::map<std::string, double> human_mean;
    for (auto& [case_id, graders] : by_grader) {
        std::vector<double> means;
        for (auto& [g, scores] : graders) {
            std::sort(scores.begin(), scores.end());
            means.push_back(stats::mean(scores));
        }
        human_mean[case_id] = stats::mean(means);
    }

    std::map<std::string, std::vector<double>> judged;
    for (const auto& v : verdicts) judged[v.case_id].push_back(static_cast<double>(v.score));

    std::vector<double> x, y;
    for (auto& [case_id, scores] : judged) {
        auto it = human_mean.find(case_id);
        if (it == human_mean.end()) continue;
        std::sort(scores.begin(), scores.end());
        x.push_back(stats::mean(scores));
        y.push_back(it->second);
    }
    if (x.size() < 3) throw StatsError("insufficient overlap");
    return {stats::pearson(x, y), stats::spearman(x, y), x.size()};
}

std::vector<JudgeVerdict> load_verdicts(const Store& store, const std::string& run_id) {
    std::map<std::string, JudgeVerdict> latest;
    for (const auto& item : store.scan(run_id, RecordKind::Verdict)) {
        if (!item.ok()) continue;
        try {
            auto v = judge_verdict_from_json(*item.record);
            latest[v.case_id + "|" + v.model_id] = std::move(v);
        } catch (const std::exception& e) {
            spdlog::warn("skipping unreadable verdict at line {}: {}", item.line, e.what());
        }
    }
    std::vector<JudgeVerdict> out;
    for (auto& [_, v] : latest) out.push_back(std::move(v));
    return out;
}

JudgeRunSummary judge_run(const std::string& run_id, Gateway& gateway, Store& store,
                          const JudgeSettings& settings, std::size_t concurrency) {
    auto handle = store.attach(run_id);
    const auto manifest = handle->manifest();
    if (manifest.kind != RunKind::Static)
        throw StoreError("run '" + run_id + "' is not a static run");
    const auto cfg = RunConfig::from_json(manifest.config);
    const auto cases = load_dataset(cfg.dataset_path);
    std::map<std::string, const TestCase*> by_id;
    for (const auto& c : cases) by_id[c.id] = &c;

    const auto responses = load_responses(store, run_id);
    const auto done = store.completed_ids(run_id, RecordKind::Verdict);

    JudgeRunSummary summary;
    std::vector<const ModelResponse*> pending;
    for (const auto& r : responses) {
        if (done.contains(r.case_id + "|" + r.model_id)) {
            ++summary.skipped;
            continue;
        }
        pending.push_back(&r);
    }

    ordered_json section;
    section["kind"] = to_string(RunKind::Judge);
    section["judge_model"] = settings.judge_model;
    section["params"] = to_json(settings.params);
    section["status"] = to_string(RunStatus::Running);
    handle->set_section("judge", section);

    std::mutex summary_mu;
    util::parallel_for(pending.size(), std::max<std::size_t>(concurrency, 1), [&](std::size_t i) {
        const auto& r = *pending[i];
        const auto key = r.case_id + "|" + r.model_id;
        auto it = by_id.find(r.case_id);
        try {
            if (it == by_id.end()) throw DatasetError("case '" + r.case_id + "' not in dataset");
            auto v = judge_case(r.case_id, it->second->question, it->second->reference_answer, r.text,
                                gateway, settings);
            v.model_id = r.model_id;
            handle->append(RecordKind::Verdict, to_json(v));
            std::lock_guard lock(summary_mu);
            ++summary.scored;
        } catch (const Error& e) {
            ordered_json f;
            f["phase"] = "judge";
            f["key"] = key;
            f["case_id"] = r.case_id;
            f["model_id"] = r.model_id;
            f["error"] = e.what();
            if (auto* pe = dynamic_cast<const ParseError*>(&e)) f["raw"] = pe->raw();
            handle->append(RecordKind::Failure, f);
            spdlog::warn("judging {} failed: {}", key, e.what());
            std::lock_guard lock(summary_mu);
            ++summary.failed;
        }
    });

    section["scored"] = summary.scored + summary.skipped;
    section["failed"] = summary.failed;
    section["status"] = to_string(summary.failed == 0 ? RunStatus::Complete : RunStatus::Running);
    handle->set_section("judge", section);
    return summary;
}

} // namespace fairmonitor
