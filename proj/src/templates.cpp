#include "fairmonitor/templates.h"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "fairmonitor/error.h"
#include "fairmonitor/gateway.h"
#include "fairmonitor/stats.h"
#include "fairmonitor/util.h"
#include "prompts_data.h"

namespace fairmonitor {

namespace {

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

// Calls on_slot(name) for every `{ident}` and on_text(chunk) for the rest.
template <typename SlotFn, typename TextFn>
void scan_placeholders(std::string_view body, SlotFn on_slot, TextFn on_text) {
    std::size_t pos = 0;
    std::size_t text_start = 0;
    while (pos < body.size()) {
        if (body[pos] == '{' && pos + 1 < body.size() && is_ident_start(body[pos + 1])) {
            std::size_t end = pos + 2;
            while (end < body.size() && is_ident_char(body[end])) ++end;
            if (end < body.size() && body[end] == '}') {
                on_text(body.substr(text_start, pos - text_start));
                on_slot(body.substr(pos + 1, end - pos - 1));
                pos = end + 1;
                text_start = pos;
                continue;
            }
        }
        ++pos;
    }
    on_text(body.substr(text_start));
}

std::string strip_trailing_newline(std::string_view s) {
    if (!s.empty() && s.back() == '\n') s.remove_suffix(1);
    if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
    return std::string(s);
}

} // namespace

PromptTemplate::PromptTemplate(std::string name, std::string body)
    : name_(std::move(name)), body_(std::move(body)) {
    scan_placeholders(
        body_, [&](std::string_view slot) { required_.emplace(slot); }, [](std::string_view) {});
}

std::string render(const PromptTemplate& tmpl, const SlotMap& slots) {
    for (const auto& slot : tmpl.required_slots())
        if (!slots.contains(slot)) throw TemplateError("missing slot '" + slot + "'");
    std::string out;
    out.reserve(tmpl.body().size());
    scan_placeholders(
        tmpl.body(), [&](std::string_view slot) { out += slots.at(std::string(slot)); },
        [&](std::string_view text) { out += text; });
    return out;
}

const PromptLibrary& PromptLibrary::builtin() {
    static const PromptLibrary lib = [] {
        PromptLibrary l;
        for (const auto& [name, body] : detail::builtin_prompt_sources())
            l.templates_.emplace(std::string(name),
                                 PromptTemplate(std::string(name), strip_trailing_newline(body)));
        return l;
    }();
    return lib;
}

PromptLibrary PromptLibrary::with_overrides(const std::filesystem::path& dir) {
    PromptLibrary lib = builtin();
    if (!std::filesystem::is_directory(dir))
        throw TemplateError("prompt directory '" + dir.string() + "' does not exist");
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
        const auto name = entry.path().stem().string();
        lib.templates_.insert_or_assign(
            name, PromptTemplate(name, strip_trailing_newline(util::read_file(entry.path()))));
    }
    return lib;
}

const PromptTemplate& PromptLibrary::get(const std::string& name) const {
    auto it = templates_.find(name);
    if (it == templates_.end()) throw TemplateError("unknown prompt template '" + name + "'");
    return it->second;
}

std::vector<std::string> PromptLibrary::names() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : templates_) out.push_back(k);
    return out;
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

void GenerationSpec::validate() const {
    if (count < 0) throw DatasetError("count must be non-negative");
    if (util::trim(scenario).empty()) throw DatasetError("generation spec has an empty scenario");
    if (generator_model.empty()) throw DatasetError("generation spec has no generator model");
    if (exemplars.size() < 2) throw DatasetError("generation needs at least 2 exemplars");
    for (const auto& e : exemplars)
        if (e.stage != stage)
            throw DatasetError("exemplar '" + e.id + "' is not a " + stage_label(stage) + " case");
    if (stage == Stage::ImplicitAssociation) {
        if (count % 2 != 0)
            throw DatasetError("implicit association count must be even (cases come in pairs)");
        for (const auto& e : exemplars)
            if (!e.pair_id) throw DatasetError("exemplar '" + e.id + "' has no pair_id");
    }
    params.validate();
}

std::string case_id_for(SensitiveFactor f, Stage s, int counter) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%05d", counter);
    return std::string(to_string(f)) + "-" + std::to_string(stage_code(s)) + "-" + buf;
}

std::string pair_id_for(SensitiveFactor f, int counter) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%05d", counter);
    return std::string(to_string(f)) + "-pair-" + buf;
}

namespace {

std::string stage_instructions_name(Stage s) {
    switch (s) {
    case Stage::DirectInquiry: return "stage_direct_inquiry";
    case Stage::ImplicitAssociation: return "stage_implicit_association";
    case Stage::UnknownSituation: return "stage_unknown_situation";
    }
    return {};
}

std::string format_exemplars(const GenerationSpec& spec) {
    std::string out;
    if (spec.stage != Stage::ImplicitAssociation) {
        for (const auto& e : spec.exemplars) {
            out += "QUESTION: " + e.question + "\n";
            out += "REFERENCE: " + e.reference_answer + "\n---\n";
        }
        return out;
    }
    // group exemplars into pairs, neutral first, in first-seen order
    std::vector<std::string> order;
    std::map<std::string, std::pair<const TestCase*, const TestCase*>> pairs;
    for (const auto& e : spec.exemplars) {
        if (!pairs.contains(*e.pair_id)) order.push_back(*e.pair_id);
        auto& slot = pairs[*e.pair_id];
        if (e.pair_role == PairRole::Loaded) slot.second = &e;
        else slot.first = &e;
    }
    for (const auto& pid : order) {
        const auto& [neutral, loaded] = pairs[pid];
        if (!neutral || !loaded) continue;
        out += "NEUTRAL: " + neutral->question + "\n";
        out += "REFERENCE: " + neutral->reference_answer + "\n";
        out += "LOADED: " + loaded->question + "\n";
        out += "REFERENCE: " + loaded->reference_answer + "\n---\n";
    }
    return out;
}

std::string normalize_question(std::string_view q) {
    std::string out;
    bool space = false;
    for (unsigned char c : q) {
        if (std::isspace(c)) {
            space = !out.empty();
            continue;
        }
        if (space) out.push_back(' ');
        space = false;
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

enum class Label { None, Question, Reference, Neutral, Loaded };

// "QUESTION: text" (optionally wrapped in ** or prefixed by a list marker)
std::pair<Label, std::string> match_label(const std::string& line) {
    std::string s = util::trim(line);
    while (!s.empty() && (s.front() == '*' || s.front() == '#' || (s.front() == '-' && s.size() > 1 && s[1] == ' ')))
        s = util::trim(s.substr(1));
    static const std::pair<std::string_view, Label> kLabels[] = {
        {"QUESTION", Label::Question},
        {"REFERENCE ANSWER", Label::Reference},
        {"REFERENCE", Label::Reference},
        {"NEUTRAL", Label::Neutral},
        {"LOADED", Label::Loaded},
    };
    for (const auto& [text, label] : kLabels) {
        if (!util::starts_with_ci(s, text)) continue;
        std::string rest = s.substr(text.size());
        while (!rest.empty() && rest.front() == '*') rest.erase(0, 1);
        if (rest.empty() || rest.front() != ':') continue;
        rest.erase(0, 1);
        while (!rest.empty() && rest.front() == '*') rest.erase(0, 1);
        return {label, util::trim(rest)};
    }
    return {Label::None, {}};
}

bool is_separator(const std::string& line) {
    const auto t = util::trim(line);
    if (t.size() >= 3 && std::all_of(t.begin(), t.end(), [](char c) { return c == '-'; })) return true;
    return t.rfind("```", 0) == 0;
}

} // namespace

std::vector<ChatMessage> build_generation_prompt(const GenerationSpec& spec, int units,
                                                 const PromptLibrary& prompts) {
    const bool pairs = spec.stage == Stage::ImplicitAssociation;
    SlotMap slots{
        {"factor", std::string(display_name(spec.factor))},
        {"scenario", spec.scenario},
        {"stage_name", std::string(display_name(spec.stage))},
        {"stage_instructions", render(prompts.get(stage_instructions_name(spec.stage)), {})},
        {"exemplars", format_exemplars(spec)},
        {"count", std::to_string(units) + (pairs ? " question pairs" : "")},
        {"format", render(prompts.get(pairs ? "format_pair" : "format_single"), {})},
    };
    return {{"user", render(prompts.get("generation"), slots)}};
}

std::vector<GeneratedUnit> parse_generation_output(const std::string& raw, Stage stage) {
    const bool pairs = stage == Stage::ImplicitAssociation;
    const std::vector<Label> expected =
        pairs ? std::vector<Label>{Label::Neutral, Label::Reference, Label::Loaded, Label::Reference}
              : std::vector<Label>{Label::Question, Label::Reference};

    std::vector<std::vector<std::string>> blocks(1);
    for (const auto& line : util::split_lines(raw)) {
        if (is_separator(line)) {
            if (!blocks.back().empty()) blocks.emplace_back();
            continue;
        }
        blocks.back().push_back(line);
    }

    std::vector<GeneratedUnit> units;
    for (const auto& block : blocks) {
        std::vector<std::pair<Label, std::string>> fields;
        for (const auto& line : block) {
            auto [label, text] = match_label(line);
            if (label != Label::None) {
                fields.emplace_back(label, text);
            } else if (!fields.empty() && !util::trim(line).empty()) {
                auto& value = fields.back().second;
                value += value.empty() ? util::trim(line) : " " + util::trim(line);
            }
        }
        if (fields.empty()) continue;  // chatter between blocks

        std::string block_text;
        for (const auto& l : block) block_text += l + "\n";
        bool ok = fields.size() == expected.size();
        for (std::size_t i = 0; ok && i < fields.size(); ++i)
            ok = fields[i].first == expected[i] && !fields[i].second.empty();
        if (!ok) throw ParseError("malformed generation block:\n" + block_text, raw);

        GeneratedUnit u;
        u.question = fields[0].second;
        u.reference = fields[1].second;
        if (pairs) {
            u.loaded_question = fields[2].second;
            u.loaded_reference = fields[3].second;
        }
        units.push_back(std::move(u));
    }
    if (units.empty()) throw ParseError("no test cases found in generation output", raw);
    return units;
}

std::vector<TestCase> generate_cases(const GenerationSpec& spec, Gateway& gateway,
                                     const GenerationOptions& options, const PromptLibrary& prompts) {
    if (spec.count == 0) return {};
    spec.validate();
    if (options.batch_size <= 0) throw DatasetError("batch size must be positive");

    const bool pairs = spec.stage == Stage::ImplicitAssociation;
    const int units_needed = pairs ? spec.count / 2 : spec.count;
    const int calls_needed = (units_needed + options.batch_size - 1) / options.batch_size;
    const int max_calls = 3 * calls_needed + 2;

    std::unordered_set<std::string> seen;
    for (const auto& e : spec.exemplars) seen.insert(normalize_question(e.question));

    std::vector<GeneratedUnit> accepted;
    int calls = 0;
    while (static_cast<int>(accepted.size()) < units_needed) {
        if (calls >= max_calls) {
            const auto got = accepted.size() * (pairs ? 2 : 1);
            throw DatasetError("generation produced " + std::to_string(got) + " of " +
                               std::to_string(spec.count) + " cases for " +
                               std::string(to_string(spec.factor)) + "/" + stage_label(spec.stage));
        }
        const int ask = std::min(options.batch_size, units_needed - static_cast<int>(accepted.size()));
        ChatRequest request;
        request.model_id = spec.generator_model;
        request.messages = build_generation_prompt(spec, ask, prompts);
        request.params = spec.params;
        request.case_id = "generate:" + std::string(to_string(spec.factor)) + ":" +
                          stage_label(spec.stage) + ":" + std::to_string(calls);

        std::vector<GeneratedUnit> parsed;
        for (int attempt = 0;; ++attempt) {
            request.params.seed =
                util::splitmix64(options.seed ^ util::splitmix64(static_cast<std::uint64_t>(calls) * 31 +
                                                                 static_cast<std::uint64_t>(attempt)));
            const auto response = gateway.complete(request);
            try {
                parsed = parse_generation_output(response.text, spec.stage);
                break;
            } catch (const ParseError& e) {
                if (attempt >= options.parse_retries)
                    throw ParseError("unparseable generation output after " +
                                         std::to_string(attempt + 1) + " attempts: " + e.what(),
                                     e.raw());
                spdlog::warn("generation output for {} did not parse, retrying", request.case_id);
            }
        }
        ++calls;

        for (auto& u : parsed) {
            if (static_cast<int>(accepted.size()) >= units_needed) break;
            std::vector<std::string> keys{normalize_question(u.question)};
            if (u.loaded_question) keys.push_back(normalize_question(*u.loaded_question));
            const bool dup = std::any_of(keys.begin(), keys.end(),
                                         [&](const std::string& k) { return seen.contains(k); }) ||
                             (keys.size() == 2 && keys[0] == keys[1]);
            if (dup) {
                spdlog::debug("dropping duplicate generated question '{}'", u.question);
                continue;
            }
            for (auto& k : keys) seen.insert(std::move(k));
            accepted.push_back(std::move(u));
        }
    }

    std::vector<TestCase> cases;
    int index = options.first_index;
    int pair_index = options.first_pair_index;
    for (const auto& u : accepted) {
        TestCase c;
        c.stage = spec.stage;
        c.factor = spec.factor;
        c.scenario = spec.scenario;
        c.id = case_id_for(spec.factor, spec.stage, index++);
        c.question = u.question;
        c.reference_answer = u.reference;
        if (pairs) {
            const auto pid = pair_id_for(spec.factor, pair_index++);
            c.pair_id = pid;
            c.pair_role = PairRole::Neutral;
            TestCase loaded = c;
            loaded.id = case_id_for(spec.factor, spec.stage, index++);
            loaded.question = *u.loaded_question;
            loaded.reference_answer = *u.loaded_reference;
            loaded.pair_role = PairRole::Loaded;
            cases.push_back(std::move(c));
            cases.push_back(std::move(loaded));
        } else {
            cases.push_back(std::move(c));
        }
    }
    return cases;
}

// ---------------------------------------------------------------------------
// Review ingestion
// ---------------------------------------------------------------------------

namespace {

std::variant<bool, int> parse_review_value(const std::string& raw, std::size_t row) {
    const auto v = util::to_lower(util::trim(raw));
    if (v == "true" || v == "accept" || v == "yes") return true;
    if (v == "false" || v == "reject" || v == "no") return false;
    if (v.size() == 1 && v[0] >= '1' && v[0] <= '5') return v[0] - '0';
    throw DatasetError("invalid review value '" + raw + "' at row " + std::to_string(row));
}

} // namespace

ReviewImport review_import(const std::filesystem::path& path, const std::set<std::string>& known_cases) {
    std::string text;
    try {
        text = util::read_file(path);
    } catch (const Error&) {
        throw DatasetError("cannot read review file '" + path.string() + "'");
    }

    struct Row {
        std::string case_id, reviewer_id, value, note;
    };
    std::vector<Row> rows;
    if (path.extension() == ".jsonl") {
        const auto lines = util::split_lines(text);
        for (std::size_t i = 0; i < lines.size(); ++i) {
            if (util::trim(lines[i]).empty()) continue;
            try {
                const auto j = json::parse(lines[i]);
                const auto& v = j.at("value");
                rows.push_back({j.at("case_id").get<std::string>(),
                                j.at("reviewer_id").get<std::string>(),
                                v.is_string() ? v.get<std::string>() : v.dump(), j.value("note", "")});
            } catch (const json::exception&) {
                throw DatasetError("malformed review record at line " + std::to_string(i + 1));
            }
        }
    } else {
        auto table = util::parse_csv(text);
        if (table.empty()) throw DatasetError("review file is empty");
        const auto& header = table.front();
        const std::vector<std::string> want{"case_id", "reviewer_id", "value", "note"};
        if (header.size() < 3 || !std::equal(header.begin(), header.begin() + 3, want.begin()))
            throw DatasetError("review CSV header must be case_id,reviewer_id,value,note");
        for (std::size_t i = 1; i < table.size(); ++i) {
            auto& r = table[i];
            if (r.size() < 3)
                throw DatasetError("review row " + std::to_string(i) + " has too few fields");
            rows.push_back({util::trim(r[0]), util::trim(r[1]), r[2], r.size() > 3 ? r[3] : ""});
        }
    }

    ReviewImport out;
    std::optional<bool> binary;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        auto value = parse_review_value(r.value, i + 1);
        const bool is_bool = std::holds_alternative<bool>(value);
        if (binary && *binary != is_bool) throw DatasetError("inconsistent annotation type");
        binary = is_bool;
        if (!known_cases.empty() && !known_cases.contains(r.case_id)) {
            out.warnings.push_back("unknown case_id '" + r.case_id + "' (reviewer " + r.reviewer_id + ")");
            continue;
        }
        out.annotations.push_back({r.case_id, r.reviewer_id, value, r.note});
    }
    return out;
}

ordered_json ReviewAgreement::to_json() const {
    ordered_json j;
    j["type"] = binary ? "binary" : "ordinal";
    j["items"] = items;
    j["raters"] = raters;
    j["percent_agreement"] = percent_agreement;
    if (weighted_kappa) j["quadratic_weighted_kappa"] = *weighted_kappa;
    return j;
}

ReviewAgreement review_agreement(const std::vector<ReviewAnnotation>& annotations) {
    if (annotations.empty()) throw StatsError("no annotations");
    stats::RatingTable table;
    std::set<std::string> raters;
    const bool binary = std::holds_alternative<bool>(annotations.front().value);
    for (const auto& a : annotations) {
        if (std::holds_alternative<bool>(a.value) != binary)
            throw DatasetError("inconsistent annotation type");
        const int v = binary ? (std::get<bool>(a.value) ? 1 : 0) : std::get<int>(a.value);
        table[a.case_id][a.reviewer_id] = v;
        raters.insert(a.reviewer_id);
    }
    ReviewAgreement out;
    out.binary = binary;
    out.items = table.size();
    out.raters = raters.size();
    out.percent_agreement = stats::percent_agreement(table);
    if (!binary) out.weighted_kappa = stats::quadratic_weighted_kappa(table);
    return out;
}

} // namespace fairmonitor
