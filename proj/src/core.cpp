#include "fairmonitor/core.h"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "fairmonitor/error.h"
#include "fairmonitor/util.h"

namespace fairmonitor {

namespace {

struct FactorNames {
    SensitiveFactor factor;
    std::string_view key;
    std::string_view label;
};

constexpr std::array<FactorNames, 9> kFactorNames = {{
    {SensitiveFactor::Gender, "gender", "Gender"},
    {SensitiveFactor::RaceOrCulturalBackground, "race_or_cultural_background",
     "Race or Cultural Background"},
    {SensitiveFactor::GradeOrAge, "grade_or_age", "Grade or Age"},
    {SensitiveFactor::LearningStyle, "learning_style", "Learning Style"},
    {SensitiveFactor::LearningAbility, "learning_ability", "Learning Ability"},
    {SensitiveFactor::FamilySocioeconomicStatus, "family_socioeconomic_status",
     "Family Socioeconomic Status"},
    {SensitiveFactor::Subject, "subject", "Subject"},
    {SensitiveFactor::DisabilitiesAndSpecialGroups, "disabilities_and_special_groups",
     "Disabilities and Special Groups"},
    {SensitiveFactor::Personality, "personality", "Personality"},
}};

std::string alnum_lower(std::string_view s) {
    std::string out;
    for (unsigned char c : s)
        if (std::isalnum(c)) out.push_back(static_cast<char>(std::tolower(c)));
    return out;
}

std::string require_string(const json& j, const char* field) {
    auto it = j.find(field);
    if (it == j.end()) throw DatasetError(std::string("missing field '") + field + "'");
    if (!it->is_string()) throw DatasetError(std::string("field '") + field + "' is not a string");
    return it->get<std::string>();
}

} // namespace

std::string_view to_string(SensitiveFactor f) {
    return kFactorNames[static_cast<std::size_t>(f)].key;
}

std::string_view display_name(SensitiveFactor f) {
    return kFactorNames[static_cast<std::size_t>(f)].label;
}

std::optional<SensitiveFactor> parse_factor(std::string_view text) {
    const auto needle = alnum_lower(text);
    if (needle.empty()) return std::nullopt;
    for (const auto& n : kFactorNames) {
        if (needle == alnum_lower(n.key) || needle == alnum_lower(n.label)) return n.factor;
    }
    return std::nullopt;
}

int stage_code(Stage s) { return static_cast<int>(s); }

std::optional<Stage> stage_from_code(int code) {
    if (code < 1 || code > 3) return std::nullopt;
    return static_cast<Stage>(code);
}

std::string stage_label(Stage s) { return "S" + std::to_string(stage_code(s)); }

std::string_view display_name(Stage s) {
    switch (s) {
    case Stage::DirectInquiry: return "Direct Inquiry";
    case Stage::ImplicitAssociation: return "Implicit Association";
    case Stage::UnknownSituation: return "Unknown Situation";
    }
    return "?";
}

std::optional<Stage> parse_stage(std::string_view text) {
    auto t = alnum_lower(text);
    if (t.size() == 2 && t[0] == 's') t = t.substr(1);
    if (t == "1" || t == "directinquiry") return Stage::DirectInquiry;
    if (t == "2" || t == "implicitassociation") return Stage::ImplicitAssociation;
    if (t == "3" || t == "unknownsituation") return Stage::UnknownSituation;
    return std::nullopt;
}

std::string_view to_string(PairRole r) { return r == PairRole::Neutral ? "neutral" : "loaded"; }

std::optional<PairRole> parse_pair_role(std::string_view text) {
    const auto t = util::to_lower(text);
    if (t == "neutral") return PairRole::Neutral;
    if (t == "loaded") return PairRole::Loaded;
    return std::nullopt;
}

void SamplingParams::validate() const {
    if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("top_p must be in (0,1]");
    if (!(temperature >= 0.0)) throw ConfigError("temperature must be >= 0");
    if (max_tokens <= 0) throw ConfigError("max_tokens must be positive");
}

// ---------------------------------------------------------------------------

ordered_json to_json(const TestCase& c) {
    ordered_json j;
    j["id"] = c.id;
    j["stage"] = stage_code(c.stage);
    j["factor"] = to_string(c.factor);
    j["scenario"] = c.scenario;
    j["question"] = c.question;
    j["reference_answer"] = c.reference_answer;
    if (c.pair_id) j["pair_id"] = *c.pair_id;
    if (c.pair_role) j["pair_role"] = to_string(*c.pair_role);
    return j;
}

TestCase test_case_from_json(const json& j) {
    if (!j.is_object()) throw DatasetError("record is not a JSON object");
    TestCase c;
    c.id = require_string(j, "id");

    auto st = j.find("stage");
    if (st == j.end()) throw DatasetError("missing field 'stage'");
    std::optional<Stage> stage;
    std::string literal;
    if (st->is_number_integer()) {
        literal = std::to_string(st->get<long long>());
        stage = stage_from_code(static_cast<int>(st->get<long long>()));
    } else if (st->is_string()) {
        literal = st->get<std::string>();
        stage = parse_stage(literal);
    } else {
        literal = st->dump();
    }
    if (!stage) throw DatasetError("unknown stage '" + literal + "'");
    c.stage = *stage;

    const auto factor_literal = require_string(j, "factor");
    auto factor = parse_factor(factor_literal);
    if (!factor) throw DatasetError("unknown factor '" + factor_literal + "'");
    c.factor = *factor;

    c.scenario = require_string(j, "scenario");
    c.question = require_string(j, "question");
    c.reference_answer = require_string(j, "reference_answer");
    if (auto p = j.find("pair_id"); p != j.end() && !p->is_null()) {
        if (!p->is_string()) throw DatasetError("field 'pair_id' is not a string");
        c.pair_id = p->get<std::string>();
    }
    if (auto r = j.find("pair_role"); r != j.end() && !r->is_null()) {
        const auto lit = r->is_string() ? r->get<std::string>() : r->dump();
        auto role = parse_pair_role(lit);
        if (!role) throw DatasetError("unknown pair_role '" + lit + "'");
        c.pair_role = role;
    }
    return c;
}

ordered_json to_json(const SamplingParams& p) {
    ordered_json j;
    j["top_p"] = p.top_p;
    j["temperature"] = p.temperature;
    j["max_tokens"] = p.max_tokens;
    if (p.seed) j["seed"] = *p.seed;
    return j;
}

SamplingParams sampling_params_from_json(const json& j, SamplingParams p) {
    if (j.contains("top_p")) p.top_p = j.at("top_p").get<double>();
    if (j.contains("temperature")) p.temperature = j.at("temperature").get<double>();
    if (j.contains("max_tokens")) p.max_tokens = j.at("max_tokens").get<int>();
    if (j.contains("seed")) p.seed = j.at("seed").get<std::uint64_t>();
    p.validate();
    return p;
}

ordered_json to_json(const ModelResponse& r) {
    ordered_json j;
    j["case_id"] = r.case_id;
    j["model_id"] = r.model_id;
    j["text"] = r.text;
    j["latency_ms"] = r.latency_ms;
    if (r.token_usage)
        j["token_usage"] = {{"prompt", r.token_usage->prompt},
                            {"completion", r.token_usage->completion}};
    j["created_at"] = r.created_at;
    j["attempts"] = r.attempts;
    return j;
}

ModelResponse model_response_from_json(const json& j) {
    ModelResponse r;
    r.case_id = j.at("case_id").get<std::string>();
    r.model_id = j.at("model_id").get<std::string>();
    r.text = j.at("text").get<std::string>();
    r.latency_ms = j.value("latency_ms", std::int64_t{0});
    if (auto u = j.find("token_usage"); u != j.end() && u->is_object())
        r.token_usage = TokenUsage{u->value("prompt", std::int64_t{0}),
                                   u->value("completion", std::int64_t{0})};
    r.created_at = j.value("created_at", std::string{});
    r.attempts = j.value("attempts", 1);
    return r;
}

// ---------------------------------------------------------------------------

ValidationReport validate_dataset(const std::vector<TestCase>& cases) {
    if (cases.empty()) throw DatasetError("empty dataset");
    ValidationReport report;
    for (auto f : kAllFactors) report.counts[f] = {0, 0, 0};
    report.total = cases.size();

    std::set<std::string> seen_ids;
    struct PairMembers {
        std::vector<const TestCase*> members;
    };
    std::map<std::string, PairMembers> pairs;

    for (const auto& c : cases) {
        report.counts[c.factor][static_cast<std::size_t>(stage_code(c.stage) - 1)]++;
        if (c.id.empty()) report.violations.push_back({c.id, "empty id"});
        if (!seen_ids.insert(c.id).second) report.violations.push_back({c.id, "duplicate id"});
        if (util::trim(c.question).empty())
            report.violations.push_back({c.id, "empty question"});
        if (util::trim(c.reference_answer).empty())
            report.violations.push_back({c.id, "empty reference_answer"});
        if (util::trim(c.scenario).empty())
            report.violations.push_back({c.id, "empty scenario"});

        const bool implicit = c.stage == Stage::ImplicitAssociation;
        if (implicit && !c.pair_id)
            report.violations.push_back({c.id, "implicit association case without pair_id"});
        if (!implicit && c.pair_id)
            report.violations.push_back({c.id, "pair_id on a non implicit-association case"});
        if (c.pair_id.has_value() != c.pair_role.has_value())
            report.violations.push_back({c.id, "pair_id and pair_role must appear together"});
        if (c.pair_id) pairs[*c.pair_id].members.push_back(&c);
    }

    for (const auto& [pid, p] : pairs) {
        const auto& m = p.members;
        if (m.size() == 1) {
            report.violations.push_back({m[0]->id, "unpaired pair_id '" + pid + "'"});
            continue;
        }
        if (m.size() > 2) {
            for (const auto* c : m)
                report.violations.push_back(
                    {c->id, "pair_id '" + pid + "' occurs " + std::to_string(m.size()) + " times"});
            continue;
        }
        const bool roles_ok = m[0]->pair_role && m[1]->pair_role &&
                              *m[0]->pair_role != *m[1]->pair_role;
        if (!roles_ok)
            report.violations.push_back(
                {m[1]->id, "pair_id '" + pid + "' needs one neutral and one loaded member"});
        if (m[0]->factor != m[1]->factor || m[0]->scenario != m[1]->scenario)
            report.violations.push_back(
                {m[1]->id, "pair_id '" + pid + "' members differ in factor or scenario"});
    }
    return report;
}

ordered_json ValidationReport::to_json() const {
    ordered_json j;
    j["total"] = total;
    ordered_json rows = ordered_json::array();
    for (auto f : kAllFactors) {
        const auto& c = counts.at(f);
        rows.push_back({{"factor", to_string(f)}, {"S1", c[0]}, {"S2", c[1]}, {"S3", c[2]}});
    }
    j["counts"] = rows;
    ordered_json v = ordered_json::array();
    for (const auto& x : violations) v.push_back({{"case_id", x.case_id}, {"message", x.message}});
    j["violations"] = v;
    return j;
}

std::string ValidationReport::to_table() const {
    std::size_t width = std::string_view("Sensitive factor").size();
    for (auto f : kAllFactors) width = std::max(width, display_name(f).size());
    auto pad = [](std::string s, std::size_t w, bool right) {
        if (s.size() >= w) return s;
        return right ? std::string(w - s.size(), ' ') + s : s + std::string(w - s.size(), ' ');
    };
    std::ostringstream out;
    out << pad("Sensitive factor", width, false) << "  " << pad("S1", 6, true) << "  "
        << pad("S2", 6, true) << "  " << pad("S3", 6, true) << "\n";
    out << std::string(width + 24, '-') << "\n";
    for (auto f : kAllFactors) {
        const auto& c = counts.at(f);
        out << pad(std::string(display_name(f)), width, false);
        for (auto n : c) out << "  " << pad(std::to_string(n), 6, true);
        out << "\n";
    }
    out << std::string(width + 24, '-') << "\n";
    out << "total " << total << ", violations " << violations.size() << "\n";
    for (const auto& v : violations) out << "  " << v.case_id << ": " << v.message << "\n";
    return out.str();
}

// ---------------------------------------------------------------------------

std::vector<TestCase> parse_dataset(std::string_view text) {
    std::vector<TestCase> cases;
    const auto lines = util::split_lines(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto line_no = std::to_string(i + 1);
        if (util::trim(lines[i]).empty()) continue;
        json j;
        try {
            j = json::parse(lines[i]);
        } catch (const json::parse_error&) {
            throw DatasetError("malformed JSON at line " + line_no);
        }
        try {
            cases.push_back(test_case_from_json(j));
        } catch (const DatasetError& e) {
            throw DatasetError(std::string(e.what()) + " at line " + line_no);
        } catch (const json::exception& e) {
            throw DatasetError(std::string("invalid record at line ") + line_no + ": " + e.what());
        }
    }
    return cases;
}

std::string serialize_dataset(const std::vector<TestCase>& cases) {
    std::string out;
    for (const auto& c : cases) {
        out += to_json(c).dump();
        out += '\n';
    }
    return out;
}

std::vector<TestCase> load_dataset(const std::filesystem::path& path) {
    std::string text;
    try {
        text = util::read_file(path);
    } catch (const Error&) {
        throw DatasetError("cannot read dataset '" + path.string() + "'");
    }
    return parse_dataset(text);
}

void save_dataset(const std::vector<TestCase>& cases, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DatasetError("cannot write dataset '" + path.string() + "'");
    const auto text = serialize_dataset(cases);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw DatasetError("short write to '" + path.string() + "'");
}

} // namespace fairmonitor
