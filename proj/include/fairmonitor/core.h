#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace fairmonitor {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Enumerations
// ---------------------------------------------------------------------------

enum class SensitiveFactor {
    Gender,
    RaceOrCulturalBackground,
    GradeOrAge,
    LearningStyle,
    LearningAbility,
    FamilySocioeconomicStatus,
    Subject,
    DisabilitiesAndSpecialGroups,
    Personality,
};

inline constexpr std::array<SensitiveFactor, 9> kAllFactors = {
    SensitiveFactor::Gender,
    SensitiveFactor::RaceOrCulturalBackground,
    SensitiveFactor::GradeOrAge,
    SensitiveFactor::LearningStyle,
    SensitiveFactor::LearningAbility,
    SensitiveFactor::FamilySocioeconomicStatus,
    SensitiveFactor::Subject,
    SensitiveFactor::DisabilitiesAndSpecialGroups,
    SensitiveFactor::Personality,
};

/// Canonical snake_case key, e.g. "race_or_cultural_background".
std::string_view to_string(SensitiveFactor f);
/// Human-readable label, e.g. "Race or Cultural Background".
std::string_view display_name(SensitiveFactor f);
/// Accepts the snake key, the CamelCase name or the display label, ignoring
/// case and any non-alphanumeric characters.
std::optional<SensitiveFactor> parse_factor(std::string_view text);

enum class Stage { DirectInquiry = 1, ImplicitAssociation = 2, UnknownSituation = 3 };

inline constexpr std::array<Stage, 3> kAllStages = {
    Stage::DirectInquiry, Stage::ImplicitAssociation, Stage::UnknownSituation};

int stage_code(Stage s);
std::optional<Stage> stage_from_code(int code);
/// "S1", "S2", "S3".
std::string stage_label(Stage s);
std::string_view display_name(Stage s);
/// Accepts "1", "S1", "s1" or the variant name.
std::optional<Stage> parse_stage(std::string_view text);

enum class PairRole { Neutral, Loaded };

std::string_view to_string(PairRole r);
std::optional<PairRole> parse_pair_role(std::string_view text);

// ---------------------------------------------------------------------------
// Value types
// ---------------------------------------------------------------------------

struct TestCase {
    std::string id;
    Stage stage = Stage::DirectInquiry;
    SensitiveFactor factor = SensitiveFactor::Gender;
    std::string scenario;
    std::string question;
    std::string reference_answer;
    std::optional<std::string> pair_id;
    std::optional<PairRole> pair_role;

    bool operator==(const TestCase&) const = default;
};

struct SamplingParams {
    double top_p = 0.9;
    double temperature = 1.0;
    int max_tokens = 512;
    std::optional<std::uint64_t> seed;

    static SamplingParams subject() { return {0.9, 1.0, 512, std::nullopt}; }
    static SamplingParams judge() { return {0.9, 0.0, 512, std::nullopt}; }
    static SamplingParams agent() { return {0.9, 1.0, 512, std::nullopt}; }

    /// Throws ConfigError when a field is out of range.
    void validate() const;

    bool operator==(const SamplingParams&) const = default;
};

struct TokenUsage {
    std::int64_t prompt = 0;
    std::int64_t completion = 0;

    bool operator==(const TokenUsage&) const = default;
};

struct ModelResponse {
    std::string case_id;
    std::string model_id;
    std::string text;
    std::int64_t latency_ms = 0;
    std::optional<TokenUsage> token_usage;
    std::string created_at;  // ISO-8601 UTC
    int attempts = 1;

    bool operator==(const ModelResponse&) const = default;
};

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

ordered_json to_json(const TestCase& c);
/// Throws DatasetError naming the offending literal or field.
TestCase test_case_from_json(const json& j);

ordered_json to_json(const SamplingParams& p);
SamplingParams sampling_params_from_json(const json& j, SamplingParams defaults);

ordered_json to_json(const ModelResponse& r);
ModelResponse model_response_from_json(const json& j);

// ---------------------------------------------------------------------------
// Dataset operations
// ---------------------------------------------------------------------------

struct Violation {
    std::string case_id;
    std::string message;

    bool operator==(const Violation&) const = default;
};

struct ValidationReport {
    /// Rows in kAllFactors order, columns S1/S2/S3.
    std::map<SensitiveFactor, std::array<std::size_t, 3>> counts;
    std::vector<Violation> violations;
    std::size_t total = 0;

    bool ok() const { return violations.empty(); }
    ordered_json to_json() const;
    std::string to_table() const;
};

/// Checks every dataset invariant and tallies the factor x stage table.
/// Throws DatasetError("empty dataset") on empty input.
ValidationReport validate_dataset(const std::vector<TestCase>& cases);

std::vector<TestCase> parse_dataset(std::string_view text);
std::string serialize_dataset(const std::vector<TestCase>& cases);

std::vector<TestCase> load_dataset(const std::filesystem::path& path);
void save_dataset(const std::vector<TestCase>& cases, const std::filesystem::path& path);

} // namespace fairmonitor
