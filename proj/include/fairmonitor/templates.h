#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "fairmonitor/core.h"
#include "fairmonitor/gateway.h"

namespace fairmonitor {

class Gateway;

/// Text with `{slot}` placeholders. Slot names are identifiers; any other
/// brace usage (JSON examples, say) is left untouched.
class PromptTemplate {
public:
    PromptTemplate() = default;
    PromptTemplate(std::string name, std::string body);

    const std::string& name() const noexcept { return name_; }
    const std::string& body() const noexcept { return body_; }
    const std::set<std::string>& required_slots() const noexcept { return required_; }

private:
    std::string name_;
    std::string body_;
    std::set<std::string> required_;
};

using SlotMap = std::map<std::string, std::string>;

/// Single-pass substitution; extra slots are ignored. Throws
/// TemplateError("missing slot 'x'") for the first absent required slot.
std::string render(const PromptTemplate& tmpl, const SlotMap& slots);

/// Every prompt text used by the generator, runner, judge and simulator.
/// Starts from the built-in texts; a `prompts/` directory can override any
/// of them by file name (`<name>.txt`).
class PromptLibrary {
public:
    static const PromptLibrary& builtin();
    static PromptLibrary with_overrides(const std::filesystem::path& dir);

    const PromptTemplate& get(const std::string& name) const;
    std::vector<std::string> names() const;

private:
    std::map<std::string, PromptTemplate> templates_;
};

// ---------------------------------------------------------------------------
// Test-case generation
// ---------------------------------------------------------------------------

struct GenerationSpec {
    SensitiveFactor factor = SensitiveFactor::Gender;
    std::string scenario;
    Stage stage = Stage::DirectInquiry;
    std::vector<TestCase> exemplars;
    int count = 0;
    std::string generator_model;
    SamplingParams params = SamplingParams::subject();

    /// Throws DatasetError when exemplars are too few or mixed-stage, the
    /// scenario is empty, or an implicit-association count is odd.
    void validate() const;
};

struct GenerationOptions {
    int batch_size = 5;
    std::uint64_t seed = 0;
    int first_index = 1;
    int first_pair_index = 1;
    int parse_retries = 2;
};

/// One parsed unit: a single case, or a neutral/loaded pair.
struct GeneratedUnit {
    std::string question;
    std::string reference;
    std::optional<std::string> loaded_question;
    std::optional<std::string> loaded_reference;
};

/// Deterministic given spec, batch size and the previously accepted questions.
std::vector<ChatMessage> build_generation_prompt(const GenerationSpec& spec, int units,
                                                 const PromptLibrary& prompts = PromptLibrary::builtin());

/// Parses QUESTION/REFERENCE blocks (NEUTRAL/REFERENCE/LOADED/REFERENCE for
/// implicit association) separated by `---` lines. Any labelled block that
/// does not fit the shape is an error; no partial acceptance.
std::vector<GeneratedUnit> parse_generation_output(const std::string& raw, Stage stage);

/// Returns exactly spec.count cases or throws.
std::vector<TestCase> generate_cases(const GenerationSpec& spec, Gateway& gateway,
                                     const GenerationOptions& options = {},
                                     const PromptLibrary& prompts = PromptLibrary::builtin());

std::string case_id_for(SensitiveFactor f, Stage s, int counter);
std::string pair_id_for(SensitiveFactor f, int counter);

// ---------------------------------------------------------------------------
// Expert review ingestion
// ---------------------------------------------------------------------------

struct ReviewAnnotation {
    std::string case_id;
    std::string reviewer_id;
    std::variant<bool, int> value;  // accept/reject or 1..5
    std::string note;
};

struct ReviewImport {
    std::vector<ReviewAnnotation> annotations;
    std::vector<std::string> warnings;
};

/// CSV with header `case_id,reviewer_id,value,note` or JSONL with the same
/// fields. Rows naming a case absent from `known_cases` are reported as
/// warnings and skipped (pass an empty set to disable the check).
ReviewImport review_import(const std::filesystem::path& path,
                           const std::set<std::string>& known_cases = {});

struct ReviewAgreement {
    bool binary = false;
    std::size_t items = 0;
    std::size_t raters = 0;
    double percent_agreement = 0.0;
    std::optional<double> weighted_kappa;  // ordinal scores only

    ordered_json to_json() const;
};

ReviewAgreement review_agreement(const std::vector<ReviewAnnotation>& annotations);

} // namespace fairmonitor
