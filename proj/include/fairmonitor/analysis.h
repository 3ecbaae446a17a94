#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "fairmonitor/core.h"
#include "fairmonitor/sim.h"

namespace fairmonitor::analysis {

/// attribute value x outcome counts. Rows and columns are sorted, except
/// where the metric has a fixed outcome set (stances, task categories).
struct FrequencyTable {
    std::string metric;
    std::string attribute;
    std::string unit;  // what one count is: transcript, agent or task
    std::vector<std::string> rows;
    std::vector<std::string> columns;
    std::map<std::string, std::map<std::string, std::size_t>> counts;

    std::size_t included = 0;             // units counted
    std::size_t excluded = 0;             // units in complete transcripts left out
    std::size_t invalid_transcripts = 0;  // Invalid, not looked at
    std::size_t skipped_transcripts = 0;  // other resolution kinds
    std::vector<std::string> warnings;

    std::size_t count(const std::string& row, const std::string& column) const;
    std::size_t row_total(const std::string& row) const;
    std::size_t total() const;
    double proportion(const std::string& row, const std::string& column) const;

    ordered_json to_json() const;
    /// Long format: attribute_value,outcome,count,proportion.
    std::string to_csv() const;
    std::string to_table() const;
};

/// One row ("winners"), one column per candidate attribute value.
FrequencyTable election_ratio(const std::vector<sim::Transcript>& transcripts, const std::string& attribute);
FrequencyTable club_distribution(const std::vector<sim::Transcript>& transcripts, const std::string& attribute);

inline const std::vector<std::string> kTaskCategories = {"technical", "organizational", "creative",
                                                         "leadership", "physical", "other"};
using TaskTaxonomy = std::map<std::string, std::string>;  // lower-case task -> category

const TaskTaxonomy& default_task_taxonomy();
/// JSON object task -> category. Throws ConfigError on an unknown category.
TaskTaxonomy load_task_taxonomy(const std::filesystem::path& path);

FrequencyTable assignment_distribution(const std::vector<sim::Transcript>& transcripts,
                                       const std::string& attribute,
                                       const TaskTaxonomy& taxonomy = default_task_taxonomy());

inline const std::vector<std::string> kStances = {"adopt", "reject", "neutral"};
FrequencyTable stance_by_group(const std::vector<sim::Transcript>& transcripts, const std::string& attribute);

struct TermFrequency {
    std::string group;
    std::vector<std::pair<std::string, std::size_t>> terms;
};

const std::set<std::string>& default_stopwords();
/// One word per line; blank lines and `#` comments ignored.
std::set<std::string> load_stopwords(const std::filesystem::path& path);

/// Splits on anything but ASCII letters and digits, lower-cases, drops
/// stopwords and one-character tokens.
std::vector<std::string> tokenize(const std::string& text, const std::set<std::string>& stopwords);

/// Top terms per group by count, ties alphabetical. Throws StatsError on an
/// empty corpus.
std::vector<TermFrequency> persona_terms(const std::map<std::string, std::vector<std::string>>& personas,
                                         const std::set<std::string>& stopwords, std::size_t top_k);

/// Personas of complete transcripts keyed by the agent's value of `attribute`.
std::map<std::string, std::vector<std::string>> personas_by_attribute(
    const std::vector<sim::Transcript>& transcripts, const std::string& attribute);

std::string terms_csv(const std::vector<TermFrequency>& terms);
ordered_json terms_json(const std::vector<TermFrequency>& terms);

/// Readable rendering of one transcript for expert review.
std::string transcript_markdown(const sim::Transcript& t);

} // namespace fairmonitor::analysis
