#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fairmonitor/core.h"

namespace fairmonitor {
struct ScoredCase;
}

namespace fairmonitor::stats {

/// Neumaier-compensated sum.
double compensated_sum(std::span<const double> values);
double mean(std::span<const double> values);

/// Product-moment correlation. Throws StatsError("degenerate vector") when
/// either side has zero variance, and on length mismatch, n < 2 or
/// non-finite input.
double pearson(std::span<const double> x, std::span<const double> y);

/// Average ranks (1-based); tied values share the mean of their positions.
std::vector<double> midranks(std::span<const double> values);

/// Pearson over midranks.
double spearman(std::span<const double> x, std::span<const double> y);

struct Correlation {
    double pearson = 0.0;
    double spearman = 0.0;
    std::size_t n = 0;

    ordered_json to_json() const;
};

// ---------------------------------------------------------------------------
// Inter-annotator agreement
// ---------------------------------------------------------------------------

/// item id -> (rater id -> rating).
using RatingTable = std::map<std::string, std::map<std::string, int>>;

/// Mean over rater pairs of quadratic-weighted Cohen's kappa on the ordinal
/// 1..5 scale. Each pair uses the items both raters scored; pairs sharing no
/// items are skipped. A pair whose chance disagreement is zero contributes 1
/// when it also has zero observed disagreement.
double quadratic_weighted_kappa(const RatingTable& table, int min_rating = 1, int max_rating = 5);

/// Mean over rater pairs of the fraction of shared items rated identically.
/// Intended for binary accept/reject reviews but works for any labels.
double percent_agreement(const RatingTable& table);

// ---------------------------------------------------------------------------
// Descriptive aggregates
// ---------------------------------------------------------------------------

/// Type-7 (linear interpolation) sample quantile, p in [0,1].
double quantile(std::vector<double> values, double p);

struct Summary {
    std::size_t n = 0;
    double mean = 0.0;
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
    double iqr = 0.0;
    double min = 0.0;
    double max = 0.0;
};

Summary describe(std::span<const double> values);

inline constexpr const char* kAll = "all";

struct AggregateKey {
    std::string model_id = kAll;
    std::optional<Stage> stage;             // nullopt = all
    std::optional<SensitiveFactor> factor;  // nullopt = all

    auto operator<=>(const AggregateKey&) const = default;
};

struct AggregateRow {
    AggregateKey key;
    Summary summary;
    double normalized_mean = 0.0;  // mean / 5 * 100
};

struct GroupBy {
    bool model = true;
    bool stage = false;
    bool factor = false;
};

/// One row per populated group, ordered by key.
std::vector<AggregateRow> aggregate(const std::vector<ScoredCase>& scored, GroupBy group_by);

/// Every model x (each stage + all) x (each factor + all) row that has data.
std::vector<AggregateRow> aggregate_cube(const std::vector<ScoredCase>& scored);

std::string aggregate_csv(const std::vector<AggregateRow>& rows);
ordered_json aggregate_json(const std::vector<AggregateRow>& rows);

} // namespace fairmonitor::stats
