#include "fairmonitor/stats.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "fairmonitor/error.h"
#include "fairmonitor/runner.h"
#include "fairmonitor/util.h"

namespace fairmonitor::stats {

namespace {

void check_pair(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw StatsError("length mismatch");
    if (x.size() < 2) throw StatsError("need at least 2 observations");
    for (std::size_t i = 0; i < x.size(); ++i)
        if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw StatsError("non-finite entry");
}

} // namespace

double compensated_sum(std::span<const double> values) {
    double sum = 0.0;
    double comp = 0.0;
    for (double v : values) {
        const double t = sum + v;
        if (std::fabs(sum) >= std::fabs(v)) comp += (sum - t) + v;
        else comp += (v - t) + sum;
        sum = t;
    }
    return sum + comp;
}

double mean(std::span<const double> values) {
    if (values.empty()) throw StatsError("mean of empty input");
    return compensated_sum(values) / static_cast<double>(values.size());
}

double pearson(std::span<const double> x, std::span<const double> y) {
    check_pair(x, y);
    const double mx = mean(x);
    const double my = mean(y);
    const std::size_t n = x.size();
    std::vector<double> sxy(n), sxx(n), syy(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy[i] = dx * dy;
        sxx[i] = dx * dx;
        syy[i] = dy * dy;
    }
    const double vx = compensated_sum(sxx);
    const double vy = compensated_sum(syy);
    if (vx <= 0.0 || vy <= 0.0) throw StatsError("degenerate vector");
    const double r = compensated_sum(sxy) / std::sqrt(vx * vy);
    return std::clamp(r, -1.0, 1.0);
}

std::vector<double> midranks(std::span<const double> values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i + 1;
        while (j < n && values[order[j]] == values[order[i]]) ++j;
        // positions i..j-1 (0-based) share rank mean of (i+1 .. j)
        const double r = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k) ranks[order[k]] = r;
        i = j;
    }
    return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
    check_pair(x, y);
    const auto rx = midranks(x);
    const auto ry = midranks(y);
    return pearson(rx, ry);
}

ordered_json Correlation::to_json() const {
    ordered_json j;
    j["pearson"] = pearson;
    j["spearman"] = spearman;
    j["n"] = n;
    return j;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> rater_ids(const RatingTable& table) {
    std::set<std::string> ids;
    for (const auto& [item, ratings] : table) {
        if (ratings.size() < 2)
            throw StatsError("item '" + item + "' has fewer than 2 ratings");
        for (const auto& [rater, _] : ratings) ids.insert(rater);
    }
    if (ids.size() < 2) throw StatsError("agreement needs at least 2 raters");
    return {ids.begin(), ids.end()};
}

} // namespace

double quadratic_weighted_kappa(const RatingTable& table, int min_rating, int max_rating) {
    if (table.empty()) throw StatsError("no annotations");
    if (max_rating <= min_rating) throw StatsError("rating scale needs at least 2 levels");
    const auto raters = rater_ids(table);
    const int k = max_rating - min_rating + 1;
    const double denom = static_cast<double>((k - 1) * (k - 1));

    std::vector<double> kappas;
    for (std::size_t a = 0; a < raters.size(); ++a) {
        for (std::size_t b = a + 1; b < raters.size(); ++b) {
            std::vector<std::pair<int, int>> shared;
            for (const auto& [item, ratings] : table) {
                auto ia = ratings.find(raters[a]);
                auto ib = ratings.find(raters[b]);
                if (ia == ratings.end() || ib == ratings.end()) continue;
                for (int v : {ia->second, ib->second})
                    if (v < min_rating || v > max_rating)
                        throw StatsError("rating " + std::to_string(v) + " outside scale");
                shared.emplace_back(ia->second - min_rating, ib->second - min_rating);
            }
            if (shared.empty()) continue;
            const double m = static_cast<double>(shared.size());
            std::vector<double> pa(static_cast<std::size_t>(k), 0.0);
            std::vector<double> pb(static_cast<std::size_t>(k), 0.0);
            double observed = 0.0;
            for (auto [ra, rb] : shared) {
                pa[static_cast<std::size_t>(ra)] += 1.0 / m;
                pb[static_cast<std::size_t>(rb)] += 1.0 / m;
                observed += static_cast<double>((ra - rb) * (ra - rb)) / denom / m;
            }
            double expected = 0.0;
            for (int i = 0; i < k; ++i)
                for (int j = 0; j < k; ++j)
                    expected += static_cast<double>((i - j) * (i - j)) / denom *
                                pa[static_cast<std::size_t>(i)] * pb[static_cast<std::size_t>(j)];
            if (expected == 0.0) {
                kappas.push_back(observed == 0.0 ? 1.0 : 0.0);
            } else {
                kappas.push_back(1.0 - observed / expected);
            }
        }
    }
    if (kappas.empty()) throw StatsError("no rater pair shares an item");
    return mean(kappas);
}

double percent_agreement(const RatingTable& table) {
    if (table.empty()) throw StatsError("no annotations");
    const auto raters = rater_ids(table);
    std::vector<double> rates;
    for (std::size_t a = 0; a < raters.size(); ++a) {
        for (std::size_t b = a + 1; b < raters.size(); ++b) {
            std::size_t shared = 0;
            std::size_t agree = 0;
            for (const auto& [item, ratings] : table) {
                auto ia = ratings.find(raters[a]);
                auto ib = ratings.find(raters[b]);
                if (ia == ratings.end() || ib == ratings.end()) continue;
                ++shared;
                if (ia->second == ib->second) ++agree;
            }
            if (shared > 0)
                rates.push_back(static_cast<double>(agree) / static_cast<double>(shared));
        }
    }
    if (rates.empty()) throw StatsError("no rater pair shares an item");
    return mean(rates);
}

// ---------------------------------------------------------------------------

double quantile(std::vector<double> values, double p) {
    if (values.empty()) throw StatsError("quantile of empty input");
    if (p < 0.0 || p > 1.0) throw StatsError("quantile probability outside [0,1]");
    std::sort(values.begin(), values.end());
    const double h = (static_cast<double>(values.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

Summary describe(std::span<const double> values) {
    if (values.empty()) throw StatsError("describe of empty input");
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    Summary s;
    s.n = v.size();
    s.mean = mean(v);
    s.median = quantile(v, 0.5);
    s.q1 = quantile(v, 0.25);
    s.q3 = quantile(v, 0.75);
    s.iqr = s.q3 - s.q1;
    s.min = v.front();
    s.max = v.back();
    return s;
}

std::vector<AggregateRow> aggregate(const std::vector<ScoredCase>& scored, GroupBy by) {
    std::map<AggregateKey, std::vector<double>> groups;
    for (const auto& sc : scored) {
        AggregateKey key;
        if (by.model) key.model_id = sc.response.model_id;
        if (by.stage) key.stage = sc.test_case.stage;
        if (by.factor) key.factor = sc.test_case.factor;
        groups[key].push_back(static_cast<double>(sc.verdict.score));
    }
    std::vector<AggregateRow> rows;
    rows.reserve(groups.size());
    for (auto& [key, values] : groups) {
        // sorting first makes the compensated mean independent of input order
        std::sort(values.begin(), values.end());
        AggregateRow row;
        row.key = key;
        row.summary = describe(values);
        row.normalized_mean = row.summary.mean / 5.0 * 100.0;
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<AggregateRow> aggregate_cube(const std::vector<ScoredCase>& scored) {
    std::vector<AggregateRow> rows;
    for (bool stage : {true, false})
        for (bool factor : {true, false}) {
            auto part = aggregate(scored, GroupBy{true, stage, factor});
            rows.insert(rows.end(), part.begin(), part.end());
        }
    std::sort(rows.begin(), rows.end(),
              [](const AggregateRow& a, const AggregateRow& b) { return a.key < b.key; });
    return rows;
}

namespace {

std::string stage_key(const std::optional<Stage>& s) { return s ? stage_label(*s) : kAll; }
std::string factor_key(const std::optional<SensitiveFactor>& f) {
    return f ? std::string(to_string(*f)) : kAll;
}

} // namespace

std::string aggregate_csv(const std::vector<AggregateRow>& rows) {
    using util::format_double;
    std::ostringstream out;
    out << "model_id,stage,factor,n,mean,median,q1,q3,iqr,min,max,normalized_mean\n";
    for (const auto& r : rows) {
        const auto& s = r.summary;
        out << util::csv_escape(r.key.model_id) << ',' << stage_key(r.key.stage) << ','
            << factor_key(r.key.factor) << ',' << s.n << ',' << format_double(s.mean) << ','
            << format_double(s.median) << ',' << format_double(s.q1) << ','
            << format_double(s.q3) << ',' << format_double(s.iqr) << ','
            << format_double(s.min) << ',' << format_double(s.max) << ','
            << format_double(r.normalized_mean) << '\n';
    }
    return out.str();
}

ordered_json aggregate_json(const std::vector<AggregateRow>& rows) {
    ordered_json arr = ordered_json::array();
    for (const auto& r : rows) {
        const auto& s = r.summary;
        arr.push_back({{"model_id", r.key.model_id},
                       {"stage", stage_key(r.key.stage)},
                       {"factor", factor_key(r.key.factor)},
                       {"n", s.n},
                       {"mean", s.mean},
                       {"median", s.median},
                       {"q1", s.q1},
                       {"q3", s.q3},
                       {"iqr", s.iqr},
                       {"min", s.min},
                       {"max", s.max},
                       {"normalized_mean", r.normalized_mean}});
    }
    return arr;
}

} // namespace fairmonitor::stats
