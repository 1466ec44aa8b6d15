#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include "rebalance/error.hpp"
#include "rebalance/sample.hpp"
#include "rebalance/transforms.hpp"

namespace rebalance {

namespace detail {

/// Divides by the largest weight. Uniform weights of any scale map to exactly
/// 1.0, so uniform and unit weights produce bit-identical statistics.
inline std::vector<double> unit_max(std::span<const double> w) {
    double top = 0.0;
    for (double v : w) top = std::max(top, v);
    if (!(top > 0.0)) throw Error(ErrorCode::AllZeroWeights, "all weights are zero");
    std::vector<double> out(w.begin(), w.end());
    for (double& v : out) v /= top;
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Weight diagnostics

/// Kish design effect n * sum(w^2) / sum(w)^2.
inline double kish_deff(std::span<const double> w) {
    validate_weights(w);
    auto u = detail::unit_max(w);
    double s1 = 0.0, s2 = 0.0;
    for (double v : u) {
        s1 += v;
        s2 += v * v;
    }
    return static_cast<double>(u.size()) * s2 / (s1 * s1);
}

struct EffectiveSize {
    double essp = 1.0;
    double ess = 0.0;
};

inline EffectiveSize effective_sample_size(std::span<const double> w, std::size_t n) {
    double deff = kish_deff(w);
    return {1.0 / deff, static_cast<double>(n) / deff};
}

/// Linear-interpolation quantile of sorted data.
inline double sorted_quantile(const std::vector<double>& sorted, double q) {
    if (sorted.size() == 1) return sorted.front();
    double h = q * static_cast<double>(sorted.size() - 1);
    auto lo = static_cast<std::size_t>(std::floor(h));
    std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct WeightSummary {
    double design_effect = 1.0;
    double effective_sample_proportion = 1.0;
    double effective_sample_size = 0.0;
    double min = 0.0, q25 = 0.0, median = 0.0, q75 = 0.0, max = 0.0, mean = 0.0, std = 0.0;
    double prop_below_half = 0.0;
    double prop_below_one = 0.0;
    double prop_at_least_two = 0.0;
    double prop_at_least_ten = 0.0;
};

/// Summary statistics of weights rescaled to mean 1. std uses the n - 1
/// denominator.
inline WeightSummary weights_summary(std::span<const double> w) {
    validate_weights(w);
    WeightSummary s;
    const auto n = w.size();
    s.design_effect = kish_deff(w);
    s.effective_sample_proportion = 1.0 / s.design_effect;
    s.effective_sample_size = static_cast<double>(n) / s.design_effect;

    double total = 0.0;
    for (double v : w) total += v;
    std::vector<double> norm(w.begin(), w.end());
    for (double& v : norm) v *= static_cast<double>(n) / total;
    std::vector<double> sorted = norm;
    std::sort(sorted.begin(), sorted.end());
    s.min = sorted.front();
    s.max = sorted.back();
    s.q25 = sorted_quantile(sorted, 0.25);
    s.median = sorted_quantile(sorted, 0.5);
    s.q75 = sorted_quantile(sorted, 0.75);
    s.mean = std::accumulate(norm.begin(), norm.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double v : norm) ss += (v - s.mean) * (v - s.mean);
    s.std = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
    auto prop = [&](auto pred) {
        return static_cast<double>(std::count_if(norm.begin(), norm.end(), pred)) / static_cast<double>(n);
    };
    s.prop_below_half = prop([](double v) { return v < 0.5; });
    s.prop_below_one = prop([](double v) { return v < 1.0; });
    s.prop_at_least_two = prop([](double v) { return v >= 2.0; });
    s.prop_at_least_ten = prop([](double v) { return v >= 10.0; });
    return s;
}

// ---------------------------------------------------------------------------
// Outcome estimation

namespace detail {

struct Pairs {
    std::vector<double> y, w;
};

inline Pairs observed_pairs(std::span<const double> y, std::span<const double> w) {
    if (y.size() != w.size()) throw Error(ErrorCode::DimensionMismatch, "outcome and weights differ in length");
    auto u = unit_max(w);
    Pairs p;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (std::isnan(y[i])) continue;
        if (!std::isfinite(y[i])) throw Error(ErrorCode::InvalidArgument, "outcome values must be finite");
        p.y.push_back(y[i]);
        p.w.push_back(u[i]);
    }
    if (p.y.empty()) throw Error(ErrorCode::AllMissing, "every outcome value is missing");
    return p;
}

inline double mean_of(const Pairs& p) {
    double sw = 0.0, swy = 0.0;
    for (std::size_t i = 0; i < p.y.size(); ++i) {
        sw += p.w[i];
        swy += p.w[i] * p.y[i];
    }
    return swy / sw;
}

}  // namespace detail

/// sum(w y) / sum(w); NaN outcomes are dropped with their weights.
inline double weighted_mean(std::span<const double> y, std::span<const double> w) {
    return detail::mean_of(detail::observed_pairs(y, w));
}

/// Linearised variance of the ratio mean: sum(w^2 (y - ybar)^2) / sum(w)^2.
inline double weighted_mean_variance(std::span<const double> y, std::span<const double> w,
                                     std::vector<std::string>* warnings = nullptr) {
    auto p = detail::observed_pairs(y, w);
    if (p.y.size() == 1) {
        if (warnings) warnings->push_back("single observation; variance set to 0");
        return 0.0;
    }
    const double mean = detail::mean_of(p);
    double sw = 0.0, acc = 0.0;
    for (std::size_t i = 0; i < p.y.size(); ++i) {
        sw += p.w[i];
        acc += p.w[i] * p.w[i] * (p.y[i] - mean) * (p.y[i] - mean);
    }
    return acc / (sw * sw);
}

/// Two-sided standard normal critical value z_{alpha/2}.
inline double normal_critical_value(double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha must lie in (0, 1)");
    return boost::math::quantile(boost::math::normal_distribution<double>(), 1.0 - alpha / 2.0);
}

struct Estimate {
    double mean = 0.0;
    double variance = 0.0;
    double ci_lower = 0.0;
    double ci_upper = 0.0;
};

inline Estimate weighted_mean_ci(std::span<const double> y, std::span<const double> w, double alpha,
                                 std::vector<std::string>* warnings = nullptr) {
    const double z = normal_critical_value(alpha);
    Estimate e;
    e.mean = weighted_mean(y, w);
    e.variance = weighted_mean_variance(y, w, warnings);
    const double half = z * std::sqrt(e.variance);
    e.ci_lower = e.mean - half;
    e.ci_upper = e.mean + half;
    return e;
}

struct OutcomeRow {
    std::string name;
    Estimate self;
    std::optional<Estimate> target;
    Estimate unadjusted;
};

struct OutcomeReport {
    double alpha = 0.05;
    std::vector<OutcomeRow> rows;
    std::vector<std::string> warnings;
};

namespace detail {

/// Numeric outcome as-is; categorical outcome as one indicator per level.
inline std::vector<std::pair<std::string, std::vector<double>>> outcome_series(const Column& c) {
    if (c.is_numeric()) return {{c.name, c.numeric}};
    std::vector<std::pair<std::string, std::vector<double>>> out;
    for (std::size_t l = 0; l < c.levels.size(); ++l) {
        std::vector<double> ind(c.size());
        for (std::size_t i = 0; i < c.size(); ++i)
            ind[i] = c.codes[i] < 0 ? kMissing : (c.codes[i] == static_cast<int>(l) ? 1.0 : 0.0);
        out.emplace_back(c.name + "[" + c.levels[l] + "]", std::move(ind));
    }
    return out;
}

}  // namespace detail

/// Weighted means with CIs for the adjusted sample, the target (when it
/// carries the outcome) and the sample under its design weights.
inline OutcomeReport outcome_report(const PairedSample& pair, std::span<const double> weights, double alpha = 0.05) {
    if (pair.sample.outcomes().empty()) throw Error(ErrorCode::NoOutcomes, "sample has no outcome columns");
    if (weights.size() != pair.n()) throw Error(ErrorCode::DimensionMismatch, "weights are not aligned to the sample");
    OutcomeReport report;
    report.alpha = alpha;
    for (const auto& column : pair.sample.outcomes()) {
        const Column* target_col = pair.target.find_outcome(column.name);
        auto sample_series = detail::outcome_series(column);
        std::vector<std::pair<std::string, std::vector<double>>> target_series;
        if (target_col && target_col->kind == column.kind) {
            if (column.is_numeric()) {
                target_series = detail::outcome_series(*target_col);
            } else {
                for (const auto& [label, values] : sample_series) {
                    std::string level = label.substr(column.name.size() + 1, label.size() - column.name.size() - 2);
                    int code = target_col->level_code(level);
                    std::vector<double> ind(target_col->size());
                    for (std::size_t i = 0; i < ind.size(); ++i)
                        ind[i] = target_col->codes[i] < 0 ? kMissing : (target_col->codes[i] == code ? 1.0 : 0.0);
                    target_series.emplace_back(label, std::move(ind));
                }
            }
        }
        for (std::size_t s = 0; s < sample_series.size(); ++s) {
            OutcomeRow row;
            row.name = sample_series[s].first;
            row.self = weighted_mean_ci(sample_series[s].second, weights, alpha, &report.warnings);
            row.unadjusted =
                weighted_mean_ci(sample_series[s].second, pair.sample.design_weights(), alpha, &report.warnings);
            if (!target_series.empty())
                row.target = weighted_mean_ci(target_series[s].second, pair.target.design_weights(), alpha,
                                              &report.warnings);
            report.rows.push_back(std::move(row));
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Covariate balance

/// Covariate encoding used for balance diagnostics: numeric covariates pass
/// through (NaN where missing); categorical covariates are one-hot encoded
/// with missing cells as a "_NA" level. The first categorical covariate keeps
/// every level and later ones drop their reference level, as in a
/// no-intercept treatment-coded formula.
struct CovariateMatrix {
    std::vector<std::string> columns;
    std::vector<std::string> main_covar;
    Eigen::MatrixXd sample;
    Eigen::MatrixXd target;
};

inline CovariateMatrix build_covariate_matrix(const PairedSample& pair) {
    std::vector<std::string> names, mains;
    std::vector<std::vector<double>> s_cols, t_cols;
    bool first_categorical = true;
    for (const auto& name : pair.common_covariates) {
        const Column& s = pair.sample.covariate(name);
        const Column& t = pair.target.covariate(name);
        if (s.is_numeric()) {
            names.push_back(name);
            mains.push_back(name);
            s_cols.push_back(s.numeric);
            t_cols.push_back(t.numeric);
            continue;
        }
        std::set<std::string> level_set(s.levels.begin(), s.levels.end());
        level_set.insert(t.levels.begin(), t.levels.end());
        const bool has_missing = s.has_missing() || t.has_missing();
        if (has_missing) level_set.insert(kMissingLevel);
        std::vector<std::string> levels(level_set.begin(), level_set.end());
        std::size_t start = first_categorical ? 0 : 1;
        first_categorical = false;
        for (std::size_t l = start; l < levels.size(); ++l) {
            const std::string& level = levels[l];
            auto indicator = [&](const Column& c) {
                int code = c.level_code(level);
                const bool is_na = level == kMissingLevel && code < 0;
                std::vector<double> v(c.size());
                for (std::size_t i = 0; i < c.size(); ++i)
                    v[i] = (is_na ? c.codes[i] < 0 : (code >= 0 && c.codes[i] == code)) ? 1.0 : 0.0;
                return v;
            };
            names.push_back(name + "[" + level + "]");
            mains.push_back(name);
            s_cols.push_back(indicator(s));
            t_cols.push_back(indicator(t));
        }
    }
    CovariateMatrix cm;
    cm.columns = std::move(names);
    cm.main_covar = std::move(mains);
    const auto k = static_cast<Eigen::Index>(cm.columns.size());
    cm.sample.resize(static_cast<Eigen::Index>(pair.n()), k);
    cm.target.resize(static_cast<Eigen::Index>(pair.N()), k);
    for (Eigen::Index j = 0; j < k; ++j) {
        const auto& sc = s_cols[static_cast<std::size_t>(j)];
        const auto& tc = t_cols[static_cast<std::size_t>(j)];
        for (std::size_t i = 0; i < sc.size(); ++i) cm.sample(static_cast<Eigen::Index>(i), j) = sc[i];
        for (std::size_t i = 0; i < tc.size(); ++i) cm.target(static_cast<Eigen::Index>(i), j) = tc[i];
    }
    return cm;
}

struct AsmdRow {
    std::string name;
    double self = 0.0;
    double unadjusted = 0.0;
    double diff = 0.0;
};

struct AsmdTable {
    bool aggregated = false;
    bool adjusted = false;
    std::vector<AsmdRow> rows;
    AsmdRow mean{"mean(asmd)"};
    std::size_t column_count = 0;
    std::vector<std::string> warnings;

    const AsmdRow* find(const std::string& name) const {
        for (const auto& r : rows)
            if (r.name == name) return &r;
        return nullptr;
    }
};

namespace detail {

struct ColumnMoments {
    double mean = 0.0;
    double sd = 0.0;
};

inline ColumnMoments weighted_moments(const Eigen::MatrixXd& x, Eigen::Index j, const std::vector<double>& w) {
    double sw = 0.0, swx = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double v = x(i, j);
        if (std::isnan(v)) continue;
        sw += w[static_cast<std::size_t>(i)];
        swx += w[static_cast<std::size_t>(i)] * v;
    }
    ColumnMoments m;
    if (!(sw > 0.0)) {
        m.mean = kMissing;
        return m;
    }
    m.mean = swx / sw;
    double ss = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double v = x(i, j);
        if (std::isnan(v)) continue;
        ss += w[static_cast<std::size_t>(i)] * (v - m.mean) * (v - m.mean);
    }
    m.sd = std::sqrt(ss / sw);
    return m;
}

}  // namespace detail

/// Absolute standardized mean deviation of the sample from the target, in
/// units of the design-weighted target SD (population denominator). Without
/// weights the "self" column equals the unadjusted one. Columns whose target
/// SD is zero are skipped with a warning.
inline AsmdTable asmd(const CovariateMatrix& cm, const PairedSample& pair,
                      std::optional<std::span<const double>> weights, bool aggregate_by_main_covar) {
    if (weights && weights->size() != pair.n())
        throw Error(ErrorCode::DimensionMismatch, "weights are not aligned to the sample");
    AsmdTable table;
    table.aggregated = aggregate_by_main_covar;
    table.adjusted = weights.has_value();
    const auto design = detail::unit_max(pair.sample.design_weights());
    const auto fitted = weights ? detail::unit_max(*weights) : design;
    const auto target_w = detail::unit_max(pair.target.design_weights());

    std::vector<AsmdRow> columns;
    std::vector<std::string> owners;
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(cm.columns.size()); ++j) {
        const auto& name = cm.columns[static_cast<std::size_t>(j)];
        auto t = detail::weighted_moments(cm.target, j, target_w);
        if (!(t.sd > 1e-12)) {
            table.warnings.push_back("column '" + name + "' has zero target SD; excluded from ASMD");
            continue;
        }
        auto u = detail::weighted_moments(cm.sample, j, design);
        auto a = detail::weighted_moments(cm.sample, j, fitted);
        AsmdRow row{name, std::abs(a.mean - t.mean) / t.sd, std::abs(u.mean - t.mean) / t.sd, 0.0};
        if (std::isnan(row.self) || std::isnan(row.unadjusted)) {
            table.warnings.push_back("column '" + name + "' has no observed sample values; excluded from ASMD");
            continue;
        }
        row.diff = row.unadjusted - row.self;
        columns.push_back(row);
        owners.push_back(cm.main_covar[static_cast<std::size_t>(j)]);
    }
    table.column_count = columns.size();

    if (aggregate_by_main_covar) {
        std::vector<std::string> order;
        std::map<std::string, std::pair<AsmdRow, int>> groups;
        for (std::size_t c = 0; c < columns.size(); ++c) {
            auto [it, inserted] = groups.try_emplace(owners[c], AsmdRow{owners[c]}, 0);
            if (inserted) order.push_back(owners[c]);
            it->second.first.self += columns[c].self;
            it->second.first.unadjusted += columns[c].unadjusted;
            it->second.second += 1;
        }
        for (const auto& name : order) {
            auto [row, count] = groups.at(name);
            row.self /= count;
            row.unadjusted /= count;
            row.diff = row.unadjusted - row.self;
            table.rows.push_back(row);
        }
    } else {
        table.rows = std::move(columns);
    }
    if (!table.rows.empty()) {
        for (const auto& r : table.rows) {
            table.mean.self += r.self;
            table.mean.unadjusted += r.unadjusted;
        }
        table.mean.self /= static_cast<double>(table.rows.size());
        table.mean.unadjusted /= static_cast<double>(table.rows.size());
        table.mean.diff = table.mean.unadjusted - table.mean.self;
    }
    return table;
}

inline AsmdTable asmd(const PairedSample& pair, std::optional<std::span<const double>> weights = std::nullopt,
                      bool aggregate_by_main_covar = false) {
    return asmd(build_covariate_matrix(pair), pair, weights, aggregate_by_main_covar);
}

/// Percent reduction of the mean ASMD, 100 * (unadjusted - self) / unadjusted.
inline double asmd_reduction_pct(const AsmdTable& table) {
    if (!(table.mean.unadjusted > 0.0)) return 0.0;
    return 100.0 * (table.mean.unadjusted - table.mean.self) / table.mean.unadjusted;
}

// ---------------------------------------------------------------------------
// Plot data

enum class PlotKind { Auto, Bar, Kde };

inline std::string_view to_string(PlotKind k) {
    switch (k) {
        case PlotKind::Bar: return "bar";
        case PlotKind::Kde: return "kde";
        case PlotKind::Auto: return "auto";
    }
    return "auto";
}

struct SourceSeries {
    std::string source;
    std::vector<std::string> levels;
    std::vector<double> proportions;
    std::vector<double> grid_x;
    std::vector<double> density;
    double bandwidth = 0.0;
};

struct PlotSeries {
    std::string variable;
    PlotKind kind = PlotKind::Bar;
    std::vector<SourceSeries> sources;
};

inline constexpr std::size_t kKdeGridPoints = 512;

namespace detail {

inline double weighted_quantile_step(std::vector<std::pair<double, double>> vw, double q) {
    std::sort(vw.begin(), vw.end());
    double total = 0.0;
    for (const auto& p : vw) total += p.second;
    double cum = 0.0;
    for (const auto& p : vw) {
        cum += p.second;
        if (cum >= q * total) return p.first;
    }
    return vw.back().first;
}

inline SourceSeries kde_series(std::string source, const std::vector<double>& values, std::span<const double> w,
                               const std::string& variable) {
    std::vector<std::pair<double, double>> vw;
    for (std::size_t i = 0; i < values.size(); ++i)
        if (!std::isnan(values[i])) vw.emplace_back(values[i], w[i]);
    if (vw.empty()) throw Error(ErrorCode::AllMissing, "variable '" + variable + "' has no values in " + source);
    double sw = 0.0, swx = 0.0, sw2 = 0.0;
    for (const auto& [x, wi] : vw) {
        sw += wi;
        swx += wi * x;
        sw2 += wi * wi;
    }
    const double mean = swx / sw;
    double ss = 0.0;
    for (const auto& [x, wi] : vw) ss += wi * (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / sw);
    const double iqr = weighted_quantile_step(vw, 0.75) - weighted_quantile_step(vw, 0.25);
    const double n_eff = sw * sw / sw2;
    double spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
    double h = 0.9 * spread * std::pow(n_eff, -0.2);
    if (!(h > 1e-12 * (1.0 + std::abs(mean))))
        throw Error(ErrorCode::DegenerateVariable,
                    "variable '" + variable + "' is constant in " + source + "; KDE bandwidth is zero");
    double lo = vw.front().first, hi = vw.front().first;
    for (const auto& p : vw) {
        lo = std::min(lo, p.first);
        hi = std::max(hi, p.first);
    }
    lo -= 3.0 * h;
    hi += 3.0 * h;
    SourceSeries s;
    s.source = std::move(source);
    s.bandwidth = h;
    s.grid_x.resize(kKdeGridPoints);
    s.density.resize(kKdeGridPoints);
    const double norm = 1.0 / (sw * h * std::sqrt(2.0 * std::numbers::pi));
    for (std::size_t g = 0; g < kKdeGridPoints; ++g) {
        const double x = lo + (hi - lo) * static_cast<double>(g) / static_cast<double>(kKdeGridPoints - 1);
        double acc = 0.0;
        for (const auto& [xi, wi] : vw) {
            double z = (x - xi) / h;
            acc += wi * std::exp(-0.5 * z * z);
        }
        s.grid_x[g] = x;
        s.density[g] = acc * norm;
    }
    return s;
}

inline SourceSeries bar_series(std::string source, const std::vector<std::string>& levels,
                               const std::vector<std::optional<std::string>>& cells, std::span<const double> w) {
    SourceSeries s;
    s.source = std::move(source);
    s.levels = levels;
    s.proportions.assign(levels.size(), 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const std::string level = cells[i] ? *cells[i] : std::string(kMissingLevel);
        auto it = std::lower_bound(levels.begin(), levels.end(), level);
        s.proportions[static_cast<std::size_t>(it - levels.begin())] += w[i];
        total += w[i];
    }
    for (double& p : s.proportions) p /= total;
    return s;
}

inline std::vector<std::optional<std::string>> cell_strings(const Column& c) {
    std::vector<std::optional<std::string>> cells(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) {
        if (c.is_missing(i)) continue;
        if (c.is_numeric()) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.17g", c.numeric[i]);
            cells[i] = buf;
        } else {
            cells[i] = c.levels[static_cast<std::size_t>(c.codes[i])];
        }
    }
    return cells;
}

}  // namespace detail

/// Per-source distribution data for one covariate or outcome: bar
/// proportions for categorical variables, weighted Gaussian KDE (Silverman
/// bandwidth, 512-point grid over [min - 3h, max + 3h]) for numeric ones.
inline PlotSeries plot_data(const PairedSample& pair, std::span<const double> weights, const std::string& variable,
                            PlotKind kind = PlotKind::Auto) {
    if (weights.size() != pair.n()) throw Error(ErrorCode::DimensionMismatch, "weights are not aligned to the sample");
    const Column* s = nullptr;
    const Column* t = nullptr;
    if (std::find(pair.common_covariates.begin(), pair.common_covariates.end(), variable) !=
        pair.common_covariates.end()) {
        s = &pair.sample.covariate(variable);
        t = &pair.target.covariate(variable);
    } else if ((s = pair.sample.find_outcome(variable))) {
        t = pair.target.find_outcome(variable);
        if (t && t->kind != s->kind) t = nullptr;
    } else {
        throw Error(ErrorCode::UnknownVariable, "'" + variable + "' is neither a common covariate nor an outcome");
    }
    if (kind == PlotKind::Auto) kind = s->is_numeric() ? PlotKind::Kde : PlotKind::Bar;
    if (kind == PlotKind::Kde && !s->is_numeric())
        throw Error(ErrorCode::InvalidArgument, "KDE requires a numeric variable");

    PlotSeries out;
    out.variable = variable;
    out.kind = kind;
    const auto& design = pair.sample.design_weights();
    if (kind == PlotKind::Kde) {
        out.sources.push_back(detail::kde_series("unadjusted_sample", s->numeric, design, variable));
        out.sources.push_back(detail::kde_series("weighted_sample", s->numeric, weights, variable));
        if (t) out.sources.push_back(detail::kde_series("target", t->numeric, pair.target.design_weights(), variable));
        return out;
    }
    auto s_cells = detail::cell_strings(*s);
    std::vector<std::optional<std::string>> t_cells;
    if (t) t_cells = detail::cell_strings(*t);
    std::set<std::string> level_set;
    for (const auto* cells : {&s_cells, &t_cells})
        for (const auto& c : *cells) level_set.insert(c ? *c : std::string(kMissingLevel));
    std::vector<std::string> levels(level_set.begin(), level_set.end());
    out.sources.push_back(detail::bar_series("unadjusted_sample", levels, s_cells, design));
    out.sources.push_back(detail::bar_series("weighted_sample", levels, s_cells, weights));
    if (t) out.sources.push_back(detail::bar_series("target", levels, t_cells, pair.target.design_weights()));
    return out;
}

}  // namespace rebalance
