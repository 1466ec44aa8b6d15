#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "rebalance/error.hpp"
#include "rebalance/sample.hpp"

namespace rebalance {

inline constexpr const char* kMissingLevel = "_NA";
inline constexpr const char* kLumpedLevel = "_lumped_other";

struct TransformConfig {
    int quantile_buckets = 10;
    double rare_level_min_prop = 0.05;
    bool add_missing_indicators = true;

    void validate() const {
        if (quantile_buckets < 2) throw Error(ErrorCode::InvalidArgument, "quantile_buckets must be >= 2");
        if (!(rare_level_min_prop >= 0.0 && rare_level_min_prop < 1.0))
            throw Error(ErrorCode::InvalidArgument, "rare_level_min_prop must lie in [0, 1)");
    }
};

/// Weighted quantile cut points: for each probability j/B the smallest value
/// whose cumulative weight reaches it. Duplicates and edges at or above the
/// maximum are removed, so fewer than B buckets may result.
inline std::vector<double> weighted_quantile_edges(std::vector<std::pair<double, double>> value_weight,
                                                   int buckets) {
    std::sort(value_weight.begin(), value_weight.end());
    double total = 0.0;
    for (const auto& vw : value_weight) total += vw.second;
    std::vector<double> edges;
    double cumulative = 0.0;
    std::size_t k = 0;
    for (int j = 1; j < buckets; ++j) {
        const double threshold = total * static_cast<double>(j) / buckets * (1.0 - 1e-12);
        while (k < value_weight.size() && cumulative + value_weight[k].second < threshold) {
            cumulative += value_weight[k].second;
            ++k;
        }
        if (k >= value_weight.size()) break;
        edges.push_back(value_weight[k].first);
    }
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    const double max_value = value_weight.back().first;
    while (!edges.empty() && edges.back() >= max_value) edges.pop_back();
    return edges;
}

/// Bucket index in [0, edges.size()]: values <= edges[0] land in bucket 0.
inline std::size_t bucket_of(double value, const std::vector<double>& edges) {
    return static_cast<std::size_t>(std::lower_bound(edges.begin(), edges.end(), value) - edges.begin());
}

inline std::string bucket_label(std::size_t bucket, std::size_t bucket_count) {
    std::string digits = std::to_string(bucket + 1);
    std::size_t width = std::max<std::size_t>(2, std::to_string(bucket_count).size());
    return "q" + std::string(width - std::min(width, digits.size()), '0') + digits;
}

/// Transform rules fitted on the target, applied identically to both sources.
struct FittedTransform {
    struct Rule {
        std::string name;
        bool numeric = false;
        std::vector<double> edges;
        std::set<std::string> lumped;
    };

    TransformConfig config;
    std::vector<Rule> rules;
    std::vector<std::string> dropped;
    std::vector<std::string> warnings;

    Column apply(const Rule& rule, const Column& column) const {
        std::vector<std::optional<std::string>> cells(column.size());
        const std::size_t bucket_count = rule.edges.size() + 1;
        for (std::size_t i = 0; i < column.size(); ++i) {
            if (column.is_missing(i)) {
                if (config.add_missing_indicators) cells[i] = kMissingLevel;
                continue;
            }
            if (rule.numeric) {
                cells[i] = bucket_label(bucket_of(column.numeric[i], rule.edges), bucket_count);
            } else {
                const std::string& level = column.levels[static_cast<std::size_t>(column.codes[i])];
                cells[i] = rule.lumped.count(level) ? std::string(kLumpedLevel) : level;
            }
        }
        return Column::make_categorical(column.name, cells);
    }

    PairedSample apply(const PairedSample& pair) const {
        std::vector<Column> sample_cols, target_cols;
        std::vector<std::string> names;
        for (const auto& rule : rules) {
            sample_cols.push_back(apply(rule, pair.sample.covariate(rule.name)));
            target_cols.push_back(apply(rule, pair.target.covariate(rule.name)));
            names.push_back(rule.name);
        }
        return PairedSample{pair.sample.with_covariates(std::move(sample_cols)),
                            pair.target.with_covariates(std::move(target_cols)), std::move(names)};
    }
};

namespace detail {

inline std::size_t distinct_values(const Column& a, const Column& b) {
    std::set<std::optional<std::string>> seen;
    for (const Column* c : {&a, &b})
        for (std::size_t i = 0; i < c->size(); ++i) seen.insert(c->categorical_value(i));
    return seen.size();
}

}  // namespace detail

inline FittedTransform fit_transforms(const PairedSample& pair, const TransformConfig& cfg) {
    cfg.validate();
    FittedTransform fitted;
    fitted.config = cfg;
    const auto& target_w = pair.target.design_weights();
    const double target_total = pair.target.design_weight_total();

    for (const auto& name : pair.common_covariates) {
        const Column& t = pair.target.covariate(name);
        FittedTransform::Rule rule;
        rule.name = name;
        rule.numeric = t.is_numeric();
        if (rule.numeric) {
            std::vector<std::pair<double, double>> vw;
            for (std::size_t i = 0; i < t.size(); ++i)
                if (!t.is_missing(i)) vw.emplace_back(t.numeric[i], target_w[i]);
            if (vw.empty())
                throw Error(ErrorCode::NoNumericValues, "numeric covariate '" + name + "' has no target values");
            rule.edges = weighted_quantile_edges(std::move(vw), cfg.quantile_buckets);
        } else {
            std::vector<double> mass(t.levels.size(), 0.0);
            for (std::size_t i = 0; i < t.size(); ++i)
                if (t.codes[i] >= 0) mass[static_cast<std::size_t>(t.codes[i])] += target_w[i];
            std::set<std::string> all_levels(t.levels.begin(), t.levels.end());
            const Column& s = pair.sample.covariate(name);
            all_levels.insert(s.levels.begin(), s.levels.end());
            for (const auto& level : all_levels) {
                int code = t.level_code(level);
                double prop = code < 0 ? 0.0 : mass[static_cast<std::size_t>(code)] / target_total;
                if (prop < cfg.rare_level_min_prop) rule.lumped.insert(level);
            }
        }

        Column sample_out = fitted.apply(rule, pair.sample.covariate(name));
        Column target_out = fitted.apply(rule, t);
        if (detail::distinct_values(sample_out, target_out) <= 1) {
            fitted.dropped.push_back(name);
            fitted.warnings.push_back("covariate '" + name + "' has a single level after transforms; dropped");
            continue;
        }
        fitted.rules.push_back(std::move(rule));
    }
    if (fitted.rules.empty())
        throw Error(ErrorCode::NoCommonCovariates, "every common covariate was dropped as degenerate");
    return fitted;
}

/// Transformed pair plus the transform that produced it.
struct TransformedPair {
    PairedSample pair;
    FittedTransform transform;
};

/// Missing indicators, target-weighted quantile bucketing of numerics and
/// rare-level lumping. Every output covariate is categorical.
inline TransformedPair apply_transforms(const PairedSample& pair, const TransformConfig& cfg = {}) {
    FittedTransform fitted = fit_transforms(pair, cfg);
    PairedSample out = fitted.apply(pair);
    return TransformedPair{std::move(out), std::move(fitted)};
}

}  // namespace rebalance
