#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rebalance/sample.hpp"

namespace testing_support {

using rebalance::Column;
using rebalance::PairedSample;
using rebalance::Sample;

inline std::vector<std::string> make_ids(std::size_t n, const std::string& prefix = "u") {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back(prefix + std::to_string(i));
    return ids;
}

inline Column categorical(const std::string& name, const std::vector<std::string>& cells) {
    std::vector<std::optional<std::string>> c(cells.begin(), cells.end());
    return Column::make_categorical(name, c);
}

/// Categorical column whose level counts follow `counts` in order.
inline std::vector<std::string> repeat_levels(const std::vector<std::pair<std::string, int>>& counts) {
    std::vector<std::string> out;
    for (const auto& [level, k] : counts)
        for (int i = 0; i < k; ++i) out.push_back(level);
    return out;
}

inline Sample make_sample(std::vector<Column> covariates, std::vector<double> weights = {},
                          std::vector<Column> outcomes = {}, const std::string& prefix = "u") {
    const std::size_t n = covariates.empty() ? outcomes.front().size() : covariates.front().size();
    return Sample::from_columns("id", make_ids(n, prefix), std::nullopt, std::move(weights), std::move(covariates),
                                std::move(outcomes));
}

inline PairedSample make_pair(std::vector<Column> sample_cols, std::vector<Column> target_cols,
                              std::vector<double> sample_w = {}, std::vector<double> target_w = {}) {
    return rebalance::pair_with_target(make_sample(std::move(sample_cols), std::move(sample_w), {}, "s"),
                                       make_sample(std::move(target_cols), std::move(target_w), {}, "t"));
}

/// Random categorical column over `levels` with the given probabilities.
inline Column random_categorical(const std::string& name, std::size_t n, const std::vector<std::string>& levels,
                                 const std::vector<double>& probs, std::mt19937_64& rng) {
    std::discrete_distribution<int> pick(probs.begin(), probs.end());
    std::vector<std::string> cells(n);
    for (auto& c : cells) c = levels[static_cast<std::size_t>(pick(rng))];
    return categorical(name, cells);
}

inline std::vector<double> random_weights(std::size_t n, std::mt19937_64& rng, double lo = 0.5, double hi = 3.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> w(n);
    for (auto& v : w) v = u(rng);
    return w;
}

}  // namespace testing_support
