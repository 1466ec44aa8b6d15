#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rebalance/csv.hpp"
#include "rebalance/sample.hpp"

namespace rebalance {

/// Settings for the simulated survey used in the walkthrough: a target
/// population and a sample whose selection over-represents men, younger
/// people and lower incomes. Happiness rises with all three covariates.
struct SimulationConfig {
    std::size_t sample_n = 1000;
    std::size_t target_n = 10000;
    std::uint64_t seed = 2022;
    /// Rows [3, 3 + k) get a missing gender, k = fraction * size.
    double sample_gender_missing = 0.088;
    double target_gender_missing = 0.0898;
};

struct SimulatedSurvey {
    Table sample;
    Table target;
};

namespace detail {

inline const std::vector<std::string> kAgeGroups{"18-24", "25-34", "35-44", "45+"};

struct SimulationSpec {
    double p_male;
    std::vector<double> age_probs;
    double income_mean;
    double income_sd;
    std::size_t id_offset;
    double gender_missing;
};

inline Table simulate_frame(std::size_t n, const SimulationSpec& spec, std::mt19937_64& rng) {
    std::bernoulli_distribution male(spec.p_male);
    std::discrete_distribution<int> age(spec.age_probs.begin(), spec.age_probs.end());
    std::normal_distribution<double> income_root(spec.income_mean, spec.income_sd);
    std::normal_distribution<double> noise(0.0, 10.0);

    Table t;
    t.header = {"id", "gender", "age_group", "income", "happiness"};
    const std::size_t missing_from = 3;
    const auto missing_to = missing_from + static_cast<std::size_t>(spec.gender_missing * static_cast<double>(n));
    char buf[64];
    for (std::size_t i = 0; i < n; ++i) {
        const bool is_male = male(rng);
        const int a = age(rng);
        const double r = income_root(rng);
        const double income = r * r;
        const double happiness = 41.0 + noise(rng) + (is_male ? 0.0 : 5.0) + 4.0 * a + 0.5 * income;
        std::vector<std::string> row;
        row.push_back(std::to_string(spec.id_offset + i));
        row.push_back(i >= missing_from && i < missing_to ? "" : (is_male ? "Male" : "Female"));
        row.push_back(kAgeGroups[static_cast<std::size_t>(a)]);
        std::snprintf(buf, sizeof buf, "%.6f", income);
        row.push_back(buf);
        std::snprintf(buf, sizeof buf, "%.6f", happiness);
        row.push_back(buf);
        t.rows.push_back(std::move(row));
    }
    return t;
}

}  // namespace detail

/// Generates the sample and target tables. Both carry the outcome so the
/// bias of the weighted estimate can be checked.
inline SimulatedSurvey simulate_survey(const SimulationConfig& cfg = {}) {
    std::mt19937_64 rng(cfg.seed);
    SimulatedSurvey out;
    out.target = detail::simulate_frame(cfg.target_n,
                                        {0.5, {0.20, 0.30, 0.30, 0.20}, 3.0, 2.0, 100000, cfg.target_gender_missing}, rng);
    out.sample = detail::simulate_frame(cfg.sample_n,
                                        {0.7, {0.50, 0.30, 0.15, 0.05}, 2.0, 1.5, 0, cfg.sample_gender_missing}, rng);
    return out;
}

/// Paired sample/target built from simulate_survey, with happiness as outcome.
inline PairedSample simulated_pair(const SimulationConfig& cfg = {}) {
    auto tables = simulate_survey(cfg);
    Sample s = build_sample(tables.sample, "id", std::nullopt, {"happiness"});
    Sample t = build_sample(tables.target, "id", std::nullopt, {"happiness"});
    return pair_with_target(std::move(s), std::move(t));
}

}  // namespace rebalance
