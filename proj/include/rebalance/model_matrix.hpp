#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rebalance/error.hpp"
#include "rebalance/formula.hpp"
#include "rebalance/sample.hpp"

namespace rebalance {

/// Shared column space for sample and target: one-hot main effects (reference
/// level dropped) and products of them for interactions.
struct ModelMatrix {
    std::vector<std::string> columns;
    Eigen::MatrixXd sample_block;
    Eigen::MatrixXd target_block;
    std::vector<std::string> column_to_main_covar;
    std::vector<std::size_t> column_term;
    std::vector<std::string> terms;

    std::size_t cols() const { return columns.size(); }

    /// Rows of the sample followed by rows of the target.
    Eigen::MatrixXd stacked() const {
        Eigen::MatrixXd x(sample_block.rows() + target_block.rows(), sample_block.cols());
        x << sample_block, target_block;
        return x;
    }
};

namespace detail {

struct Indicator {
    std::string name;
    std::vector<double> sample;
    std::vector<double> target;
};

/// Non-reference indicator columns of one categorical covariate. Levels are
/// unioned across both sources; the lexicographically first is the reference.
inline std::vector<Indicator> one_hot(const Column& s, const Column& t) {
    std::set<std::string> union_levels(s.levels.begin(), s.levels.end());
    union_levels.insert(t.levels.begin(), t.levels.end());
    std::vector<std::string> levels(union_levels.begin(), union_levels.end());
    std::vector<Indicator> out;
    for (std::size_t l = 1; l < levels.size(); ++l) {
        Indicator ind;
        ind.name = s.name + "=" + levels[l];
        int sc = s.level_code(levels[l]);
        int tc = t.level_code(levels[l]);
        ind.sample.resize(s.size());
        ind.target.resize(t.size());
        for (std::size_t i = 0; i < s.size(); ++i) ind.sample[i] = (sc >= 0 && s.codes[i] == sc) ? 1.0 : 0.0;
        for (std::size_t i = 0; i < t.size(); ++i) ind.target[i] = (tc >= 0 && t.codes[i] == tc) ? 1.0 : 0.0;
        out.push_back(std::move(ind));
    }
    return out;
}

inline bool is_constant(const Indicator& c) {
    double first = !c.sample.empty() ? c.sample.front() : c.target.front();
    for (double v : c.sample)
        if (v != first) return false;
    for (double v : c.target)
        if (v != first) return false;
    return true;
}

}  // namespace detail

/// Encodes a transformed (all-categorical) pair under a formula.
inline ModelMatrix build_model_matrix(const PairedSample& pair, const FormulaAST& formula) {
    std::map<std::string, std::vector<detail::Indicator>> encoded;
    for (const auto& term : formula.terms)
        for (const auto& name : term.names) {
            if (encoded.count(name)) continue;
            if (std::find(pair.common_covariates.begin(), pair.common_covariates.end(), name) ==
                pair.common_covariates.end())
                throw Error(ErrorCode::DroppedCovariate,
                            "formula references '" + name + "', which is not an available covariate");
            const Column& s = pair.sample.covariate(name);
            const Column& t = pair.target.covariate(name);
            if (s.is_numeric() || t.is_numeric())
                throw Error(ErrorCode::InvalidArgument,
                            "covariate '" + name + "' must be categorical; apply transforms first");
            encoded[name] = detail::one_hot(s, t);
        }

    ModelMatrix mm;
    std::vector<detail::Indicator> kept;
    for (std::size_t ti = 0; ti < formula.terms.size(); ++ti) {
        const Term& term = formula.terms[ti];
        mm.terms.push_back(term.label());
        std::vector<detail::Indicator> product = encoded.at(term.names.front());
        for (std::size_t k = 1; k < term.names.size(); ++k) {
            const auto& rhs = encoded.at(term.names[k]);
            std::vector<detail::Indicator> next;
            for (const auto& a : product)
                for (const auto& b : rhs) {
                    detail::Indicator c;
                    c.name = a.name + ":" + b.name;
                    c.sample.resize(a.sample.size());
                    c.target.resize(a.target.size());
                    for (std::size_t i = 0; i < a.sample.size(); ++i) c.sample[i] = a.sample[i] * b.sample[i];
                    for (std::size_t i = 0; i < a.target.size(); ++i) c.target[i] = a.target[i] * b.target[i];
                    next.push_back(std::move(c));
                }
            product = std::move(next);
        }
        for (auto& c : product) {
            if (detail::is_constant(c)) continue;
            mm.columns.push_back(c.name);
            mm.column_to_main_covar.push_back(term.label());
            mm.column_term.push_back(ti);
            kept.push_back(std::move(c));
        }
    }

    const auto n = static_cast<Eigen::Index>(pair.n());
    const auto big_n = static_cast<Eigen::Index>(pair.N());
    mm.sample_block.resize(n, static_cast<Eigen::Index>(kept.size()));
    mm.target_block.resize(big_n, static_cast<Eigen::Index>(kept.size()));
    for (std::size_t j = 0; j < kept.size(); ++j) {
        const auto col = static_cast<Eigen::Index>(j);
        for (Eigen::Index i = 0; i < n; ++i) mm.sample_block(i, col) = kept[j].sample[static_cast<std::size_t>(i)];
        for (Eigen::Index i = 0; i < big_n; ++i)
            mm.target_block(i, col) = kept[j].target[static_cast<std::size_t>(i)];
    }
    return mm;
}

}  // namespace rebalance
