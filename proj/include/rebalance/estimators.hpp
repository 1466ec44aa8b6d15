#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "rebalance/diagnostics.hpp"
#include "rebalance/error.hpp"
#include "rebalance/formula.hpp"
#include "rebalance/glm_lasso.hpp"
#include "rebalance/model_matrix.hpp"
#include "rebalance/parallel.hpp"
#include "rebalance/sample.hpp"
#include "rebalance/transforms.hpp"

namespace rebalance {

enum class Method { Poststratify, Rake, Ipw, Cbps };

inline std::string_view to_string(Method m) {
    switch (m) {
        case Method::Poststratify: return "poststratify";
        case Method::Rake: return "rake";
        case Method::Ipw: return "ipw";
        case Method::Cbps: return "cbps";
    }
    return "ipw";
}

inline Method parse_method(std::string_view name) {
    if (name == "poststratify") return Method::Poststratify;
    if (name == "rake") return Method::Rake;
    if (name == "ipw") return Method::Ipw;
    if (name == "cbps") return Method::Cbps;
    throw Error(ErrorCode::InvalidArgument, "unknown method '" + std::string(name) + "'");
}

using FitMeta = nlohmann::ordered_json;

/// Fitted weights at population-sum scale plus method-specific metadata.
struct WeightResult {
    WeightVector weights;
    Method method = Method::Ipw;
    std::optional<std::vector<double>> propensity;
    /// Weights before trimming and scaling (ipw and cbps only).
    std::optional<std::vector<double>> untrimmed;
    FitMeta fit_meta = FitMeta::object();
};

// ---------------------------------------------------------------------------
// Trimming

struct TrimResult {
    WeightVector weights;
    std::size_t clipped = 0;
    double cap = 0.0;
};

/// Clips at ratio_cap * mean(w), then rescales so the sum (and mean) match
/// the input. One pass.
inline TrimResult trim_weights(const WeightVector& w, double ratio_cap) {
    if (!(ratio_cap > 1.0)) throw Error(ErrorCode::InvalidArgument, "trim ratio cap must exceed 1");
    validate_weights(w.values);
    TrimResult out;
    const double total = w.sum();
    out.cap = ratio_cap * total / static_cast<double>(w.size());
    out.weights = w;
    double clipped_total = 0.0;
    for (double& v : out.weights.values) {
        if (v > out.cap) {
            v = out.cap;
            ++out.clipped;
        }
        clipped_total += v;
    }
    if (out.clipped == 0) return out;
    const double factor = total / clipped_total;
    for (double& v : out.weights.values) v *= factor;
    return out;
}

// ---------------------------------------------------------------------------
// Cell helpers shared by post-stratification and raking

namespace detail {

using CellKey = std::vector<std::string>;

inline const std::string kMissingCell = "\x01missing";

inline std::vector<std::string> resolve_vars(const PairedSample& pair, const std::vector<std::string>& vars) {
    if (vars.empty()) return pair.common_covariates;
    for (const auto& v : vars)
        if (std::find(pair.common_covariates.begin(), pair.common_covariates.end(), v) ==
            pair.common_covariates.end())
            throw Error(ErrorCode::UnknownCovariate, "'" + v + "' is not a common covariate");
    return vars;
}

inline std::string cell_value(const Column& c, std::size_t i) {
    if (c.is_missing(i)) return kMissingCell;
    if (c.is_numeric())
        throw Error(ErrorCode::InvalidArgument, "covariate '" + c.name + "' must be categorical; apply transforms first");
    return c.levels[static_cast<std::size_t>(c.codes[i])];
}

inline std::vector<CellKey> cell_keys(const Sample& s, const std::vector<std::string>& vars) {
    std::vector<const Column*> cols;
    for (const auto& v : vars) cols.push_back(&s.covariate(v));
    std::vector<CellKey> keys(s.size());
    for (std::size_t i = 0; i < s.size(); ++i)
        for (const Column* c : cols) keys[i].push_back(cell_value(*c, i));
    return keys;
}

inline std::string describe_cell(const std::vector<std::string>& vars, const CellKey& key) {
    std::string out;
    for (std::size_t k = 0; k < vars.size(); ++k) {
        if (k) out += ", ";
        out += vars[k] + "=" + (key[k] == kMissingCell ? std::string(kMissingLevel) : key[k]);
    }
    return "{" + out + "}";
}

inline WeightVector to_population_sum(std::vector<double> w, const PairedSample& pair) {
    double total = 0.0;
    for (double v : w) total += v;
    const double factor = pair.population_size() / total;
    for (double& v : w) v *= factor;
    return WeightVector{std::move(w), WeightScale::PopulationSum};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Post-stratification

/// Cell-ratio weights over the joint cross of strata_vars:
///   w_i = d_i * P_H * N / n_H,
/// with P_H the target design-weighted cell share, N the target design-weight
/// total and n_H the sample design-weight total of the cell.
inline WeightResult poststratify(const PairedSample& pair, const std::vector<std::string>& strata_vars = {}) {
    const auto vars = detail::resolve_vars(pair, strata_vars);
    const auto s_keys = detail::cell_keys(pair.sample, vars);
    const auto t_keys = detail::cell_keys(pair.target, vars);
    const auto& d = pair.sample.design_weights();
    const auto& td = pair.target.design_weights();

    std::map<detail::CellKey, double> target_mass, sample_mass;
    for (std::size_t i = 0; i < t_keys.size(); ++i) target_mass[t_keys[i]] += td[i];
    for (std::size_t i = 0; i < s_keys.size(); ++i) sample_mass[s_keys[i]] += d[i];

    std::vector<std::string> empty_target, empty_sample;
    for (const auto& [key, mass] : sample_mass)
        if (!target_mass.count(key)) empty_target.push_back(detail::describe_cell(vars, key));
    if (!empty_target.empty()) {
        std::string msg = "sample cells with no target mass:";
        for (const auto& c : empty_target) msg += " " + c;
        throw Error(ErrorCode::EmptyTargetCell, msg);
    }
    for (const auto& [key, mass] : target_mass)
        if (!sample_mass.count(key)) empty_sample.push_back(detail::describe_cell(vars, key));
    if (!empty_sample.empty()) {
        std::string msg = "target cells with no sample units:";
        for (const auto& c : empty_sample) msg += " " + c;
        throw Error(ErrorCode::EmptySampleCell, msg);
    }

    const double population = pair.population_size();
    std::vector<double> w(pair.n());
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double share = target_mass.at(s_keys[i]) / population;
        w[i] = d[i] * share * population / sample_mass.at(s_keys[i]);
    }
    WeightResult result;
    result.method = Method::Poststratify;
    result.weights = detail::to_population_sum(std::move(w), pair);
    result.fit_meta["strata_vars"] = vars;
    result.fit_meta["n_cells"] = target_mass.size();
    return result;
}

// ---------------------------------------------------------------------------
// Raking

struct RakeConfig {
    int max_iterations = 50;
    double marginal_tol = 1e-3;
    double weight_change_tol = 1e-4;

    void validate() const {
        if (max_iterations < 1 || !(marginal_tol > 0.0) || !(weight_change_tol > 0.0))
            throw Error(ErrorCode::InvalidArgument, "rake settings must be positive");
    }
};

/// Iterative proportional fitting on target marginals, starting from the
/// sample design weights and visiting margin_vars in the given order. Stops
/// at the first of: max_iterations reached, every marginal gap within
/// marginal_tol, or max relative weight change within weight_change_tol.
inline WeightResult rake(const PairedSample& pair, const std::vector<std::string>& margin_vars = {},
                         const RakeConfig& cfg = {}) {
    cfg.validate();
    const auto vars = detail::resolve_vars(pair, margin_vars);
    const double population = pair.population_size();

    struct Margin {
        std::string name;
        std::vector<std::size_t> level_of;  // per sample unit
        std::vector<double> target_share;   // per level
        std::vector<std::string> levels;
    };
    std::vector<Margin> margins;
    for (const auto& var : vars) {
        const auto s_keys = detail::cell_keys(pair.sample, {var});
        const auto t_keys = detail::cell_keys(pair.target, {var});
        std::map<std::string, double> t_mass;
        for (std::size_t i = 0; i < t_keys.size(); ++i) t_mass[t_keys[i][0]] += pair.target.design_weights()[i];
        std::map<std::string, std::size_t> index;
        for (const auto& key : s_keys) index.emplace(key[0], 0);
        std::vector<std::string> problems;
        for (const auto& [level, unused] : index)
            if (!t_mass.count(level)) problems.push_back(var + "=" + level + " has no target mass");
        for (const auto& [level, mass] : t_mass)
            if (!index.count(level)) problems.push_back(var + "=" + level + " has no sample units");
        if (!problems.empty()) {
            std::string msg;
            for (const auto& p : problems) msg += (msg.empty() ? "" : "; ") + p;
            throw Error(ErrorCode::PositivityViolation, msg);
        }
        Margin m;
        m.name = var;
        std::size_t next = 0;
        for (auto& [level, idx] : index) {
            idx = next++;
            m.levels.push_back(level == detail::kMissingCell ? std::string(kMissingLevel) : level);
            m.target_share.push_back(t_mass.at(level) / population);
        }
        for (const auto& key : s_keys) m.level_of.push_back(index.at(key[0]));
        margins.push_back(std::move(m));
    }

    std::vector<double> w = pair.sample.design_weights();
    auto margin_gap = [&](const Margin& m) {
        std::vector<double> mass(m.target_share.size(), 0.0);
        double total = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            mass[m.level_of[i]] += w[i];
            total += w[i];
        }
        double gap = 0.0;
        for (std::size_t l = 0; l < mass.size(); ++l) gap = std::max(gap, std::abs(mass[l] / total - m.target_share[l]));
        return gap;
    };

    std::string criterion = "max_iterations";
    int iteration = 0;
    double max_gap = 0.0, max_change = 0.0;
    while (iteration < cfg.max_iterations) {
        ++iteration;
        const std::vector<double> previous = w;
        for (const auto& m : margins) {
            std::vector<double> mass(m.target_share.size(), 0.0);
            double total = 0.0;
            for (std::size_t i = 0; i < w.size(); ++i) {
                mass[m.level_of[i]] += w[i];
                total += w[i];
            }
            for (std::size_t i = 0; i < w.size(); ++i) w[i] *= m.target_share[m.level_of[i]] * total / mass[m.level_of[i]];
        }
        max_gap = 0.0;
        for (const auto& m : margins) max_gap = std::max(max_gap, margin_gap(m));
        max_change = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) max_change = std::max(max_change, std::abs(w[i] - previous[i]) / previous[i]);
        if (max_gap <= cfg.marginal_tol) {
            criterion = "marginal_tol";
            break;
        }
        if (max_change <= cfg.weight_change_tol) {
            criterion = "weight_change_tol";
            break;
        }
    }

    WeightResult result;
    result.method = Method::Rake;
    result.weights = detail::to_population_sum(std::move(w), pair);
    auto& meta = result.fit_meta;
    meta["margin_order"] = vars;
    meta["iterations"] = iteration;
    meta["stopping_criterion"] = criterion;
    meta["converged"] = criterion != "max_iterations";
    meta["max_marginal_gap"] = max_gap;
    meta["max_relative_weight_change"] = max_change;
    FitMeta gaps = FitMeta::object();
    std::vector<double> final_w = result.weights.values;
    for (const auto& m : margins) {
        std::vector<double> mass(m.target_share.size(), 0.0);
        double total = 0.0;
        for (std::size_t i = 0; i < final_w.size(); ++i) {
            mass[m.level_of[i]] += final_w[i];
            total += final_w[i];
        }
        double gap = 0.0;
        for (std::size_t l = 0; l < mass.size(); ++l) gap = std::max(gap, std::abs(mass[l] / total - m.target_share[l]));
        gaps[m.name] = gap;
    }
    meta["marginal_gaps"] = gaps;
    return result;
}

// ---------------------------------------------------------------------------
// Propensity models

/// Transformed data, model matrix and the logistic problem that ipw and
/// cbps fit. Target case weights are rescaled so both classes carry the same
/// total weight.
struct PropensityDesign {
    TransformedPair transformed;
    FormulaAST formula;
    ModelMatrix matrix;
    GlmProblem problem;
};

inline PropensityDesign propensity_design(const PairedSample& pair, const std::optional<std::string>& formula,
                                          const TransformConfig& transforms,
                                          const std::map<std::string, double>& penalty_factors = {}) {
    PropensityDesign design{apply_transforms(pair, transforms), {}, {}, {}};
    const auto& tp = design.transformed.pair;
    design.formula = formula ? parse_formula(*formula, pair.common_covariates) : default_formula(tp.common_covariates);
    design.matrix = build_model_matrix(tp, design.formula);
    if (design.matrix.cols() == 0)
        throw Error(ErrorCode::InvalidArgument, "model matrix has no non-constant columns");

    for (const auto& [term, factor] : penalty_factors) {
        if (std::find(design.matrix.terms.begin(), design.matrix.terms.end(), term) == design.matrix.terms.end())
            throw Error(ErrorCode::UnknownCovariate, "penalty factor given for unknown term '" + term + "'");
        if (!(factor >= 0.0)) throw Error(ErrorCode::InvalidArgument, "penalty factors must be non-negative");
    }

    const auto n = static_cast<Eigen::Index>(pair.n());
    const auto big_n = static_cast<Eigen::Index>(pair.N());
    GlmProblem& p = design.problem;
    p.x = design.matrix.stacked();
    p.y = Eigen::VectorXd::Zero(n + big_n);
    p.y.head(n).setOnes();
    p.case_weights.resize(n + big_n);
    const double prevalence = pair.sample.design_weight_total() / pair.target.design_weight_total();
    for (Eigen::Index i = 0; i < n; ++i) p.case_weights[i] = pair.sample.design_weights()[static_cast<std::size_t>(i)];
    for (Eigen::Index i = 0; i < big_n; ++i)
        p.case_weights[n + i] = pair.target.design_weights()[static_cast<std::size_t>(i)] * prevalence;
    p.penalty_factors = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(design.matrix.cols()));
    for (std::size_t j = 0; j < design.matrix.cols(); ++j) {
        auto it = penalty_factors.find(design.matrix.terms[design.matrix.column_term[j]]);
        if (it != penalty_factors.end()) p.penalty_factors[static_cast<Eigen::Index>(j)] = it->second;
    }
    return design;
}

namespace detail {

/// Odds weights d_i (1 - p_i) / p_i for the sample rows.
inline std::vector<double> odds_weights(const Eigen::VectorXd& p, const std::vector<double>& design) {
    std::vector<double> w(design.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double pi = p[static_cast<Eigen::Index>(i)];
        w[i] = design[i] * (1.0 - pi) / pi;
    }
    return w;
}

inline double deviance_explained(const GlmProblem& problem, const Coefficients& coeffs) {
    const double ybar = problem.y.dot(problem.case_weights) / problem.case_weights.sum();
    Eigen::VectorXd null_p = Eigen::VectorXd::Constant(problem.rows(), ybar);
    const double null_dev = binomial_deviance(problem.y, null_p, problem.case_weights);
    const double dev = binomial_deviance(problem.y, predict_proba(coeffs, problem.x), problem.case_weights);
    return 1.0 - dev / null_dev;
}

inline std::vector<std::string> warnings_of(const TransformedPair& tp) { return tp.transform.warnings; }

}  // namespace detail

struct IpwConfig {
    std::optional<double> max_de;
    std::optional<std::string> formula;
    std::map<std::string, double> penalty_factors;
    int cv_folds = 10;
    int n_lambdas = 100;
    std::uint64_t seed = 0;
    double trim_ratio_cap = 20.0;
    TransformConfig transforms{};
    std::size_t threads = 0;

    void validate() const {
        if (max_de && !(*max_de > 1.0)) throw Error(ErrorCode::InvalidArgument, "max_de must exceed 1");
        if (!(trim_ratio_cap > 1.0)) throw Error(ErrorCode::InvalidArgument, "trim ratio cap must exceed 1");
        if (cv_folds < 2) throw Error(ErrorCode::InvalidArgument, "cv_folds must be at least 2");
        transforms.validate();
    }
};

/// Inverse propensity weights from an L1-penalised logistic model of sample
/// membership. Lambda is the one-standard-error choice, or, with max_de set,
/// the best mean-ASMD reduction among the ten feasible path values with the
/// largest design effect not above max_de.
inline WeightResult ipw(const PairedSample& pair, const IpwConfig& cfg = {}) {
    cfg.validate();
    PropensityDesign design = propensity_design(pair, cfg.formula, cfg.transforms, cfg.penalty_factors);
    const auto n = static_cast<Eigen::Index>(pair.n());
    CVOptions cv_opts;
    cv_opts.folds = cfg.cv_folds;
    cv_opts.n_lambdas = cfg.n_lambdas;
    cv_opts.seed = cfg.seed;
    cv_opts.threads = cfg.threads;
    const CVResult cv = cv_lambda_path(design.problem, cv_opts);
    const Eigen::MatrixXd& xs = design.matrix.sample_block;
    const auto& d = pair.sample.design_weights();

    auto weights_at = [&](std::size_t l) { return detail::odds_weights(predict_proba(cv.fits[l], xs), d); };

    std::size_t chosen = cv.index_1se;
    FitMeta grid = FitMeta::array();
    std::string selection = "lambda_1se";
    if (cfg.max_de) {
        selection = "max_de_grid";
        const std::size_t L = cv.fits.size();
        std::vector<double> deff(L);
        parallel_for(L, [&](std::size_t l) { deff[l] = kish_deff(weights_at(l)); }, cfg.threads ? cfg.threads : thread_budget());
        std::vector<std::size_t> feasible;
        for (std::size_t l = 0; l < L; ++l)
            if (deff[l] <= *cfg.max_de) feasible.push_back(l);
        if (feasible.empty()) {
            double best = *std::min_element(deff.begin(), deff.end());
            throw Error(ErrorCode::DeBoundInfeasible, "no lambda on the path meets max_de " + std::to_string(*cfg.max_de) +
                                                          "; smallest achievable design effect is " + std::to_string(best));
        }
        std::stable_sort(feasible.begin(), feasible.end(), [&](std::size_t a, std::size_t b) { return deff[a] > deff[b]; });
        if (feasible.size() > 10) feasible.resize(10);
        std::sort(feasible.begin(), feasible.end());
        const CovariateMatrix cm = build_covariate_matrix(pair);
        std::vector<double> reduction(feasible.size());
        parallel_for(
            feasible.size(),
            [&](std::size_t c) {
                auto w = weights_at(feasible[c]);
                reduction[c] = asmd_reduction_pct(asmd(cm, pair, std::span<const double>(w), true));
            },
            cfg.threads ? cfg.threads : thread_budget());
        std::size_t best = 0;
        for (std::size_t c = 1; c < feasible.size(); ++c)
            if (reduction[c] > reduction[best]) best = c;
        chosen = feasible[best];
        for (std::size_t c = 0; c < feasible.size(); ++c)
            grid.push_back({{"lambda", cv.lambda_path[feasible[c]]},
                            {"design_effect", deff[feasible[c]]},
                            {"asmd_reduction_pct", reduction[c]}});
    }

    const Coefficients& coeffs = cv.fits[chosen];
    Eigen::VectorXd p_sample = predict_proba(coeffs, xs);
    std::vector<double> raw = detail::odds_weights(p_sample, d);
    const double deff_untrimmed = kish_deff(raw);
    TrimResult trimmed = trim_weights(WeightVector{raw, WeightScale::Raw}, cfg.trim_ratio_cap);

    WeightResult result;
    result.method = Method::Ipw;
    result.weights = detail::to_population_sum(std::move(trimmed.weights.values), pair);
    result.propensity = std::vector<double>(p_sample.data(), p_sample.data() + n);
    result.untrimmed = std::move(raw);

    std::size_t nonzero = 0;
    for (Eigen::Index j = 0; j < coeffs.beta.size(); ++j) nonzero += coeffs.beta[j] != 0.0;
    auto& meta = result.fit_meta;
    meta["lambda"] = cv.lambda_path[chosen];
    meta["lambda_index"] = chosen;
    meta["lambda_selection"] = selection;
    meta["lambda_1se"] = cv.lambda_1se;
    meta["lambda_min"] = cv.lambda_min;
    meta["cv_folds"] = cfg.cv_folds;
    meta["seed"] = cfg.seed;
    meta["converged"] = coeffs.converged;
    meta["separated"] = coeffs.separated;
    meta["design_effect"] = kish_deff(result.weights.values);
    meta["design_effect_untrimmed"] = deff_untrimmed;
    meta["deviance_explained"] = detail::deviance_explained(design.problem, coeffs);
    meta["model_columns"] = design.matrix.columns;
    meta["formula_terms"] = design.formula.labels();
    meta["nonzero_coefficients"] = nonzero;
    meta["trim_ratio_cap"] = cfg.trim_ratio_cap;
    meta["trimmed_count"] = trimmed.clipped;
    meta["transform_warnings"] = detail::warnings_of(design.transformed);
    meta["dropped_covariates"] = design.transformed.transform.dropped;
    if (cfg.max_de) {
        meta["max_de"] = *cfg.max_de;
        meta["grid"] = grid;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Covariate balancing propensity score

struct CbpsConfig {
    std::optional<std::string> formula;
    std::uint64_t seed = 0;
    int cv_folds = 10;
    int n_lambdas = 100;
    double trim_ratio_cap = 20.0;
    double tol = 1e-8;
    int max_iterations = 200;
    TransformConfig transforms{};
    std::size_t threads = 0;
};

struct BalanceSolution {
    Eigen::VectorXd beta;
    double residual_norm = 0.0;
    int iterations = 0;
    bool converged = false;
};

namespace detail {

/// log sum_i d_i exp(-(x_i - t)·beta), the convex potential whose gradient is
/// minus the balance residual and whose Hessian is the weighted covariance.
struct BalancePotential {
    const Eigen::MatrixXd& x;
    const Eigen::VectorXd& log_d;
    const Eigen::VectorXd& target_mean;

    double value(const Eigen::VectorXd& beta) const {
        Eigen::VectorXd a = log_d - (x * beta);
        const double shift = a.maxCoeff();
        return shift + std::log((a.array() - shift).exp().sum()) + target_mean.dot(beta);
    }

    Eigen::VectorXd weights(const Eigen::VectorXd& beta) const {
        Eigen::VectorXd a = log_d - (x * beta);
        const double shift = a.maxCoeff();
        Eigen::VectorXd w = (a.array() - shift).exp();
        return w / w.sum();
    }
};

}  // namespace detail

/// Solves  sum_i w_i x_i / sum_i w_i = target_mean  with
/// w_i = d_i exp(-x_i·beta) by damped Newton on the balance potential.
inline BalanceSolution solve_balance(const Eigen::MatrixXd& x, const std::vector<double>& design,
                                     const Eigen::VectorXd& target_mean, Eigen::VectorXd beta, double tol,
                                     int max_iterations) {
    const Eigen::Index k = x.cols();
    Eigen::VectorXd log_d(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) log_d[i] = std::log(design[static_cast<std::size_t>(i)]);
    detail::BalancePotential potential{x, log_d, target_mean};

    BalanceSolution sol;
    auto residual = [&](const Eigen::VectorXd& w) -> Eigen::VectorXd { return x.transpose() * w - target_mean; };
    Eigen::VectorXd w = potential.weights(beta);
    Eigen::VectorXd g = residual(w);
    double f = potential.value(beta);
    for (sol.iterations = 0; sol.iterations < max_iterations; ++sol.iterations) {
        if (g.norm() <= tol) {
            sol.converged = true;
            break;
        }
        Eigen::VectorXd mean = x.transpose() * w;
        Eigen::MatrixXd centred = x.rowwise() - mean.transpose();
        Eigen::MatrixXd hessian = centred.transpose() * w.asDiagonal() * centred;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(hessian);
        const Eigen::VectorXd& lam = eig.eigenvalues();
        const double top = std::max(lam.maxCoeff(), 1e-300);
        double damping = lam.minCoeff() > 1e-12 * top ? 0.0 : 1e-12 * top;
        bool stepped = false;
        // Levenberg damping grows until a step decreases the potential.
        while (damping <= 1e6 * top && !stepped) {
            Eigen::VectorXd inv = (lam.array() + damping).inverse();
            Eigen::VectorXd step = eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose() * g;
            const double slope = -g.dot(step);
            for (double t = 1.0; t > 1e-10; t *= 0.5) {
                Eigen::VectorXd trial = beta + t * step;
                double f_trial = potential.value(trial);
                if (std::isfinite(f_trial) && f_trial <= f + 1e-4 * t * slope) {
                    beta = std::move(trial);
                    f = f_trial;
                    stepped = true;
                    break;
                }
            }
            damping = damping == 0.0 ? 1e-12 * top : damping * 100.0;
        }
        if (!stepped) {
            if (g.norm() <= 1e3 * tol) break;
            throw Error(ErrorCode::SingularJacobian,
                        "balance Jacobian is singular; damping reached its limit with residual " +
                            std::to_string(g.norm()));
        }
        w = potential.weights(beta);
        g = residual(w);
    }
    if (!sol.converged && g.norm() <= tol) sol.converged = true;
    sol.beta = std::move(beta);
    sol.residual_norm = g.norm();
    (void)k;
    return sol;
}

/// Just-identified covariate balancing propensity score: propensity
/// coefficients chosen so the odds-weighted sample mean of every model-matrix
/// column equals its target mean. Starts from the lambda_1se ipw fit.
inline WeightResult cbps(const PairedSample& pair, const CbpsConfig& cfg = {}) {
    if (!(cfg.trim_ratio_cap > 1.0)) throw Error(ErrorCode::InvalidArgument, "trim ratio cap must exceed 1");
    PropensityDesign design = propensity_design(pair, cfg.formula, cfg.transforms);
    const Eigen::MatrixXd& xs = design.matrix.sample_block;
    const Eigen::MatrixXd& xt = design.matrix.target_block;
    const Eigen::Index k = xs.cols();
    if (static_cast<std::size_t>(k) >= pair.n())
        throw Error(ErrorCode::InvalidArgument, "cbps needs fewer model columns than sample units");
    const auto& d = pair.sample.design_weights();
    const auto& td = pair.target.design_weights();

    Eigen::VectorXd target_mean = Eigen::VectorXd::Zero(k);
    double t_total = 0.0;
    for (Eigen::Index i = 0; i < xt.rows(); ++i) {
        target_mean += td[static_cast<std::size_t>(i)] * xt.row(i).transpose();
        t_total += td[static_cast<std::size_t>(i)];
    }
    target_mean /= t_total;

    // Columns without sample variation cannot move; they must already balance.
    std::vector<Eigen::Index> free_cols;
    for (Eigen::Index j = 0; j < k; ++j) {
        const double lo = xs.col(j).minCoeff(), hi = xs.col(j).maxCoeff();
        if (hi > lo) {
            free_cols.push_back(j);
        } else if (std::abs(lo - target_mean[j]) > cfg.tol) {
            throw Error(ErrorCode::SingularJacobian, "column '" + design.matrix.columns[static_cast<std::size_t>(j)] +
                                                         "' is constant in the sample but not in the target");
        }
    }

    CVOptions cv_opts;
    cv_opts.folds = cfg.cv_folds;
    cv_opts.n_lambdas = cfg.n_lambdas;
    cv_opts.seed = cfg.seed;
    cv_opts.threads = cfg.threads;
    const CVResult cv = cv_lambda_path(design.problem, cv_opts);
    const Coefficients& init = cv.fits[cv.index_1se];

    Eigen::MatrixXd x_free = xs(Eigen::all, free_cols);
    Eigen::VectorXd t_free = target_mean(free_cols);
    Eigen::VectorXd beta0 = init.beta(free_cols);
    BalanceSolution sol = solve_balance(x_free, d, t_free, beta0, cfg.tol, cfg.max_iterations);

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(k);
    beta(free_cols) = sol.beta;
    Eigen::VectorXd eta = xs * beta;
    // Intercept that makes the odds weights sum to the sample design total.
    Eigen::VectorXd a(eta.size());
    double d_total = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
        a[i] = std::log(d[static_cast<std::size_t>(i)]) - eta[i];
        d_total += d[static_cast<std::size_t>(i)];
    }
    const double shift = a.maxCoeff();
    const double intercept = shift + std::log((a.array() - shift).exp().sum()) - std::log(d_total);

    std::vector<double> raw(static_cast<std::size_t>(eta.size()));
    std::vector<double> propensity(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const double e = eta[static_cast<Eigen::Index>(i)];
        raw[i] = std::exp(a[static_cast<Eigen::Index>(i)] - shift);
        propensity[i] = std::clamp(sigmoid(intercept + e), kProbabilityFloor, 1.0 - kProbabilityFloor);
    }
    TrimResult trimmed = trim_weights(WeightVector{raw, WeightScale::Raw}, cfg.trim_ratio_cap);

    WeightResult result;
    result.method = Method::Cbps;
    result.weights = detail::to_population_sum(std::move(trimmed.weights.values), pair);
    result.propensity = std::move(propensity);
    result.untrimmed = std::move(raw);
    auto& meta = result.fit_meta;
    meta["converged"] = sol.converged;
    meta["iterations"] = sol.iterations;
    meta["residual_norm"] = sol.residual_norm;
    meta["init_lambda"] = cv.lambda_1se;
    meta["design_effect"] = kish_deff(result.weights.values);
    meta["model_columns"] = design.matrix.columns;
    meta["formula_terms"] = design.formula.labels();
    meta["trim_ratio_cap"] = cfg.trim_ratio_cap;
    meta["trimmed_count"] = trimmed.clipped;
    meta["transform_warnings"] = detail::warnings_of(design.transformed);
    meta["dropped_covariates"] = design.transformed.transform.dropped;
    return result;
}

}  // namespace rebalance
