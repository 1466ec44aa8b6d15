#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rebalance/error.hpp"
#include "rebalance/parallel.hpp"

namespace rebalance {

inline constexpr double kProbabilityFloor = 1e-12;

/// Weighted binary logistic problem. y = 1 marks sample rows, 0 target rows.
struct GlmProblem {
    Eigen::MatrixXd x;
    Eigen::VectorXd y;
    Eigen::VectorXd case_weights;
    Eigen::VectorXd penalty_factors;

    Eigen::Index rows() const { return x.rows(); }
    Eigen::Index cols() const { return x.cols(); }

    void validate() const {
        if (y.size() != x.rows() || case_weights.size() != x.rows())
            throw Error(ErrorCode::DimensionMismatch, "labels and case weights must have one entry per row");
        if (penalty_factors.size() != 0 && penalty_factors.size() != x.cols())
            throw Error(ErrorCode::DimensionMismatch, "penalty factors must have one entry per column");
        bool has_one = false, has_zero = false;
        for (Eigen::Index i = 0; i < y.size(); ++i) {
            if (y[i] == 1.0)
                has_one = true;
            else if (y[i] == 0.0)
                has_zero = true;
            else
                throw Error(ErrorCode::InvalidArgument, "labels must be 0 or 1");
            if (!(case_weights[i] > 0.0) || !std::isfinite(case_weights[i]))
                throw Error(ErrorCode::NonPositiveWeight, "case weights must be positive and finite");
        }
        if (!has_one || !has_zero) throw Error(ErrorCode::SingleClass, "both classes must be present");
        for (Eigen::Index j = 0; j < penalty_factors.size(); ++j)
            if (!(penalty_factors[j] >= 0.0) || !std::isfinite(penalty_factors[j]))
                throw Error(ErrorCode::InvalidArgument, "penalty factors must be non-negative");
        if (!x.allFinite()) throw Error(ErrorCode::InvalidArgument, "design matrix has non-finite entries");
    }

    double penalty_factor(Eigen::Index j) const { return penalty_factors.size() == 0 ? 1.0 : penalty_factors[j]; }
};

/// Fitted coefficients on the original column scale.
struct Coefficients {
    double intercept = 0.0;
    Eigen::VectorXd beta;
    double lambda = 0.0;
    bool converged = false;
    bool separated = false;
    int n_iter = 0;
    std::vector<double> objective_trace;

    Eigen::VectorXd linear_predictor(const Eigen::MatrixXd& x) const {
        return (x * beta).array() + intercept;
    }
};

struct SolverOptions {
    double tol = 1e-7;
    int max_sweeps = 10000;
};

inline double sigmoid(double eta) {
    if (eta >= 0) return 1.0 / (1.0 + std::exp(-eta));
    double e = std::exp(eta);
    return e / (1.0 + e);
}

/// log(1 + exp(eta)) without overflow.
inline double softplus(double eta) { return eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta)); }

/// Logistic of the linear predictor, clamped to [1e-12, 1 - 1e-12].
inline Eigen::VectorXd predict_proba(const Coefficients& coeffs, const Eigen::MatrixXd& x) {
    if (x.cols() != coeffs.beta.size())
        throw Error(ErrorCode::DimensionMismatch, "expected " + std::to_string(coeffs.beta.size()) + " columns, got " +
                                                      std::to_string(x.cols()));
    Eigen::VectorXd eta = coeffs.linear_predictor(x);
    Eigen::VectorXd p(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i)
        p[i] = std::clamp(sigmoid(eta[i]), kProbabilityFloor, 1.0 - kProbabilityFloor);
    return p;
}

/// Weighted negative log-likelihood on the original scale.
inline double negative_log_likelihood(const GlmProblem& problem, double intercept, const Eigen::VectorXd& beta) {
    Eigen::VectorXd eta = (problem.x * beta).array() + intercept;
    double total = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i)
        total += problem.case_weights[i] * (softplus(eta[i]) - problem.y[i] * eta[i]);
    return total;
}

/// Gradient of negative_log_likelihood; entry 0 is the intercept.
inline Eigen::VectorXd negative_log_likelihood_gradient(const GlmProblem& problem, double intercept,
                                                        const Eigen::VectorXd& beta) {
    Eigen::VectorXd eta = (problem.x * beta).array() + intercept;
    Eigen::VectorXd resid(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i)
        resid[i] = problem.case_weights[i] * (sigmoid(eta[i]) - problem.y[i]);
    Eigen::VectorXd g(problem.cols() + 1);
    g[0] = resid.sum();
    g.tail(problem.cols()) = problem.x.transpose() * resid;
    return g;
}

/// Weighted binomial deviance, probabilities clamped as in predict_proba.
inline double binomial_deviance(const Eigen::VectorXd& y, const Eigen::VectorXd& p, const Eigen::VectorXd& w) {
    double dev = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        double pi = std::clamp(p[i], kProbabilityFloor, 1.0 - kProbabilityFloor);
        dev -= 2.0 * w[i] * (y[i] * std::log(pi) + (1.0 - y[i]) * std::log(1.0 - pi));
    }
    return dev;
}

/// L1-penalised logistic regression by coordinate descent on the IRLS
/// quadratic approximation. Columns are standardised with the case weights;
/// the penalty applies to standardised coefficients and never to the
/// intercept. The objective is
///   sum_i v_i [log(1 + e^eta_i) - y_i eta_i] + lambda sum_j pf_j |b_j|.
class LogisticLasso {
public:
    explicit LogisticLasso(const GlmProblem& problem, SolverOptions options = {}) : options_(options) {
        problem.validate();
        const Eigen::Index k = problem.cols();
        const Eigen::MatrixXd x = compress(problem);
        const Eigen::Index m = x.rows();
        pf_.resize(k);
        for (Eigen::Index j = 0; j < k; ++j) pf_[j] = problem.penalty_factor(j);
        total_weight_ = v_.sum();
        center_.resize(k);
        scale_.resize(k);
        active_.assign(static_cast<std::size_t>(k), true);
        xs_.resize(m, k);
        for (Eigen::Index j = 0; j < k; ++j) {
            double mu = x.col(j).dot(v_) / total_weight_;
            Eigen::VectorXd centred = x.col(j).array() - mu;
            double var = centred.array().square().matrix().dot(v_) / total_weight_;
            double sd = std::sqrt(var);
            center_[j] = mu;
            if (!(sd > 1e-12 * (1.0 + std::abs(mu)))) {
                scale_[j] = 1.0;
                active_[static_cast<std::size_t>(j)] = false;
                xs_.col(j).setZero();
            } else {
                scale_[j] = sd;
                xs_.col(j) = centred / sd;
            }
        }
        double ybar = y_.dot(v_) / total_weight_;
        null_intercept_ = std::log(ybar / (1.0 - ybar));
    }

    Eigen::Index cols() const { return xs_.cols(); }
    double total_weight() const { return total_weight_; }

    /// Smallest lambda at which every penalised coefficient is zero.
    double lambda_max() const {
        State s = null_state();
        Eigen::VectorXd g = standardized_gradient(s);
        double lmax = 0.0;
        for (Eigen::Index j = 0; j < cols(); ++j)
            if (active_[static_cast<std::size_t>(j)] && pf_[j] > 0.0) lmax = std::max(lmax, std::abs(g[j]) / pf_[j]);
        return lmax;
    }

    Coefficients fit(double lambda) const { return fit(lambda, null_state()).first; }

    /// Warm-started fits along a lambda sequence.
    std::vector<Coefficients> fit_path(std::span<const double> lambdas) const {
        std::vector<Coefficients> out;
        State s = null_state();
        for (double lambda : lambdas) {
            auto [coeffs, next] = fit(lambda, s);
            out.push_back(std::move(coeffs));
            s = std::move(next);
        }
        return out;
    }

    /// Gradient of the unpenalised loss with respect to standardised
    /// coefficients, for KKT checks.
    Eigen::VectorXd penalized_gradient(const Coefficients& coeffs) const {
        return standardized_gradient(to_state(coeffs));
    }

    double penalty_factor(Eigen::Index j) const { return pf_[j]; }
    bool column_active(Eigen::Index j) const { return active_[static_cast<std::size_t>(j)]; }

private:
    /// Merges rows with identical features and label, summing their case
    /// weights; the weighted likelihood is unchanged. Categorical designs
    /// shrink to one row per observed pattern.
    Eigen::MatrixXd compress(const GlmProblem& problem) {
        std::map<std::vector<double>, Eigen::Index> seen;
        std::vector<Eigen::Index> first_row;
        std::vector<double> weight;
        for (Eigen::Index i = 0; i < problem.rows(); ++i) {
            std::vector<double> key;
            key.reserve(static_cast<std::size_t>(problem.cols()) + 1);
            for (Eigen::Index j = 0; j < problem.cols(); ++j) key.push_back(problem.x(i, j));
            key.push_back(problem.y[i]);
            auto [it, inserted] = seen.try_emplace(std::move(key), static_cast<Eigen::Index>(first_row.size()));
            if (inserted) {
                first_row.push_back(i);
                weight.push_back(0.0);
            }
            weight[static_cast<std::size_t>(it->second)] += problem.case_weights[i];
        }
        const auto m = static_cast<Eigen::Index>(first_row.size());
        Eigen::MatrixXd x(m, problem.cols());
        y_.resize(m);
        v_.resize(m);
        for (Eigen::Index r = 0; r < m; ++r) {
            x.row(r) = problem.x.row(first_row[static_cast<std::size_t>(r)]);
            y_[r] = problem.y[first_row[static_cast<std::size_t>(r)]];
            v_[r] = weight[static_cast<std::size_t>(r)];
        }
        return x;
    }

    struct State {
        double b0 = 0.0;
        Eigen::VectorXd beta;
        Eigen::VectorXd eta;
    };

    State null_state() const {
        State s;
        s.b0 = null_intercept_;
        s.beta = Eigen::VectorXd::Zero(cols());
        s.eta = Eigen::VectorXd::Constant(y_.size(), s.b0);
        return s;
    }

    State to_state(const Coefficients& c) const {
        State s;
        s.beta = c.beta.cwiseProduct(scale_);
        s.b0 = c.intercept + c.beta.dot(center_);
        s.eta = (xs_ * s.beta).array() + s.b0;
        return s;
    }

    Coefficients to_coefficients(const State& s, double lambda) const {
        Coefficients c;
        c.lambda = lambda;
        c.beta = s.beta.cwiseQuotient(scale_);
        c.intercept = s.b0 - c.beta.dot(center_);
        return c;
    }

    Eigen::VectorXd standardized_gradient(const State& s) const {
        Eigen::VectorXd resid(y_.size());
        for (Eigen::Index i = 0; i < y_.size(); ++i) resid[i] = v_[i] * (sigmoid(s.eta[i]) - y_[i]);
        return xs_.transpose() * resid;
    }

    double objective(const State& s, double lambda) const {
        double loss = 0.0;
        for (Eigen::Index i = 0; i < y_.size(); ++i) loss += v_[i] * (softplus(s.eta[i]) - y_[i] * s.eta[i]);
        double pen = 0.0;
        for (Eigen::Index j = 0; j < cols(); ++j) pen += pf_[j] * std::abs(s.beta[j]);
        return loss + lambda * pen;
    }

    // A coefficient sitting exactly at its threshold (as at lambda_max) stays
    // at zero despite rounding in z.
    static double soft_threshold(double z, double gamma) {
        if (std::abs(z) <= gamma * (1.0 + 1e-9)) return 0.0;
        if (z > gamma) return z - gamma;
        if (z < -gamma) return z + gamma;
        return 0.0;
    }

    std::pair<Coefficients, State> fit(double lambda, State s) const {
        if (!(lambda >= 0.0) || !std::isfinite(lambda))
            throw Error(ErrorCode::InvalidArgument, "lambda must be finite and non-negative");
        const Eigen::Index m = y_.size(), k = cols();
        const double inner_tol = options_.tol * 0.1;
        int sweeps = 0;
        bool converged = false;
        std::vector<double> trace{objective(s, lambda)};

        Eigen::VectorXd w(m), r(m), xw2(k);
        Eigen::MatrixXd xw(m, k);
        while (sweeps < options_.max_sweeps) {
            for (Eigen::Index i = 0; i < m; ++i) {
                double p = sigmoid(s.eta[i]);
                double pc = std::clamp(p, 1e-5, 1.0 - 1e-5);
                double var = pc * (1.0 - pc);
                w[i] = v_[i] * var;
                r[i] = (y_[i] - p) / var;
            }
            xw = xs_.array().colwise() * w.array();
            for (Eigen::Index j = 0; j < k; ++j) xw2[j] = xw.col(j).dot(xs_.col(j));
            const double wsum = w.sum();

            const State old = s;
            auto sweep = [&](bool active_only) {
                double max_change = 0.0;
                double delta0 = w.dot(r) / wsum;
                s.b0 += delta0;
                r.array() -= delta0;
                max_change = std::abs(delta0);
                for (Eigen::Index j = 0; j < k; ++j) {
                    if (!active_[static_cast<std::size_t>(j)]) continue;
                    if (active_only && s.beta[j] == 0.0) continue;
                    double z = xw.col(j).dot(r) + xw2[j] * s.beta[j];
                    double updated = soft_threshold(z, lambda * pf_[j]) / xw2[j];
                    double d = updated - s.beta[j];
                    if (d != 0.0) {
                        r -= d * xs_.col(j);
                        s.beta[j] = updated;
                        max_change = std::max(max_change, std::abs(d));
                    }
                }
                ++sweeps;
                return max_change;
            };
            // Full sweep, then iterate on the active set until it settles.
            for (;;) {
                double change = sweep(false);
                if (change < inner_tol || sweeps >= options_.max_sweeps) break;
                while (sweeps < options_.max_sweeps && sweep(true) >= inner_tol) {
                }
            }

            s.eta = (xs_ * s.beta).array() + s.b0;
            double obj = objective(s, lambda);
            // Step halving keeps the penalised objective non-increasing.
            const State proposal = s;
            for (int halving = 1; obj > trace.back() && halving <= 60; ++halving) {
                double t = std::ldexp(1.0, -halving);
                s.b0 = old.b0 + t * (proposal.b0 - old.b0);
                s.beta = old.beta + t * (proposal.beta - old.beta);
                s.eta = old.eta + t * (proposal.eta - old.eta);
                obj = objective(s, lambda);
            }
            if (obj > trace.back()) {
                s = old;
                obj = trace.back();
            }
            trace.push_back(obj);

            double change = std::abs(s.b0 - old.b0);
            for (Eigen::Index j = 0; j < k; ++j) change = std::max(change, std::abs(s.beta[j] - old.beta[j]));
            if (change < options_.tol) {
                converged = true;
                break;
            }
        }

        Coefficients c = to_coefficients(s, lambda);
        c.converged = converged;
        c.n_iter = sweeps;
        c.objective_trace = std::move(trace);
        c.separated = s.eta.size() > 0 && s.eta.cwiseAbs().maxCoeff() > 30.0;
        return {std::move(c), std::move(s)};
    }

    Eigen::MatrixXd xs_;
    Eigen::VectorXd y_, v_, pf_, center_, scale_;
    std::vector<bool> active_;
    double total_weight_ = 0.0;
    double null_intercept_ = 0.0;
    SolverOptions options_;
};

inline Coefficients fit_logistic_lasso(const GlmProblem& problem, double lambda, SolverOptions options = {}) {
    return LogisticLasso(problem, options).fit(lambda);
}

/// Log-spaced path from lambda_max down to lambda_max * min_ratio.
inline std::vector<double> lambda_path(double lambda_max, int n_lambdas, double min_ratio = 1e-4) {
    if (n_lambdas < 1) throw Error(ErrorCode::InvalidArgument, "n_lambdas must be positive");
    std::vector<double> path;
    if (n_lambdas == 1) return {lambda_max};
    const double log_hi = std::log(lambda_max), log_lo = std::log(lambda_max * min_ratio);
    for (int i = 0; i < n_lambdas; ++i)
        path.push_back(std::exp(log_hi + (log_lo - log_hi) * i / (n_lambdas - 1)));
    path.front() = lambda_max;
    return path;
}

/// Uniform integer in [0, bound) from a 64-bit Mersenne twister by rejection;
/// identical on every platform, unlike std::uniform_int_distribution.
inline std::uint64_t bounded_draw(std::mt19937_64& rng, std::uint64_t bound) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    for (;;) {
        std::uint64_t v = rng();
        if (v < limit) return v % bound;
    }
}

template <class T>
void seeded_shuffle(std::vector<T>& items, std::mt19937_64& rng) {
    for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[bounded_draw(rng, i)]);
}

/// Fold index per row, stratified by class: each class is shuffled with the
/// seed and dealt round-robin.
inline std::vector<int> stratified_folds(const Eigen::VectorXd& y, int folds, std::uint64_t seed) {
    if (folds < 2) throw Error(ErrorCode::InvalidArgument, "need at least 2 folds");
    std::mt19937_64 rng(seed);
    std::vector<int> assignment(static_cast<std::size_t>(y.size()), -1);
    for (double label : {1.0, 0.0}) {
        std::vector<std::size_t> members;
        for (Eigen::Index i = 0; i < y.size(); ++i)
            if (y[i] == label) members.push_back(static_cast<std::size_t>(i));
        if (members.size() < static_cast<std::size_t>(folds))
            throw Error(ErrorCode::TooFewPerClass, "class " + std::to_string(static_cast<int>(label)) + " has " +
                                                       std::to_string(members.size()) + " rows for " +
                                                       std::to_string(folds) + " folds");
        seeded_shuffle(members, rng);
        for (std::size_t p = 0; p < members.size(); ++p)
            assignment[members[p]] = static_cast<int>(p % static_cast<std::size_t>(folds));
    }
    return assignment;
}

struct CVResult {
    std::vector<double> lambda_path;
    std::vector<double> cv_error_mean;
    std::vector<double> cv_error_se;
    double lambda_min = 0.0;
    double lambda_1se = 0.0;
    std::size_t index_min = 0;
    std::size_t index_1se = 0;
    /// Full-data fits at every path value.
    std::vector<Coefficients> fits;
};

struct CVOptions {
    int folds = 10;
    int n_lambdas = 100;
    std::uint64_t seed = 0;
    std::size_t threads = 0;
    SolverOptions solver{};
};

/// Cross-validated lambda path with held-out weighted deviance as the loss.
/// Fold fits use lambda scaled by the training share of the case weight so
/// the penalty strength per unit of data matches the full fit.
inline CVResult cv_lambda_path(const GlmProblem& problem, const CVOptions& options = {}) {
    problem.validate();
    const std::vector<int> fold_of = stratified_folds(problem.y, options.folds, options.seed);
    LogisticLasso full(problem, options.solver);
    CVResult result;
    double lmax = full.lambda_max();
    if (!(lmax > 0.0)) lmax = 1e-8;
    result.lambda_path = lambda_path(lmax, options.n_lambdas);
    const std::size_t n_lambda = result.lambda_path.size();
    const auto folds = static_cast<std::size_t>(options.folds);

    std::vector<std::vector<double>> fold_error(folds, std::vector<double>(n_lambda, 0.0));
    std::vector<double> fold_weight(folds, 0.0);
    const std::size_t threads = options.threads == 0 ? thread_budget() : options.threads;

    // Slot `folds` is the full-data path; the rest are the held-out folds.
    parallel_for(
        folds + 1,
        [&](std::size_t f) {
            if (f == folds) {
                result.fits = full.fit_path(result.lambda_path);
                return;
            }
            std::vector<Eigen::Index> train, test;
            for (Eigen::Index i = 0; i < problem.rows(); ++i)
                (fold_of[static_cast<std::size_t>(i)] == static_cast<int>(f) ? test : train).push_back(i);
            GlmProblem sub;
            sub.x = problem.x(train, Eigen::all);
            sub.y = problem.y(train);
            sub.case_weights = problem.case_weights(train);
            sub.penalty_factors = problem.penalty_factors;
            LogisticLasso model(sub, options.solver);
            const double share = sub.case_weights.sum() / full.total_weight();
            std::vector<double> scaled(result.lambda_path);
            for (double& l : scaled) l *= share;
            auto path = model.fit_path(scaled);
            Eigen::MatrixXd x_test = problem.x(test, Eigen::all);
            Eigen::VectorXd y_test = problem.y(test);
            Eigen::VectorXd w_test = problem.case_weights(test);
            fold_weight[f] = w_test.sum();
            for (std::size_t l = 0; l < n_lambda; ++l)
                fold_error[f][l] = binomial_deviance(y_test, predict_proba(path[l], x_test), w_test) / fold_weight[f];
        },
        threads);

    double weight_total = 0.0;
    for (double w : fold_weight) weight_total += w;
    result.cv_error_mean.assign(n_lambda, 0.0);
    result.cv_error_se.assign(n_lambda, 0.0);
    for (std::size_t l = 0; l < n_lambda; ++l) {
        double mean = 0.0;
        for (std::size_t f = 0; f < folds; ++f) mean += fold_weight[f] * fold_error[f][l];
        mean /= weight_total;
        double var = 0.0;
        for (std::size_t f = 0; f < folds; ++f) var += fold_weight[f] * std::pow(fold_error[f][l] - mean, 2);
        var /= weight_total;
        result.cv_error_mean[l] = mean;
        result.cv_error_se[l] = std::sqrt(var / static_cast<double>(folds - 1));
    }
    std::size_t best = 0;
    for (std::size_t l = 1; l < n_lambda; ++l)
        if (result.cv_error_mean[l] < result.cv_error_mean[best]) best = l;
    const double bound = result.cv_error_mean[best] + result.cv_error_se[best];
    std::size_t one_se = best;
    for (std::size_t l = 0; l <= best; ++l)
        if (result.cv_error_mean[l] <= bound) {
            one_se = l;
            break;
        }
    result.index_min = best;
    result.index_1se = one_se;
    result.lambda_min = result.lambda_path[best];
    result.lambda_1se = result.lambda_path[one_se];
    return result;
}

}  // namespace rebalance
