#pragma once

// Reference implementations used only by the tests. Each is written the
// plain way, with no code shared with the library.

#include <cmath>
#include <map>
#include <vector>

#include <Eigen/Dense>

namespace oracles {

/// Unpenalised weighted logistic regression by full Newton-Raphson.
/// Returns [intercept, beta...].
inline Eigen::VectorXd newton_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                                       int iterations = 100) {
    const Eigen::Index n = x.rows(), k = x.cols() + 1;
    Eigen::MatrixXd z(n, k);
    z.col(0).setOnes();
    z.rightCols(k - 1) = x;
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(k);
    for (int it = 0; it < iterations; ++it) {
        Eigen::VectorXd eta = z * theta;
        Eigen::VectorXd p = (1.0 / (1.0 + (-eta.array()).exp())).matrix();
        Eigen::VectorXd grad = z.transpose() * (w.array() * (y - p).array()).matrix();
        Eigen::VectorXd curv = (w.array() * p.array() * (1.0 - p.array())).matrix();
        Eigen::MatrixXd hess = z.transpose() * curv.asDiagonal() * z;
        Eigen::VectorXd step = hess.ldlt().solve(grad);
        theta += step;
        if (step.norm() < 1e-14) break;
    }
    return theta;
}

/// Weighted negative log-likelihood (a sum) at [intercept, beta...].
inline double logistic_nll(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                           const Eigen::VectorXd& theta) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double eta = theta[0] + x.row(i).dot(theta.tail(theta.size() - 1));
        double log1pexp = eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
        total += w[i] * (log1pexp - y[i] * eta);
    }
    return total;
}

/// Classic IPF on a dense contingency table of sample totals. `cells[c]`
/// lists the level index of every variable for cell c; `margins[v][l]` is
/// the target share of level l of variable v. Returns adjusted cell totals
/// (same grand total as the input).
inline std::vector<double> ipf(const std::vector<std::vector<int>>& cells, std::vector<double> totals,
                               const std::vector<std::vector<double>>& margins, int sweeps) {
    double grand = 0.0;
    for (double t : totals) grand += t;
    for (int s = 0; s < sweeps; ++s) {
        for (std::size_t v = 0; v < margins.size(); ++v) {
            std::vector<double> mass(margins[v].size(), 0.0);
            for (std::size_t c = 0; c < cells.size(); ++c) mass[static_cast<std::size_t>(cells[c][v])] += totals[c];
            for (std::size_t c = 0; c < cells.size(); ++c) {
                auto l = static_cast<std::size_t>(cells[c][v]);
                totals[c] *= margins[v][l] * grand / mass[l];
            }
        }
    }
    return totals;
}

/// Post-stratified weights computed cell by cell from raw counts.
inline std::vector<double> poststratify_counts(const std::vector<std::string>& sample_cells,
                                               const std::vector<std::string>& target_cells, double population) {
    std::map<std::string, double> ns, nt;
    for (const auto& c : sample_cells) ns[c] += 1.0;
    for (const auto& c : target_cells) nt[c] += 1.0;
    const double N = static_cast<double>(target_cells.size());
    std::vector<double> w;
    for (const auto& c : sample_cells) w.push_back(population * (nt[c] / N) / ns[c]);
    return w;
}

}  // namespace oracles
