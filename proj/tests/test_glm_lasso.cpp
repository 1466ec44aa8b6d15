#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rebalance/glm_lasso.hpp"

using namespace rebalance;

namespace {

/// Random logistic problem: x ~ N(0,1), y ~ Bernoulli(sigmoid(x b + b0)).
GlmProblem random_problem(std::mt19937_64& rng, Eigen::Index m, Eigen::Index k, double signal = 0.7,
                          bool random_weights = true) {
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    GlmProblem p;
    p.x.resize(m, k);
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < k; ++j) p.x(i, j) = z(rng);
    Eigen::VectorXd b(k);
    for (Eigen::Index j = 0; j < k; ++j) b[j] = signal * z(rng);
    p.y.resize(m);
    p.case_weights.resize(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        double eta = 0.3 + p.x.row(i).dot(b);
        p.y[i] = u(rng) < 1.0 / (1.0 + std::exp(-eta)) ? 1.0 : 0.0;
        p.case_weights[i] = random_weights ? 0.5 + u(rng) : 1.0;
    }
    // Both classes must appear.
    p.y[0] = 1.0;
    p.y[1] = 0.0;
    return p;
}

}  // namespace

TEST(PredictProba, NullCoefficientsGiveOneHalf) {
    Coefficients c;
    c.beta = Eigen::VectorXd::Zero(2);
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(4, 2);
    auto p = predict_proba(c, x);
    for (Eigen::Index i = 0; i < 4; ++i) EXPECT_EQ(p[i], 0.5);
}

TEST(PredictProba, InterceptLogThree) {
    Coefficients c;
    c.intercept = std::log(3.0);
    c.beta = Eigen::VectorXd::Zero(1);
    auto p = predict_proba(c, Eigen::MatrixXd::Zero(3, 1));
    for (Eigen::Index i = 0; i < 3; ++i) EXPECT_NEAR(p[i], 0.75, 1e-15);
}

TEST(PredictProba, ClampedAtExtremes) {
    Coefficients c;
    c.intercept = 1000.0;
    c.beta = Eigen::VectorXd::Zero(1);
    EXPECT_EQ(predict_proba(c, Eigen::MatrixXd::Zero(1, 1))[0], 1.0 - 1e-12);
    c.intercept = -1000.0;
    EXPECT_EQ(predict_proba(c, Eigen::MatrixXd::Zero(1, 1))[0], 1e-12);
}

TEST(PredictProba, DimensionMismatch) {
    Coefficients c;
    c.beta = Eigen::VectorXd::Zero(2);
    EXPECT_THROW(predict_proba(c, Eigen::MatrixXd::Zero(3, 3)), Error);
}

TEST(Problem, ValidationErrors) {
    GlmProblem p;
    p.x = Eigen::MatrixXd::Zero(3, 1);
    p.y = Eigen::Vector3d(1, 1, 1);
    p.case_weights = Eigen::Vector3d(1, 1, 1);
    try {
        p.validate();
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::SingleClass);
    }
    p.y = Eigen::Vector3d(1, 0, 1);
    p.case_weights = Eigen::Vector3d(1, 0, 1);
    EXPECT_THROW(p.validate(), Error);
}

TEST(Lasso, LargeLambdaGivesNullModel) {
    std::mt19937_64 rng(1);
    GlmProblem p = random_problem(rng, 200, 4);
    LogisticLasso model(p);
    Coefficients c = model.fit(model.lambda_max() * 1.01);
    EXPECT_TRUE(c.beta.isZero(0.0));
    const double ybar = p.y.dot(p.case_weights) / p.case_weights.sum();
    EXPECT_NEAR(c.intercept, std::log(ybar / (1.0 - ybar)), 1e-9);
    // Just below lambda_max something enters.
    Coefficients below = model.fit(model.lambda_max() * 0.95);
    EXPECT_FALSE(below.beta.isZero(0.0));
}

TEST(Lasso, OneFeatureTableMatchesLogOdds) {
    // x in {0,1}, 20 units; the MLE is the 2x2 table log-odds.
    GlmProblem p;
    p.x.resize(20, 1);
    p.y.resize(20);
    p.case_weights = Eigen::VectorXd::Ones(20);
    const int ones_x0 = 3, ones_x1 = 7;  // of 10 each
    for (int i = 0; i < 20; ++i) {
        const bool x1 = i >= 10;
        p.x(i, 0) = x1 ? 1.0 : 0.0;
        p.y[i] = (i % 10) < (x1 ? ones_x1 : ones_x0) ? 1.0 : 0.0;
    }
    Coefficients c = fit_logistic_lasso(p, 0.0);
    const double b0 = std::log(3.0 / 7.0), b1 = std::log(7.0 / 3.0) - b0;
    EXPECT_NEAR(c.intercept, b0, 1e-4);
    EXPECT_NEAR(c.beta[0], b1, 1e-4);
    Eigen::VectorXd theta = oracles::newton_logistic(p.x, p.y, p.case_weights);
    EXPECT_NEAR(theta[0], b0, 1e-10);
    EXPECT_NEAR(theta[1], b1, 1e-10);
}

TEST(Lasso, UnpenalisedFitMatchesNewtonOracle) {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 10; ++trial) {
        GlmProblem p = random_problem(rng, 50, 3);
        Coefficients c = fit_logistic_lasso(p, 0.0);
        Eigen::VectorXd theta = oracles::newton_logistic(p.x, p.y, p.case_weights);
        ASSERT_TRUE(c.converged);
        EXPECT_NEAR(c.intercept, theta[0], 1e-4) << "trial " << trial;
        for (Eigen::Index j = 0; j < 3; ++j) EXPECT_NEAR(c.beta[j], theta[j + 1], 1e-4) << "trial " << trial;
    }
}

TEST(Lasso, KktConditionsHold) {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 10; ++trial) {
        GlmProblem p = random_problem(rng, 150, 6);
        p.penalty_factors = Eigen::VectorXd::Ones(6);
        p.penalty_factors[0] = 0.0;
        p.penalty_factors[1] = 2.5;
        LogisticLasso model(p);
        for (double frac : {0.5, 0.2, 0.05}) {
            const double lambda = frac * model.lambda_max();
            Coefficients c = model.fit(lambda);
            ASSERT_TRUE(c.converged);
            Eigen::VectorXd g = model.penalized_gradient(c);
            for (Eigen::Index j = 0; j < 6; ++j) {
                const double bound = lambda * model.penalty_factor(j);
                if (c.beta[j] == 0.0) {
                    EXPECT_LE(std::abs(g[j]), bound + 1e-5) << "trial " << trial << " j " << j;
                } else {
                    const double sign = c.beta[j] > 0 ? 1.0 : -1.0;
                    EXPECT_NEAR(g[j], -bound * sign, 1e-5) << "trial " << trial << " j " << j;
                }
            }
        }
    }
}

TEST(Lasso, AnalyticGradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> z(0.0, 1.0);
    for (int trial = 0; trial < 10; ++trial) {
        GlmProblem p = random_problem(rng, 10, 5);
        // At a random point.
        double b0 = z(rng);
        Eigen::VectorXd b(5);
        for (auto& v : b) v = z(rng);
        Eigen::VectorXd g = negative_log_likelihood_gradient(p, b0, b);
        const double h = 1e-5;
        for (Eigen::Index j = 0; j <= 5; ++j) {
            double fd;
            if (j == 0) {
                fd = (negative_log_likelihood(p, b0 + h, b) - negative_log_likelihood(p, b0 - h, b)) / (2 * h);
            } else {
                Eigen::VectorXd bp = b, bm = b;
                bp[j - 1] += h;
                bm[j - 1] -= h;
                fd = (negative_log_likelihood(p, b0, bp) - negative_log_likelihood(p, b0, bm)) / (2 * h);
            }
            EXPECT_NEAR(g[j], fd, 1e-4 * std::max(1.0, std::abs(fd))) << "trial " << trial << " j " << j;
        }
        // The library likelihood agrees with the oracle's.
        Eigen::VectorXd theta(6);
        theta << b0, b;
        EXPECT_NEAR(negative_log_likelihood(p, b0, b), oracles::logistic_nll(p.x, p.y, p.case_weights, theta), 1e-10);
    }
}

TEST(Lasso, GradientVanishesAtUnpenalisedOptimum) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        GlmProblem p = random_problem(rng, 60, 5, 0.3);
        Coefficients c = fit_logistic_lasso(p, 0.0);
        Eigen::VectorXd g = negative_log_likelihood_gradient(p, c.intercept, c.beta);
        EXPECT_LT(g.cwiseAbs().maxCoeff(), 1e-4) << "trial " << trial;
    }
}

TEST(Lasso, ObjectiveNeverIncreases) {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 10; ++trial) {
        GlmProblem p = random_problem(rng, 120, 8, 1.5);
        LogisticLasso model(p);
        Coefficients c = model.fit(0.01 * model.lambda_max());
        for (std::size_t t = 1; t < c.objective_trace.size(); ++t)
            EXPECT_LE(c.objective_trace[t], c.objective_trace[t - 1] * (1 + 1e-15));
    }
}

TEST(Lasso, CaseWeightScalingEquivariance) {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 5; ++trial) {
        GlmProblem p = random_problem(rng, 100, 4);
        LogisticLasso model(p);
        const double lambda = 0.1 * model.lambda_max();
        SolverOptions tight;
        tight.tol = 1e-12;
        Coefficients a = fit_logistic_lasso(p, lambda, tight);
        GlmProblem scaled = p;
        scaled.case_weights *= 7.5;
        Coefficients b = fit_logistic_lasso(scaled, lambda * 7.5, tight);
        EXPECT_NEAR(a.intercept, b.intercept, 1e-8);
        for (Eigen::Index j = 0; j < 4; ++j) EXPECT_NEAR(a.beta[j], b.beta[j], 1e-8);
    }
}

TEST(Lasso, DuplicateColumnSplitsCoefficient) {
    std::mt19937_64 rng(31);
    GlmProblem single = random_problem(rng, 200, 2, 1.0);
    GlmProblem doubled = single;
    doubled.x.conservativeResize(Eigen::NoChange, 3);
    doubled.x.col(2) = single.x.col(0);
    LogisticLasso model(single);
    const double lambda = 0.2 * model.lambda_max();
    Coefficients a = fit_logistic_lasso(single, lambda);
    Coefficients b = fit_logistic_lasso(doubled, lambda);
    EXPECT_NEAR(b.beta[0] + b.beta[2], a.beta[0], 1e-4);
    EXPECT_NEAR(b.beta[1], a.beta[1], 1e-4);
    EXPECT_NEAR(b.intercept, a.intercept, 1e-4);
}

TEST(Lasso, ZeroPenaltyFactorKeepsColumnIn) {
    std::mt19937_64 rng(41);
    GlmProblem p = random_problem(rng, 200, 3, 0.2);
    p.penalty_factors = Eigen::Vector3d(0.0, 1.0, 1.0);
    LogisticLasso model(p);
    Coefficients c = model.fit(model.lambda_max() * 10.0);
    EXPECT_NE(c.beta[0], 0.0);
    EXPECT_EQ(c.beta[1], 0.0);
    EXPECT_EQ(c.beta[2], 0.0);
}

TEST(Lasso, RowCompressionDoesNotChangeTheFit) {
    // Duplicated rows with unit weights equal one row with weight 2.
    std::mt19937_64 rng(51);
    GlmProblem p = random_problem(rng, 40, 3, 0.8, false);
    GlmProblem doubled;
    doubled.x.resize(80, 3);
    doubled.x << p.x, p.x;
    doubled.y.resize(80);
    doubled.y << p.y, p.y;
    doubled.case_weights = Eigen::VectorXd::Ones(80);
    GlmProblem weighted = p;
    weighted.case_weights *= 2.0;
    Coefficients a = fit_logistic_lasso(doubled, 1.0);
    Coefficients b = fit_logistic_lasso(weighted, 1.0);
    EXPECT_NEAR(a.intercept, b.intercept, 1e-10);
    for (Eigen::Index j = 0; j < 3; ++j) EXPECT_NEAR(a.beta[j], b.beta[j], 1e-10);
}

// ---------------------------------------------------------------------------
// Cross-validation

TEST(CrossValidation, FoldsAreStratifiedAndSeeded) {
    Eigen::VectorXd y(100);
    for (int i = 0; i < 100; ++i) y[i] = i < 30 ? 1.0 : 0.0;
    auto a = stratified_folds(y, 10, 3);
    auto b = stratified_folds(y, 10, 3);
    auto c = stratified_folds(y, 10, 4);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, c);
    std::vector<int> ones(10, 0), zeros(10, 0);
    for (int i = 0; i < 100; ++i) (y[i] == 1.0 ? ones : zeros)[static_cast<std::size_t>(a[i])]++;
    for (int f = 0; f < 10; ++f) {
        EXPECT_EQ(ones[static_cast<std::size_t>(f)], 3);
        EXPECT_EQ(zeros[static_cast<std::size_t>(f)], 7);
    }
}

TEST(CrossValidation, TooFewPerClass) {
    Eigen::VectorXd y(20);
    for (int i = 0; i < 20; ++i) y[i] = i < 5 ? 1.0 : 0.0;
    try {
        stratified_folds(y, 10, 0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::TooFewPerClass);
    }
}

TEST(CrossValidation, OneStandardErrorRule) {
    std::mt19937_64 rng(61);
    GlmProblem p = random_problem(rng, 400, 6);
    CVOptions opts;
    opts.seed = 9;
    CVResult cv = cv_lambda_path(p, opts);
    ASSERT_EQ(cv.lambda_path.size(), 100u);
    EXPECT_NEAR(cv.lambda_path.back() / cv.lambda_path.front(), 1e-4, 1e-12);
    for (std::size_t l = 1; l < cv.lambda_path.size(); ++l) EXPECT_LT(cv.lambda_path[l], cv.lambda_path[l - 1]);
    EXPECT_GE(cv.lambda_1se, cv.lambda_min);
    const double bound = cv.cv_error_mean[cv.index_min] + cv.cv_error_se[cv.index_min];
    EXPECT_LE(cv.cv_error_mean[cv.index_1se], bound);
    for (std::size_t l = 0; l < cv.index_1se; ++l) EXPECT_GT(cv.cv_error_mean[l], bound);
    for (double e : cv.cv_error_mean) EXPECT_GE(e, cv.cv_error_mean[cv.index_min]);
    // The path's first fit is the null model.
    EXPECT_TRUE(cv.fits.front().beta.isZero(0.0));
}

TEST(CrossValidation, DeterministicAcrossRunsAndThreadCounts) {
    std::mt19937_64 rng(71);
    GlmProblem p = random_problem(rng, 300, 5);
    CVOptions one;
    one.seed = 17;
    one.threads = 1;
    CVOptions many = one;
    many.threads = 4;
    CVResult a = cv_lambda_path(p, one);
    CVResult b = cv_lambda_path(p, many);
    CVResult c = cv_lambda_path(p, one);
    EXPECT_EQ(a.lambda_1se, b.lambda_1se);
    EXPECT_EQ(a.cv_error_mean, b.cv_error_mean);
    EXPECT_EQ(a.cv_error_mean, c.cv_error_mean);
    for (std::size_t l = 0; l < a.fits.size(); ++l) EXPECT_EQ(a.fits[l].beta, b.fits[l].beta);
}

TEST(CrossValidation, PureNoiseIsPrunedAtOneSe) {
    int pruned = 0;
    const int trials = 50;
    for (int t = 0; t < trials; ++t) {
        std::mt19937_64 rng(1000 + static_cast<std::uint64_t>(t));
        GlmProblem p = random_problem(rng, 500, 5, 0.0, false);
        CVOptions opts;
        opts.seed = static_cast<std::uint64_t>(t);
        CVResult cv = cv_lambda_path(p, opts);
        pruned += cv.fits[cv.index_1se].beta.isZero(0.0) ? 1 : 0;
    }
    EXPECT_GE(pruned, 45) << pruned << " of " << trials;
}

TEST(CrossValidation, StrongFeatureSurvives) {
    std::mt19937_64 rng(81);
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    GlmProblem p;
    p.x.resize(2000, 3);
    p.y.resize(2000);
    p.case_weights = Eigen::VectorXd::Ones(2000);
    for (Eigen::Index i = 0; i < 2000; ++i) {
        for (Eigen::Index j = 0; j < 3; ++j) p.x(i, j) = z(rng);
        p.y[i] = u(rng) < 1.0 / (1.0 + std::exp(-2.0 * p.x(i, 0))) ? 1.0 : 0.0;
    }
    CVResult cv = cv_lambda_path(p);
    EXPECT_GT(cv.fits[cv.index_1se].beta[0], 0.5);
    Eigen::VectorXd theta = oracles::newton_logistic(p.x, p.y, p.case_weights);
    EXPECT_NEAR(theta[1], 2.0, 0.3);
}
