#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "rebalance/formula.hpp"
#include "rebalance/model_matrix.hpp"
#include "rebalance/transforms.hpp"
#include "support.hpp"

using namespace rebalance;
using namespace testing_support;

namespace {

ErrorCode code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected an Error";
    return ErrorCode::InvalidArgument;
}

std::map<std::string, double> level_shares(const Column& c) {
    std::map<std::string, double> out;
    for (std::size_t i = 0; i < c.size(); ++i) out[c.categorical_value(i).value_or("<missing>")] += 1.0;
    for (auto& [k, v] : out) v /= static_cast<double>(c.size());
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Transforms

TEST(Transforms, NumericBucketedIntoTenTargetQuantiles) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<double> s(300), t(2000);
    for (auto& v : s) v = z(rng) + 0.5;
    for (auto& v : t) v = z(rng);
    auto pair = make_pair({Column::make_numeric("income", s)}, {Column::make_numeric("income", t)});
    auto tp = apply_transforms(pair);
    const Column& tc = tp.pair.target.covariate("income");
    EXPECT_FALSE(tc.is_numeric());
    std::vector<std::string> expected;
    for (int b = 1; b <= 10; ++b) expected.push_back(bucket_label(static_cast<std::size_t>(b - 1), 10));
    EXPECT_EQ(expected.front(), "q01");
    EXPECT_EQ(expected.back(), "q10");
    auto shares = level_shares(tc);
    ASSERT_EQ(shares.size(), 10u);
    for (const auto& label : expected) EXPECT_NEAR(shares.at(label), 0.1, 0.002) << label;
}

TEST(Transforms, BucketEdgesUseTargetDesignWeights) {
    // Value 1 carries most of the target weight, so the weighted median is 1
    // (the unweighted one would be 2).
    auto pair = make_pair({Column::make_numeric("x", {1, 2, 3, 4})}, {Column::make_numeric("x", {1, 2, 3, 4})}, {},
                          {97, 1, 1, 1});
    TransformConfig cfg;
    cfg.quantile_buckets = 2;
    auto fitted = fit_transforms(pair, cfg);
    ASSERT_EQ(fitted.rules.size(), 1u);
    EXPECT_EQ(fitted.rules[0].edges, std::vector<double>{1.0});
}

TEST(Transforms, MissingGetsExplicitLevel) {
    std::vector<std::optional<std::string>> s{"Male", std::nullopt, "Female", "Male"};
    std::vector<std::optional<std::string>> t{"Female", "Male", std::nullopt, "Female"};
    auto pair = make_pair({Column::make_categorical("gender", s)}, {Column::make_categorical("gender", t)});
    TransformConfig cfg;
    cfg.rare_level_min_prop = 0.0;
    auto tp = apply_transforms(pair, cfg);
    const Column& c = tp.pair.sample.covariate("gender");
    EXPECT_EQ(c.levels, (std::vector<std::string>{"Female", "Male", "_NA"}));
    EXPECT_FALSE(c.has_missing());
}

TEST(Transforms, MissingNumericMapsToNaLevel) {
    auto pair = make_pair({Column::make_numeric("x", {1, kMissing, 3, 4})},
                          {Column::make_numeric("x", {1, 2, 3, 4, kMissing})});
    auto tp = apply_transforms(pair);
    const Column& c = tp.pair.sample.covariate("x");
    EXPECT_EQ(*c.categorical_value(1), "_NA");
}

TEST(Transforms, RareLevelsLumped) {
    std::vector<std::string> t = repeat_levels({{"a", 50}, {"b", 47}, {"c", 3}});
    std::vector<std::string> s = repeat_levels({{"a", 5}, {"b", 3}, {"c", 1}, {"d", 1}});
    auto pair = make_pair({categorical("v", s)}, {categorical("v", t)});
    auto tp = apply_transforms(pair);
    EXPECT_EQ(tp.pair.sample.covariate("v").levels, (std::vector<std::string>{"_lumped_other", "a", "b"}));
    EXPECT_EQ(tp.pair.target.covariate("v").levels, (std::vector<std::string>{"_lumped_other", "a", "b"}));
}

TEST(Transforms, ConstantCovariateDroppedWithWarning) {
    auto pair = make_pair({Column::make_numeric("c", {5, 5, 5}), categorical("g", {"a", "b", "a"})},
                          {Column::make_numeric("c", {5, 5, 5, 5}), categorical("g", {"a", "b", "b", "a"})});
    auto tp = apply_transforms(pair);
    EXPECT_EQ(tp.pair.common_covariates, std::vector<std::string>{"g"});
    EXPECT_EQ(tp.transform.dropped, std::vector<std::string>{"c"});
    ASSERT_EQ(tp.transform.warnings.size(), 1u);
    EXPECT_NE(tp.transform.warnings[0].find("'c'"), std::string::npos);
}

TEST(Transforms, NumericWithoutTargetValuesRejected) {
    auto pair = make_pair({Column::make_numeric("x", {1, 2})}, {Column::make_numeric("x", {kMissing, kMissing})});
    EXPECT_EQ(code_of([&] { apply_transforms(pair); }), ErrorCode::NoNumericValues);
}

TEST(Transforms, FitApplyIsDeterministicAndMonotone) {
    std::mt19937_64 rng(11);
    std::exponential_distribution<double> e(1.0);
    std::vector<double> s(200), t(500);
    for (auto& v : s) v = std::floor(e(rng) * 4.0);  // tie-heavy
    for (auto& v : t) v = std::floor(e(rng) * 4.0);
    auto pair = make_pair({Column::make_numeric("x", s)}, {Column::make_numeric("x", t)});
    auto fitted = fit_transforms(pair, {});
    auto a = fitted.apply(pair);
    auto b = fitted.apply(pair);
    EXPECT_EQ(a.sample.covariate("x").codes, b.sample.covariate("x").codes);
    const auto& edges = fitted.rules[0].edges;
    EXPECT_LT(edges.size(), 9u);  // ties collapse edges
    EXPECT_TRUE(std::is_sorted(edges.begin(), edges.end()));
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (s[i] <= s[j]) {
                EXPECT_LE(bucket_of(s[i], edges), bucket_of(s[j], edges));
            }
}

// ---------------------------------------------------------------------------
// Formula

namespace {
const std::vector<std::string> kCovariates{"gender", "age_group", "income", "ab"};
}

TEST(Formula, Additive) {
    EXPECT_EQ(parse_formula("gender + age_group", kCovariates).labels(),
              (std::vector<std::string>{"gender", "age_group"}));
}

TEST(Formula, StarExpands) {
    EXPECT_EQ(parse_formula("gender * age_group", kCovariates).labels(),
              (std::vector<std::string>{"gender", "age_group", "gender:age_group"}));
}

TEST(Formula, Deduplicates) {
    EXPECT_EQ(parse_formula("gender + gender", kCovariates).labels(), std::vector<std::string>{"gender"});
    EXPECT_EQ(parse_formula("gender:ab + ab:gender", kCovariates).labels(), std::vector<std::string>{"gender:ab"});
}

TEST(Formula, ParenthesesDistribute) {
    EXPECT_EQ(parse_formula("(gender + ab):income", kCovariates).labels(),
              (std::vector<std::string>{"gender:income", "ab:income"}));
    EXPECT_EQ(parse_formula("gender*ab*income", kCovariates).labels(),
              (std::vector<std::string>{"gender", "ab", "gender:ab", "income", "gender:income", "ab:income",
                                        "gender:ab:income"}));
}

TEST(Formula, UnknownNameReported) {
    try {
        parse_formula("gender + height", kCovariates);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::UnknownCovariate);
        EXPECT_NE(std::string(e.what()).find("position 9"), std::string::npos);
    }
}

TEST(Formula, SyntaxErrorsCarryPosition) {
    for (const char* bad : {"gender +", "(gender", "gender ) ab", "+ gender", "gender ^ 2", "   "}) {
        try {
            parse_formula(bad, kCovariates);
            ADD_FAILURE() << bad;
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::FormulaSyntax) << bad;
            EXPECT_NE(std::string(e.what()).find("position"), std::string::npos) << bad;
        }
    }
}

TEST(Formula, DefaultIsAdditiveOverAll) {
    EXPECT_EQ(default_formula(kCovariates).labels(), kCovariates);
}

// ---------------------------------------------------------------------------
// Model matrix

TEST(ModelMatrix, TwoLevelDropsLexicalFirst) {
    auto pair = make_pair({categorical("gender", {"Male", "Female", "Male"})},
                          {categorical("gender", {"Female", "Female", "Male", "Male"})});
    auto mm = build_model_matrix(pair, default_formula(pair.common_covariates));
    EXPECT_EQ(mm.columns, std::vector<std::string>{"gender=Male"});
    EXPECT_EQ(mm.sample_block.col(0), Eigen::Vector3d(1, 0, 1));
}

TEST(ModelMatrix, InteractionColumnsAreProducts) {
    // Hand enumeration over a 4-row toy table.
    auto pair = make_pair({categorical("gender", {"F", "F", "M", "M"}), categorical("ab", {"a", "b", "a", "b"})},
                          {categorical("gender", {"F", "M", "M", "F"}), categorical("ab", {"a", "a", "b", "b"})});
    auto mm = build_model_matrix(pair, parse_formula("gender*ab", pair.common_covariates));
    EXPECT_EQ(mm.columns, (std::vector<std::string>{"gender=M", "ab=b", "gender=M:ab=b"}));
    Eigen::MatrixXd expected_sample(4, 3);
    expected_sample << 0, 0, 0,  //
        0, 1, 0,                 //
        1, 0, 0,                 //
        1, 1, 1;
    Eigen::MatrixXd expected_target(4, 3);
    expected_target << 0, 0, 0,  //
        1, 0, 0,                 //
        1, 1, 1,                 //
        0, 1, 0;
    EXPECT_EQ(mm.sample_block, expected_sample);
    EXPECT_EQ(mm.target_block, expected_target);
    EXPECT_EQ(mm.column_to_main_covar, (std::vector<std::string>{"gender", "ab", "gender:ab"}));
}

TEST(ModelMatrix, LevelsUnionedAcrossSources) {
    auto pair = make_pair({categorical("v", {"a", "b", "a"})}, {categorical("v", {"a", "c", "c"})});
    auto mm = build_model_matrix(pair, default_formula(pair.common_covariates));
    EXPECT_EQ(mm.columns, (std::vector<std::string>{"v=b", "v=c"}));
    EXPECT_EQ(mm.sample_block.col(1), Eigen::Vector3d(0, 0, 0));
}

TEST(ModelMatrix, ConstantColumnsRemoved) {
    // y never meets q, so the interaction column is zero everywhere.
    auto pair = make_pair({categorical("g", {"x", "y"}), categorical("h", {"q", "p"})},
                          {categorical("g", {"x", "y", "x"}), categorical("h", {"q", "p", "p"})});
    auto mm = build_model_matrix(pair, parse_formula("g*h", pair.common_covariates));
    EXPECT_EQ(mm.columns, (std::vector<std::string>{"g=y", "h=q"}));
}

TEST(ModelMatrix, DroppedCovariateRejected) {
    auto pair = make_pair({Column::make_numeric("c", {5, 5}), categorical("g", {"a", "b"})},
                          {Column::make_numeric("c", {5, 5}), categorical("g", {"b", "a"})});
    auto tp = apply_transforms(pair);
    auto formula = parse_formula("g + c", pair.common_covariates);
    EXPECT_EQ(code_of([&] { build_model_matrix(tp.pair, formula); }), ErrorCode::DroppedCovariate);
}

TEST(ModelMatrix, RandomSchemasShareColumnSpaceAndEncodeEachLevelOnce) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        const int vars = 1 + trial % 3;
        std::vector<Column> s, t;
        for (int v = 0; v < vars; ++v) {
            std::vector<std::string> levels;
            const int n_levels = 2 + (trial + v) % 4;
            for (int l = 0; l < n_levels; ++l) levels.push_back(std::string(1, static_cast<char>('a' + l)));
            std::vector<double> probs(levels.size(), 1.0);
            const std::string name = "v" + std::to_string(v);
            s.push_back(random_categorical(name, 40, levels, probs, rng));
            t.push_back(random_categorical(name, 60, levels, probs, rng));
        }
        auto pair = make_pair(s, t);
        auto mm = build_model_matrix(pair, default_formula(pair.common_covariates));
        ASSERT_EQ(mm.sample_block.cols(), mm.target_block.cols());
        ASSERT_EQ(mm.column_to_main_covar.size(), mm.columns.size());
        for (const auto& name : pair.common_covariates) {
            const Column& c = pair.sample.covariate(name);
            std::vector<Eigen::Index> owned;
            for (std::size_t j = 0; j < mm.columns.size(); ++j)
                if (mm.column_to_main_covar[j] == name) owned.push_back(static_cast<Eigen::Index>(j));
            for (std::size_t i = 0; i < c.size(); ++i) {
                double hot = 0.0;
                for (auto j : owned) {
                    const double v = mm.sample_block(static_cast<Eigen::Index>(i), j);
                    EXPECT_TRUE(v == 0.0 || v == 1.0);
                    hot += v;
                }
                const Column& tc = pair.target.covariate(name);
                std::string reference = c.levels.front();
                if (!tc.levels.empty()) reference = std::min(reference, tc.levels.front());
                const bool is_reference = *c.categorical_value(i) == reference;
                EXPECT_EQ(hot, is_reference ? 0.0 : 1.0);
            }
        }
    }
}
