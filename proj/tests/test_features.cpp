#include "hfselect/features.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace hfselect;
using hfselect::testing::scalar_acf;
using hfselect::testing::simulate_ar1;

namespace {

// Partial autocorrelation at `lag` by solving the Yule-Walker system directly.
double yule_walker_pacf(const std::vector<double>& x, std::size_t lag) {
    const auto k = static_cast<Eigen::Index>(lag);
    Eigen::MatrixXd r(k, k);
    Eigen::VectorXd rhs(k);
    for (Eigen::Index i = 0; i < k; ++i) {
        rhs(i) = scalar_acf(x, static_cast<std::size_t>(i + 1));
        for (Eigen::Index j = 0; j < k; ++j) r(i, j) = i == j ? 1.0 : scalar_acf(x, static_cast<std::size_t>(std::abs(i - j)));
    }
    return r.fullPivLu().solve(rhs)(k - 1);
}

std::vector<double> diff(const std::vector<double>& x) {
    std::vector<double> d;
    for (std::size_t t = 1; t < x.size(); ++t) d.push_back(x[t] - x[t - 1]);
    return d;
}

std::vector<double> random_walkish(std::mt19937_64& rng, std::size_t n) {
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_real_distribution<double> phi(-0.9, 0.9);
    const double a = phi(rng);
    std::vector<double> y(n);
    double prev = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        prev = a * prev + z(rng);
        y[t] = prev + 0.05 * static_cast<double>(t) + (t % 7 == 0 ? 3.0 * z(rng) : 0.0);
    }
    return y;
}

} // namespace

TEST(Registry, PinnedLayout) {
    const auto plain = feature_registry(1);
    EXPECT_EQ(plain->size(), 26u);
    EXPECT_EQ(plain->names.front(), "entropy");
    EXPECT_EQ(plain->names.back(), "seasonal_period");
    EXPECT_EQ(plain->tag, "hfselect-features-v1;period=1");
    const auto weekly = feature_registry(4);
    EXPECT_EQ(weekly->size(), 29u);  // 27 computed + 2 passthroughs
    EXPECT_NO_THROW(weekly->index_of("seasonal_strength"));
    EXPECT_THROW(plain->index_of("seasonal_strength"), ValidationError);
    EXPECT_EQ(feature_registry(1).get(), plain.get());
    EXPECT_THROW(feature_registry(0), ValidationError);
    EXPECT_EQ(affine_invariant_features(*plain).size(), 14u);
    EXPECT_EQ(affine_invariant_features(*weekly).size(), 17u);
}

TEST(Features, ConstantSeriesDegenerateRules) {
    const std::vector<double> y(30, 7.25);
    const auto f = compute_features(y);
    EXPECT_EQ(f["entropy"], 1.0);
    EXPECT_EQ(f["trend"], 0.0);
    EXPECT_EQ(f["lumpiness"], 0.0);
    EXPECT_EQ(f["x_acf1"], 0.0);
    EXPECT_EQ(f["x_acf10"], 0.0);
    EXPECT_EQ(f["diff1_acf1"], 0.0);
    EXPECT_EQ(f["nonlinearity"], 0.0);
    EXPECT_EQ(f["unitroot_kpss"], 0.0);
    EXPECT_EQ(f["seasonal_period"], 1.0);
    EXPECT_EQ(f["nperiods"], 0.0);
    EXPECT_EQ(f.replaced, f.values.size() - 3);
    for (double v : f.values) EXPECT_TRUE(std::isfinite(v));
}

TEST(Features, LinearSeries) {
    std::vector<double> y(60);
    for (std::size_t t = 0; t < y.size(); ++t) y[t] = static_cast<double>(t + 1);
    const auto f = compute_features(y);
    EXPECT_GT(f["linearity"], 10.0);
    EXPECT_LT(std::abs(f["curvature"]), 1e-8);
    EXPECT_GT(f["trend"], 0.999);
    EXPECT_GT(f["unitroot_kpss"], 1.0);
    EXPECT_EQ(f["diff1_acf1"], 0.0);  // differences are constant
    EXPECT_EQ(f["e_acf1"], 0.0);      // remainder is zero
}

TEST(Features, Ar1AutocorrelationMatchesScalarOracle) {
    const auto y = simulate_ar1(0.9, 120, 2024);
    const auto f = compute_features(y);
    EXPECT_NEAR(f["x_acf1"], scalar_acf(y, 1), 1e-12);
    EXPECT_NEAR(f["x_acf1"], 0.9 - (1.0 + 4.0 * 0.9) / 120.0, 0.1);
    double acf10 = 0;
    for (std::size_t k = 1; k <= 10; ++k) acf10 += scalar_acf(y, k) * scalar_acf(y, k);
    EXPECT_NEAR(f["x_acf10"], acf10, 1e-12);
    const auto d1 = diff(y), d2 = diff(diff(y));
    EXPECT_NEAR(f["diff1_acf1"], scalar_acf(d1, 1), 1e-12);
    EXPECT_NEAR(f["diff2_acf1"], scalar_acf(d2, 1), 1e-12);
    double pacf5 = 0;
    for (std::size_t k = 1; k <= 5; ++k) pacf5 += std::pow(yule_walker_pacf(y, k), 2);
    EXPECT_NEAR(f["x_pacf5"], pacf5, 1e-10);
    EXPECT_NEAR(std::sqrt(pacf5), 0.9, 0.15);
}

TEST(Features, AffineInvarianceOfDeclaredSubset) {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> scale(0.01, 100.0), shift(-500.0, 500.0);
    for (int trial = 0; trial < 100; ++trial) {
        const auto y = random_walkish(rng, 40 + static_cast<std::size_t>(trial));
        const double a = scale(rng), b = shift(rng);
        std::vector<double> z(y.size());
        for (std::size_t t = 0; t < y.size(); ++t) z[t] = a * y[t] + b;
        const auto fy = compute_features(y), fz = compute_features(z);
        for (const auto& name : affine_invariant_features(*fy.registry)) ASSERT_NEAR(fy[name], fz[name], 1e-8) << name << " trial " << trial;
        for (const char* extra : {"hurst", "arch_lm", "unitroot_kpss"})
            ASSERT_NEAR(fy[extra], fz[extra], 1e-8) << extra;
    }
}

TEST(Features, SeasonalPeriodEmitsSeasonalFeatures) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> z(0.0, 0.1);
    std::vector<double> y(48);
    const double pattern[4] = {5, -2, 1, -4};
    for (std::size_t t = 0; t < y.size(); ++t) y[t] = 50.0 + pattern[t % 4] + z(rng);
    const auto f = compute_features(y, 4);
    EXPECT_EQ(f.values.size(), 29u);
    EXPECT_GT(f["seasonal_strength"], 0.9);
    EXPECT_NEAR(f["seas_acf1"], scalar_acf(y, 4), 1e-12);
    EXPECT_EQ(f["seasonal_period"], 4.0);
    EXPECT_EQ(f["nperiods"], 1.0);
}

TEST(Features, DeterministicFiniteAndGuarded) {
    std::mt19937_64 rng(6);
    for (std::size_t n : {12u, 13u, 20u, 26u, 31u, 58u, 84u, 120u}) {
        const auto y = random_walkish(rng, n);
        const auto a = compute_features(y), b = compute_features(y);
        ASSERT_EQ(a.values, b.values);
        for (double v : a.values) ASSERT_TRUE(std::isfinite(v)) << "n=" << n;
    }
    EXPECT_THROW(compute_features(std::vector<double>(11, 1.0)), ValidationError);
    std::vector<double> bad(20, 1.0);
    bad[3] = std::nan("");
    EXPECT_THROW(compute_features(bad), ValidationError);
}

TEST(Features, ScaleDependentFeaturesRespondToScale) {
    std::mt19937_64 rng(7);
    const auto y = random_walkish(rng, 60);
    std::vector<double> z(y.size());
    for (std::size_t t = 0; t < y.size(); ++t) z[t] = 10.0 * y[t];
    const auto fy = compute_features(y), fz = compute_features(z);
    EXPECT_NEAR(fz["lumpiness"], 1e4 * fy["lumpiness"], 1e-6 * fz["lumpiness"]);
    EXPECT_NEAR(fz["max_var_shift"], 100.0 * fy["max_var_shift"], 1e-8 * fz["max_var_shift"]);
}

TEST(FeatureMatrix, IdenticalSeriesGiveIdenticalLevels) {
    auto h = std::make_shared<const Hierarchy>(build_hierarchy({{"T", "A"}, {"A", "a"}}));
    std::mt19937_64 rng(8);
    const auto y = random_walkish(rng, 40);
    Eigen::MatrixXd bottom(1, 40);
    for (Eigen::Index t = 0; t < 40; ++t) bottom(0, t) = y[static_cast<std::size_t>(t)];
    auto data = make_series_set("chain", h, aggregate_bottom(*h, bottom));
    const auto fm = feature_matrix(data, 40);
    EXPECT_EQ(fm.level_means.rows(), 3);
    EXPECT_EQ(fm.level_means.row(0), fm.level_means.row(1));
    EXPECT_EQ(fm.level_means.row(0), fm.level_means.row(2));
}

TEST(FeatureMatrix, LevelMeansAndFlattening) {
    auto h = hfselect::testing::figure1();
    std::mt19937_64 rng(9);
    Eigen::MatrixXd bottom(4, 50);
    for (Eigen::Index j = 0; j < 4; ++j) {
        const auto y = random_walkish(rng, 50);
        for (Eigen::Index t = 0; t < 50; ++t) bottom(j, t) = 100.0 + y[static_cast<std::size_t>(t)];
    }
    auto data = make_series_set("f1", h, aggregate_bottom(*h, bottom));
    const auto fm = feature_matrix(data, 44);
    const std::size_t z = fm.registry->size();
    EXPECT_EQ(fm.row.size(), 3 * z);
    EXPECT_EQ(FeatureMatrix::column_names(*fm.registry, 3).size(), 3 * z);
    for (std::size_t f = 0; f < z; ++f) {
        double sum = 0;
        for (Eigen::Index j = 0; j < 4; ++j) {
            std::vector<double> y(44);
            for (Eigen::Index t = 0; t < 44; ++t) y[static_cast<std::size_t>(t)] = data.observations(3 + j, t);
            sum += compute_features(y).values[f];
        }
        EXPECT_NEAR(fm.row[2 * z + f], sum / 4.0, 1e-12 * std::max(1.0, std::abs(sum)));
        EXPECT_EQ(fm.row[f], fm.per_series[0].values[f]);
    }
    EXPECT_THROW(feature_matrix(data, 11), ValidationError);
    const auto parallel = feature_matrix(data, 44, 1, 3);
    EXPECT_EQ(parallel.row, fm.row);
}
