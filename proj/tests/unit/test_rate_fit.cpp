#include "gem/rate_fit.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace gem;

TEST(FitLine, ExactLine) {
    const auto f = fit_line({1, 2, 3, 4}, {3, 5, 7, 9});
    EXPECT_NEAR(f.slope, 2.0, 1e-14);
    EXPECT_NEAR(f.intercept, 1.0, 1e-14);
    EXPECT_DOUBLE_EQ(f.r_squared, 1.0);
    EXPECT_EQ(f.points, 4u);
}

TEST(FitLine, KnownResiduals) {
    // y = (0, 1, 1, 2) on x = (0, 1, 2, 3): slope 0.6, intercept 0.1, r^2 = 0.9
    const auto f = fit_line({0, 1, 2, 3}, {0, 1, 1, 2});
    EXPECT_NEAR(f.slope, 0.6, 1e-14);
    EXPECT_NEAR(f.intercept, 0.1, 1e-14);
    EXPECT_NEAR(f.r_squared, 0.9, 1e-14);
}

TEST(FitLine, FlatSeries) {
    const auto f = fit_line({1, 2, 3}, {4, 4, 4});
    EXPECT_EQ(f.slope, 0.0);
    EXPECT_EQ(f.r_squared, 1.0);
}

TEST(FitLine, Preconditions) {
    EXPECT_THROW(fit_line({1}, {1}), PreconditionError);
    EXPECT_THROW(fit_line({1, 2}, {1}), PreconditionError);
    EXPECT_THROW(fit_line({2, 2, 2}, {1, 2, 3}), PreconditionError);
}

TEST(FitRate, PowerLawRecovered) {
    std::vector<std::pair<double, double>> s;
    for (int t = 1; t <= 1000; ++t) s.emplace_back(t, 3.0 * std::pow(t, -1.25));
    const auto f = fit_rate(s, {50, 1000});
    EXPECT_NEAR(f.slope, -1.25, 1e-12);
    EXPECT_NEAR(std::exp(f.intercept), 3.0, 1e-10);
    EXPECT_EQ(f.points, 951u);
    EXPECT_EQ(f.window, (std::pair<double, double>{50, 1000}));
}

TEST(FitRate, IgnoresOutOfWindowNonPositive) {
    std::vector<std::pair<double, double>> s{{0, -5.0}};
    for (int t = 10; t <= 200; t += 10) s.emplace_back(t, 1.0 / t);
    EXPECT_NEAR(fit_rate(s, {10, 200}).slope, -1.0, 1e-12);
}

TEST(FitRate, Preconditions) {
    std::vector<std::pair<double, double>> s;
    for (int t = 1; t <= 30; ++t) s.emplace_back(t, 1.0 / t);
    EXPECT_THROW(fit_rate(s, {10, 5}), PreconditionError);
    EXPECT_THROW(fit_rate(s, {0, 5}), PreconditionError);
    EXPECT_THROW(fit_rate(s, {1, 9}), PreconditionError);  // 9 points
    EXPECT_NO_THROW(fit_rate(s, {1, 10}));
    s[14].second = 0.0;
    EXPECT_THROW(fit_rate(s, {1, 30}), PreconditionError);
}

TEST(DefaultRateWindow, BurnIn) {
    EXPECT_EQ(default_rate_window(2000), (std::pair<double, double>{100, 2000}));
    EXPECT_EQ(default_rate_window(100), (std::pair<double, double>{20, 100}));
}
