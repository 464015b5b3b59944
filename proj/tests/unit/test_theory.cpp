#include "gem/theory.hpp"

#include "oracle_values.hpp"

#include <gtest/gtest.h>

using namespace gem;

namespace {

const SamplePlan kPlan{200000, 17, true, 65536};

MixtureParams params_2d() {
    Matrix mu(3, 2);
    mu << 0.8, -0.4, -0.3, 0.6, 0.1, 0.2;
    Vector w(3);
    w << 0.2, 0.5, 0.3;
    return {w, mu};
}

MixtureParams random_params(std::uint64_t seed, int n, int d, double radius) {
    SplitMix64 gen(seed);
    Matrix mu(n, d);
    for (Eigen::Index k = 0; k < mu.size(); ++k) mu.data()[k] = radius / std::sqrt(d) * (2.0 * gen.uniform() - 1.0);
    return {draw_dirichlet_weights(n, 1.0, seed), mu};
}

}  // namespace

TEST(BoundReport, SlackAndTolerance) {
    const auto ok = BoundReport::make("x", 1.0, 2.0, 0.0);
    EXPECT_EQ(ok.slack, 1.0);
    EXPECT_TRUE(ok.satisfied);
    EXPECT_FALSE(BoundReport::make("x", 2.0, 1.0, 0.5).satisfied);
    EXPECT_TRUE(BoundReport::make("x", 2.0, 1.0, 1.0).satisfied);
}

TEST(LossUpperBound, ClosedForm) {
    EXPECT_NEAR(loss_upper_bound(params_2d()), 0.5 * (0.2 * 0.8 + 0.5 * 0.45 + 0.3 * 0.05), 1e-15);
}

TEST(LossUpperBound, HoldsOnRandomInstances) {
    for (std::uint64_t s = 0; s < 10; ++s)
        EXPECT_TRUE(check_loss_upper_bound(random_params(s, 3, 4, 3.0), kPlan.reseeded(s)).satisfied) << s;
}

TEST(WeightedPairwiseSpread, EqualsTwiceVarianceAroundWeightedMean) {
    const auto p = params_2d();
    const Eigen::RowVectorXd bar = p.weights().transpose() * p.means();
    double var = 0.0;
    for (int i = 0; i < 3; ++i) var += p.weights()[i] * (p.means().row(i) - bar).squaredNorm();
    EXPECT_NEAR(weighted_pairwise_spread(p), 2.0 * var, 1e-14);
}

TEST(SeparationLowerBound, WorkedExample) {
    Matrix mu(2, 1);
    mu << 0.1, -0.1;
    EXPECT_NEAR(separation_lower_bound(MixtureParams::equal_weights(mu)), oracle::kSeparationExample,
                1e-12 * oracle::kSeparationExample);
}

TEST(ProjectionLowerBound, ZeroMeansAndSingleComponent) {
    EXPECT_EQ(projection_lower_bound(MixtureParams::equal_weights(Matrix::Zero(3, 2))), 0.0);
    // n = 1: every mean is within mu_max / 2 of the largest, and E|psi_tilde|^2 = |mu|^2
    Matrix mu(1, 2);
    mu << 3.0, 4.0;
    const auto p = MixtureParams::equal_weights(mu);
    EXPECT_DOUBLE_EQ(projection_lower_bound(p), 25.0 / 4.0);
    EXPECT_TRUE(check_projection_lower_bound(p, kPlan).satisfied);
}

TEST(ProjectionLowerBound, HoldsOnRandomInstances) {
    for (std::uint64_t s = 0; s < 10; ++s) {
        const auto p = random_params(100 + s, 1 + static_cast<int>(s % 5), 1 + static_cast<int>(s % 4), 2.0);
        const auto r = check_projection_lower_bound(p, kPlan.reseeded(s));
        EXPECT_TRUE(r.satisfied) << s << " lhs " << r.lhs << " rhs " << r.rhs;
        EXPECT_GE(r.lhs, separation_lower_bound(p));
    }
}

TEST(Smoothness, LocalityEnforced) {
    const auto p = params_2d();
    Matrix big = Matrix::Zero(3, 2);
    big(0, 0) = 0.1;  // limit is 1 / 12
    EXPECT_THROW(smoothness_rhs(p, big, 0), PreconditionError);
    EXPECT_THROW(smoothness_rhs(p, Matrix::Zero(2, 2), 0), DimensionError);
}

TEST(Smoothness, ZeroPerturbation) {
    const auto reps = check_smoothness(params_2d(), Matrix::Zero(3, 2), kPlan);
    for (const auto& r : reps) {
        EXPECT_EQ(r.lhs, 0.0);
        EXPECT_EQ(r.rhs, 0.0);
        EXPECT_TRUE(r.satisfied);
    }
}

TEST(Smoothness, HoldsNearLocalityLimit) {
    const auto p = params_2d();
    Matrix delta(3, 2);
    delta << 0.05, -0.05, 0.0, 0.08, -0.07, 0.0;
    for (const auto& r : check_smoothness(p, delta, kPlan)) EXPECT_TRUE(r.satisfied) << r.name;
    EXPECT_NEAR(smoothness_rhs(p, delta, 0),
                3.0 * std::sqrt(0.8) * (30.0 * std::sqrt(2.0) + 4.0 * std::sqrt(0.8)) * std::sqrt(0.005) +
                    std::sqrt(0.005) + 0.08 + 0.07,
                1e-12);
}

TEST(BadRegionGradientBound, Applicability) {
    Matrix mu = Matrix::Zero(3, 4);
    mu(0, 0) = 20.0;
    mu(1, 0) = -20.0;
    const auto b = bad_region_gradient_bound(MixtureParams::equal_weights(mu));
    EXPECT_TRUE(b.applicable);
    EXPECT_NEAR(b.bound, 2.0 * std::exp(-4.0) * 40.0, 1e-14);
    mu(2, 1) = 2.5;  // > sqrt(4)
    EXPECT_FALSE(bad_region_gradient_bound(MixtureParams::equal_weights(mu)).applicable);
    mu(2, 1) = 0.0;
    mu(1, 0) = -19.0;  // < 10 sqrt(4)
    EXPECT_FALSE(bad_region_gradient_bound(MixtureParams::equal_weights(mu)).applicable);
    EXPECT_FALSE(bad_region_gradient_bound(MixtureParams::equal_weights(Matrix::Zero(1, 4))).applicable);
}

TEST(TrapHorizon, ClosedForm) {
    EXPECT_NEAR(trap_horizon(8, 0.7), std::exp(8.0) / 21.0, 1e-9);
    EXPECT_THROW(trap_horizon(0, 0.7), PreconditionError);
    EXPECT_THROW(trap_horizon(3, 0.0), PreconditionError);
}

TEST(MgfBound, HoldsAtLargestAllowedArgument) {
    for (int d : {1, 2, 5, 10}) EXPECT_TRUE(check_mgf_bound(d, 1.0 / (3.0 * d), kPlan).satisfied) << d;
    EXPECT_THROW(check_mgf_bound(2, 0.2, kPlan), PreconditionError);
    EXPECT_THROW(check_mgf_bound(2, 0.0, kPlan), PreconditionError);
}

TEST(PathIntegral, QuadratureMatchesOracle) {
    Vector x(2);
    x << 1.5, -2.0;
    const auto r = check_path_integral_bound(params_2d(), x, 0, 2);
    EXPECT_NEAR(r.rhs, oracle::kPathIntegral, std::max(r.tolerance, 1e-6));
    EXPECT_TRUE(r.satisfied);
}

TEST(PathIntegral, ZeroMeansGivesExactValue) {
    // psi = pi everywhere: integral is 2 pi_i pi_j and the bound is exactly that
    Vector w(2);
    w << 0.25, 0.75;
    const MixtureParams p(w, Matrix::Zero(2, 3));
    Vector x = Vector::Ones(3);
    const auto r = check_path_integral_bound(p, x, 0, 1);
    EXPECT_NEAR(r.rhs, 2.0 * 0.25 * 0.75, 1e-15);
    EXPECT_NEAR(r.lhs, 2.0 * 0.25 * 0.75, 1e-15);
    EXPECT_TRUE(r.satisfied);
}

TEST(PathIntegral, Preconditions) {
    const auto p = params_2d();
    EXPECT_THROW(check_path_integral_bound(p, Vector::Zero(2), 0, 1), PreconditionError);
    EXPECT_THROW(check_path_integral_bound(p, Vector::Ones(2), 0, 3), PreconditionError);
    EXPECT_THROW(check_path_integral_bound(p, Vector::Ones(2), 0, 1, 63), PreconditionError);
    EXPECT_THROW(check_path_integral_bound(p, Vector::Ones(3), 0, 1), DimensionError);
}

TEST(Stein, RandomInstance) {
    const auto p = random_params(9, 3, 3, 3.0);
    for (const auto& r : check_stein(p, kPlan)) EXPECT_TRUE(r.satisfied) << r.name;
}
