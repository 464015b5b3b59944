#pragma once

// Numerically checkable forms of the explicit bounds and identities for
// gradient EM on over-parameterized mixtures. Each check_* returns a
// BoundReport oriented so that slack = rhs - lhs >= -tolerance means the
// inequality held.

#include "gem/estimators.hpp"

#include <string>
#include <vector>

namespace gem {

struct BoundReport {
    std::string name;
    double lhs = 0.0;
    double rhs = 0.0;
    double slack = 0.0;
    bool satisfied = true;
    double tolerance = 0.0;

    static BoundReport make(std::string name, double lhs, double rhs, double tolerance) {
        BoundReport r{std::move(name), lhs, rhs, rhs - lhs, false, tolerance};
        r.satisfied = r.slack >= -tolerance;
        return r;
    }
};

/// sum_i pi_i |mu_i|^2 / 2, an upper bound on the KL loss (Jensen).
inline double loss_upper_bound(const MixtureParams& p) { return 0.5 * parametric_error(p); }

/// Checks estimate_loss(p) <= loss_upper_bound(p) + 3 SE.
inline BoundReport check_loss_upper_bound(const MixtureParams& p, const SamplePlan& plan) {
    const SampleBatch batch = draw_standard_normal(p.dim(), plan);
    const ScalarEstimate est = estimate_loss(p, batch);
    return BoundReport::make("loss_upper_bound", est.value, loss_upper_bound(p), 3.0 * est.std_error);
}

/// (sum_{i,j} pi_i pi_j |mu_i - mu_j|^2).
inline double weighted_pairwise_spread(const MixtureParams& p) {
    double s = 0.0;
    for (int i = 0; i < p.n_components(); ++i)
        for (int j = 0; j < p.n_components(); ++j)
            s += p.weights()[i] * p.weights()[j] * (p.means().row(i) - p.means().row(j)).squaredNorm();
    return s;
}

/// exp(-8U) / (40000 d (1 + 2 mu_max sqrt d)^2) * (sum pi_i pi_j |mu_i - mu_j|^2)^2
inline double separation_lower_bound(const MixtureParams& p) {
    const double d = p.dim();
    const double m = mu_max(p).value;
    const double spread = weighted_pairwise_spread(p);
    const double denom = 40000.0 * d * (1.0 + 2.0 * m * std::sqrt(d)) * (1.0 + 2.0 * m * std::sqrt(d));
    return std::exp(-8.0 * potential_u(p)) / denom * spread * spread;
}

/// Lower bound on E|psi_tilde|^2 from the two-case projection argument:
/// the separation bound always, the explicit pi_min^2 mu_max^4 / 2.56e6 form
/// when some mean is at least mu_max/2 from the largest, and mu_max^2 / 4
/// when every mean is within mu_max/2 of it.
inline double projection_lower_bound(const MixtureParams& p) {
    const MaxNorm mx = mu_max(p);
    const double m = mx.value;
    if (m == 0.0) return 0.0;
    double lb = separation_lower_bound(p);
    bool separated = false;
    for (int k = 0; k < p.n_components(); ++k)
        if ((p.means().row(k) - p.means().row(mx.index)).norm() >= 0.5 * m) separated = true;
    const double d = p.dim();
    if (separated) {
        const double pi_min = p.weights().minCoeff();
        const double q = 1.0 + 2.0 * m * std::sqrt(d);
        lb = std::max(lb, std::exp(-8.0 * potential_u(p)) * pi_min * pi_min * m * m * m * m / (2560000.0 * d * q * q));
    } else {
        lb = std::max(lb, 0.25 * m * m);
    }
    return lb;
}

/// Checks projection_lower_bound(p) <= E|psi_tilde|^2 + 4 SE.
inline BoundReport check_projection_lower_bound(const MixtureParams& p, const SamplePlan& plan) {
    const SampleBatch batch = draw_standard_normal(p.dim(), plan);
    const ScalarEstimate est = estimate_psi_tilde_sqnorm(p, batch);
    return BoundReport::make("projection_lower_bound", projection_lower_bound(p), est.value, 4.0 * est.std_error);
}

namespace detail {
inline void check_locality(const MixtureParams& p, const Matrix& deltas) {
    if (deltas.rows() != p.n_components() || deltas.cols() != p.dim())
        throw DimensionError("deltas shape does not match the mixture");
    const double d = p.dim();
    for (int i = 0; i < p.n_components(); ++i) {
        const double limit = 1.0 / std::max(6.0 * d, 2.0 * p.means().row(i).norm());
        if (deltas.row(i).norm() > limit)
            throw PreconditionError("perturbation of component " + std::to_string(i) + " has norm " +
                                    std::to_string(deltas.row(i).norm()) + " > locality limit " +
                                    std::to_string(limit));
    }
}
}  // namespace detail

/// n mu_max (30 sqrt d + 4 mu_max) |delta_i| + sum_k |delta_k|.
inline double smoothness_rhs(const MixtureParams& p, const Matrix& deltas, int component) {
    detail::check_locality(p, deltas);
    require(component >= 0 && component < p.n_components(), "component index out of range");
    const double m = mu_max(p).value;
    const double n = p.n_components();
    double total = 0.0;
    for (int k = 0; k < p.n_components(); ++k) total += deltas.row(k).norm();
    return n * m * (30.0 * std::sqrt(static_cast<double>(p.dim())) + 4.0 * m) * deltas.row(component).norm() + total;
}

/// One report per component: |grad_i L(mu + delta) - grad_i L(mu)| against
/// smoothness_rhs, with both gradients on one shared batch.
inline std::vector<BoundReport> check_smoothness(const MixtureParams& p, const Matrix& deltas, const SamplePlan& plan) {
    detail::check_locality(p, deltas);
    const MixtureParams moved = p.with_means(p.means() + deltas);
    const SampleBatch batch = draw_standard_normal(p.dim(), plan);
    const GradientEstimate diff = estimate_gradient_difference(p, moved, batch);
    std::vector<BoundReport> out;
    for (int i = 0; i < p.n_components(); ++i)
        out.push_back(BoundReport::make("smoothness[" + std::to_string(i) + "]", diff.per_component.row(i).norm(),
                                        smoothness_rhs(p, deltas, i), 4.0 * diff.row_norm_std_error(i)));
    return out;
}

struct GradientBound {
    bool applicable = false;
    double bound = 0.0;
};

/// In the region |mu_1|, |mu_2| >= 10 sqrt d and |mu_i| <= sqrt d (i >= 3),
/// every |grad_i L| <= 2 sum_{i>=3} |mu_i| + 2 e^{-d} (|mu_1| + |mu_2|).
inline GradientBound bad_region_gradient_bound(const MixtureParams& p) {
    if (p.n_components() < 2) return {};
    const double sd = std::sqrt(static_cast<double>(p.dim()));
    const double n1 = p.means().row(0).norm(), n2 = p.means().row(1).norm();
    GradientBound out;
    out.applicable = n1 >= 10.0 * sd && n2 >= 10.0 * sd;
    double rest = 0.0;
    for (int i = 2; i < p.n_components(); ++i) {
        const double ni = p.means().row(i).norm();
        if (ni > sd) out.applicable = false;
        rest += ni;
    }
    out.bound = 2.0 * rest + 2.0 * std::exp(-static_cast<double>(p.dim())) * (n1 + n2);
    return out;
}

/// Steps for which the symmetric bad initialization provably stays trapped: e^d / (30 eta).
inline double trap_horizon(int d, double eta) {
    require(d >= 1, "dimension must be positive");
    require(eta > 0.0, "step size must be positive");
    return std::exp(static_cast<double>(d)) / (30.0 * eta);
}

/// E exp(c|x|) <= 1 + 5 sqrt(d) c for 0 < c <= 1/(3d).
inline BoundReport check_mgf_bound(int d, double c, const SamplePlan& plan) {
    require(d >= 1, "dimension must be positive");
    require(c > 0.0 && c <= 1.0 / (3.0 * d), "MGF bound needs 0 < c <= 1/(3d)");
    const SampleBatch batch = draw_standard_normal(d, plan);
    const ScalarEstimate est = estimate_mgf(d, c, batch);
    return BoundReport::make("mgf_bound[d=" + std::to_string(d) + "]", est.value, 1.0 + 5.0 * std::sqrt(d) * c,
                             3.0 * est.std_error);
}

/// Checks  int_{-1}^{1} psi_i(tx) psi_j(tx) dt
///   >= pi_i pi_j e^{-4U} (1 - e^{-4 mu_max |x|}) / (2 mu_max |x|)
/// with composite-trapezoid quadrature on quad_points intervals; the
/// tolerance is the gap to the half-resolution estimate plus a rounding floor
/// (the bound is tight when every mean is zero).
inline BoundReport check_path_integral_bound(const MixtureParams& p, const Vector& x, int i, int j, int quad_points = 256) {
    detail::check_point(p, x);
    require(x.norm() > 0.0, "path integral bound needs x != 0");
    require(quad_points >= 64 && quad_points % 2 == 0, "quad_points must be even and at least 64");
    require(i >= 0 && i < p.n_components() && j >= 0 && j < p.n_components(), "component index out of range");

    MixtureEvaluator ev(p);
    Vector tx(p.dim());
    const auto integrand = [&](double t) {
        tx = t * x;
        ev.evaluate({tx.data(), static_cast<std::size_t>(tx.size())});
        return ev.psi()[i] * ev.psi()[j];
    };
    std::vector<double> f(static_cast<std::size_t>(quad_points) + 1);
    for (int k = 0; k <= quad_points; ++k) f[static_cast<std::size_t>(k)] = integrand(-1.0 + 2.0 * k / quad_points);
    const auto trapezoid = [&](int stride) {
        const double h = 2.0 * stride / quad_points;
        double s = 0.5 * (f.front() + f.back());
        for (int k = stride; k < quad_points; k += stride) s += f[static_cast<std::size_t>(k)];
        return h * s;
    };
    const double fine = trapezoid(1);
    const double coarse = trapezoid(2);

    const double m = mu_max(p).value;
    const double pij = p.weights()[i] * p.weights()[j];
    const double decay = std::exp(-4.0 * potential_u(p));
    const double r = m * x.norm();
    // (1 - e^{-4r}) / (2r) -> 2 as r -> 0
    const double shape = r > 0.0 ? -std::expm1(-4.0 * r) / (2.0 * r) : 2.0;
    const double lhs = pij * decay * shape;
    return BoundReport::make("path_integral[" + std::to_string(i) + "," + std::to_string(j) + "]", lhs, fine,
                             std::abs(fine - coarse) + 1e-12 * fine);
}

/// One report per component: |stein_residual_i| <= 4 |SE vector|.
inline std::vector<BoundReport> check_stein(const MixtureParams& p, const SamplePlan& plan) {
    const SampleBatch batch = draw_standard_normal(p.dim(), plan);
    std::vector<BoundReport> out;
    for (int i = 0; i < p.n_components(); ++i) {
        const VectorEstimate r = stein_residual(p, i, batch);
        out.push_back(BoundReport::make("stein[" + std::to_string(i) + "]", r.value.norm(), 4.0 * r.std_error.norm(), 0.0));
    }
    return out;
}

}  // namespace gem
