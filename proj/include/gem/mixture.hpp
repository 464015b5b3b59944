#pragma once

// Pointwise mathematics of an isotropic, unit-covariance Gaussian mixture
// with fixed weights, fitted against the standard normal N(0, I_d).
//
// Everything is evaluated relative to the ground-truth density: with
//   a_i(x) = <x, mu_i> - |mu_i|^2 / 2
// we have pi_i phi(x | mu_i) = pi_i phi(x | 0) exp(a_i(x)), so
//   log p_mu(x) - log p_0(x) = log sum_i pi_i exp(a_i(x)).
// a_i is exactly zero for a zero mean, which keeps the all-zero model an
// exact fixed point of every estimator.

#include "gem/core.hpp"

#include <limits>
#include <vector>

namespace gem {

class MixtureParams {
public:
    MixtureParams(Vector weights, Matrix means) : weights_(std::move(weights)), means_(std::move(means)) {
        if (means_.rows() < 1 || means_.cols() < 1)
            throw PreconditionError("mixture needs at least one component and one dimension");
        if (weights_.size() != means_.rows())
            throw DimensionError("weights length " + std::to_string(weights_.size()) + " != component count " +
                                 std::to_string(means_.rows()));
        double total = 0.0;
        for (Eigen::Index i = 0; i < weights_.size(); ++i) {
            if (!(weights_[i] > 0.0) || !std::isfinite(weights_[i]))
                throw PreconditionError("weight " + std::to_string(i) + " is not a positive finite number");
            total += weights_[i];
        }
        if (std::abs(total - 1.0) > 1e-12)
            throw PreconditionError("weights sum to " + std::to_string(total) + ", expected 1");
        if (!means_.allFinite()) throw PreconditionError("means contain non-finite entries");
    }

    static MixtureParams equal_weights(Matrix means) {
        const auto n = means.rows();
        return {Vector::Constant(n, 1.0 / static_cast<double>(n)), std::move(means)};
    }

    int dim() const { return static_cast<int>(means_.cols()); }
    int n_components() const { return static_cast<int>(means_.rows()); }
    const Vector& weights() const { return weights_; }
    const Matrix& means() const { return means_; }

    MixtureParams with_means(Matrix means) const {
        if (means.rows() != means_.rows() || means.cols() != means_.cols())
            throw DimensionError("replacement means have a different shape");
        return {weights_, std::move(means)};
    }

private:
    Vector weights_;
    Matrix means_;
};

struct MaxNorm {
    int index = 0;  ///< zero-based; ties go to the lowest index
    double value = 0.0;
};

/// U = sum_i |mu_i|^2.
inline double potential_u(const MixtureParams& p) { return p.means().squaredNorm(); }

inline MaxNorm mu_max(const MixtureParams& p) {
    MaxNorm out;
    double best = -1.0;
    for (int i = 0; i < p.n_components(); ++i) {
        const double v = p.means().row(i).norm();
        if (v > best) {
            best = v;
            out = {i, v};
        }
    }
    return out;
}

/// sum_i pi_i |mu_i|^2, the parametric distance to the zero ground truth.
inline double parametric_error(const MixtureParams& p) {
    return p.weights().dot(p.means().rowwise().squaredNorm());
}

namespace detail {

// log sum_i w_i exp(a_i). Near the origin (all |a_i| <= 1) this goes
// through log1p/expm1, which is exact for a == 0 and keeps small KL values
// accurate; otherwise it uses the max-shifted log-sum-exp.
inline double log_weighted_expsum(std::span<const double> a, std::span<const double> w,
                                  std::span<const double> log_w, std::span<double> scratch) {
    const std::size_t n = a.size();
    double amax = 0.0;
    for (double v : a) amax = std::max(amax, std::abs(v));
    if (amax <= 1.0) {
        for (std::size_t i = 0; i < n; ++i) scratch[i] = w[i] * std::expm1(a[i]);
        return std::log1p(invariant_sum(scratch.first(n)));
    }
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) m = std::max(m, a[i] + log_w[i]);
    for (std::size_t i = 0; i < n; ++i) scratch[i] = std::exp(a[i] + log_w[i] - m);
    return m + std::log(invariant_sum(scratch.first(n)));
}

}  // namespace detail

/// Reusable per-thread evaluator for the hot per-sample loops. Not
/// thread-safe; construct one per worker. `evaluate` does no shape checking.
class MixtureEvaluator {
public:
    explicit MixtureEvaluator(const MixtureParams& p)
        : params_(&p),
          n_(p.n_components()),
          d_(p.dim()),
          w_(p.weights().data(), p.weights().data() + n_),
          log_w_(n_),
          half_sq_(n_),
          a_(n_),
          e_(n_),
          psi_(n_),
          scratch_(n_),
          order_(n_) {
        for (int i = 0; i < n_; ++i) {
            log_w_[i] = std::log(w_[i]);
            half_sq_[i] = 0.5 * p.means().row(i).squaredNorm();
        }
    }

    const MixtureParams& params() const { return *params_; }

    /// Computes only the exponents a_i(x); enough for log_ratio().
    void evaluate_exponents(std::span<const double> x) {
        const double* mu = params_->means().data();
        for (int i = 0; i < n_; ++i) {
            const double* row = mu + static_cast<std::ptrdiff_t>(i) * d_;
            double dot = 0.0;
            for (int c = 0; c < d_; ++c) dot += x[c] * row[c];
            a_[i] = dot - half_sq_[i];
        }
    }

    /// Exponents plus memberships (and the component summation order).
    void evaluate(std::span<const double> x) {
        evaluate_exponents(x);
        double m = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < n_; ++i) m = std::max(m, a_[i] + log_w_[i]);
        for (int i = 0; i < n_; ++i) e_[i] = std::exp(a_[i] + log_w_[i] - m);
        order_components();
        double s = 0.0;
        for (int k = 0; k < n_; ++k) s += e_[order_[k]];
        for (int i = 0; i < n_; ++i) psi_[i] = e_[i] / s;
    }

    /// Memberships psi_i(x) from the last `evaluate`.
    std::span<const double> psi() const { return psi_; }
    /// Exponents a_i(x) from the last `evaluate`.
    std::span<const double> exponents() const { return a_; }

    /// log p_mu(x) - log p_0(x) at the last evaluated point.
    double log_ratio() { return detail::log_weighted_expsum(a_, w_, log_w_, scratch_); }

    /// Same quantity for caller-supplied exponents (finite-difference oracle).
    double log_ratio_for(std::span<const double> a) { return detail::log_weighted_expsum(a, w_, log_w_, scratch_); }

    /// psi_tilde(x) = sum_i psi_i(x) mu_i at the last evaluated point.
    void psi_tilde(std::span<double> out) {
        const double* mu = params_->means().data();
        for (int c = 0; c < d_; ++c) out[c] = 0.0;
        for (int k = 0; k < n_; ++k) {
            const int i = order_[k];
            const double* row = mu + static_cast<std::ptrdiff_t>(i) * d_;
            for (int c = 0; c < d_; ++c) out[c] += psi_[i] * row[c];
        }
    }

private:
    // Summation order over components, keyed on (e_i, |mu_i|^2). Both keys
    // are unchanged when components are relabelled, and when x -> -x is
    // paired with mu_j = -mu_i, so sums come out exactly permuted/negated.
    void order_components() {
        for (int k = 0; k < n_; ++k) order_[k] = k;
        for (int k = 1; k < n_; ++k) {
            const int v = order_[k];
            int j = k;
            while (j > 0 && key_less(v, order_[j - 1])) {
                order_[j] = order_[j - 1];
                --j;
            }
            order_[j] = v;
        }
    }

    bool key_less(int a, int b) const {
        if (e_[a] != e_[b]) return e_[a] < e_[b];
        return half_sq_[a] < half_sq_[b];
    }

    const MixtureParams* params_;
    int n_, d_;
    std::vector<double> w_, log_w_, half_sq_, a_, e_, psi_, scratch_;
    std::vector<int> order_;
};

namespace detail {
inline void check_point(const MixtureParams& p, const Vector& x) {
    if (x.size() != p.dim())
        throw DimensionError("point has dimension " + std::to_string(x.size()) + ", mixture has " +
                             std::to_string(p.dim()));
    if (!x.allFinite()) throw PreconditionError("point has non-finite entries");
}
}  // namespace detail

/// log p_mu(x), never -inf for finite input.
inline double log_density(const MixtureParams& p, const Vector& x) {
    detail::check_point(p, x);
    MixtureEvaluator ev(p);
    ev.evaluate({x.data(), static_cast<std::size_t>(x.size())});
    return ev.log_ratio() - 0.5 * x.squaredNorm() - 0.5 * p.dim() * kLogTwoPi;
}

/// Posterior membership weights psi_i(x).
inline Vector membership(const MixtureParams& p, const Vector& x) {
    detail::check_point(p, x);
    MixtureEvaluator ev(p);
    ev.evaluate({x.data(), static_cast<std::size_t>(x.size())});
    const auto psi = ev.psi();
    return Eigen::Map<const Vector>(psi.data(), static_cast<Eigen::Index>(psi.size()));
}

inline Vector psi_tilde(const MixtureParams& p, const Vector& x) {
    detail::check_point(p, x);
    MixtureEvaluator ev(p);
    ev.evaluate({x.data(), static_cast<std::size_t>(x.size())});
    Vector out(p.dim());
    ev.psi_tilde({out.data(), static_cast<std::size_t>(out.size())});
    return out;
}

/// Row i is grad_x psi_i(x) = psi_i(x) (mu_i - psi_tilde(x)).
inline Matrix membership_jacobian(const MixtureParams& p, const Vector& x) {
    const Vector psi = membership(p, x);
    const Vector pt = psi_tilde(p, x);
    Matrix jac(p.n_components(), p.dim());
    for (int i = 0; i < p.n_components(); ++i) jac.row(i) = psi[i] * (p.means().row(i) - pt.transpose());
    return jac;
}

/// grad_x psi_tilde(x) = 1/2 sum_{i,j} psi_i psi_j (mu_i - mu_j)(mu_i - mu_j)^T.
inline Matrix psi_tilde_jacobian(const MixtureParams& p, const Vector& x) {
    const Vector psi = membership(p, x);
    const int d = p.dim();
    Matrix jac = Matrix::Zero(d, d);
    for (int i = 0; i < p.n_components(); ++i) {
        for (int j = i + 1; j < p.n_components(); ++j) {
            const Vector diff = (p.means().row(i) - p.means().row(j)).transpose();
            // (i,j) and (j,i) terms are equal; the 1/2 cancels the double count.
            jac.noalias() += (psi[i] * psi[j]) * (diff * diff.transpose());
        }
    }
    return jac;
}

}  // namespace gem
