#pragma once

// Monte Carlo estimators of population quantities under x ~ N(0, I_d).
//
// Reduction order is fixed: rows are consumed in blocks of kReduceBlock,
// antithetic pairs are summed before anything else, and block partials are
// merged in block order. The result is bit-identical for any thread count,
// and a configuration that is symmetric under x -> -x yields exactly
// negated estimates for mirrored components.

#include "gem/mixture.hpp"
#include "gem/sampling.hpp"

#include <functional>
#include <vector>

namespace gem {

struct ScalarEstimate {
    double value = 0.0;
    double std_error = 0.0;
    std::size_t sample_count = 0;
};

/// Per-entry Monte Carlo estimate of a vector-valued expectation.
struct VectorEstimate {
    Vector value;
    Vector std_error;
    std::size_t sample_count = 0;
};

/// Estimate of grad_{mu_i} L stacked as rows, with entrywise standard errors.
struct GradientEstimate {
    Matrix per_component;
    Matrix std_error;
    std::size_t sample_count = 0;

    double frobenius_norm() const { return per_component.norm(); }

    /// Delta-method standard error of the Frobenius norm.
    double norm_std_error() const {
        const double g = per_component.norm();
        if (g == 0.0) return std_error.norm();
        return (per_component.array() * std_error.array()).matrix().norm() / g;
    }

    double row_norm_std_error(int i) const {
        const double g = per_component.row(i).norm();
        if (g == 0.0) return std_error.row(i).norm();
        return (per_component.row(i).array() * std_error.row(i).array()).matrix().norm() / g;
    }
};

namespace detail {

inline constexpr std::size_t kReduceBlock = 4096;  // rows; even, so pairs never straddle blocks

struct Moments {
    std::vector<double> mean;
    std::vector<double> std_error;
    std::size_t sample_count = 0;
};

struct BlockStats {
    std::vector<double> unit_mean;
    std::vector<double> m2;
    std::size_t units = 0;
};

/// Reduces K per-row values over the batch. `make_kernel()` returns a
/// callable kernel(x, out) that writes K values for row x; one kernel is
/// created per block so workers never share scratch state.
template <class MakeKernel>
Moments reduce(const SampleBatch& batch, std::size_t k, MakeKernel&& make_kernel) {
    const std::size_t n_rows = batch.size();
    const bool paired = batch.paired() && n_rows % 2 == 0;
    const std::size_t blocks = (n_rows + kReduceBlock - 1) / kReduceBlock;
    std::vector<BlockStats> stats(blocks);

    detail::for_each_chunk(blocks, 1, [&](std::size_t b, std::size_t) {
        auto kernel = make_kernel();
        BlockStats& st = stats[b];
        std::vector<double> shift(k, 0.0), s1(k, 0.0), s2(k, 0.0), v0(k), v1(k);
        const std::size_t begin = b * kReduceBlock;
        const std::size_t end = std::min(n_rows, begin + kReduceBlock);
        const std::size_t step = paired ? 2 : 1;
        bool first = true;
        for (std::size_t r = begin; r < end; r += step) {
            kernel(batch.row(r), std::span<double>(v0));
            if (paired) {
                kernel(batch.row(r + 1), std::span<double>(v1));
                // pair first, then halve: the unit is the pair mean
                for (std::size_t j = 0; j < k; ++j) v0[j] = 0.5 * (v0[j] + v1[j]);
            }
            if (first) {
                shift = v0;
                first = false;
            }
            for (std::size_t j = 0; j < k; ++j) {
                const double dv = v0[j] - shift[j];
                s1[j] += dv;
                s2[j] += dv * dv;
            }
            ++st.units;
        }
        st.unit_mean.resize(k);
        st.m2.resize(k);
        const double c = static_cast<double>(st.units);
        for (std::size_t j = 0; j < k; ++j) {
            st.unit_mean[j] = shift[j] + s1[j] / c;
            st.m2[j] = std::max(0.0, s2[j] - s1[j] * s1[j] / c);
        }
    });

    // Chan et al. pairwise merge, in block order. A constant integrand
    // reproduces its value exactly (every delta after the first is zero).
    std::vector<double> mean(k, 0.0), m2(k, 0.0);
    double units = 0.0;
    for (const auto& st : stats) {
        const double nb = static_cast<double>(st.units);
        const double n_new = units + nb;
        for (std::size_t j = 0; j < k; ++j) {
            const double delta = st.unit_mean[j] - mean[j];
            mean[j] += delta * nb / n_new;
            m2[j] += st.m2[j] + delta * delta * units * nb / n_new;
        }
        units = n_new;
    }

    Moments out;
    out.sample_count = n_rows;
    out.mean.resize(k);
    out.std_error.resize(k);
    for (std::size_t j = 0; j < k; ++j) {
        out.mean[j] = mean[j];
        out.std_error[j] = units > 1.0 ? std::sqrt(m2[j] / (units - 1.0) / units) : 0.0;
    }
    return out;
}

inline void check_batch(const MixtureParams& p, const SampleBatch& batch) {
    if (batch.dim() != p.dim())
        throw DimensionError("batch has dimension " + std::to_string(batch.dim()) + ", mixture has " +
                             std::to_string(p.dim()));
    if (batch.size() == 0) throw PreconditionError("empty batch");
}

inline GradientEstimate to_gradient(const Moments& m, int n, int d) {
    GradientEstimate g;
    g.per_component = Eigen::Map<const Matrix>(m.mean.data(), n, d);
    g.std_error = Eigen::Map<const Matrix>(m.std_error.data(), n, d);
    g.sample_count = m.sample_count;
    return g;
}

}  // namespace detail

namespace detail {

// Second-order expansion of the log ratio around all-zero means,
//   h(x) = sum_i pi_i a_i + 1/2 Var_pi(a),
// and its exact expectation under N(0, I).
inline double taylor_control_mean(const MixtureParams& p) {
    const Vector& w = p.weights();
    const Vector half_sq = 0.5 * p.means().rowwise().squaredNorm();
    const Eigen::RowVectorXd bar = w.transpose() * p.means();
    const double s_bar = w.dot(half_sq);
    double var = 0.0;
    for (int i = 0; i < p.n_components(); ++i) {
        const double ds = half_sq[i] - s_bar;
        var += w[i] * ((p.means().row(i) - bar).squaredNorm() + ds * ds);
    }
    return -s_bar + 0.5 * var;
}

}  // namespace detail

/// KL(N(0,I) || p_mu) = -E[log p_mu(x) - log p_0(x)].
///
/// Two unbiased estimates are formed on the batch: the plain average, and
/// one that uses the second-order expansion h as a control variate (known
/// mean, coefficient 1). The one with the smaller standard error is
/// returned. Near convergence the loss is fourth order in the means while
/// the plain integrand fluctuates at second order, so the control variate
/// is what keeps late-trajectory losses resolvable.
inline ScalarEstimate estimate_loss(const MixtureParams& p, const SampleBatch& batch) {
    detail::check_batch(p, batch);
    const auto m = detail::reduce(batch, 2, [&] {
        return [ev = MixtureEvaluator(p), w = p.weights()](std::span<const double> x, std::span<double> out) mutable {
            ev.evaluate_exponents(x);
            const auto a = ev.exponents();
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) {
                s1 += w[static_cast<Eigen::Index>(i)] * a[i];
                s2 += w[static_cast<Eigen::Index>(i)] * a[i] * a[i];
            }
            const double r = ev.log_ratio();
            const double h = s1 + 0.5 * std::max(0.0, s2 - s1 * s1);
            out[0] = -r;
            out[1] = h - r;
        };
    });
    if (m.std_error[1] < m.std_error[0])
        return {m.mean[1] - detail::taylor_control_mean(p), m.std_error[1], m.sample_count};
    return {m.mean[0], m.std_error[0], m.sample_count};
}

/// Averages psi_i(x) (mu_i - x): the gradient EM integrand as written.
inline GradientEstimate estimate_gradient_direct(const MixtureParams& p, const SampleBatch& batch) {
    detail::check_batch(p, batch);
    const int n = p.n_components(), d = p.dim();
    const auto m = detail::reduce(batch, static_cast<std::size_t>(n * d), [&] {
        return [ev = MixtureEvaluator(p), n, d](std::span<const double> x, std::span<double> out) mutable {
            ev.evaluate(x);
            const auto psi = ev.psi();
            const double* mu = ev.params().means().data();
            for (int i = 0; i < n; ++i)
                for (int c = 0; c < d; ++c) out[i * d + c] = psi[i] * (mu[i * d + c] - x[c]);
        };
    });
    return detail::to_gradient(m, n, d);
}

/// Averages psi_i(x) psi_tilde(x), the Stein-transformed gradient.
inline GradientEstimate estimate_gradient_transformed(const MixtureParams& p, const SampleBatch& batch) {
    detail::check_batch(p, batch);
    const int n = p.n_components(), d = p.dim();
    const auto m = detail::reduce(batch, static_cast<std::size_t>(n * d), [&] {
        return [ev = MixtureEvaluator(p), pt = std::vector<double>(d), n, d](std::span<const double> x,
                                                                             std::span<double> out) mutable {
            ev.evaluate(x);
            ev.psi_tilde(pt);
            const auto psi = ev.psi();
            for (int i = 0; i < n; ++i)
                for (int c = 0; c < d; ++c) out[i * d + c] = psi[i] * pt[c];
        };
    });
    return detail::to_gradient(m, n, d);
}

/// E|psi_tilde(x)|^2, which equals <grad L, mu>.
inline ScalarEstimate estimate_psi_tilde_sqnorm(const MixtureParams& p, const SampleBatch& batch) {
    detail::check_batch(p, batch);
    const int d = p.dim();
    const auto m = detail::reduce(batch, 1, [&] {
        return [ev = MixtureEvaluator(p), pt = std::vector<double>(d)](std::span<const double> x,
                                                                       std::span<double> out) mutable {
            ev.evaluate(x);
            ev.psi_tilde(pt);
            double s = 0.0;
            for (double v : pt) s += v * v;
            out[0] = s;
        };
    });
    return {m.mean[0], m.std_error[0], m.sample_count};
}

/// Central differences of the per-sample loss in every mean coordinate,
/// all on the same batch (common random numbers).
inline GradientEstimate finite_difference_gradient(const MixtureParams& p, const SampleBatch& batch, double h = 1e-4) {
    require(h > 0.0, "finite-difference step must be positive");
    detail::check_batch(p, batch);
    const int n = p.n_components(), d = p.dim();
    const auto m = detail::reduce(batch, static_cast<std::size_t>(n * d), [&] {
        return [ev = MixtureEvaluator(p), shifted = std::vector<double>(n), n, d, h](std::span<const double> x,
                                                                                    std::span<double> out) mutable {
            ev.evaluate(x);
            const auto a = ev.exponents();
            const double* mu = ev.params().means().data();
            // a_i(mu_i + s e_c) = a_i + s (x_c - mu_ic) - s^2 / 2
            for (int i = 0; i < n; ++i) {
                for (int c = 0; c < d; ++c) {
                    std::copy(a.begin(), a.end(), shifted.begin());
                    const double lin = h * (x[c] - mu[i * d + c]);
                    shifted[i] = a[i] + lin - 0.5 * h * h;
                    const double up = -ev.log_ratio_for(shifted);
                    shifted[i] = a[i] - lin - 0.5 * h * h;
                    const double down = -ev.log_ratio_for(shifted);
                    out[i * d + c] = (up - down) / (2.0 * h);
                }
            }
        };
    });
    return detail::to_gradient(m, n, d);
}

/// E exp(c |x|), the moment generating function of the chi distribution.
inline ScalarEstimate estimate_mgf(int d, double c, const SampleBatch& batch) {
    require(c > 0.0, "MGF argument must be positive");
    if (batch.dim() != d) throw DimensionError("batch dimension does not match d");
    const auto m = detail::reduce(batch, 1, [&] {
        return [c](std::span<const double> x, std::span<double> out) {
            double s = 0.0;
            for (double v : x) s += v * v;
            out[0] = std::exp(c * std::sqrt(s));
        };
    });
    return {m.mean[0], m.std_error[0], m.sample_count};
}

/// E[psi_i(x) x - grad_x psi_i(x)], zero by Stein's identity.
inline VectorEstimate stein_residual(const MixtureParams& p, int component, const SampleBatch& batch) {
    require(component >= 0 && component < p.n_components(), "component index out of range");
    detail::check_batch(p, batch);
    const int d = p.dim();
    const auto m = detail::reduce(batch, static_cast<std::size_t>(d), [&] {
        return [ev = MixtureEvaluator(p), pt = std::vector<double>(d), component, d](std::span<const double> x,
                                                                                    std::span<double> out) mutable {
            ev.evaluate(x);
            ev.psi_tilde(pt);
            const double psi = ev.psi()[component];
            const double* mu = ev.params().means().data() + component * d;
            for (int c = 0; c < d; ++c) out[c] = psi * x[c] - psi * (mu[c] - pt[c]);
        };
    });
    VectorEstimate v;
    v.value = Eigen::Map<const Vector>(m.mean.data(), d);
    v.std_error = Eigen::Map<const Vector>(m.std_error.data(), d);
    v.sample_count = m.sample_count;
    return v;
}

/// Paired estimate of grad L(b) - grad L(a) (transformed form) on one batch.
inline GradientEstimate estimate_gradient_difference(const MixtureParams& a, const MixtureParams& b,
                                                     const SampleBatch& batch) {
    detail::check_batch(a, batch);
    detail::check_batch(b, batch);
    if (a.n_components() != b.n_components()) throw DimensionError("component counts differ");
    const int n = a.n_components(), d = a.dim();
    const auto m = detail::reduce(batch, static_cast<std::size_t>(n * d), [&] {
        return [ea = MixtureEvaluator(a), eb = MixtureEvaluator(b), pa = std::vector<double>(d),
                pb = std::vector<double>(d), n, d](std::span<const double> x, std::span<double> out) mutable {
            ea.evaluate(x);
            eb.evaluate(x);
            ea.psi_tilde(pa);
            eb.psi_tilde(pb);
            for (int i = 0; i < n; ++i)
                for (int c = 0; c < d; ++c) out[i * d + c] = eb.psi()[i] * pb[c] - ea.psi()[i] * pa[c];
        };
    });
    return detail::to_gradient(m, n, d);
}

/// Signature shared by the two unbiased gradient estimators.
using GradientEstimator = std::function<GradientEstimate(const MixtureParams&, const SampleBatch&)>;

}  // namespace gem
