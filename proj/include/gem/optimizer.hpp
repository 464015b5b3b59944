#pragma once

// The gradient EM loop. Population runs draw a fresh seeded batch per step
// (and a second, independent one for the logged loss); finite-sample runs
// iterate full-batch on one fixed dataset.

#include "gem/estimators.hpp"

#include <optional>
#include <vector>

namespace gem {

enum class GradientForm { Transformed, Direct };

struct RunConfig {
    MixtureParams initial_params;
    double step_size = 0.7;
    int max_steps = 2000;
    SamplePlan plan{};
    bool fresh_batch_per_step = true;
    int log_every = 1;
    GradientForm form = GradientForm::Transformed;
    /// Finite-sample runs stop once |grad|_F drops below this.
    double tolerance = 1e-6;

    void validate() const {
        require(step_size > 0.0 && std::isfinite(step_size), "step size must be positive");
        require(max_steps >= 1, "max_steps must be at least 1");
        require(log_every >= 1, "log_every must be at least 1");
        require(tolerance >= 0.0, "tolerance must be nonnegative");
        plan.validate();
    }
};

struct TrajectoryRecord {
    int step = 0;
    double loss = 0.0;
    double loss_se = 0.0;
    double grad_norm = 0.0;
    double grad_norm_se = 0.0;
    double potential_u = 0.0;
    double mu_max = 0.0;
    double param_error = 0.0;
    std::vector<double> comp_norms;
    /// Root-sum-square of the per-step Monte Carlo spread of U accumulated so far.
    double u_noise_band = 0.0;
    /// Component means at this step (kept for symmetry diagnostics).
    Matrix means;
};

struct TrajectoryLog {
    std::vector<TrajectoryRecord> records;
    MixtureParams final_params;
    int steps_taken = 0;
    bool converged = false;
    double param_error = 0.0;
};

/// mu_i <- mu_i - eta * grad_i. Throws NumericalError on a non-finite gradient.
inline MixtureParams em_step(const MixtureParams& p, const GradientEstimate& grad, double eta) {
    if (grad.per_component.rows() != p.n_components() || grad.per_component.cols() != p.dim())
        throw DimensionError("gradient shape does not match the mixture");
    require(eta > 0.0, "step size must be positive");
    if (!grad.per_component.allFinite()) throw NumericalError("non-finite gradient entry; aborting run");
    Matrix next = p.means() - eta * grad.per_component;
    if (!next.allFinite()) throw NumericalError("update produced non-finite means");
    return p.with_means(std::move(next));
}

namespace detail {

inline constexpr std::uint64_t kGradientStream = 1;
inline constexpr std::uint64_t kLossStream = 2;

inline TrajectoryRecord make_record(int t, const MixtureParams& p, const ScalarEstimate& loss,
                                    const GradientEstimate& g, double band) {
    TrajectoryRecord r;
    r.step = t;
    r.loss = loss.value;
    r.loss_se = loss.std_error;
    r.grad_norm = g.frobenius_norm();
    r.grad_norm_se = g.norm_std_error();
    r.potential_u = potential_u(p);
    r.mu_max = mu_max(p).value;
    r.param_error = parametric_error(p);
    r.comp_norms.resize(static_cast<std::size_t>(p.n_components()));
    for (int i = 0; i < p.n_components(); ++i) r.comp_norms[static_cast<std::size_t>(i)] = p.means().row(i).norm();
    r.u_noise_band = band;
    r.means = p.means();
    return r;
}

inline GradientEstimate gradient(GradientForm form, const MixtureParams& p, const SampleBatch& b) {
    return form == GradientForm::Transformed ? estimate_gradient_transformed(p, b) : estimate_gradient_direct(p, b);
}

// Standard deviation of the Monte Carlo error in the U increment, 2 eta <error, mu>.
inline double u_step_spread(const MixtureParams& p, const GradientEstimate& g, double eta) {
    return 2.0 * eta * (p.means().array() * g.std_error.array()).matrix().norm();
}

}  // namespace detail

/// Population gradient EM with Monte Carlo expectations. Logs step 0, every
/// log_every-th step, and the final step T.
inline TrajectoryLog run_population_gradient_em(const RunConfig& cfg) {
    cfg.validate();
    const int d = cfg.initial_params.dim();
    const auto batch_for = [&](std::uint64_t stream, int t) {
        const std::uint64_t s = cfg.fresh_batch_per_step ? derive_seed(cfg.plan.seed, stream, static_cast<std::uint64_t>(t))
                                                         : derive_seed(cfg.plan.seed, stream);
        return draw_standard_normal(d, cfg.plan.reseeded(s));
    };
    std::optional<SampleBatch> fixed_grad, fixed_loss;
    if (!cfg.fresh_batch_per_step) {
        fixed_grad = batch_for(detail::kGradientStream, 0);
        fixed_loss = batch_for(detail::kLossStream, 0);
    }

    TrajectoryLog log{{}, cfg.initial_params, 0, false, 0.0};
    MixtureParams params = cfg.initial_params;
    double band_sq = 0.0;
    for (int t = 0;; ++t) {
        const GradientEstimate g = fixed_grad ? detail::gradient(cfg.form, params, *fixed_grad)
                                              : detail::gradient(cfg.form, params, batch_for(detail::kGradientStream, t));
        if (t % cfg.log_every == 0 || t == cfg.max_steps) {
            const ScalarEstimate loss = fixed_loss ? estimate_loss(params, *fixed_loss)
                                                   : estimate_loss(params, batch_for(detail::kLossStream, t));
            log.records.push_back(detail::make_record(t, params, loss, g, std::sqrt(band_sq)));
        }
        if (t == cfg.max_steps) break;
        const double spread = detail::u_step_spread(params, g, cfg.step_size);
        band_sq += spread * spread;
        params = em_step(params, g, cfg.step_size);
    }
    log.steps_taken = cfg.max_steps;
    log.param_error = parametric_error(params);
    log.final_params = std::move(params);
    return log;
}

/// Full-batch gradient EM on a fixed dataset, using the direct
/// integrand, which is the exact gradient of the empirical objective.
/// Stops early once the gradient norm falls below cfg.tolerance.
inline TrajectoryLog run_sample_gradient_em(const RunConfig& cfg, const SampleBatch& dataset) {
    cfg.validate();
    require(!cfg.fresh_batch_per_step, "finite-sample runs need fresh_batch_per_step = false");
    detail::check_batch(cfg.initial_params, dataset);

    TrajectoryLog log{{}, cfg.initial_params, 0, false, 0.0};
    MixtureParams params = cfg.initial_params;
    for (int t = 0;; ++t) {
        const GradientEstimate g = detail::gradient(GradientForm::Direct, params, dataset);
        const bool done = g.frobenius_norm() < cfg.tolerance;
        if (t % cfg.log_every == 0 || t == cfg.max_steps || done)
            log.records.push_back(detail::make_record(t, params, estimate_loss(params, dataset), g, 0.0));
        if (done) {
            log.converged = true;
            log.steps_taken = t;
            break;
        }
        if (t == cfg.max_steps) {
            log.steps_taken = t;
            break;
        }
        params = em_step(params, g, cfg.step_size);
    }
    log.param_error = parametric_error(params);
    log.final_params = std::move(params);
    return log;
}

}  // namespace gem
