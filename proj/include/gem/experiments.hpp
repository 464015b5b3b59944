#pragma once

// Experiment drivers behind the command-line tool: spec parsing, the five
// experiments, and their CSV / JSON output. Numbers are printed with %.17g
// and every seed is derived from the spec, so rerunning a spec reproduces
// its output files byte for byte.

#include "gem/optimizer.hpp"
#include "gem/rate_fit.hpp"
#include "gem/theory.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>

namespace gem {

/// Malformed or inconsistent configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An output file or directory could not be written.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class ExperimentKind { Converge, Weights, BadInit, StatRate, Verify };

inline std::string to_string(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::Converge: return "converge";
        case ExperimentKind::Weights: return "weights";
        case ExperimentKind::BadInit: return "bad-init";
        case ExperimentKind::StatRate: return "stat-rate";
        case ExperimentKind::Verify: return "verify";
    }
    return "?";
}

inline ExperimentKind parse_kind(const std::string& s) {
    for (auto k : {ExperimentKind::Converge, ExperimentKind::Weights, ExperimentKind::BadInit, ExperimentKind::StatRate,
                   ExperimentKind::Verify})
        if (to_string(k) == s) return k;
    throw ConfigError("unknown experiment kind '" + s + "'");
}

struct WeightScheme {
    enum class Kind { Equal, Dirichlet, Explicit };
    Kind kind = Kind::Dirichlet;
    std::uint64_t seed = 0;
    double alpha = 1.0;
    std::vector<double> values;
};

struct InitScheme {
    enum class Kind { Gaussian, Explicit, BadRegion };
    Kind kind = Kind::Gaussian;
    double scale = 1.0;  ///< gaussian: entries are scale * N(0, 1)
    std::uint64_t seed = 0;
    std::vector<std::vector<double>> means;
    double constant = 2.0;  ///< bad_region: mu_1 = -mu_2 = constant sqrt(d) e_1
};

struct VerifySettings {
    std::vector<std::string> suites;  ///< empty means every suite
    int identity_instances = 50;
    int finite_difference_instances = 20;
    int projection_identity_instances = 100;
    int loss_bound_instances = 100;
    int projection_bound_instances = 100;
    int smoothness_instances = 50;
    int path_integral_instances = 100;
    int stein_instances = 50;
    std::vector<int> mgf_dims{1, 2, 5, 10, 20};
    std::vector<int> bad_region_dims{4, 6, 8};
    std::size_t large_samples = 1000000;
    std::size_t small_samples = 200000;
    int failures_per_100 = 1;
};

struct ExperimentSpec {
    ExperimentKind kind = ExperimentKind::Converge;
    int d = 5;
    int n = 5;
    double eta = 0.7;
    int steps = 2000;
    SamplePlan plan{};
    int log_every = 1;
    WeightScheme weights{};
    InitScheme init{};
    std::string out = ".";

    // converge
    std::optional<std::pair<double, double>> rate_window;
    // weights
    std::vector<std::vector<double>> weight_configs{
        {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0}, {1.0 / 6.0, 1.0 / 3.0, 1.0 / 2.0}, {0.05, 0.2, 0.75}};
    int repeats = 4;
    double threshold_fraction = 0.01;
    // bad-init
    std::vector<int> d_grid{2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
    int trajectory_d = 8;
    // stat-rate
    std::vector<std::size_t> sample_sizes{1000, 3000, 10000, 30000, 100000, 300000};
    int runs = 50;
    double tolerance = 1e-6;
    /// Optional cap on dataset rows x steps per run; a run on N rows then
    /// stops after min(steps, floor(step_budget / N)) steps.
    std::optional<double> step_budget;
    // verify
    VerifySettings verify{};

    void validate() const {
        const auto check = [](bool ok, const std::string& msg) {
            if (!ok) throw ConfigError(msg);
        };
        check(d >= 1, "d must be positive");
        check(n >= 1, "n must be positive");
        check(eta > 0.0 && std::isfinite(eta), "eta must be positive");
        check(steps >= 1, "steps must be at least 1");
        check(log_every >= 1, "log_every must be at least 1");
        check(plan.sample_count >= 1, "samples must be positive");
        check(!plan.antithetic || plan.sample_count % 2 == 0, "antithetic sampling needs an even sample count");
        check(plan.chunk_size >= 1, "chunk_size must be positive");
        check(repeats >= 1, "repeats must be positive");
        check(runs >= 1, "runs must be positive");
        check(tolerance >= 0.0, "tolerance must be nonnegative");
        check(threshold_fraction > 0.0 && threshold_fraction < 1.0, "threshold_fraction must lie in (0, 1)");
        check(!weight_configs.empty(), "weight_configs must not be empty");
        check(!d_grid.empty(), "d_grid must not be empty");
        for (int v : d_grid) check(v >= 1, "d_grid entries must be positive");
        check(trajectory_d >= 1, "trajectory_d must be positive");
        check(sample_sizes.size() >= 2, "sample_sizes needs at least two entries");
        for (auto v : sample_sizes) check(v >= 1, "sample_sizes entries must be positive");
        if (step_budget) check(*step_budget >= 1.0, "step_budget must be at least 1");
        if (rate_window) check(rate_window->first > 0.0 && rate_window->first < rate_window->second, "bad rate_window");
    }
};

/// Per-kind defaults. Convergence runs use d=5, eta=0.7, 3.5e5 samples;
/// bad-init and weights use three components, stat-rate uses equal weights.
inline ExperimentSpec default_spec(ExperimentKind kind) {
    ExperimentSpec s;
    s.kind = kind;
    switch (kind) {
        case ExperimentKind::Converge: break;
        case ExperimentKind::Weights:
            s.n = 3;
            s.steps = 600;
            break;
        case ExperimentKind::BadInit:
            s.n = 3;
            s.steps = 500;
            s.init.kind = InitScheme::Kind::BadRegion;
            s.weights.kind = WeightScheme::Kind::Equal;
            break;
        case ExperimentKind::StatRate:
            s.n = 5;
            s.steps = 20000;
            s.weights.kind = WeightScheme::Kind::Equal;
            s.plan.antithetic = false;
            break;
        case ExperimentKind::Verify: break;
    }
    return s;
}

// ---------------------------------------------------------------------------
// JSON config

namespace detail {

using nlohmann::json;

inline void reject_unknown_keys(const json& j, const std::set<std::string>& known, const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

template <class T>
void read_opt(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

inline void parse_weights(const json& j, WeightScheme& w) {
    if (!j.is_object()) throw ConfigError("weights must be an object");
    reject_unknown_keys(j, {"scheme", "seed", "alpha", "values"}, "weights");
    const std::string scheme = j.value("scheme", std::string("dirichlet"));
    if (scheme == "equal") w.kind = WeightScheme::Kind::Equal;
    else if (scheme == "dirichlet") w.kind = WeightScheme::Kind::Dirichlet;
    else if (scheme == "explicit") w.kind = WeightScheme::Kind::Explicit;
    else throw ConfigError("unknown weight scheme '" + scheme + "'");
    read_opt(j, "seed", w.seed);
    read_opt(j, "alpha", w.alpha);
    read_opt(j, "values", w.values);
}

inline void parse_init(const json& j, InitScheme& s) {
    if (!j.is_object()) throw ConfigError("init must be an object");
    reject_unknown_keys(j, {"scheme", "scale", "seed", "means", "constant"}, "init");
    const std::string scheme = j.value("scheme", std::string("gaussian"));
    if (scheme == "gaussian") s.kind = InitScheme::Kind::Gaussian;
    else if (scheme == "explicit") s.kind = InitScheme::Kind::Explicit;
    else if (scheme == "bad_region") s.kind = InitScheme::Kind::BadRegion;
    else throw ConfigError("unknown init scheme '" + scheme + "'");
    read_opt(j, "scale", s.scale);
    read_opt(j, "seed", s.seed);
    read_opt(j, "means", s.means);
    read_opt(j, "constant", s.constant);
}

inline void parse_verify(const json& j, VerifySettings& v) {
    if (!j.is_object()) throw ConfigError("verify must be an object");
    reject_unknown_keys(j,
                        {"suites", "identity_instances", "finite_difference_instances", "projection_identity_instances",
                         "loss_bound_instances", "projection_bound_instances", "smoothness_instances",
                         "path_integral_instances", "stein_instances", "mgf_dims", "bad_region_dims", "large_samples",
                         "small_samples", "failures_per_100"},
                        "verify");
    read_opt(j, "suites", v.suites);
    read_opt(j, "identity_instances", v.identity_instances);
    read_opt(j, "finite_difference_instances", v.finite_difference_instances);
    read_opt(j, "projection_identity_instances", v.projection_identity_instances);
    read_opt(j, "loss_bound_instances", v.loss_bound_instances);
    read_opt(j, "projection_bound_instances", v.projection_bound_instances);
    read_opt(j, "smoothness_instances", v.smoothness_instances);
    read_opt(j, "path_integral_instances", v.path_integral_instances);
    read_opt(j, "stein_instances", v.stein_instances);
    read_opt(j, "mgf_dims", v.mgf_dims);
    read_opt(j, "bad_region_dims", v.bad_region_dims);
    read_opt(j, "large_samples", v.large_samples);
    read_opt(j, "small_samples", v.small_samples);
    read_opt(j, "failures_per_100", v.failures_per_100);
}

}  // namespace detail

/// Applies a JSON object onto `base`. Keys mirror the ExperimentSpec field
/// names; unknown keys and type mismatches raise ConfigError.
inline ExperimentSpec apply_config(ExperimentSpec base, const nlohmann::json& j) {
    using detail::read_opt;
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    try {
        detail::reject_unknown_keys(
            j,
            {"kind", "d", "n", "eta", "steps", "samples", "seed", "antithetic", "chunk_size", "log_every", "weights",
             "init", "out", "rate_window", "weight_configs", "repeats", "threshold_fraction", "d_grid", "trajectory_d",
             "sample_sizes", "runs", "tolerance", "step_budget", "verify"},
            "config");
        if (j.contains("kind") && parse_kind(j.at("kind").get<std::string>()) != base.kind)
            throw ConfigError("config kind '" + j.at("kind").get<std::string>() + "' does not match '" +
                              to_string(base.kind) + "'");
        read_opt(j, "d", base.d);
        read_opt(j, "n", base.n);
        read_opt(j, "eta", base.eta);
        read_opt(j, "steps", base.steps);
        read_opt(j, "samples", base.plan.sample_count);
        read_opt(j, "seed", base.plan.seed);
        read_opt(j, "antithetic", base.plan.antithetic);
        read_opt(j, "chunk_size", base.plan.chunk_size);
        read_opt(j, "log_every", base.log_every);
        read_opt(j, "out", base.out);
        if (j.contains("weights")) detail::parse_weights(j.at("weights"), base.weights);
        if (j.contains("init")) detail::parse_init(j.at("init"), base.init);
        if (j.contains("rate_window")) {
            const auto w = j.at("rate_window").get<std::vector<double>>();
            if (w.size() != 2) throw ConfigError("rate_window needs exactly two numbers");
            base.rate_window = std::pair{w[0], w[1]};
        }
        read_opt(j, "weight_configs", base.weight_configs);
        read_opt(j, "repeats", base.repeats);
        read_opt(j, "threshold_fraction", base.threshold_fraction);
        read_opt(j, "d_grid", base.d_grid);
        read_opt(j, "trajectory_d", base.trajectory_d);
        read_opt(j, "sample_sizes", base.sample_sizes);
        read_opt(j, "runs", base.runs);
        read_opt(j, "tolerance", base.tolerance);
        if (j.contains("step_budget")) base.step_budget = j.at("step_budget").get<double>();
        if (j.contains("verify")) detail::parse_verify(j.at("verify"), base.verify);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return base;
}

inline ExperimentSpec load_config(ExperimentKind kind, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("cannot parse " + path.string() + ": " + e.what());
    }
    return apply_config(default_spec(kind), j);
}

// ---------------------------------------------------------------------------
// Building parameters from a spec

inline Vector mixture_weights(const WeightScheme& w, int n) {
    switch (w.kind) {
        case WeightScheme::Kind::Equal: return Vector::Constant(n, 1.0 / n);
        case WeightScheme::Kind::Dirichlet: return draw_dirichlet_weights(n, w.alpha, w.seed);
        case WeightScheme::Kind::Explicit:
            if (static_cast<int>(w.values.size()) != n)
                throw ConfigError("explicit weights have " + std::to_string(w.values.size()) + " entries, n = " +
                                  std::to_string(n));
            return Eigen::Map<const Vector>(w.values.data(), n);
    }
    return {};
}

/// mu_1 = c sqrt(d) e_1, mu_2 = -mu_1, all other means zero.
inline Matrix bad_region_means(int d, int n, double c) {
    require(n >= 2, "bad-region initialization needs at least two components");
    Matrix mu = Matrix::Zero(n, d);
    mu(0, 0) = c * std::sqrt(static_cast<double>(d));
    mu(1, 0) = -mu(0, 0);
    return mu;
}

/// Initial means for run `repeat`; gaussian draws are keyed on (init.seed, repeat).
inline Matrix initial_means(const InitScheme& s, int d, int n, std::uint64_t repeat = 0) {
    switch (s.kind) {
        case InitScheme::Kind::Gaussian: {
            Matrix mu(n, d);
            SplitMix64 gen(derive_seed(s.seed, 0x1417ULL, repeat));
            std::vector<double> row(static_cast<std::size_t>(d));
            for (int i = 0; i < n; ++i) {
                detail::fill_normals(gen, row.data(), d);
                for (int c = 0; c < d; ++c) mu(i, c) = s.scale * row[static_cast<std::size_t>(c)];
            }
            return mu;
        }
        case InitScheme::Kind::Explicit: {
            if (static_cast<int>(s.means.size()) != n) throw ConfigError("explicit means need n rows");
            Matrix mu(n, d);
            for (int i = 0; i < n; ++i) {
                if (static_cast<int>(s.means[static_cast<std::size_t>(i)].size()) != d)
                    throw ConfigError("explicit means need d columns");
                for (int c = 0; c < d; ++c) mu(i, c) = s.means[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
            }
            return mu;
        }
        case InitScheme::Kind::BadRegion: return bad_region_means(d, n, s.constant);
    }
    return {};
}

inline MixtureParams initial_params(const ExperimentSpec& s, int d, std::uint64_t repeat = 0) {
    try {
        return {mixture_weights(s.weights, s.n), initial_means(s.init, d, s.n, repeat)};
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

inline RunConfig run_config(const ExperimentSpec& s, MixtureParams init) {
    RunConfig cfg{std::move(init)};
    cfg.step_size = s.eta;
    cfg.max_steps = s.steps;
    cfg.plan = s.plan;
    cfg.log_every = s.log_every;
    cfg.tolerance = s.tolerance;
    return cfg;
}

// ---------------------------------------------------------------------------
// Output

namespace detail {

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    return out;
}

inline void finish(std::ofstream& out, const std::filesystem::path& path) {
    out.flush();
    if (!out) throw IoError("write to " + path.string() + " failed");
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    auto out = open_output(path);
    out << j.dump(2) << '\n';
    finish(out, path);
}

}  // namespace detail

inline constexpr const char* kTrajectoryHeader = "step,loss,loss_se,grad_norm,potential_u,mu_max,comp_norms";
inline constexpr const char* kGradientHeader = "d,grad_norm,grad_norm_se";
inline constexpr const char* kStatHeader = "sample_size,mean_param_error,std_param_error,runs";

inline void write_trajectory_csv(const std::filesystem::path& path, const TrajectoryLog& log) {
    auto out = detail::open_output(path);
    out << kTrajectoryHeader << '\n';
    for (const auto& r : log.records) {
        out << r.step << ',' << detail::num(r.loss) << ',' << detail::num(r.loss_se) << ',' << detail::num(r.grad_norm)
            << ',' << detail::num(r.potential_u) << ',' << detail::num(r.mu_max) << ',';
        for (std::size_t i = 0; i < r.comp_norms.size(); ++i) out << (i ? ";" : "") << detail::num(r.comp_norms[i]);
        out << '\n';
    }
    detail::finish(out, path);
}

/// A rate fit, or the reason none could be made.
struct FitOutcome {
    bool applicable = false;
    RateFit fit{};
    std::string reason;
};

inline nlohmann::json to_json(const FitOutcome& f) {
    nlohmann::json j{{"applicable", f.applicable}};
    if (f.applicable) {
        j["slope"] = f.fit.slope;
        j["intercept"] = f.fit.intercept;
        j["r_squared"] = f.fit.r_squared;
        j["window"] = {f.fit.window.first, f.fit.window.second};
        j["points"] = f.fit.points;
    } else {
        j["reason"] = f.reason;
    }
    return j;
}

/// fit_rate, reporting precondition failures (values not bounded away
/// from zero, too few points) as not-applicable instead of throwing.
inline FitOutcome try_fit_rate(const std::vector<std::pair<double, double>>& series, std::pair<double, double> window) {
    try {
        return {true, fit_rate(series, window), {}};
    } catch (const PreconditionError& e) {
        return {false, {}, e.what()};
    }
}

inline nlohmann::json to_json(const BoundReport& r) {
    return {{"name", r.name},     {"lhs", r.lhs},           {"rhs", r.rhs},
            {"slack", r.slack},   {"satisfied", r.satisfied}, {"tolerance", r.tolerance}};
}

// ---------------------------------------------------------------------------
// converge

struct ConvergenceResult {
    TrajectoryLog log;
    FitOutcome loss_fit;
    FitOutcome param_fit;
    int comparisons = 0;
    int monotone_violations = 0;  ///< L(t') > L(t) + 3 sqrt(se_t^2 + se_t'^2)
    double max_potential_excess = 0.0;  ///< max_t (U(t) - U(0)) / band(t); 0 when U never rises
    std::filesystem::path csv, summary;
};

/// Counts consecutive logged losses that rise by more than 3 combined SEs.
inline std::pair<int, int> count_monotone_violations(const TrajectoryLog& log) {
    int cmp = 0, bad = 0;
    for (std::size_t k = 1; k < log.records.size(); ++k) {
        const auto& a = log.records[k - 1];
        const auto& b = log.records[k];
        ++cmp;
        if (b.loss > a.loss + 3.0 * std::hypot(a.loss_se, b.loss_se)) ++bad;
    }
    return {cmp, bad};
}

/// Largest U(t) - U(0) in units of the accumulated noise band; a value
/// above 5 breaks the potential bound.
inline double potential_excess(const TrajectoryLog& log) {
    if (log.records.empty()) return 0.0;
    const double u0 = log.records.front().potential_u;
    double worst = 0.0;
    for (const auto& r : log.records) {
        const double rise = r.potential_u - u0;
        if (rise <= 0.0) continue;
        worst = std::max(worst, r.u_noise_band > 0.0 ? rise / r.u_noise_band : std::numeric_limits<double>::infinity());
    }
    return worst;
}

inline ConvergenceResult run_convergence_experiment(const ExperimentSpec& spec) {
    spec.validate();
    ConvergenceResult res{run_population_gradient_em(run_config(spec, initial_params(spec, spec.d)))};

    std::vector<std::pair<double, double>> loss, param;
    for (const auto& r : res.log.records) {
        loss.emplace_back(r.step, r.loss);
        param.emplace_back(r.step, r.param_error);
    }
    const auto window = spec.rate_window.value_or(default_rate_window(spec.steps));
    res.loss_fit = try_fit_rate(loss, window);
    res.param_fit = try_fit_rate(param, window);
    std::tie(res.comparisons, res.monotone_violations) = count_monotone_violations(res.log);
    res.max_potential_excess = potential_excess(res.log);

    const std::filesystem::path dir(spec.out);
    const std::string stem = "converge_n" + std::to_string(spec.n);
    res.csv = dir / (stem + ".csv");
    res.summary = dir / (stem + ".json");
    write_trajectory_csv(res.csv, res.log);
    const auto& last = res.log.records.back();
    detail::write_json(res.summary, {{"kind", "converge"},
                                     {"d", spec.d},
                                     {"n", spec.n},
                                     {"eta", spec.eta},
                                     {"steps", spec.steps},
                                     {"samples", spec.plan.sample_count},
                                     {"seed", spec.plan.seed},
                                     {"weights", std::vector<double>(res.log.final_params.weights().data(),
                                                                     res.log.final_params.weights().data() + spec.n)},
                                     {"loss_fit", to_json(res.loss_fit)},
                                     {"param_fit", to_json(res.param_fit)},
                                     {"final_loss", last.loss},
                                     {"final_param_error", last.param_error},
                                     {"comparisons", res.comparisons},
                                     {"monotone_violations", res.monotone_violations},
                                     {"max_potential_excess", res.max_potential_excess}});
    return res;
}

// ---------------------------------------------------------------------------
// weights

struct WeightsResult {
    std::vector<std::vector<double>> configs;
    /// [config][repeat] first logged step with loss <= fraction * L(0), or -1.
    std::vector<std::vector<int>> steps_to_threshold;
    /// Mean over repeats; unreached repeats count as steps + 1.
    std::vector<double> mean_steps;
    bool all_reached = true;
    std::vector<std::filesystem::path> csvs;
    std::filesystem::path summary;
};

inline WeightsResult run_weights_experiment(const ExperimentSpec& spec) {
    spec.validate();
    if (spec.n != 3) throw ConfigError("the weights experiment needs n = 3");
    for (const auto& w : spec.weight_configs)
        if (w.size() != 3) throw ConfigError("every weight configuration needs 3 entries");

    WeightsResult res;
    res.configs = spec.weight_configs;
    const std::filesystem::path dir(spec.out);
    nlohmann::json configs = nlohmann::json::array();
    for (std::size_t c = 0; c < spec.weight_configs.size(); ++c) {
        std::vector<int> hits;
        double total = 0.0;
        for (int r = 0; r < spec.repeats; ++r) {
            ExperimentSpec s = spec;
            s.weights = {WeightScheme::Kind::Explicit, 0, 1.0, spec.weight_configs[c]};
            // init and Monte Carlo streams depend on the repeat only, so every
            // configuration starts from the same means and sees the same draws
            s.plan.seed = derive_seed(spec.plan.seed, static_cast<std::uint64_t>(r));
            const TrajectoryLog log = run_population_gradient_em(
                run_config(s, initial_params(s, s.d, static_cast<std::uint64_t>(r))));
            const double target = spec.threshold_fraction * log.records.front().loss;
            int hit = -1;
            for (const auto& rec : log.records)
                if (rec.loss <= target) {
                    hit = rec.step;
                    break;
                }
            if (hit < 0) res.all_reached = false;
            hits.push_back(hit);
            total += hit < 0 ? spec.steps + 1 : hit;
            const auto path = dir / ("weights_c" + std::to_string(c) + "_r" + std::to_string(r) + ".csv");
            write_trajectory_csv(path, log);
            res.csvs.push_back(path);
        }
        res.mean_steps.push_back(total / spec.repeats);
        configs.push_back({{"weights", spec.weight_configs[c]},
                           {"steps_to_threshold", hits},
                           {"mean_steps", res.mean_steps.back()}});
        res.steps_to_threshold.push_back(std::move(hits));
    }
    res.summary = dir / "weights.json";
    detail::write_json(res.summary, {{"kind", "weights"},
                                     {"d", spec.d},
                                     {"eta", spec.eta},
                                     {"steps", spec.steps},
                                     {"samples", spec.plan.sample_count},
                                     {"threshold_fraction", spec.threshold_fraction},
                                     {"repeats", spec.repeats},
                                     {"configs", configs},
                                     {"all_reached", res.all_reached}});
    return res;
}

// ---------------------------------------------------------------------------
// bad-init

struct BadInitResult {
    /// Run from the bad point at trajectory_d.
    TrajectoryLog trajectory;
    std::vector<int> dims;
    std::vector<double> grad_norm, grad_norm_se;
    /// Least squares of log(grad_norm) against d.
    FitOutcome fit;
    double min_norm_ratio = 1.0;  ///< min_t |mu_1(t)| / |mu_1(0)|
    int first_below_half = -1;    ///< first logged step with ratio < 1/2
    double max_symmetry_error = 0.0;  ///< max_t |mu_1 + mu_2| / |mu_1|
    double max_rest_ratio = 0.0;      ///< max_t max_{i>=3} |mu_i| / mu_max
    double horizon = 0.0;
    std::filesystem::path grad_csv, trajectory_csv, summary;
};

inline BadInitResult run_bad_init_experiment(const ExperimentSpec& spec) {
    spec.validate();
    if (spec.n < 3) throw ConfigError("the bad-init experiment needs n >= 3");
    if (spec.init.kind != InitScheme::Kind::BadRegion) throw ConfigError("the bad-init experiment needs init bad_region");
    const int d = spec.trajectory_d;
    BadInitResult res{run_population_gradient_em(run_config(spec, initial_params(spec, d)))};
    const std::filesystem::path dir(spec.out);

    // part A: gradient norm at the bad point across dimensions
    for (int d : spec.d_grid) {
        const MixtureParams p = initial_params(spec, d);
        const SampleBatch batch = draw_standard_normal(d, spec.plan.reseeded(derive_seed(spec.plan.seed, 0xA11ULL, d)));
        const GradientEstimate g = estimate_gradient_transformed(p, batch);
        res.dims.push_back(d);
        res.grad_norm.push_back(g.frobenius_norm());
        res.grad_norm_se.push_back(g.norm_std_error());
    }
    {
        std::vector<double> x, y;
        bool ok = true;
        for (std::size_t k = 0; k < res.dims.size(); ++k) {
            if (!(res.grad_norm[k] > 0.0)) ok = false;
            x.push_back(res.dims[k]);
            y.push_back(ok ? std::log(res.grad_norm[k]) : 0.0);
        }
        if (!ok) res.fit = {false, {}, "gradient norm is zero at some d"};
        else if (x.size() < 2) res.fit = {false, {}, "d_grid needs at least two entries"};
        else res.fit = {true, fit_line(x, y), {}};
    }
    res.grad_csv = dir / "bad_init_grad.csv";
    {
        auto out = detail::open_output(res.grad_csv);
        out << kGradientHeader << '\n';
        for (std::size_t k = 0; k < res.dims.size(); ++k)
            out << res.dims[k] << ',' << detail::num(res.grad_norm[k]) << ',' << detail::num(res.grad_norm_se[k]) << '\n';
        detail::finish(out, res.grad_csv);
    }

    // part B: summarize the run from the bad point
    res.horizon = trap_horizon(d, spec.eta);
    const double n0 = res.trajectory.records.front().means.row(0).norm();
    for (const auto& r : res.trajectory.records) {
        const double n1 = r.means.row(0).norm();
        const double ratio = n1 / n0;
        res.min_norm_ratio = std::min(res.min_norm_ratio, ratio);
        if (ratio < 0.5 && res.first_below_half < 0) res.first_below_half = r.step;
        const double sym = (r.means.row(0) + r.means.row(1)).norm();
        res.max_symmetry_error = std::max(res.max_symmetry_error, n1 > 0.0 ? sym / n1 : sym);
        for (int i = 2; i < spec.n; ++i)
            res.max_rest_ratio = std::max(res.max_rest_ratio, r.mu_max > 0.0 ? r.means.row(i).norm() / r.mu_max : 0.0);
    }
    res.trajectory_csv = dir / ("bad_init_traj_d" + std::to_string(d) + ".csv");
    write_trajectory_csv(res.trajectory_csv, res.trajectory);

    res.summary = dir / "bad_init.json";
    detail::write_json(res.summary, {{"kind", "bad-init"},
                                     {"n", spec.n},
                                     {"constant", spec.init.constant},
                                     {"eta", spec.eta},
                                     {"samples", spec.plan.sample_count},
                                     {"antithetic", spec.plan.antithetic},
                                     {"grad_fit", to_json(res.fit)},
                                     {"trajectory_d", d},
                                     {"steps", spec.steps},
                                     {"trap_horizon", res.horizon},
                                     {"min_norm_ratio", res.min_norm_ratio},
                                     {"first_below_half", res.first_below_half},
                                     {"max_symmetry_error", res.max_symmetry_error},
                                     {"max_rest_ratio", res.max_rest_ratio}});
    return res;
}

// ---------------------------------------------------------------------------
// stat-rate

struct StatRateResult {
    std::vector<std::size_t> sizes;
    std::vector<double> mean_error, std_error;
    std::vector<int> converged;  ///< runs per size that met the tolerance
    std::vector<double> mean_steps;
    /// Least squares of log(mean error) against log(size).
    FitOutcome fit;
    std::filesystem::path csv, summary;
};

/// Datasets are always drawn without antithetic pairing; a paired dataset
/// would have an exactly zero empirical mean.
inline StatRateResult run_stat_rate_experiment(const ExperimentSpec& spec) {
    spec.validate();
    StatRateResult res;
    for (std::size_t k = 0; k < spec.sample_sizes.size(); ++k) {
        const std::size_t size = spec.sample_sizes[k];
        std::vector<double> errs;
        int conv = 0;
        double steps = 0.0;
        for (int r = 0; r < spec.runs; ++r) {
            SamplePlan plan = spec.plan;
            plan.sample_count = size;
            plan.antithetic = false;
            plan.seed = derive_seed(spec.plan.seed, k, static_cast<std::uint64_t>(r));
            const SampleBatch data = draw_standard_normal(spec.d, plan);
            RunConfig cfg = run_config(spec, initial_params(spec, spec.d, static_cast<std::uint64_t>(r)));
            cfg.plan = plan;
            cfg.fresh_batch_per_step = false;
            if (spec.step_budget)
                cfg.max_steps = std::max(1, static_cast<int>(std::min<double>(spec.steps, *spec.step_budget / size)));
            cfg.log_every = cfg.max_steps;
            const TrajectoryLog log = run_sample_gradient_em(cfg, data);
            errs.push_back(log.param_error);
            conv += log.converged ? 1 : 0;
            steps += log.steps_taken;
        }
        double mean = 0.0;
        for (double e : errs) mean += e;
        mean /= static_cast<double>(errs.size());
        double var = 0.0;
        for (double e : errs) var += (e - mean) * (e - mean);
        res.sizes.push_back(size);
        res.mean_error.push_back(mean);
        res.std_error.push_back(errs.size() > 1 ? std::sqrt(var / static_cast<double>(errs.size() - 1)) : 0.0);
        res.converged.push_back(conv);
        res.mean_steps.push_back(steps / spec.runs);
    }
    std::vector<double> lx, ly;
    bool ok = true;
    for (std::size_t k = 0; k < res.sizes.size(); ++k) {
        if (!(res.mean_error[k] > 0.0)) ok = false;
        lx.push_back(std::log(static_cast<double>(res.sizes[k])));
        ly.push_back(ok ? std::log(res.mean_error[k]) : 0.0);
    }
    res.fit = ok ? FitOutcome{true, fit_line(lx, ly), {}} : FitOutcome{false, {}, "zero mean error at some size"};

    const std::filesystem::path dir(spec.out);
    res.csv = dir / "stat_rate.csv";
    {
        auto out = detail::open_output(res.csv);
        out << kStatHeader << '\n';
        for (std::size_t k = 0; k < res.sizes.size(); ++k)
            out << res.sizes[k] << ',' << detail::num(res.mean_error[k]) << ',' << detail::num(res.std_error[k]) << ','
                << spec.runs << '\n';
        detail::finish(out, res.csv);
    }
    res.summary = dir / "stat_rate.json";
    detail::write_json(res.summary, {{"kind", "stat-rate"},
                                     {"d", spec.d},
                                     {"n", spec.n},
                                     {"eta", spec.eta},
                                     {"max_steps", spec.steps},
                                     {"step_budget", spec.step_budget ? nlohmann::json(*spec.step_budget) : nlohmann::json()},
                                     {"tolerance", spec.tolerance},
                                     {"runs", spec.runs},
                                     {"fit", to_json(res.fit)},
                                     {"converged", res.converged},
                                     {"mean_steps", res.mean_steps}});
    return res;
}

// ---------------------------------------------------------------------------
// verify

struct SuiteSummary {
    std::string name;
    int instances = 0;
    int failures = 0;
    int allowed = 0;
    bool passed = true;
};

struct VerifyResult {
    std::vector<BoundReport> reports;
    std::vector<SuiteSummary> suites;
    bool all_passed = true;
    std::filesystem::path report;
};

/// Test seam: the transformed-gradient estimator used by the identity suites.
struct VerifyHooks {
    GradientEstimator transformed = estimate_gradient_transformed;
};

inline const std::vector<std::string>& verify_suite_names() {
    static const std::vector<std::string> names{
        "gradient_identity", "finite_difference", "projection_identity", "loss_upper_bound",    "projection_lower_bound",
        "smoothness",        "mgf_bound",         "path_integral",       "stein",               "bad_region_gradient"};
    return names;
}

namespace detail {

struct InstanceShape {
    int max_n;
    int max_d;
    double max_norm;
};

inline int int_draw(SplitMix64& gen, int lo, int hi) {
    return lo + static_cast<int>(gen.uniform() * (hi - lo + 1));
}

/// Random direction scaled to a uniform norm in [0, radius].
inline Vector random_vector(SplitMix64& gen, int d, double radius) {
    Vector v(d);
    detail::fill_normals(gen, v.data(), d);
    const double len = v.norm();
    return len > 0.0 ? Vector(v * (radius * gen.uniform() / len)) : Vector::Zero(d);
}

inline MixtureParams random_instance(SplitMix64& gen, const InstanceShape& s) {
    const int n = int_draw(gen, 1, s.max_n);
    const int d = int_draw(gen, 1, s.max_d);
    Matrix mu(n, d);
    for (int i = 0; i < n; ++i) mu.row(i) = random_vector(gen, d, s.max_norm).transpose();
    return {draw_dirichlet_weights(n, 1.0, gen()), std::move(mu)};
}

inline SamplePlan plan_for(const SamplePlan& base, std::size_t samples, std::uint64_t seed) {
    SamplePlan p = base;
    p.sample_count = samples + (p.antithetic ? samples % 2 : 0);
    p.seed = seed;
    return p;
}

}  // namespace detail

/// Runs the selected theory suites. Instances are drawn from seeds derived
/// from (spec seed, suite, instance). A suite passes when at most
/// floor(instances * failures_per_100 / 100) instances fail.
inline VerifyResult run_verify_suite(const ExperimentSpec& spec, const VerifyHooks& hooks = {}) {
    const VerifySettings& v = spec.verify;
    for (const auto& s : v.suites)
        if (std::find(verify_suite_names().begin(), verify_suite_names().end(), s) == verify_suite_names().end())
            throw ConfigError("unknown verify suite '" + s + "'");
    const auto selected = [&](const std::string& name) {
        return v.suites.empty() || std::find(v.suites.begin(), v.suites.end(), name) != v.suites.end();
    };
    for (int c : {v.identity_instances, v.finite_difference_instances, v.projection_identity_instances,
                  v.loss_bound_instances, v.projection_bound_instances, v.smoothness_instances,
                  v.path_integral_instances, v.stein_instances})
        require(c >= 1, "verify instance counts must be positive");
    require(!v.mgf_dims.empty() && !v.bad_region_dims.empty(), "verify dimension grids must not be empty");
    require(v.large_samples >= 2 && v.small_samples >= 2, "verify sample counts must be at least 2");
    require(v.failures_per_100 >= 0, "failures_per_100 must be nonnegative");

    VerifyResult res;
    std::uint64_t suite_id = 0;
    // Each instance appends its reports; the instance fails if any report does.
    const auto run_suite = [&](const std::string& name, int instances, auto&& body) {
        ++suite_id;
        if (!selected(name)) return;
        SuiteSummary sum{name, instances, 0, instances * v.failures_per_100 / 100, true};
        for (int k = 0; k < instances; ++k) {
            SplitMix64 gen(derive_seed(spec.plan.seed, suite_id, static_cast<std::uint64_t>(k)));
            std::vector<BoundReport> reps = body(gen, k);
            bool ok = true;
            for (auto& r : reps) {
                ok = ok && r.satisfied;
                r.name = name + "/" + std::to_string(k) + "/" + r.name;
                res.reports.push_back(std::move(r));
            }
            if (!ok) ++sum.failures;
        }
        sum.passed = sum.failures <= sum.allowed;
        res.all_passed = res.all_passed && sum.passed;
        res.suites.push_back(sum);
    };

    run_suite("gradient_identity", v.identity_instances, [&](SplitMix64& gen, int) {
        const MixtureParams p = detail::random_instance(gen, {5, 10, 3.0});
        const SampleBatch a = draw_standard_normal(p.dim(), detail::plan_for(spec.plan, v.large_samples, gen()));
        const SampleBatch b = draw_standard_normal(p.dim(), detail::plan_for(spec.plan, v.large_samples, gen()));
        const GradientEstimate gd = estimate_gradient_direct(p, a);
        const GradientEstimate gt = hooks.transformed(p, b);
        // worst entry in units of the combined standard error. With n = 1 both
        // forms are exact and the SEs are pure rounding, so the SE gets a
        // floor of 1e-12 relative to the entry.
        double worst = 0.0;
        for (Eigen::Index e = 0; e < gd.per_component.size(); ++e) {
            const double x = gd.per_component.data()[e], y = gt.per_component.data()[e];
            const double diff = std::abs(x - y);
            const double se = std::hypot(gd.std_error.data()[e], gt.std_error.data()[e]) +
                              1e-12 * std::max(std::abs(x), std::abs(y));
            worst = std::max(worst, se > 0.0 ? diff / se : (diff > 0.0 ? std::numeric_limits<double>::infinity() : 0.0));
        }
        return std::vector{BoundReport::make("max_z", worst, 4.0, 0.0)};
    });

    run_suite("finite_difference", v.finite_difference_instances, [&](SplitMix64& gen, int) {
        const MixtureParams p = detail::random_instance(gen, {5, 10, 3.0});
        const SampleBatch batch = draw_standard_normal(p.dim(), detail::plan_for(spec.plan, v.large_samples, gen()));
        const GradientEstimate fd = finite_difference_gradient(p, batch, 1e-4);
        const GradientEstimate gt = hooks.transformed(p, batch);
        return std::vector{
            BoundReport::make("max_abs_error", (fd.per_component - gt.per_component).cwiseAbs().maxCoeff(), 1e-2, 0.0)};
    });

    run_suite("projection_identity", v.projection_identity_instances, [&](SplitMix64& gen, int) {
        const MixtureParams p = detail::random_instance(gen, {5, 10, 3.0});
        const SampleBatch batch = draw_standard_normal(p.dim(), detail::plan_for(spec.plan, v.small_samples, gen()));
        const double inner = (hooks.transformed(p, batch).per_component.array() * p.means().array()).sum();
        const double sq = estimate_psi_tilde_sqnorm(p, batch).value;
        const double scale = std::max(std::abs(inner), std::abs(sq));
        return std::vector{BoundReport::make("relative_error", scale > 0.0 ? std::abs(inner - sq) / scale : 0.0, 1e-10, 0.0)};
    });

    run_suite("loss_upper_bound", v.loss_bound_instances, [&](SplitMix64& gen, int) {
        const MixtureParams p = detail::random_instance(gen, {5, 10, 3.0});
        return std::vector{check_loss_upper_bound(p, detail::plan_for(spec.plan, v.small_samples, gen()))};
    });

    run_suite("projection_lower_bound", v.projection_bound_instances, [&](SplitMix64& gen, int) {
        const MixtureParams p = detail::random_instance(gen, {5, 8, 2.0});
        return std::vector{check_projection_lower_bound(p, detail::plan_for(spec.plan, v.small_samples, gen()))};
    });

    run_suite("smoothness", v.smoothness_instances, [&](SplitMix64& gen, int) {
        const MixtureParams p = detail::random_instance(gen, {5, 8, 2.0});
        Matrix deltas(p.n_components(), p.dim());
        for (int i = 0; i < p.n_components(); ++i) {
            const double limit = 1.0 / std::max(6.0 * p.dim(), 2.0 * p.means().row(i).norm());
            deltas.row(i) = detail::random_vector(gen, p.dim(), 0.999 * limit).transpose();
        }
        return check_smoothness(p, deltas, detail::plan_for(spec.plan, v.large_samples, gen()));
    });

    run_suite("mgf_bound", static_cast<int>(v.mgf_dims.size()), [&](SplitMix64& gen, int k) {
        const int d = v.mgf_dims[static_cast<std::size_t>(k)];
        return std::vector{check_mgf_bound(d, 1.0 / (3.0 * d), detail::plan_for(spec.plan, v.large_samples, gen()))};
    });

    run_suite("path_integral", v.path_integral_instances, [&](SplitMix64& gen, int) {
        const MixtureParams p = detail::random_instance(gen, {5, 10, 3.0});
        const int d = p.dim();
        Vector x = detail::random_vector(gen, d, 3.0 * std::sqrt(static_cast<double>(d)));
        if (x.norm() == 0.0) x[0] = 1.0;
        const int i = detail::int_draw(gen, 0, p.n_components() - 1);
        const int j = detail::int_draw(gen, 0, p.n_components() - 1);
        return std::vector{check_path_integral_bound(p, x, i, j)};
    });

    run_suite("stein", v.stein_instances, [&](SplitMix64& gen, int) {
        // the norm-based band is a chi-square(d) tail, so keep d small
        const MixtureParams p = detail::random_instance(gen, {4, 3, 3.0});
        return check_stein(p, detail::plan_for(spec.plan, v.large_samples, gen()));
    });

    run_suite("bad_region_gradient", static_cast<int>(v.bad_region_dims.size()), [&](SplitMix64& gen, int k) {
        const int d = v.bad_region_dims[static_cast<std::size_t>(k)];
        const MixtureParams p = MixtureParams::equal_weights(bad_region_means(d, 3, 12.0));
        const GradientBound bound = bad_region_gradient_bound(p);
        const SampleBatch batch = draw_standard_normal(d, detail::plan_for(spec.plan, v.large_samples, gen()));
        const GradientEstimate g = hooks.transformed(p, batch);
        std::vector<BoundReport> reps;
        for (int i = 0; i < p.n_components(); ++i)
            reps.push_back(BoundReport::make("component[" + std::to_string(i) + "]", g.per_component.row(i).norm(),
                                             bound.bound, 4.0 * g.row_norm_std_error(i)));
        if (!bound.applicable) reps.push_back(BoundReport::make("applicable", 1.0, 0.0, 0.0));
        return reps;
    });

    nlohmann::json reports = nlohmann::json::array();
    for (const auto& r : res.reports) reports.push_back(to_json(r));
    nlohmann::json suites = nlohmann::json::array();
    for (const auto& s : res.suites)
        suites.push_back({{"name", s.name},
                          {"instances", s.instances},
                          {"failures", s.failures},
                          {"allowed", s.allowed},
                          {"passed", s.passed}});
    res.report = std::filesystem::path(spec.out) / "verify.json";
    detail::write_json(res.report, {{"reports", reports}, {"suites", suites}, {"all_passed", res.all_passed}});
    return res;
}

}  // namespace gem
