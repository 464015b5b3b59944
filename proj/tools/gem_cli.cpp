// Command-line front end for the experiment drivers.
//
//   gem <converge|weights|bad-init|stat-rate|verify> [--config file.json] [overrides]
//
// Exit codes: 0 success, 1 verification failure, 2 I/O or configuration error.

#include "gem/experiments.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

struct Overrides {
    std::string config;
    std::optional<int> d, n, steps, log_every;
    std::optional<double> eta;
    std::optional<std::size_t> samples;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<bool> antithetic;
};

void add_common(CLI::App* sub, Overrides& o) {
    sub->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--d", o.d, "dimension");
    sub->add_option("--n", o.n, "component count");
    sub->add_option("--eta", o.eta, "step size");
    sub->add_option("--steps", o.steps, "iterations (step cap for stat-rate)");
    sub->add_option("--samples", o.samples, "Monte Carlo samples per batch");
    sub->add_option("--seed", o.seed, "base seed");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--antithetic", o.antithetic, "pair every draw with its negation");
    sub->add_option("--log-every", o.log_every, "log every k-th step");
}

gem::ExperimentSpec build_spec(gem::ExperimentKind kind, const Overrides& o) {
    gem::ExperimentSpec s = o.config.empty() ? gem::default_spec(kind) : gem::load_config(kind, o.config);
    if (o.d) s.d = *o.d;
    if (o.n) s.n = *o.n;
    if (o.eta) s.eta = *o.eta;
    if (o.steps) s.steps = *o.steps;
    if (o.samples) s.plan.sample_count = *o.samples;
    if (o.seed) s.plan.seed = *o.seed;
    if (o.out) s.out = *o.out;
    if (o.antithetic) s.plan.antithetic = *o.antithetic;
    if (o.log_every) s.log_every = *o.log_every;
    s.validate();
    return s;
}

void print_fit(const char* label, const gem::FitOutcome& f) {
    if (f.applicable)
        std::printf("%s: slope %.4f  intercept %.4f  r^2 %.4f\n", label, f.fit.slope, f.fit.intercept, f.fit.r_squared);
    else
        std::printf("%s: not applicable (%s)\n", label, f.reason.c_str());
}

int run(gem::ExperimentKind kind, const gem::ExperimentSpec& spec) {
    using gem::ExperimentKind;
    switch (kind) {
        case ExperimentKind::Converge: {
            const auto r = gem::run_convergence_experiment(spec);
            print_fit("loss fit", r.loss_fit);
            print_fit("param fit", r.param_fit);
            std::printf("monotone violations %d / %d\nwrote %s\n", r.monotone_violations, r.comparisons,
                        r.csv.string().c_str());
            return 0;
        }
        case ExperimentKind::Weights: {
            const auto r = gem::run_weights_experiment(spec);
            for (std::size_t c = 0; c < r.configs.size(); ++c)
                std::printf("config %zu: mean steps to threshold %.2f\n", c, r.mean_steps[c]);
            std::printf("wrote %s\n", r.summary.string().c_str());
            return 0;
        }
        case ExperimentKind::BadInit: {
            const auto r = gem::run_bad_init_experiment(spec);
            print_fit("log grad norm vs d", r.fit);
            std::printf("min |mu_1(t)|/|mu_1(0)| %.6f, symmetry error %.3g, trap horizon %.1f\nwrote %s\n",
                        r.min_norm_ratio, r.max_symmetry_error, r.horizon, r.summary.string().c_str());
            return 0;
        }
        case ExperimentKind::StatRate: {
            const auto r = gem::run_stat_rate_experiment(spec);
            print_fit("log error vs log size", r.fit);
            std::printf("wrote %s\n", r.csv.string().c_str());
            return 0;
        }
        case ExperimentKind::Verify: {
            const auto r = gem::run_verify_suite(spec);
            for (const auto& s : r.suites)
                std::printf("%-24s %s  failures %d / %d (allowed %d)\n", s.name.c_str(), s.passed ? "ok  " : "FAIL",
                            s.failures, s.instances, s.allowed);
            std::printf("wrote %s\n", r.report.string().c_str());
            return r.all_passed ? 0 : 1;
        }
    }
    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gradient EM experiments for over-parameterized Gaussian mixtures"};
    app.require_subcommand(1);
    Overrides o;
    std::vector<std::pair<CLI::App*, gem::ExperimentKind>> subs;
    for (auto [name, kind] : {std::pair{"converge", gem::ExperimentKind::Converge},
                              std::pair{"weights", gem::ExperimentKind::Weights},
                              std::pair{"bad-init", gem::ExperimentKind::BadInit},
                              std::pair{"stat-rate", gem::ExperimentKind::StatRate},
                              std::pair{"verify", gem::ExperimentKind::Verify}}) {
        auto* sub = app.add_subcommand(name);
        add_common(sub, o);
        subs.emplace_back(sub, kind);
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    try {
        for (auto& [sub, kind] : subs)
            if (sub->parsed()) return run(kind, build_spec(kind, o));
    } catch (const gem::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
    } catch (const gem::IoError& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
    }
    return 2;
}
