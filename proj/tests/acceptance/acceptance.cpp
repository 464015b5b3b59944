// Acceptance runner: `acceptance <criterion 1-9> <output dir>`. Prints one
// "criterion N PASS|FAIL: ..." line and exits 0 on PASS, 1 on FAIL.

#include "gem/experiments.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

using namespace gem;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Verdict {
    bool pass = true;
    std::string detail;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

double minutes_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count() / 60.0;
}

// runtime budgets in minutes
constexpr double kBudget[10] = {0, 5, 5, 1, 15, 30, 30, 20, 60, 30};

Verdict verify_suites(const fs::path& out, std::vector<std::string> suites) {
    ExperimentSpec s = default_spec(ExperimentKind::Verify);
    s.out = out.string();
    s.verify.suites = std::move(suites);
    const VerifyResult res = run_verify_suite(s);
    Verdict v;
    std::ostringstream os;
    for (const auto& suite : res.suites) {
        os << suite.name << " " << suite.failures << "/" << suite.instances << " failed (allowed " << suite.allowed
           << "); ";
        v.pass = v.pass && suite.passed;
    }
    v.detail = os.str();
    return v;
}

Verdict criterion5(const fs::path& out) {
    Verdict v;
    std::ostringstream os;
    for (int n : {2, 5, 10}) {
        const auto t0 = Clock::now();
        ExperimentSpec s = default_spec(ExperimentKind::Converge);
        s.n = n;
        s.out = out.string();
        s.rate_window = std::pair{100.0, 2000.0};
        const ConvergenceResult r = run_convergence_experiment(s);
        const double mins = minutes_since(t0);
        const bool fit_ok = r.loss_fit.applicable && r.loss_fit.fit.slope >= -1.5 && r.loss_fit.fit.slope <= -0.3 &&
                            r.loss_fit.fit.r_squared >= 0.9;
        const bool ok = r.monotone_violations == 0 && fit_ok && mins <= kBudget[5];
        v.pass = v.pass && ok;
        os << "n=" << n << " violations " << r.monotone_violations << "/" << r.comparisons;
        if (r.loss_fit.applicable)
            os << " slope " << fmt("%.3f", r.loss_fit.fit.slope) << " r2 " << fmt("%.3f", r.loss_fit.fit.r_squared);
        else
            os << " fit n/a (" << r.loss_fit.reason << ")";
        os << " " << fmt("%.1f", mins) << "min; ";
    }
    v.detail = os.str();
    return v;
}

Verdict criterion6(const fs::path& out) {
    ExperimentSpec s = default_spec(ExperimentKind::Weights);
    s.out = out.string();
    const WeightsResult r = run_weights_experiment(s);
    // configuration 0 is equal weights, the last is (1/20, 1/5, 3/4)
    const double eq = r.mean_steps.front(), skew = r.mean_steps.back();
    bool eq_reached = true;
    for (int h : r.steps_to_threshold.front()) eq_reached = eq_reached && h >= 0;
    std::ostringstream os;
    os << "mean steps to 1% of L(0):";
    for (double m : r.mean_steps) os << " " << fmt("%.1f", m);
    os << (eq_reached ? "" : " (equal weights did not reach the threshold)");
    return {eq_reached && eq <= skew, os.str()};
}

Verdict criterion7(const fs::path& out) {
    ExperimentSpec s = default_spec(ExperimentKind::BadInit);
    s.out = out.string();
    const BadInitResult r = run_bad_init_experiment(s);
    const bool a = r.fit.applicable && r.fit.fit.slope < 0.0 && r.fit.fit.r_squared >= 0.9;
    const bool b = r.min_norm_ratio >= 0.5 && r.max_symmetry_error <= 1e-8;
    std::ostringstream os;
    os << "grad-vs-d ";
    if (r.fit.applicable)
        os << "slope " << fmt("%.3f", r.fit.fit.slope) << " r2 " << fmt("%.4f", r.fit.fit.r_squared);
    else
        os << "fit n/a";
    os << (a ? " ok" : " FAIL") << "; d=" << s.trajectory_d << " min |mu1(t)|/|mu1(0)| " << fmt("%.4f", r.min_norm_ratio)
       << " first below 1/2 at t=" << r.first_below_half << " (horizon e^d/(30 eta) = " << fmt("%.1f", r.horizon)
       << "), symmetry error " << fmt("%.2e", r.max_symmetry_error) << (b ? " ok" : " FAIL");
    return {a && b, os.str()};
}

Verdict criterion8(const fs::path& out) {
    ExperimentSpec s = default_spec(ExperimentKind::StatRate);
    s.out = out.string();
    // running every size to tolerance takes far longer than the budget on
    // one core; cap the work per run so the grid fits (see README)
    s.step_budget = 7e7;
    const StatRateResult r = run_stat_rate_experiment(s);
    std::ostringstream os;
    // the rate is about converged runs; an exponent from runs stopped by the
    // step cap mixes optimization error into the statistical error
    bool converged = true;
    for (int c : r.converged) converged = converged && 2 * c >= s.runs;
    const bool ok = converged && r.fit.applicable && std::abs(r.fit.fit.slope + 0.25) <= 0.10;
    if (r.fit.applicable)
        os << "exponent " << fmt("%.3f", r.fit.fit.slope) << " r2 " << fmt("%.3f", r.fit.fit.r_squared);
    else
        os << "fit n/a (" << r.fit.reason << ")";
    os << "; mean steps per size:";
    for (double m : r.mean_steps) os << " " << fmt("%.0f", m);
    os << "; converged runs per size:";
    for (int c : r.converged) os << " " << c;
    os << " of " << s.runs << " (step cap per run: min(" << s.steps << ", " << fmt("%.0e", *s.step_budget) << "/N))";
    if (!converged) os << "; fewer than half the runs converged at some size";
    return {ok, os.str()};
}

// Step size meeting the explicit sufficient conditions used in the descent
// argument: 20 eta sqrt(d) n^2 (mu_max^2 + 1) <= 1/2 and
// eta n mu_max <= 1 / max(6d, 2 mu_max).
double admissible_eta(const MixtureParams& p) {
    const double d = p.dim(), n = p.n_components(), m = mu_max(p).value;
    const double a = 1.0 / (40.0 * std::sqrt(d) * n * n * (m * m + 1.0));
    const double b = m > 0.0 ? 1.0 / (n * m * std::max(6.0 * d, 2.0 * m)) : a;
    return std::min(a, b);
}

// Ten runs (n cycling through 2, 5, 10) from independent seeds. eta_override
// <= 0 selects admissible_eta for each run's initialization.
double worst_potential_excess(const fs::path& out, const std::string& tag, double eta_override, double& eta0) {
    double worst = 0.0;
    for (int k = 0; k < 10; ++k) {
        ExperimentSpec s = default_spec(ExperimentKind::Converge);
        s.n = (k % 3 == 0) ? 2 : (k % 3 == 1 ? 5 : 10);
        s.plan.seed = static_cast<std::uint64_t>(100 + k);
        s.init.seed = static_cast<std::uint64_t>(100 + k);
        s.weights.seed = static_cast<std::uint64_t>(100 + k);
        s.plan.sample_count = 100000;
        s.steps = 300;
        const MixtureParams init = initial_params(s, s.d);
        s.eta = eta_override > 0.0 ? eta_override : admissible_eta(init);
        if (k == 0) eta0 = s.eta;
        const TrajectoryLog log = run_population_gradient_em(run_config(s, init));
        worst = std::max(worst, potential_excess(log));
        write_trajectory_csv(out / (tag + "_run" + std::to_string(k) + ".csv"), log);
    }
    return worst;
}

Verdict criterion9(const fs::path& out) {
    double eta0 = 0.0;
    const double worst = worst_potential_excess(out, "admissible", 0.0, eta0);
    std::ostringstream os;
    os << "admissible eta (run 0: " << fmt("%.2e", eta0) << ") max (U(t)-U(0))/band " << fmt("%.3f", worst)
       << " (limit 5)";
    // not gated: the same check at the experiment step size
    double unused = 0.0;
    os << "; informational at eta=0.7: " << fmt("%.3f", worst_potential_excess(out, "eta07", 0.7, unused));
    return {worst <= 5.0, os.str()};
}

}  // namespace

int main(int argc, char** argv) {
    if (argc != 3) {
        std::cerr << "usage: acceptance <criterion 1-9> <output dir>\n";
        return 2;
    }
    const int c = std::atoi(argv[1]);
    if (c < 1 || c > 9) {
        std::cerr << "criterion must be 1..9\n";
        return 2;
    }
    const fs::path out = fs::path(argv[2]) / ("criterion" + std::to_string(c));
    const std::map<int, std::function<Verdict(const fs::path&)>> run{
        {1, [](const fs::path& o) { return verify_suites(o, {"gradient_identity"}); }},
        {2, [](const fs::path& o) { return verify_suites(o, {"finite_difference"}); }},
        {3, [](const fs::path& o) { return verify_suites(o, {"projection_identity"}); }},
        {4,
         [](const fs::path& o) {
             return verify_suites(o, {"loss_upper_bound", "projection_lower_bound", "smoothness", "mgf_bound",
                                      "path_integral", "stein"});
         }},
        {5, criterion5},
        {6, criterion6},
        {7, criterion7},
        {8, criterion8},
        {9, criterion9},
    };

    Verdict v;
    const auto t0 = Clock::now();
    try {
        fs::create_directories(out);
        v = run.at(c)(out);
    } catch (const std::exception& e) {
        v = {false, std::string("error: ") + e.what()};
    }
    const double mins = minutes_since(t0);
    // criterion 5 checks its per-n budget itself
    const bool in_time = c == 5 || mins <= kBudget[c];
    const bool pass = v.pass && in_time;
    std::cout << "criterion " << c << (pass ? " PASS: " : " FAIL: ") << v.detail << " [" << fmt("%.1f", mins)
              << " min, budget " << fmt("%.0f", kBudget[c]) << (c == 5 ? " per n" : "") << "]"
              << (in_time ? "" : " over budget") << std::endl;
    return pass ? 0 : 1;
}
