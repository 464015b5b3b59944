#pragma once

// Least-squares rate fitting: log(value) against log(step) for convergence
// curves, and the plain linear variant used for log(grad) against d.

#include "gem/core.hpp"

#include <utility>
#include <vector>

namespace gem {

struct RateFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
    std::pair<double, double> window{0.0, 0.0};
    std::size_t points = 0;
};

/// Ordinary least squares y = intercept + slope * x. r^2 is clamped to
/// [0, 1]; a series with no spread in y (an exact fit) reports r^2 = 1.
inline RateFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    require(x.size() == y.size(), "fit_line needs equally many x and y values");
    require(x.size() >= 2, "fit_line needs at least two points");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        mx += x[k];
        my += y[k];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        sxx += (x[k] - mx) * (x[k] - mx);
        sxy += (x[k] - mx) * (y[k] - my);
        syy += (y[k] - my) * (y[k] - my);
    }
    require(sxx > 0.0, "fit_line needs at least two distinct x values");
    RateFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double ss_res = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double e = y[k] - (fit.intercept + fit.slope * x[k]);
        ss_res += e * e;
    }
    fit.r_squared = syy > 0.0 ? std::clamp(1.0 - ss_res / syy, 0.0, 1.0) : 1.0;
    fit.window = {x.front(), x.back()};
    fit.points = x.size();
    return fit;
}

/// Fits log(value) = intercept + slope * log(step) over steps in
/// [window.first, window.second]. Needs >= 10 points, all positive.
inline RateFit fit_rate(const std::vector<std::pair<double, double>>& series, std::pair<double, double> window) {
    require(window.first < window.second, "rate-fit window start must precede its end");
    require(window.first > 0.0, "rate-fit window must start at a positive step");
    std::vector<double> lx, ly;
    for (const auto& [step, value] : series) {
        if (step < window.first || step > window.second) continue;
        require(value > 0.0, "rate fit needs positive values; got " + std::to_string(value) + " at step " +
                                 std::to_string(step));
        lx.push_back(std::log(step));
        ly.push_back(std::log(value));
    }
    require(lx.size() >= 10, "rate fit needs at least 10 points in the window");
    RateFit fit = fit_line(lx, ly);
    fit.window = window;
    return fit;
}

/// Default fit window: drop a burn-in of 5% of the steps (at least 20).
inline std::pair<double, double> default_rate_window(int total_steps) {
    const double burn = std::max(20.0, 0.05 * total_steps);
    return {burn, static_cast<double>(total_steps)};
}

}  // namespace gem
