#pragma once

// Shared types for the gradient-EM library: dense matrix aliases, error
// classes, and the order-independent summation used by every per-sample
// kernel.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>

namespace gem {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

/// Shape disagreement between a point/batch and the mixture it is evaluated against.
class DimensionError : public std::invalid_argument {
public:
    explicit DimensionError(const std::string& what) : std::invalid_argument(what) {}
};

/// An input violates an operation's documented precondition.
class PreconditionError : public std::invalid_argument {
public:
    explicit PreconditionError(const std::string& what) : std::invalid_argument(what) {}
};

/// A computation produced a non-finite value (e.g. a diverging gradient step).
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& what) {
    if (!cond) throw PreconditionError(what);
}

namespace detail {

// Sums `terms` in an order that depends only on the multiset of magnitudes,
// so permuting the inputs (or negating all of them) permutes/negates the
// result exactly. Insertion sort: n is a mixture component count.
inline double invariant_sum(std::span<double> terms) {
    const std::size_t n = terms.size();
    if (n == 0) return 0.0;
    if (n == 1) return terms[0];
    if (n == 2) return terms[0] + terms[1];
    for (std::size_t i = 1; i < n; ++i) {
        const double v = terms[i];
        const double key = std::abs(v);
        std::size_t j = i;
        while (j > 0 && std::abs(terms[j - 1]) > key) {
            terms[j] = terms[j - 1];
            --j;
        }
        terms[j] = v;
    }
    double s = 0.0;
    for (double t : terms) s += t;
    return s;
}

}  // namespace detail

}  // namespace gem
