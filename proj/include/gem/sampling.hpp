#pragma once

// Seeded random sources. Every row (or antithetic pair) of a batch draws
// from its own SplitMix64 stream keyed on (seed, row index), so a batch is
// a pure function of (d, plan): chunk size and thread count only decide how
// the rows are partitioned, never which numbers land in them.

#include "gem/core.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <thread>
#include <vector>

namespace gem {

/// SplitMix64 (Steele, Lea, Flood). Satisfies UniformRandomBitGenerator.
class SplitMix64 {
public:
    using result_type = std::uint64_t;

    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

private:
    std::uint64_t state_;
};

/// Stateless 64-bit finalizer used to derive independent stream seeds.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a) { return mix64(mix64(base) ^ mix64(a + 0x632BE59BD9B4E019ULL)); }

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
    return derive_seed(derive_seed(base, a), b);
}

struct SamplePlan {
    std::size_t sample_count = 350000;
    std::uint64_t seed = 0;
    bool antithetic = true;
    std::size_t chunk_size = 65536;

    void validate() const {
        require(sample_count >= 1, "sample_count must be positive");
        require(!antithetic || sample_count % 2 == 0, "antithetic sampling needs an even sample_count");
        require(chunk_size >= 1, "chunk_size must be positive");
    }

    /// Copy of this plan with a different seed.
    SamplePlan reseeded(std::uint64_t s) const {
        SamplePlan p = *this;
        p.seed = s;
        return p;
    }

    /// chunk_size clipped to the sample count.
    std::size_t effective_chunk() const { return std::min(chunk_size, sample_count); }
};

struct SampleBatch {
    Matrix points;  ///< N x d, one draw per row
    SamplePlan plan;

    int dim() const { return static_cast<int>(points.cols()); }
    std::size_t size() const { return static_cast<std::size_t>(points.rows()); }
    std::span<const double> row(std::size_t r) const {
        return {points.data() + r * static_cast<std::size_t>(points.cols()), static_cast<std::size_t>(points.cols())};
    }
    /// True when row 2k+1 is the exact negation of row 2k.
    bool paired() const { return plan.antithetic; }
};

namespace detail {

inline unsigned worker_count(std::size_t units) {
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    return static_cast<unsigned>(std::min<std::size_t>(hw, std::max<std::size_t>(units, 1)));
}

/// Runs fn(begin, end) over [0, total) in pieces of `chunk`, spread across
/// hardware threads. Pieces are disjoint; fn must only write its own range.
template <class Fn>
void for_each_chunk(std::size_t total, std::size_t chunk, Fn&& fn) {
    const std::size_t pieces = (total + chunk - 1) / chunk;
    const unsigned workers = worker_count(pieces);
    if (workers <= 1) {
        for (std::size_t p = 0; p < pieces; ++p) fn(p * chunk, std::min(total, (p + 1) * chunk));
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t p = w; p < pieces; p += workers) fn(p * chunk, std::min(total, (p + 1) * chunk));
        });
    }
    for (auto& t : pool) t.join();
}

// Fills `out` with standard normals from `gen` (Box-Muller, both outputs used).
inline void fill_normals(SplitMix64& gen, double* out, int d) {
    for (int c = 0; c < d; c += 2) {
        const double u1 = 1.0 - gen.uniform();  // (0, 1]
        const double u2 = gen.uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        out[c] = r * std::cos(theta);
        if (c + 1 < d) out[c + 1] = r * std::sin(theta);
    }
}

}  // namespace detail

/// N draws from N(0, I_d). With an antithetic plan, row 2k+1 = -row 2k.
inline SampleBatch draw_standard_normal(int d, const SamplePlan& plan) {
    require(d >= 1, "dimension must be positive");
    plan.validate();
    SampleBatch batch{Matrix(static_cast<Eigen::Index>(plan.sample_count), d), plan};
    double* data = batch.points.data();
    const std::size_t stride = static_cast<std::size_t>(d);
    const std::size_t streams = plan.antithetic ? plan.sample_count / 2 : plan.sample_count;
    const std::size_t chunk = std::max<std::size_t>(1, plan.antithetic ? plan.effective_chunk() / 2 : plan.effective_chunk());
    detail::for_each_chunk(streams, chunk, [&](std::size_t begin, std::size_t end) {
        for (std::size_t k = begin; k < end; ++k) {
            SplitMix64 gen(derive_seed(plan.seed, k));
            if (plan.antithetic) {
                double* a = data + 2 * k * stride;
                double* b = a + stride;
                detail::fill_normals(gen, a, d);
                for (std::size_t c = 0; c < stride; ++c) b[c] = -a[c];
            } else {
                detail::fill_normals(gen, data + k * stride, d);
            }
        }
    });
    return batch;
}

/// A Dirichlet(alpha, ..., alpha) draw on the n-simplex.
inline Vector draw_dirichlet_weights(int n, double alpha, std::uint64_t seed) {
    require(n >= 1, "component count must be positive");
    require(alpha > 0.0 && std::isfinite(alpha), "Dirichlet concentration must be positive");
    if (n == 1) return Vector::Ones(1);
    SplitMix64 gen(derive_seed(seed, 0xD1C1ULL));
    std::gamma_distribution<double> gamma(alpha, 1.0);
    Vector w(n);
    for (int i = 0; i < n; ++i) {
        double g = 0.0;
        while (!(g > 0.0)) g = gamma(gen);  // a zero draw would leave the open simplex
        w[i] = g;
    }
    return w / w.sum();
}

}  // namespace gem
