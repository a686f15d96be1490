#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace neurodec {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Seeded RNG with explicitly-coded distributions. std::mt19937_64 output is
/// fully specified by the standard, but the std distributions are not; all
/// sampling goes through the methods below so results are identical across
/// platforms and standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform double in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n) {
        // Rejection sampling into the largest multiple of n, no modulo bias.
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t x = engine_();
        while (x >= limit) x = engine_();
        return x % n;
    }

    /// Standard normal via Box-Muller; consumes exactly two uniforms per pair.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(t);
        have_spare_ = true;
        return r * std::cos(t);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[static_cast<std::size_t>(below(i))]);
        }
    }

    /// Independent stream for a named purpose, derived from (seed, stream_id).
    Rng(std::uint64_t seed, std::uint64_t stream_id) : Rng(mix(seed, stream_id)) {}

    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        // splitmix64 finalizer over the combined words.
        std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

/// Thread budget: min(hardware, NEURODEC_THREADS if set).
inline int thread_budget() {
    int n = static_cast<int>(std::thread::hardware_concurrency());
    if (n <= 0) n = 1;
    if (const char* env = std::getenv("NEURODEC_THREADS")) {
        const int cap = std::atoi(env);
        if (cap >= 1 && cap < n) n = cap;
    }
    return n;
}

/// Static-chunk parallel loop. Work item i runs exactly once; chunk
/// assignment depends only on (n, thread budget), so any reduction done in
/// chunk order is scheduling-independent.
template <typename Fn>
void parallel_for(std::int64_t n, Fn&& fn) {
    const int threads = thread_budget();
    if (threads <= 1 || n <= 1) {
        for (std::int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::int64_t chunk = (n + threads - 1) / threads;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) {
        const std::int64_t lo = t * chunk;
        const std::int64_t hi = std::min<std::int64_t>(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::int64_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

/// Pearson correlation of two equal-length samples. Returns 0 when either
/// side has zero variance (callers that need a warning check variance first).
inline double pearson(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
    if (a.size() != b.size() || a.size() < 2) {
        throw std::invalid_argument("pearson: need two samples of equal length >= 2");
    }
    const double ma = a.mean();
    const double mb = b.mean();
    const Vector da = a.array() - ma;
    const Vector db = b.array() - mb;
    const double va = da.squaredNorm();
    const double vb = db.squaredNorm();
    if (va <= 0.0 || vb <= 0.0) return 0.0;
    return da.dot(db) / std::sqrt(va * vb);
}

inline double log10_checked(double x, const char* what) {
    if (!(x > 0.0)) throw std::invalid_argument(std::string(what) + ": requires x > 0");
    return std::log10(x);
}

/// Log-spaced grid from lo to hi inclusive.
inline std::vector<double> logspace(double lo, double hi, int n) {
    if (n < 1 || !(lo > 0.0) || !(hi > 0.0)) {
        throw std::invalid_argument("logspace: need n >= 1 and positive bounds");
    }
    std::vector<double> out(static_cast<std::size_t>(n));
    if (n == 1) {
        out[0] = lo;
        return out;
    }
    const double l0 = std::log10(lo);
    const double l1 = std::log10(hi);
    for (int i = 0; i < n; ++i) {
        out[static_cast<std::size_t>(i)] = std::pow(10.0, l0 + (l1 - l0) * i / (n - 1));
    }
    return out;
}

}  // namespace neurodec
