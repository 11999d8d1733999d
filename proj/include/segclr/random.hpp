// random.hpp - seeded random streams with fully specified distributions.
//
// std::mt19937_64 output is pinned by the standard, but the standard
// distributions are not; every sampler here is hand-rolled so that a
// (seed, call sequence) pair produces identical bytes on any platform.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace segclr {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

class RandomStream {
public:
    RandomStream() : engine_(0) {}
    explicit RandomStream(std::uint64_t seed) : engine_(splitmix64(seed)) {}

    // Independent stream for a named purpose (init/batch/pairs/dropout/...).
    static RandomStream derive(std::uint64_t seed, std::string_view tag) {
        return RandomStream(splitmix64(seed ^ fnv1a64(tag)));
    }

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double u01() { return double(next_u64() >> 11) * (1.0 / 9007199254740992.0); }

    double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

    // Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("uniform_int: n must be positive");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    // Inclusive integer range.
    std::int64_t uniform_range(std::int64_t lo, std::int64_t hi) {
        return lo + std::int64_t(uniform_int(std::uint64_t(hi - lo + 1)));
    }

    bool bernoulli(double p) { return u01() < p; }

    // Standard normal via Box-Muller; consumes two uniforms per call.
    double normal() {
        double u1 = u01();
        while (u1 <= 0.0) u1 = u01();
        const double u2 = u01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double gaussian(double mean, double stddev) { return mean + stddev * normal(); }

    // In-place Fisher-Yates over [0, n) index array supplied by caller.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = std::size_t(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace segclr
