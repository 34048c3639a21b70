// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <random>
#include <vector>

namespace timl {

/// Deterministic random source. All distributions are implemented by hand on
/// top of mt19937_64 so that streams are identical across standard libraries
/// and platforms; the std::* distribution adapters are never used.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1) with 53 bits of resolution.
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller. Always consumes exactly two uniforms
    /// (no cached spare) so the stream position stays easy to reason about.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    /// Integer in [0, n). Rejection-free modulo; the bias is far below
    /// anything observable at the n used here and the stream stays fixed.
    std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : gen_() % n; }

    /// Fisher-Yates permutation of 0..n-1.
    std::vector<std::size_t> permutation(std::size_t n) {
        std::vector<std::size_t> p(n);
        std::iota(p.begin(), p.end(), std::size_t{0});
        for (std::size_t i = n; i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(p[i - 1], p[j]);
        }
        return p;
    }

    /// Derives an independent stream seed from a base seed and a path of
    /// integers (epoch, task index, purpose tag, ...). SplitMix64 chaining.
    static std::uint64_t derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
        std::uint64_t x = seed;
        for (std::uint64_t p : path) x = splitmix(x ^ splitmix(p + 0x9e3779b97f4a7c15ULL));
        return splitmix(x);
    }

private:
    static std::uint64_t splitmix(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    std::mt19937_64 gen_;
};

/// Stable purpose tags for Rng::derive paths.
namespace rng_tag {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t shuffle = 2;
inline constexpr std::uint64_t split = 3;
inline constexpr std::uint64_t batch = 4;
inline constexpr std::uint64_t dropout = 5;
inline constexpr std::uint64_t validation = 6;
inline constexpr std::uint64_t finetune = 7;
inline constexpr std::uint64_t eval = 8;
} // namespace rng_tag

} // namespace timl
