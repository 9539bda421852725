// SPDX-License-Identifier: MIT
// Deterministic random streams. All sampling primitives are implemented
// explicitly (rather than via std::*_distribution) so that every emitted
// number is identical across standard libraries, platforms, and thread
// counts. Streams are derived from (master seed, client id, purpose, round)
// so concurrent clients can never perturb each other's draws.
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string_view>

#include "fedrl/errors.hpp"

namespace fedrl {

/// SplitMix64 finalizer; good avalanche behaviour for seed derivation.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

/// Order-dependent combination of two seed words.
inline std::uint64_t combine_seed(std::uint64_t a, std::uint64_t b) {
    return mix64(a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2)));
}

/// FNV-1a hash of a label, used to give named purposes disjoint streams.
inline std::uint64_t hash_label(std::string_view label) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char c : label) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

/// A self-contained random stream with portable, reproducible output.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : engine_(seed) {}

    /// Derives the stream for a given (master seed, client, purpose, round)
    /// tuple. Any two distinct tuples yield statistically independent
    /// streams, which makes results invariant to scheduling order.
    static RngStream derive(std::uint64_t master_seed, std::uint64_t client_id,
                            std::string_view purpose, std::uint64_t round) {
        std::uint64_t s = combine_seed(master_seed, client_id);
        s = combine_seed(s, hash_label(purpose));
        s = combine_seed(s, round);
        return RngStream(s);
    }

    /// Raw 64 random bits.
    std::uint64_t next_bits() { return engine_(); }

    /// Uniform double in [0, 1) with 53-bit resolution.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal draw (Box–Muller; pairs cached).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0); // log(0) guard
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    /// Normal draw with the given mean and standard deviation.
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Uniform index in {0, …, n−1}.
    std::size_t uniform_index(std::size_t n) {
        if (n == 0) throw InvalidArgument("uniform_index: n must be positive");
        auto k = static_cast<std::size_t>(uniform() * static_cast<double>(n));
        return k < n ? k : n - 1;
    }

    /// Draws an index with probability proportional to `weights` (inverse CDF).
    std::size_t categorical(std::span<const double> weights) {
        double total = 0.0;
        for (double w : weights) {
            if (!(w >= 0.0)) throw InvalidArgument("categorical: negative or NaN weight");
            total += w;
        }
        if (total <= 0.0) throw InvalidArgument("categorical: weights sum to zero");
        const double u = uniform() * total;
        double acc = 0.0;
        for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
            acc += weights[i];
            if (u < acc) return i;
        }
        return weights.size() - 1;
    }

    /// Uniform draw from {−1.0, +1.0}.
    double rademacher() { return (engine_() & 1ull) ? 1.0 : -1.0; }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace fedrl
