#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace kfreg {

/// Deterministic random source. Built on mt19937_64, but every variate is
/// derived through fixed arithmetic (no std::*_distribution), so a seed
/// produces the same stream on every platform and standard library.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, bound), bias-free by rejection.
    std::uint64_t below(std::uint64_t bound);

    /// Standard normal via Box-Muller; the paired variate is cached.
    double normal();

    /// Fisher-Yates permutation of {0, ..., n-1}.
    std::vector<int> permutation(int n);

    /// First k entries of a fresh permutation (sampling without replacement).
    std::vector<int> sample_without_replacement(int n, int k);

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace kfreg
