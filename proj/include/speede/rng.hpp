#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace speede {

// Deterministic PRNG with a fixed cross-platform bit stream.
//
// The standard <random> distributions are implementation-defined, which would
// make seeded artifacts differ between standard libraries. Everything seeded
// in this project (scene generation, sampling, time noise) goes through this
// class so identical seeds give identical bytes everywhere.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : base_seed_(seed), state_(seed) {
        // decorrelate trivially related seeds
        next_u64();
        next_u64();
    }

    std::uint64_t next_u64() {
        // splitmix64
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; the spare value is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Unbiased integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t threshold = (0ull - n) % n;  // 2^64 mod n
        for (;;) {
            const std::uint64_t x = next_u64();
            if (x >= threshold) return x % n;
        }
    }

    // Derived generator for an independent stream; does not advance *this.
    Rng fork(std::uint64_t stream) const {
        std::uint64_t z = base_seed_ ^ (0xD1B54A32D192ED03ull * (stream + 1));
        z = (z ^ (z >> 29)) * 0xFF51AFD7ED558CCDull;
        return Rng(z ^ (z >> 32));
    }

    // First k of a seeded Fisher-Yates shuffle of {0, ..., n-1}.
    std::vector<std::uint32_t> sample_without_replacement(std::uint32_t n, std::uint32_t k) {
        if (k > n) k = n;
        std::vector<std::uint32_t> idx(n);
        for (std::uint32_t i = 0; i < n; ++i) idx[i] = i;
        for (std::uint32_t i = 0; i < k; ++i) {
            const std::uint32_t j = i + static_cast<std::uint32_t>(below(n - i));
            std::swap(idx[i], idx[j]);
        }
        idx.resize(k);
        return idx;
    }

private:
    std::uint64_t base_seed_;
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace speede
