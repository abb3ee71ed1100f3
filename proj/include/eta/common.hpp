#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace eta {

// Error taxonomy shared by all modules. Callers catch the base Error when
// they only care about "domain failure vs usage failure" (CLI exit codes).
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/extent mismatch between operands.
class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& msg) : Error(msg) {}
};

// NaN/Inf produced where finiteness is an invariant.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Violated API contract (non-scalar backward root, missing StopGrad, ...).
class ContractError : public Error {
public:
    explicit ContractError(const std::string& msg) : Error(msg) {}
};

// Bad configuration: unknown keys, unknown scenario/mode names, bad values.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Deterministic RNG. Engine state and every derived distribution are fully
// specified here (std:: distributions are implementation-defined, which
// would break cross-toolchain reproducibility of seeds committed in tests).
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {
        // splitmix64 warmup so small seeds diverge immediately
        next_u64();
        next_u64();
    }

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    uint64_t uniform_int(uint64_t n) {
        // modulo bias is negligible for the n used here (n << 2^64)
        return n == 0 ? 0 : next_u64() % n;
    }

    // standard normal, Box-Muller with a cached second value
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    uint64_t state_;
    bool has_cached_ = false;
    double cached_ = 0.0;
};

// FNV-1a, used to stamp output artifacts with a stable config hash.
inline uint64_t fnv1a(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace eta
