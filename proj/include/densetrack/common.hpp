// Copyright 2026 The densetrack Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace densetrack {

// ------------------------------------------------------------------
// Error taxonomy. Everything derives from std::runtime_error so CLI
// code can catch one base and map it to exit code 1.
// ------------------------------------------------------------------
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct LookupError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ------------------------------------------------------------------
// Deterministic RNG. splitmix64 core; avoids <random> distributions
// whose output is implementation-defined, so seeded values are stable
// across standard libraries.
// ------------------------------------------------------------------
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n), rejection sampled so the distribution is exactly uniform
    uint64_t uniform_int(uint64_t n) {
        if (n == 0) throw ValidationError("uniform_int: n must be positive");
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

  private:
    uint64_t state_;
};

// Stable seed derivation for independent streams (per iteration, per blob, ...).
inline uint64_t derive_seed(uint64_t seed, uint64_t stream) {
    Rng rng(seed ^ (0x9E3779B97F4A7C15ull * (stream + 1)));
    return rng.next_u64();
}

// ------------------------------------------------------------------
// FNV-1a 64-bit hash, used for golden checksums and weight-blob
// integrity stamps.
// ------------------------------------------------------------------
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xCBF29CE484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ull;
    }
    return h;
}

inline uint64_t hash_doubles(std::span<const double> v) {
    return fnv1a64(v.data(), v.size() * sizeof(double));
}

inline uint64_t hash_floats(std::span<const float> v) {
    return fnv1a64(v.data(), v.size() * sizeof(float));
}

inline std::string hash_hex(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

// ------------------------------------------------------------------
// Small numeric helpers shared across modules.
// ------------------------------------------------------------------
template <typename T>
inline T clamp(T x, T lo, T hi) {
    return x < lo ? lo : (x > hi ? hi : x);
}

inline bool all_finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline bool is_power_of_two(int x) { return x > 0 && (x & (x - 1)) == 0; }

// In-place numerically stable softmax.
inline void softmax_inplace(std::span<double> v) {
    double m = v[0];
    for (double x : v) m = std::max(m, x);
    double sum = 0.0;
    for (double& x : v) {
        x = std::exp(x - m);
        sum += x;
    }
    for (double& x : v) x /= sum;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Depth values are clamped at this floor wherever an update or a lookup
// could otherwise produce a nonpositive depth.
inline constexpr double kDepthFloor = 1e-6;

inline double logit(double p) {
    p = clamp(p, 1e-9, 1.0 - 1e-9);
    return std::log(p / (1.0 - p));
}

}  // namespace densetrack
