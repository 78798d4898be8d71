// Copyright 2026 looplab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace looplab {

// All failures surface as this type with a human-readable message.
struct Error : std::runtime_error {
    explicit Error(const std::string &msg) : std::runtime_error(msg) {}
};

inline void check(bool cond, const std::string &msg) {
    if (!cond) {
        throw Error(msg);
    }
}

// One RNG type everywhere so seeded runs replay bit-identically on a platform.
using Rng = std::mt19937_64;

inline double uniform(Rng &rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double gaussian(Rng &rng, double mean, double stddev) {
    return std::normal_distribution<double>(mean, stddev)(rng);
}

// FNV-1a; used to stamp configs into output manifests.
inline std::uint64_t fnv1a(const std::string &s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace looplab
