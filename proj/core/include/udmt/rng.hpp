#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace udmt {

/// Seed for the named substream `name` of `root`. Every random component
/// (data, init, sampler, dropout, bt, ...) draws from its own substream so
/// changing one does not shift the others.
std::uint64_t derive_seed(std::uint64_t root, std::string_view name);

inline std::mt19937_64 substream(std::uint64_t root, std::string_view name) {
  return std::mt19937_64(derive_seed(root, name));
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniform integer in [0, n); n must be positive.
std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n);

/// Standard normal via Box-Muller, independent of the standard library's
/// distribution implementation.
double standard_normal(std::mt19937_64& rng);

}  // namespace udmt
