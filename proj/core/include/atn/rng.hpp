#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace atn {

using Rng = std::mt19937_64;

// Per-component seed: splitmix64(root ^ fnv1a(tag)). Every random stream in
// the pipeline is derived from one root seed through this function.
std::uint64_t derive_seed(std::uint64_t root, std::string_view tag);

// Uniform double in [0, 1) built from the top 53 bits of one draw.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
}

inline double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

// Box-Muller; stdlib distributions are implementation-defined, this is not.
double standard_normal(Rng& rng);

}  // namespace atn
