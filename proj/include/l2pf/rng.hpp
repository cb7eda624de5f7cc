#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace l2pf {

using Rng = std::mt19937_64;

// Derives an independent generator from the run seed and a stream name, so
// every consumer of randomness (policy init, sampling, synthetic weights)
// draws from its own reproducible stream.
inline Rng make_stream(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char ch : name) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h),
                    static_cast<std::uint32_t>(h >> 32)};
  return Rng(seq);
}

}  // namespace l2pf
