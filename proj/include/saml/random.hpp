#pragma once

#include <cstdint>
#include <random>

namespace saml {

using Rng = std::mt19937_64;

/// Uniform double in [0, 1) built from the top 53 bits of one draw.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Independent stream for (seed, purpose, replica).
inline Rng make_stream(std::uint64_t seed, std::uint64_t purpose, std::uint64_t replica = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose), static_cast<std::uint32_t>(replica)};
  return Rng(seq);
}

/// Stream purposes, so each consumer of randomness draws from its own sequence.
enum StreamPurpose : std::uint64_t {
  kInitStream = 1,
  kDropoutStream = 2,
  kNoiseStream = 3,
  kCoinStream = 4,
  kShuffleStream = 5,
  kDataStream = 6,
};

}  // namespace saml
