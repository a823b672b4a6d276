#pragma once

// Portable, reproducible randomness. std::mt19937_64 and std::seed_seq are
// specified bit-exactly by the standard; the standard distributions are
// not, so the conversions below are written out.

#include <array>
#include <cstdint>
#include <random>
#include <span>

namespace acpolicy {

using Rng = std::mt19937_64;

// Independent generator for (seed, stream) pairs, e.g. one stream per
// round or per audit so reordering work does not shift other draws.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Inverse-CDF draw from a probability vector. Zero-probability entries are
// never returned.
template <std::size_t N>
int sample_index(const std::array<double, N>& probabilities, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  int last_positive = 0;
  for (std::size_t k = 0; k < N; ++k) {
    if (probabilities[k] <= 0.0) continue;
    acc += probabilities[k];
    last_positive = static_cast<int>(k);
    if (u < acc) return static_cast<int>(k);
  }
  return last_positive;
}

}  // namespace acpolicy
