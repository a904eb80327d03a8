#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace numis {

using Rng = std::mt19937_64;

// Independent sub-stream seed; all pipeline randomness is derived from one seed this way.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);

void fill_normal(std::span<float> out, double stddev, Rng& rng);
// Normal resampled until |x| <= 2 stddev.
void fill_truncated_normal(std::span<float> out, double stddev, Rng& rng);

// Uniform integer in [0, n) without relying on implementation-defined distributions.
std::size_t uniform_index(Rng& rng, std::size_t n);

template <typename It>
void deterministic_shuffle(It first, It last, Rng& rng) {
  const auto n = static_cast<std::size_t>(last - first);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = uniform_index(rng, i);
    std::swap(first[i - 1], first[j]);
  }
}

}  // namespace numis
