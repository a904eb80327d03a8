#include "numis/random.hpp"

#include <cmath>

namespace numis {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Box-Muller on 53-bit uniforms; std::normal_distribution is implementation-defined.
double standard_normal(Rng& rng) {
  constexpr double kTwoPi = 6.283185307179586;
  double u1 = 0.0;
  do {
    u1 = double(rng() >> 11) * 0x1.0p-53;
  } while (u1 <= 0.0);
  const double u2 = double(rng() >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) {
  std::uint64_t h = splitmix64(seed);
  for (unsigned char c : stream) h = splitmix64(h ^ c);
  return h;
}

void fill_normal(std::span<float> out, double stddev, Rng& rng) {
  for (auto& v : out) v = static_cast<float>(standard_normal(rng) * stddev);
}

void fill_truncated_normal(std::span<float> out, double stddev, Rng& rng) {
  for (auto& v : out) {
    double z = 0.0;
    do {
      z = standard_normal(rng);
    } while (std::abs(z) > 2.0);
    v = static_cast<float>(z * stddev);
  }
}

std::size_t uniform_index(Rng& rng, std::size_t n) {
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x = 0;
  do {
    x = rng();
  } while (x >= limit);
  return static_cast<std::size_t>(x % n);
}

}  // namespace numis
