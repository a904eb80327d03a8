#pragma once

// Independent oracles shared by the unit and acceptance tests.

#include <algorithm>
#include <array>
#include <climits>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "numis/dataset.hpp"
#include "numis/image.hpp"
#include "numis/saliency.hpp"
#include "numis/synthetic.hpp"

namespace numis::oracle {

// Independent oracle: the rows and columns of a drawn disc holding at least
// `min_pixels` disc pixels, counted directly from the circle equation.
inline Rect counted_disc_box(const Disc& d, int min_pixels = 2) {
  int x0 = INT32_MAX, x1 = INT32_MIN, y0 = INT32_MAX, y1 = INT32_MIN;
  for (int x = d.cx - d.radius; x <= d.cx + d.radius; ++x) {
    int n = 0;
    for (int y = d.cy - d.radius; y <= d.cy + d.radius; ++y)
      n += (x - d.cx) * (x - d.cx) + (y - d.cy) * (y - d.cy) <= d.radius * d.radius;
    if (n >= min_pixels) x0 = std::min(x0, x), x1 = std::max(x1, x);
  }
  for (int y = d.cy - d.radius; y <= d.cy + d.radius; ++y) {
    int n = 0;
    for (int x = d.cx - d.radius; x <= d.cx + d.radius; ++x)
      n += (x - d.cx) * (x - d.cx) + (y - d.cy) * (y - d.cy) <= d.radius * d.radius;
    if (n >= min_pixels) y0 = std::min(y0, y), y1 = std::max(y1, y);
  }
  return {x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

inline RgbImage shifted(const RgbImage& image, int dx, int dy, int grow) {
  RgbImage out(image.width() + grow, image.height() + grow, image.at(0, 0));
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x) out.at(x + dx, y + dy) = image.at(x, y);
  return out;
}

inline LabelTable make_table(const std::vector<std::vector<std::uint8_t>>& labels, std::size_t concepts) {
  LabelTable t;
  for (std::size_t c = 0; c < concepts; ++c) t.concepts.push_back("c" + std::to_string(c));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    t.image_ids.push_back("s" + std::to_string(1000 + i));
    t.labels.push_back(labels[i]);
  }
  return t;
}

// The 25-sample two-label fixture: 4 of type 11, 7 of 10, 6 of 01, 8 of 00.
inline LabelTable fixture25() {
  std::vector<std::vector<std::uint8_t>> labels;
  for (int i = 0; i < 4; ++i) labels.push_back({1, 1});
  for (int i = 0; i < 7; ++i) labels.push_back({1, 0});
  for (int i = 0; i < 6; ++i) labels.push_back({0, 1});
  for (int i = 0; i < 8; ++i) labels.push_back({0, 0});
  // Interleave so row order carries no information.
  std::mt19937_64 rng(99);
  std::shuffle(labels.begin(), labels.end(), rng);
  return make_table(labels, 2);
}

using Counts = std::array<std::array<int, 2>, 3>;  // [subset][label] positives

// Exhaustive search over every assignment, up to permutation of identical
// label patterns: returns the per-subset positive counts of all assignments
// minimising total absolute deviation from the ideal proportional counts.
inline std::vector<Counts> brute_force_optima(const std::array<int, 4>& type_counts, const std::array<int, 3>& sizes) {
  const int patterns[4][2] = {{1, 1}, {1, 0}, {0, 1}, {0, 0}};
  int n = 0, pos[2] = {0, 0};
  for (int t = 0; t < 4; ++t) {
    n += type_counts[t];
    for (int l = 0; l < 2; ++l) pos[l] += type_counts[t] * patterns[t][l];
  }
  double best = std::numeric_limits<double>::infinity();
  std::vector<Counts> optima;
  std::array<std::array<int, 3>, 4> alloc{};
  std::function<void(int)> rec = [&](int t) {
    if (t == 4) {
      Counts c{};
      for (int s = 0; s < 3; ++s) {
        int size = 0;
        for (int k = 0; k < 4; ++k) size += alloc[k][s];
        if (size != sizes[s]) return;
        for (int l = 0; l < 2; ++l)
          for (int k = 0; k < 4; ++k) c[s][l] += alloc[k][s] * patterns[k][l];
      }
      double dev = 0.0;
      for (int s = 0; s < 3; ++s)
        for (int l = 0; l < 2; ++l) dev += std::abs(c[s][l] - double(pos[l]) * sizes[s] / n);
      if (dev < best - 1e-9) {
        best = dev;
        optima.clear();
      }
      if (dev < best + 1e-9) optima.push_back(c);
      return;
    }
    for (int a = 0; a <= type_counts[t]; ++a)
      for (int b = 0; a + b <= type_counts[t]; ++b) {
        alloc[t] = {a, b, type_counts[t] - a - b};
        rec(t + 1);
      }
  };
  rec(0);
  return optima;
}

// Analytic saliency target. Bright/dim checker inside the top-left quadrant, dark elsewhere.
inline Tensor quadrant_image(std::size_t size) {
  std::vector<float> px(size * size, 0.1F);
  for (std::size_t y = 0; y < size / 2; ++y)
    for (std::size_t x = 0; x < size / 2; ++x) px[y * size + x] = (x + y) % 2 == 0 ? 1.0F : 0.2F;
  return Tensor({size, size}, px);
}

// Fraction of bright pixels in the top-left quadrant: mean replacement of any
// part of the checker pulls those pixels below the threshold.
inline double quadrant_score(const Tensor& img) {
  const std::size_t size = img.dim(0);
  std::size_t bright = 0;
  for (std::size_t y = 0; y < size / 2; ++y)
    for (std::size_t x = 0; x < size / 2; ++x) bright += img.data()[y * size + x] > 0.7F;
  return double(bright) / double(size * size / 4);
}

inline double quadrant_mass(const SaliencyMap& map) {
  double inside = 0.0, total = 0.0;
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x) {
      total += map.at(x, y);
      if (x < map.width / 2 && y < map.height / 2) inside += map.at(x, y);
    }
  return inside / total;
}

}  // namespace numis::oracle
