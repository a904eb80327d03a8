#pragma once

// Hierarchical perturbation saliency for black-box scorers: rectangular masks
// are replaced by their mean grey value, score drops are attributed to the
// masked pixels, and the strongest masks are split into quarters and retried.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <vector>

#include "json.hpp"
#include "numis/cnn.hpp"
#include "numis/image.hpp"
#include "numis/tensor.hpp"
#include "numis/vit.hpp"

namespace numis {

struct HipeConfig {
  std::size_t max_depth = 4;        // levels, including the coarse one
  std::size_t initial_grid = 4;     // coarse masks per side
  double overlap = 0.5;             // coarse masks are (1 + overlap) strides wide
  double refinement_threshold = 0.5;  // quantile of the level's positive attributions

  void validate() const;
};

void to_json(nlohmann::json& j, const HipeConfig& c);
void from_json(const nlohmann::json& j, HipeConfig& c);

// Image in, scalar out; must be deterministic.
using ScoreFn = std::function<double(const Tensor& image)>;

ScoreFn vit_score(const ViTModel& model, std::size_t concept_index);  // sigmoid of the concept logit
ScoreFn cnn_score(const CnnModel& model);                             // softmax probability of class 1

struct SaliencyMap {
  int width = 0;
  int height = 0;
  std::vector<float> values;  // row-major

  float at(int x, int y) const { return values[std::size_t(y) * width + x]; }
};

struct SaliencyStats {
  std::size_t model_calls = 0;
  std::size_t levels = 0;
  std::size_t peak_retained_masks = 0;  // scored masks held at once
  std::vector<std::size_t> masks_per_level;
};

// g^2 (1 + 4 + ... + 4^(depth-1)) + 1
std::size_t model_call_bound(const HipeConfig& config);

// Coarse level: initial_grid^2 overlapping rectangles covering the image.
std::vector<Rect> coarse_masks(int width, int height, const HipeConfig& config);

// The masked rectangle replaced by its mean; everything else copied.
Tensor perturb(const Tensor& image, const Rect& mask);

// Per-pixel maximum of nonnegative score drops over all masks covering the
// pixel, min-max normalized to [0, 1].
SaliencyMap attribute(const ScoreFn& score, const Tensor& image, const HipeConfig& config,
                      SaliencyStats* stats = nullptr);

// Yellow-to-red heat colour blended over the grey image with alpha = max_alpha * value.
RgbImage render(const SaliencyMap& map, const GrayImage& image, double max_alpha = 0.6);

// Portable float map ("Pf", little-endian, rows stored bottom-up).
void write_pfm(const std::filesystem::path& path, const SaliencyMap& map);
SaliencyMap read_pfm(const std::filesystem::path& path);

}  // namespace numis
