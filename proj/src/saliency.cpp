#include "numis/saliency.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include "numis/errors.hpp"

namespace numis {

void HipeConfig::validate() const {
  if (max_depth < 1) throw ConfigError("saliency max_depth must be >= 1");
  if (initial_grid < 2) throw ConfigError("saliency initial_grid must be >= 2");
  if (!(overlap >= 0.0 && overlap < 1.0)) throw ConfigError("saliency overlap must lie in [0, 1)");
  if (!(refinement_threshold >= 0.0 && refinement_threshold <= 1.0)) {
    throw ConfigError("saliency refinement_threshold must lie in [0, 1]");
  }
}

void to_json(nlohmann::json& j, const HipeConfig& c) {
  j = {{"max_depth", c.max_depth},
       {"initial_grid", c.initial_grid},
       {"overlap", c.overlap},
       {"refinement_threshold", c.refinement_threshold}};
}

void from_json(const nlohmann::json& j, HipeConfig& c) {
  HipeConfig d;
  c.max_depth = j.value("max_depth", d.max_depth);
  c.initial_grid = j.value("initial_grid", d.initial_grid);
  c.overlap = j.value("overlap", d.overlap);
  c.refinement_threshold = j.value("refinement_threshold", d.refinement_threshold);
}

ScoreFn vit_score(const ViTModel& model, std::size_t concept_index) {
  if (concept_index >= model.config().num_labels) throw ConfigError("concept index out of range");
  return [&model, concept_index](const Tensor& image) {
    const double z = model.forward(image.detach()).data()[concept_index];
    return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  };
}

ScoreFn cnn_score(const CnnModel& model) {
  return [&model](const Tensor& image) {
    const auto z = model.forward(image.detach()).data();
    return 1.0 / (1.0 + std::exp(double(z[0]) - double(z[1])));
  };
}

std::size_t model_call_bound(const HipeConfig& config) {
  std::size_t per_level = config.initial_grid * config.initial_grid;
  std::size_t total = 1;
  for (std::size_t d = 0; d < config.max_depth; ++d) {
    total += per_level;
    per_level *= 4;
  }
  return total;
}

namespace {

// Start offsets and extent of `grid` overlapping windows along one axis.
std::vector<std::pair<int, int>> axis_windows(int length, const HipeConfig& config) {
  const double stride = double(length) / double(config.initial_grid);
  const int extent = std::clamp(static_cast<int>(std::ceil(stride * (1.0 + config.overlap))), 1, length);
  std::vector<std::pair<int, int>> out;
  for (std::size_t i = 0; i < config.initial_grid; ++i) {
    const int start = std::min(static_cast<int>(std::lround(double(i) * stride)), length - extent);
    out.emplace_back(start, extent);
  }
  return out;
}

double quantile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  const double h = double(values.size() - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = static_cast<std::size_t>(std::ceil(h));
  return values[lo] + (h - double(lo)) * (values[hi] - values[lo]);
}

struct Scored {
  Rect mask;
  double attribution;
};

}  // namespace

std::vector<Rect> coarse_masks(int width, int height, const HipeConfig& config) {
  config.validate();
  std::vector<Rect> masks;
  for (auto [y, h] : axis_windows(height, config)) {
    for (auto [x, w] : axis_windows(width, config)) masks.push_back({x, y, w, h});
  }
  return masks;
}

Tensor perturb(const Tensor& image, const Rect& mask) {
  if (image.rank() != 2) throw ShapeError("perturb expects a [H, W] image");
  const int height = static_cast<int>(image.dim(0));
  const int width = static_cast<int>(image.dim(1));
  if (mask.width <= 0 || mask.height <= 0) throw ShapeError("perturbation mask is empty");
  if (mask.x < 0 || mask.y < 0 || mask.right() > width || mask.bottom() > height) {
    throw ShapeError("perturbation mask lies outside the image");
  }
  const auto src = image.data();
  std::vector<float> out(src.begin(), src.end());
  double total = 0.0;
  for (int y = mask.y; y < mask.bottom(); ++y)
    for (int x = mask.x; x < mask.right(); ++x) total += src[std::size_t(y) * width + x];
  const auto fill = static_cast<float>(total / (double(mask.width) * double(mask.height)));
  for (int y = mask.y; y < mask.bottom(); ++y)
    for (int x = mask.x; x < mask.right(); ++x) out[std::size_t(y) * width + x] = fill;
  return Tensor(image.shape(), std::move(out));
}

SaliencyMap attribute(const ScoreFn& score, const Tensor& image, const HipeConfig& config, SaliencyStats* stats) {
  config.validate();
  if (image.rank() != 2) throw ShapeError("saliency expects a [H, W] image");
  SaliencyMap map;
  map.height = static_cast<int>(image.dim(0));
  map.width = static_cast<int>(image.dim(1));
  map.values.assign(image.numel(), 0.0F);
  SaliencyStats local;

  auto checked = [&](const Tensor& input) {
    const double s = score(input);
    ++local.model_calls;
    if (!std::isfinite(s)) throw NumericError("saliency scorer returned a non-finite value");
    return s;
  };
  const Tensor clean = image.detach();
  const double clean_score = checked(clean);

  std::vector<Rect> pending = coarse_masks(map.width, map.height, config);
  for (std::size_t level = 0; level < config.max_depth && !pending.empty(); ++level) {
    std::vector<Scored> scored;
    scored.reserve(pending.size());
    for (const auto& mask : pending) {
      const double a = std::max(0.0, clean_score - checked(perturb(clean, mask)));
      // Fold into the map right away; only the level's (mask, attribution) pairs survive.
      const auto value = static_cast<float>(a);
      for (int y = mask.y; y < mask.bottom(); ++y) {
        for (int x = mask.x; x < mask.right(); ++x) {
          float& v = map.values[std::size_t(y) * map.width + x];
          v = std::max(v, value);
        }
      }
      scored.push_back({mask, a});
    }
    pending.clear();
    local.masks_per_level.push_back(scored.size());
    local.peak_retained_masks = std::max(local.peak_retained_masks, scored.size());
    ++local.levels;
    if (level + 1 == config.max_depth) break;

    std::vector<double> positive;
    for (const auto& s : scored)
      if (s.attribution > 0.0) positive.push_back(s.attribution);
    if (positive.empty()) break;
    const double cut = quantile(positive, config.refinement_threshold);
    for (const auto& s : scored) {
      if (s.attribution <= 0.0 || s.attribution < cut) continue;
      const Rect& m = s.mask;
      const int w0 = m.width / 2;
      const int h0 = m.height / 2;
      for (auto [y, h] : {std::pair{m.y, h0}, std::pair{m.y + h0, m.height - h0}}) {
        for (auto [x, w] : {std::pair{m.x, w0}, std::pair{m.x + w0, m.width - w0}}) {
          if (w > 0 && h > 0) pending.push_back({x, y, w, h});
        }
      }
    }
  }

  const auto [lo, hi] = std::minmax_element(map.values.begin(), map.values.end());
  const float min_v = *lo;
  const float max_v = *hi;
  if (max_v > min_v) {
    for (auto& v : map.values) v = (v - min_v) / (max_v - min_v);
  } else if (max_v > 0.0F) {
    std::fill(map.values.begin(), map.values.end(), 1.0F);
  }
  if (stats) *stats = std::move(local);
  return map;
}

RgbImage render(const SaliencyMap& map, const GrayImage& image, double max_alpha) {
  if (map.width != image.width() || map.height != image.height()) {
    throw ShapeError("saliency map and image sizes differ");
  }
  if (!(max_alpha >= 0.0 && max_alpha <= 1.0)) throw ConfigError("overlay alpha must lie in [0, 1]");
  RgbImage out(image.width(), image.height());
  auto blend = [](double base, double tint, double alpha) {
    return static_cast<std::uint8_t>(std::lround((1.0 - alpha) * base + alpha * tint));
  };
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      const double t = std::clamp(double(map.at(x, y)), 0.0, 1.0);
      const double alpha = max_alpha * t;
      const double g = image.at(x, y);
      out.at(x, y) = {blend(g, 255.0, alpha), blend(g, 255.0 * (1.0 - t), alpha), blend(g, 0.0, alpha)};
    }
  }
  return out;
}

void write_pfm(const std::filesystem::path& path, const SaliencyMap& map) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "Pf\n" << map.width << ' ' << map.height << "\n-1.0\n";
  for (int y = map.height - 1; y >= 0; --y) {
    for (int x = 0; x < map.width; ++x) {
      const auto bits = std::bit_cast<std::uint32_t>(map.at(x, y));
      const char bytes[4] = {char(bits & 0xFF), char((bits >> 8) & 0xFF), char((bits >> 16) & 0xFF),
                             char((bits >> 24) & 0xFF)};
      out.write(bytes, 4);
    }
  }
}

SaliencyMap read_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::string magic;
  SaliencyMap map;
  double scale = 0.0;
  in >> magic >> map.width >> map.height >> scale;
  in.get();
  if (!in || magic != "Pf" || map.width <= 0 || map.height <= 0) throw DataError(path.string() + " is not a grey PFM");
  if (scale >= 0.0) throw DataError(path.string() + " is big-endian; only little-endian PFM is supported");
  map.values.resize(std::size_t(map.width) * map.height);
  for (int y = map.height - 1; y >= 0; --y) {
    for (int x = 0; x < map.width; ++x) {
      unsigned char b[4];
      if (!in.read(reinterpret_cast<char*>(b), 4)) throw DataError(path.string() + " is truncated");
      const std::uint32_t bits = b[0] | (b[1] << 8) | (b[2] << 16) | (std::uint32_t(b[3]) << 24);
      map.values[std::size_t(y) * map.width + x] = std::bit_cast<float>(bits);
    }
  }
  return map;
}

}  // namespace numis
