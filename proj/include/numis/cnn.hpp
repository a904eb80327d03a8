#pragma once

// Convolutional baseline: conv(3x3, same padding) -> ReLU -> max-pool blocks,
// ReLU fully connected layers, then a two-logit output with no activation.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "numis/image.hpp"
#include "numis/layers.hpp"
#include "numis/tensor.hpp"

namespace numis {

struct ConvBlockSpec {
  std::size_t out_channels = 8;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pool = 2;  // 1 disables pooling
};

struct CnnConfig {
  std::size_t input_size = 32;
  std::vector<ConvBlockSpec> conv_blocks{{8}, {16}, {32}};
  std::vector<std::size_t> fc_widths{64};
  std::size_t num_outputs = 2;

  void validate() const;
  // Spatial extent after the conv stack (square).
  std::size_t feature_size() const;
  std::size_t flattened_features() const;

  static CnnConfig tiny();
  // 32/64/128 conv blocks, FC 256/64, 224 px input.
  static CnnConfig full_scale();
};

void to_json(nlohmann::json& j, const CnnConfig& c);
void from_json(const nlohmann::json& j, CnnConfig& c);

struct ConvLayer {
  Tensor weight;  // [out, in, k, k]
  Tensor bias;    // [out]
  ConvBlockSpec spec;
};

class CnnModel {
 public:
  CnnModel(const CnnConfig& config, std::uint64_t seed);

  CnnModel(CnnModel&&) noexcept = default;
  CnnModel& operator=(CnnModel&&) noexcept = default;
  CnnModel(const CnnModel&) = delete;
  CnnModel& operator=(const CnnModel&) = delete;

  CnnModel clone() const;
  const CnnConfig& config() const { return config_; }

  // [H, W] -> [num_outputs] raw logits. `relu_outputs` receives every hidden
  // ReLU activation in layer order.
  Tensor forward(const Tensor& image, std::vector<Tensor>* relu_outputs = nullptr) const;
  Tensor forward(const GrayImage& image) const { return forward(to_tensor(image)); }

  ParameterList parameters() const;
  std::size_t parameter_count() const { return count_values(parameters()); }
  // Names of the ReLU layers, matching the order of `relu_outputs`.
  std::vector<std::string> relu_layer_names() const;

  std::vector<ConvLayer>& conv_layers() { return convs_; }
  std::vector<Linear>& fc_layers() { return fcs_; }

 private:
  CnnModel() = default;

  CnnConfig config_;
  std::vector<ConvLayer> convs_;
  std::vector<Linear> fcs_;  // hidden layers then the output layer
};

struct DeadReluLayer {
  std::string name;
  double dead_fraction = 0.0;
  bool flagged = false;
};

// Fraction of units in each ReLU layer that output zero for every probe
// image; layers at or above `threshold` are flagged.
std::vector<DeadReluLayer> detect_dying_relu(const CnnModel& model, std::span<const Tensor> probe,
                                             double threshold = 0.99);

}  // namespace numis
