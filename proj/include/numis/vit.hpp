#pragma once

// Vision Transformer classifier over single-channel images.
//
// Layout: patch projection -> [class token; patches] + positional table ->
// pre-norm encoder blocks -> layer norm on the class-token row -> linear head.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "json.hpp"
#include "numis/image.hpp"
#include "numis/layers.hpp"
#include "numis/tensor.hpp"

namespace numis {

struct ViTConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t depth = 2;
  std::size_t heads = 2;
  std::size_t d_model = 32;
  std::size_t d_ff = 64;
  std::size_t num_labels = 2;

  void validate() const;
  std::size_t num_patches() const { return (image_size / patch_size) * (image_size / patch_size); }
  std::size_t patch_dim() const { return patch_size * patch_size; }

  // ViT-L/16 proportions; representable, never built in tests.
  static ViTConfig large16(std::size_t num_labels);
};

void to_json(nlohmann::json& j, const ViTConfig& c);
void from_json(const nlohmann::json& j, ViTConfig& c);

// [H, W] image -> [N, P*P]; patches in row-major grid order, each flattened row-major.
Tensor patchify(const Tensor& image, std::size_t patch_size);

struct AttentionWeights {
  Linear query, key, value, output;
};

// Per-head attention on column slices of XW^Q, XW^K, XW^V, heads concatenated
// and projected back to d_model. `head_weights` receives each head's attention matrix.
Tensor multi_head_self_attention(const Tensor& x, const AttentionWeights& weights,
                                 std::size_t heads, std::vector<Tensor>* head_weights = nullptr);

struct EncoderBlock {
  Tensor norm1_gain, norm1_bias;
  AttentionWeights attention;
  Tensor norm2_gain, norm2_bias;
  Linear ff_in, ff_out;
};

// x1 = x + MSA(LN(x)); x2 = x1 + FFN(LN(x1)), FFN = linear -> GELU -> linear.
Tensor encoder_block(const Tensor& x, const EncoderBlock& block, std::size_t heads,
                     std::vector<Tensor>* head_weights = nullptr);

EncoderBlock make_encoder_block(std::size_t d_model, std::size_t d_ff, Rng& rng);

class ViTModel {
 public:
  ViTModel(const ViTConfig& config, std::uint64_t seed);

  ViTModel(ViTModel&&) noexcept = default;
  ViTModel& operator=(ViTModel&&) noexcept = default;
  ViTModel(const ViTModel&) = delete;
  ViTModel& operator=(const ViTModel&) = delete;

  // Deep copy with independent storage.
  ViTModel clone() const;

  const ViTConfig& config() const { return config_; }

  // [H, W] in [0,1] -> [num_labels] logits.
  Tensor forward(const Tensor& image, std::vector<Tensor>* head_weights = nullptr) const;
  Tensor forward(const GrayImage& image) const;

  // New head of shape [d_model, num_labels], truncated-normal(0.02) weights, zero bias.
  void replace_head(std::size_t num_labels, std::uint64_t seed);
  void freeze_backbone();
  void unfreeze();
  bool backbone_frozen() const { return frozen_; }

  ParameterList parameters() const;
  ParameterList backbone_parameters() const;
  ParameterList head_parameters() const;
  std::size_t parameter_count() const { return count_values(parameters()); }
  std::size_t trainable_parameter_count() const;

  // Direct access for tests and tooling.
  EncoderBlock& block(std::size_t i) { return blocks_.at(i); }
  Tensor& positional() { return positional_; }
  Linear& head() { return head_; }
  const Linear& head() const { return head_; }

 private:
  ViTModel() = default;

  ViTConfig config_;
  Linear patch_projection_;
  Tensor class_token_;
  Tensor positional_;
  std::vector<EncoderBlock> blocks_;
  Tensor norm_gain_, norm_bias_;
  Linear head_;
  bool frozen_ = false;
};

}  // namespace numis
