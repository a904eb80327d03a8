#include "numis/vit.hpp"

#include <string>

#include "numis/errors.hpp"

namespace numis {

void ViTConfig::validate() const {
  if (image_size == 0 || patch_size == 0 || depth == 0 || heads == 0 || d_model == 0 ||
      d_ff == 0 || num_labels == 0) {
    throw ConfigError("ViT config values must be positive");
  }
  if (image_size % patch_size != 0) {
    throw ConfigError("image_size " + std::to_string(image_size) + " not divisible by patch_size " +
                      std::to_string(patch_size));
  }
  if (d_model % heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by heads " +
                      std::to_string(heads));
  }
}

ViTConfig ViTConfig::large16(std::size_t num_labels) {
  return {224, 16, 24, 16, 1024, 4096, num_labels};
}

void to_json(nlohmann::json& j, const ViTConfig& c) {
  j = {{"image_size", c.image_size}, {"patch_size", c.patch_size}, {"depth", c.depth},
       {"heads", c.heads},           {"d_model", c.d_model},       {"d_ff", c.d_ff},
       {"num_labels", c.num_labels}};
}

void from_json(const nlohmann::json& j, ViTConfig& c) {
  ViTConfig d;
  c.image_size = j.value("image_size", d.image_size);
  c.patch_size = j.value("patch_size", d.patch_size);
  c.depth = j.value("depth", d.depth);
  c.heads = j.value("heads", d.heads);
  c.d_model = j.value("d_model", d.d_model);
  c.d_ff = j.value("d_ff", d.d_ff);
  c.num_labels = j.value("num_labels", d.num_labels);
}

Tensor patchify(const Tensor& image, std::size_t patch_size) {
  if (image.rank() != 2) throw ShapeError("patchify expects [H, W], got " + shape_string(image.shape()));
  const std::size_t h = image.dim(0), w = image.dim(1);
  if (patch_size == 0 || h % patch_size != 0 || w % patch_size != 0) {
    throw ShapeError("patchify: " + shape_string(image.shape()) + " not divisible into " +
                     std::to_string(patch_size) + "-pixel patches");
  }
  const std::size_t grid_w = w / patch_size;
  const std::size_t count = (h / patch_size) * grid_w;
  const std::size_t dim = patch_size * patch_size;
  // index[i] is the source pixel of output element i.
  std::vector<std::size_t> index(count * dim);
  for (std::size_t p = 0; p < count; ++p) {
    const std::size_t top = (p / grid_w) * patch_size;
    const std::size_t left = (p % grid_w) * patch_size;
    for (std::size_t dy = 0; dy < patch_size; ++dy)
      for (std::size_t dx = 0; dx < patch_size; ++dx)
        index[p * dim + dy * patch_size + dx] = (top + dy) * w + left + dx;
  }
  const auto in = image.data();
  std::vector<float> out(index.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[index[i]];
  return autograd::make_result("patchify", {count, dim}, std::move(out), {image},
                               [index = std::move(index)](autograd::Node& self) {
    auto& parent = *self.parents[0];
    auto& g = parent.grad_buffer();
    for (std::size_t i = 0; i < index.size(); ++i) g[index[i]] += self.grad[i];
  });
}

Tensor multi_head_self_attention(const Tensor& x, const AttentionWeights& weights,
                                 std::size_t heads, std::vector<Tensor>* head_weights) {
  if (x.rank() != 2) throw ShapeError("attention input must be [n, d], got " + shape_string(x.shape()));
  const std::size_t d_model = x.dim(1);
  if (heads == 0 || d_model % heads != 0) {
    throw ShapeError("d_model " + std::to_string(d_model) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  const std::size_t d_head = d_model / heads;
  const Tensor q = weights.query(x);
  const Tensor k = weights.key(x);
  const Tensor v = weights.value(x);
  std::vector<Tensor> outputs;
  outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor attn;
    outputs.push_back(scaled_dot_attention(slice_cols(q, h * d_head, d_head),
                                           slice_cols(k, h * d_head, d_head),
                                           slice_cols(v, h * d_head, d_head),
                                           head_weights ? &attn : nullptr));
    if (head_weights) head_weights->push_back(attn);
  }
  return weights.output(heads == 1 ? outputs.front() : concat_cols(outputs));
}

Tensor encoder_block(const Tensor& x, const EncoderBlock& block, std::size_t heads,
                     std::vector<Tensor>* head_weights) {
  const Tensor x1 = add(x, multi_head_self_attention(layer_norm(x, block.norm1_gain, block.norm1_bias),
                                                     block.attention, heads, head_weights));
  const Tensor hidden = gelu(block.ff_in(layer_norm(x1, block.norm2_gain, block.norm2_bias)));
  return add(x1, block.ff_out(hidden));
}

EncoderBlock make_encoder_block(std::size_t d_model, std::size_t d_ff, Rng& rng) {
  EncoderBlock b;
  b.norm1_gain = Tensor::full({d_model}, 1.0F, true);
  b.norm1_bias = Tensor::zeros({d_model}, true);
  b.attention = {make_linear_xavier(d_model, d_model, rng), make_linear_xavier(d_model, d_model, rng),
                 make_linear_xavier(d_model, d_model, rng), make_linear_xavier(d_model, d_model, rng)};
  b.norm2_gain = Tensor::full({d_model}, 1.0F, true);
  b.norm2_bias = Tensor::zeros({d_model}, true);
  b.ff_in = make_linear_xavier(d_model, d_ff, rng);
  b.ff_out = make_linear_xavier(d_ff, d_model, rng);
  return b;
}

// ---- model ---------------------------------------------------------------------

ViTModel::ViTModel(const ViTConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::size_t d = config_.d_model;
  patch_projection_ = make_linear_xavier(config_.patch_dim(), d, rng);
  class_token_ = Tensor::zeros({1, d}, true);
  fill_truncated_normal(class_token_.mutable_data(), 0.02, rng);
  positional_ = Tensor::zeros({config_.num_patches() + 1, d}, true);
  fill_truncated_normal(positional_.mutable_data(), 0.02, rng);
  for (std::size_t i = 0; i < config_.depth; ++i) blocks_.push_back(make_encoder_block(d, config_.d_ff, rng));
  norm_gain_ = Tensor::full({d}, 1.0F, true);
  norm_bias_ = Tensor::zeros({d}, true);
  head_ = make_linear_zero(d, config_.num_labels);
  fill_truncated_normal(head_.weight.mutable_data(), 0.02, rng);
}

ViTModel ViTModel::clone() const {
  ViTModel copy;
  copy.config_ = config_;
  copy.frozen_ = frozen_;
  copy.patch_projection_ = {clone_parameter(patch_projection_.weight), clone_parameter(patch_projection_.bias)};
  copy.class_token_ = clone_parameter(class_token_);
  copy.positional_ = clone_parameter(positional_);
  for (const auto& b : blocks_) {
    EncoderBlock nb;
    nb.norm1_gain = clone_parameter(b.norm1_gain);
    nb.norm1_bias = clone_parameter(b.norm1_bias);
    auto cl = [](const Linear& l) { return Linear{clone_parameter(l.weight), clone_parameter(l.bias)}; };
    nb.attention = {cl(b.attention.query), cl(b.attention.key), cl(b.attention.value), cl(b.attention.output)};
    nb.norm2_gain = clone_parameter(b.norm2_gain);
    nb.norm2_bias = clone_parameter(b.norm2_bias);
    nb.ff_in = cl(b.ff_in);
    nb.ff_out = cl(b.ff_out);
    copy.blocks_.push_back(std::move(nb));
  }
  copy.norm_gain_ = clone_parameter(norm_gain_);
  copy.norm_bias_ = clone_parameter(norm_bias_);
  copy.head_ = {clone_parameter(head_.weight), clone_parameter(head_.bias)};
  return copy;
}

Tensor ViTModel::forward(const Tensor& image, std::vector<Tensor>* head_weights) const {
  if (image.rank() != 2 || image.dim(0) != config_.image_size || image.dim(1) != config_.image_size) {
    throw ShapeError("ViT expects a " + std::to_string(config_.image_size) + "x" +
                     std::to_string(config_.image_size) + " image, got " + shape_string(image.shape()));
  }
  const Tensor patches = patch_projection_(patchify(image, config_.patch_size));
  Tensor x = add(concat_rows({class_token_, patches}), positional_);
  for (const auto& block : blocks_) x = encoder_block(x, block, config_.heads, head_weights);
  const Tensor cls = layer_norm(slice_rows(x, 0, 1), norm_gain_, norm_bias_);
  return reshape(head_(cls), {config_.num_labels});
}

Tensor ViTModel::forward(const GrayImage& image) const { return forward(to_tensor(image)); }

void ViTModel::replace_head(std::size_t num_labels, std::uint64_t seed) {
  if (num_labels < 1) throw ConfigError("replacement head needs at least one label");
  Rng rng(seed);
  head_ = make_linear_zero(config_.d_model, num_labels);
  fill_truncated_normal(head_.weight.mutable_data(), 0.02, rng);
  config_.num_labels = num_labels;
}

void ViTModel::freeze_backbone() {
  for (auto& p : backbone_parameters()) p.tensor.set_requires_grad(false);
  frozen_ = true;
}

void ViTModel::unfreeze() {
  for (auto& p : parameters()) p.tensor.set_requires_grad(true);
  frozen_ = false;
}

ParameterList ViTModel::backbone_parameters() const {
  ParameterList out{{"patch.weight", patch_projection_.weight},
                    {"patch.bias", patch_projection_.bias},
                    {"class_token", class_token_},
                    {"positional", positional_}};
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& b = blocks_[i];
    const std::string p = "blocks." + std::to_string(i) + ".";
    out.push_back({p + "norm1.gain", b.norm1_gain});
    out.push_back({p + "norm1.bias", b.norm1_bias});
    out.push_back({p + "attn.query.weight", b.attention.query.weight});
    out.push_back({p + "attn.query.bias", b.attention.query.bias});
    out.push_back({p + "attn.key.weight", b.attention.key.weight});
    out.push_back({p + "attn.key.bias", b.attention.key.bias});
    out.push_back({p + "attn.value.weight", b.attention.value.weight});
    out.push_back({p + "attn.value.bias", b.attention.value.bias});
    out.push_back({p + "attn.output.weight", b.attention.output.weight});
    out.push_back({p + "attn.output.bias", b.attention.output.bias});
    out.push_back({p + "norm2.gain", b.norm2_gain});
    out.push_back({p + "norm2.bias", b.norm2_bias});
    out.push_back({p + "ff.in.weight", b.ff_in.weight});
    out.push_back({p + "ff.in.bias", b.ff_in.bias});
    out.push_back({p + "ff.out.weight", b.ff_out.weight});
    out.push_back({p + "ff.out.bias", b.ff_out.bias});
  }
  out.push_back({"norm.gain", norm_gain_});
  out.push_back({"norm.bias", norm_bias_});
  return out;
}

ParameterList ViTModel::head_parameters() const {
  return {{"head.weight", head_.weight}, {"head.bias", head_.bias}};
}

ParameterList ViTModel::parameters() const {
  auto out = backbone_parameters();
  for (auto& p : head_parameters()) out.push_back(std::move(p));
  return out;
}

std::size_t ViTModel::trainable_parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters())
    if (p.tensor.requires_grad()) n += p.tensor.numel();
  return n;
}

}  // namespace numis
