#include "numis/cnn.hpp"

#include <cmath>

#include "numis/errors.hpp"

namespace numis {

void CnnConfig::validate() const {
  if (input_size == 0 || conv_blocks.empty() || num_outputs == 0) {
    throw ConfigError("CNN config needs an input size, conv blocks and outputs");
  }
  std::size_t size = input_size;
  for (const auto& b : conv_blocks) {
    if (b.out_channels == 0 || b.kernel == 0 || b.kernel % 2 == 0 || b.stride == 0 || b.pool == 0) {
      throw ConfigError("conv blocks need positive channels/stride/pool and odd kernels");
    }
    size = (size + b.stride - 1) / b.stride;
    if (size < b.pool) throw ConfigError("CNN input too small for its pooling stack");
    size /= b.pool;
  }
  for (auto w : fc_widths)
    if (w == 0) throw ConfigError("FC widths must be positive");
}

std::size_t CnnConfig::feature_size() const {
  std::size_t size = input_size;
  for (const auto& b : conv_blocks) size = ((size + b.stride - 1) / b.stride) / b.pool;
  return size;
}

std::size_t CnnConfig::flattened_features() const {
  const auto s = feature_size();
  return s * s * conv_blocks.back().out_channels;
}

CnnConfig CnnConfig::tiny() { return {}; }

CnnConfig CnnConfig::full_scale() {
  CnnConfig c;
  c.input_size = 224;
  c.conv_blocks = {{32}, {64}, {128}};
  c.fc_widths = {256, 64};
  return c;
}

void to_json(nlohmann::json& j, const CnnConfig& c) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : c.conv_blocks) {
    blocks.push_back({{"out_channels", b.out_channels}, {"kernel", b.kernel}, {"stride", b.stride},
                      {"pool", b.pool}});
  }
  j = {{"input_size", c.input_size}, {"conv_blocks", blocks}, {"fc_widths", c.fc_widths},
       {"num_outputs", c.num_outputs}};
}

void from_json(const nlohmann::json& j, CnnConfig& c) {
  CnnConfig d;
  c.input_size = j.value("input_size", d.input_size);
  c.fc_widths = j.value("fc_widths", d.fc_widths);
  c.num_outputs = j.value("num_outputs", d.num_outputs);
  c.conv_blocks.clear();
  if (!j.contains("conv_blocks")) {
    c.conv_blocks = d.conv_blocks;
    return;
  }
  for (const auto& b : j.at("conv_blocks")) {
    ConvBlockSpec s;
    s.out_channels = b.value("out_channels", s.out_channels);
    s.kernel = b.value("kernel", s.kernel);
    s.stride = b.value("stride", s.stride);
    s.pool = b.value("pool", s.pool);
    c.conv_blocks.push_back(s);
  }
}

CnnModel::CnnModel(const CnnConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  std::size_t channels = 1;
  for (const auto& spec : config_.conv_blocks) {
    ConvLayer layer{Tensor::zeros({spec.out_channels, channels, spec.kernel, spec.kernel}, true),
                    Tensor::zeros({spec.out_channels}, true), spec};
    const double fan_in = double(channels * spec.kernel * spec.kernel);
    fill_normal(layer.weight.mutable_data(), std::sqrt(2.0 / fan_in), rng);
    convs_.push_back(std::move(layer));
    channels = spec.out_channels;
  }
  std::size_t width = config_.flattened_features();
  for (auto w : config_.fc_widths) {
    fcs_.push_back(make_linear_he(width, w, rng));
    width = w;
  }
  fcs_.push_back(make_linear_he(width, config_.num_outputs, rng));
}

CnnModel CnnModel::clone() const {
  CnnModel copy;
  copy.config_ = config_;
  for (const auto& c : convs_) copy.convs_.push_back({clone_parameter(c.weight), clone_parameter(c.bias), c.spec});
  for (const auto& f : fcs_) copy.fcs_.push_back({clone_parameter(f.weight), clone_parameter(f.bias)});
  return copy;
}

Tensor CnnModel::forward(const Tensor& image, std::vector<Tensor>* relu_outputs) const {
  if (image.rank() != 2 || image.dim(0) != config_.input_size || image.dim(1) != config_.input_size) {
    throw ShapeError("CNN expects a " + std::to_string(config_.input_size) + "x" +
                     std::to_string(config_.input_size) + " image, got " + shape_string(image.shape()));
  }
  Tensor x = reshape(image, {1, image.dim(0), image.dim(1)});
  for (const auto& conv : convs_) {
    x = relu(conv2d(x, conv.weight, conv.bias, conv.spec.stride, conv.spec.kernel / 2));
    if (relu_outputs) relu_outputs->push_back(x);
    if (conv.spec.pool > 1) x = max_pool2d(x, conv.spec.pool);
  }
  x = reshape(x, {1, x.numel()});
  for (std::size_t i = 0; i + 1 < fcs_.size(); ++i) {
    x = relu(fcs_[i](x));
    if (relu_outputs) relu_outputs->push_back(x);
  }
  // No activation on the output layer.
  return reshape(fcs_.back()(x), {config_.num_outputs});
}

ParameterList CnnModel::parameters() const {
  ParameterList out;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    out.push_back({"conv." + std::to_string(i) + ".weight", convs_[i].weight});
    out.push_back({"conv." + std::to_string(i) + ".bias", convs_[i].bias});
  }
  for (std::size_t i = 0; i < fcs_.size(); ++i) {
    out.push_back({"fc." + std::to_string(i) + ".weight", fcs_[i].weight});
    out.push_back({"fc." + std::to_string(i) + ".bias", fcs_[i].bias});
  }
  return out;
}

std::vector<std::string> CnnModel::relu_layer_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < convs_.size(); ++i) names.push_back("conv." + std::to_string(i));
  for (std::size_t i = 0; i + 1 < fcs_.size(); ++i) names.push_back("fc." + std::to_string(i));
  return names;
}

std::vector<DeadReluLayer> detect_dying_relu(const CnnModel& model, std::span<const Tensor> probe,
                                             double threshold) {
  if (probe.empty()) throw DataError("dying-ReLU probe batch is empty");
  const auto names = model.relu_layer_names();
  std::vector<std::vector<bool>> alive(names.size());
  for (const auto& image : probe) {
    std::vector<Tensor> activations;
    model.forward(image.detach(), &activations);
    for (std::size_t l = 0; l < activations.size(); ++l) {
      const auto values = activations[l].data();
      if (alive[l].empty()) alive[l].assign(values.size(), false);
      for (std::size_t u = 0; u < values.size(); ++u)
        if (values[u] > 0.0F) alive[l][u] = true;
    }
  }
  std::vector<DeadReluLayer> report;
  for (std::size_t l = 0; l < names.size(); ++l) {
    std::size_t dead = 0;
    for (bool a : alive[l]) dead += a ? 0 : 1;
    const double fraction = double(dead) / double(alive[l].size());
    report.push_back({names[l], fraction, fraction >= threshold});
  }
  return report;
}

}  // namespace numis
