#include "numis/layers.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "numis/errors.hpp"

namespace numis {

void fill_uniform(std::span<float> out, double bound, Rng& rng) {
  for (auto& v : out) {
    const double u = double(rng() >> 11) * 0x1.0p-53;
    v = static_cast<float>((2.0 * u - 1.0) * bound);
  }
}

Linear make_linear_xavier(std::size_t in, std::size_t out, Rng& rng) {
  Linear layer{Tensor::zeros({in, out}, true), Tensor::zeros({out}, true)};
  fill_uniform(layer.weight.mutable_data(), std::sqrt(6.0 / double(in + out)), rng);
  return layer;
}

Linear make_linear_he(std::size_t in, std::size_t out, Rng& rng) {
  Linear layer{Tensor::zeros({in, out}, true), Tensor::zeros({out}, true)};
  fill_normal(layer.weight.mutable_data(), std::sqrt(2.0 / double(in)), rng);
  return layer;
}

Linear make_linear_zero(std::size_t in, std::size_t out) {
  return {Tensor::zeros({in, out}, true), Tensor::zeros({out}, true)};
}

Tensor clone_parameter(const Tensor& t) {
  Tensor copy(t.shape(), std::vector<float>(t.data().begin(), t.data().end()), t.requires_grad());
  return copy;
}

void assign_parameters(const ParameterList& target, const ParameterList& source) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& p : source) by_name.emplace(p.name, &p.tensor);
  for (const auto& p : target) {
    const auto it = by_name.find(p.name);
    if (it == by_name.end()) throw DataError("missing parameter '" + p.name + "'");
    if (it->second->shape() != p.tensor.shape()) {
      throw ShapeError("parameter '" + p.name + "' has shape " + shape_string(p.tensor.shape()) +
                       ", source has " + shape_string(it->second->shape()));
    }
    Tensor dst = p.tensor;
    std::copy(it->second->data().begin(), it->second->data().end(), dst.mutable_data().begin());
  }
}

std::size_t count_values(const ParameterList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

}  // namespace numis
