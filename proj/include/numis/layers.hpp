#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "numis/random.hpp"
#include "numis/tensor.hpp"

namespace numis {

// Tensors are handles, so a list of these aliases the model's storage.
struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParameterList = std::vector<NamedTensor>;

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  Tensor operator()(const Tensor& x) const { return add_bias(matmul(x, weight), bias); }
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

Linear make_linear_xavier(std::size_t in, std::size_t out, Rng& rng);
// Normal(0, sqrt(2 / fan_in)) weights, zero bias.
Linear make_linear_he(std::size_t in, std::size_t out, Rng& rng);
Linear make_linear_zero(std::size_t in, std::size_t out);

void fill_uniform(std::span<float> out, double bound, Rng& rng);

// Deep copy; the result shares no storage with `t`.
Tensor clone_parameter(const Tensor& t);

// Copies values (not handles) from `source` into `target` by name; shapes must match.
void assign_parameters(const ParameterList& target, const ParameterList& source);

std::size_t count_values(const ParameterList& params);

}  // namespace numis
