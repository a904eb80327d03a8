#pragma once

// Straight-line f64 reimplementations of the tensor ops and model blocks.
// They share no code with the engine and serve as independent oracles: the
// gradient checker differentiates them numerically and compares the result
// with the engine's reverse-mode gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "numis/cnn.hpp"
#include "numis/tensor.hpp"
#include "numis/vit.hpp"

namespace numis::reference {

struct Array {
  Shape shape;
  std::vector<double> v;

  Array() = default;
  Array(Shape s, double fill = 0.0) : shape(std::move(s)), v(shape_numel(shape), fill) {}
  Array(Shape s, std::vector<double> values) : shape(std::move(s)), v(std::move(values)) {}

  std::size_t rows() const { return shape.at(0); }
  std::size_t cols() const { return shape.at(1); }
  double& at(std::size_t r, std::size_t c) { return v[r * shape[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return v[r * shape[1] + c]; }
};

inline Array to_array(const Tensor& t) {
  return Array(t.shape(), std::vector<double>(t.data().begin(), t.data().end()));
}

inline Array matmul(const Array& a, const Array& b) {
  Array out({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a.at(i, k) * b.at(k, j);
      out.at(i, j) = s;
    }
  return out;
}

inline Array transpose(const Array& a) {
  Array out({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
  return out;
}

inline Array reshape(Array a, Shape shape) {
  a.shape = std::move(shape);
  return a;
}

template <typename F>
Array zip(const Array& a, const Array& b, F f) {
  Array out(a.shape);
  for (std::size_t i = 0; i < a.v.size(); ++i) out.v[i] = f(a.v[i], b.v[i]);
  return out;
}

template <typename F>
Array map(const Array& a, F f) {
  Array out(a.shape);
  for (std::size_t i = 0; i < a.v.size(); ++i) out.v[i] = f(a.v[i]);
  return out;
}

inline Array add(const Array& a, const Array& b) { return zip(a, b, [](double x, double y) { return x + y; }); }
inline Array sub(const Array& a, const Array& b) { return zip(a, b, [](double x, double y) { return x - y; }); }
inline Array mul(const Array& a, const Array& b) { return zip(a, b, [](double x, double y) { return x * y; }); }
inline Array scale(const Array& a, double f) { return map(a, [f](double x) { return x * f; }); }

inline Array add_bias(const Array& x, const Array& bias) {
  Array out = x;
  const std::size_t d = bias.v.size();
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += bias.v[i % d];
  return out;
}

inline Array relu(const Array& a) { return map(a, [](double x) { return x > 0.0 ? x : 0.0; }); }

inline Array gelu(const Array& a) {
  const double c = std::sqrt(2.0 / std::acos(-1.0));
  return map(a, [c](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x))); });
}

inline Array sigmoid(const Array& a) { return map(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }); }

inline Array sum(const Array& a) {
  double s = 0.0;
  for (double x : a.v) s += x;
  return Array({1}, {s});
}

inline Array mean(const Array& a) { return Array({1}, {sum(a).v[0] / double(a.v.size())}); }

inline Array softmax_rows(const Array& a) {
  Array out(a.shape);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double m = a.at(i, 0);
    for (std::size_t j = 1; j < a.cols(); ++j) m = std::max(m, a.at(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) z += std::exp(a.at(i, j) - m);
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(i, j) = std::exp(a.at(i, j) - m) / z;
  }
  return out;
}

inline Array layer_norm(const Array& x, const Array& gain, const Array& bias, double eps = 1e-5) {
  const std::size_t d = x.shape.back();
  Array out(x.shape);
  for (std::size_t r = 0; r < x.v.size() / d; ++r) {
    double m = 0.0, var = 0.0;
    for (std::size_t j = 0; j < d; ++j) m += x.v[r * d + j];
    m /= double(d);
    for (std::size_t j = 0; j < d; ++j) var += (x.v[r * d + j] - m) * (x.v[r * d + j] - m);
    var /= double(d);
    for (std::size_t j = 0; j < d; ++j)
      out.v[r * d + j] = gain.v[j] * (x.v[r * d + j] - m) / std::sqrt(var + eps) + bias.v[j];
  }
  return out;
}

inline Array slice_rows(const Array& a, std::size_t begin, std::size_t count) {
  Array out({count, a.cols()});
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(i, j) = a.at(begin + i, j);
  return out;
}

inline Array slice_cols(const Array& a, std::size_t begin, std::size_t count) {
  Array out({a.rows(), count});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) out.at(i, j) = a.at(i, begin + j);
  return out;
}

inline Array concat_rows(const std::vector<Array>& parts) {
  std::size_t rows = 0;
  for (const auto& p : parts) rows += p.rows();
  Array out({rows, parts.front().cols()});
  std::size_t r = 0;
  for (const auto& p : parts)
    for (std::size_t i = 0; i < p.rows(); ++i, ++r)
      for (std::size_t j = 0; j < p.cols(); ++j) out.at(r, j) = p.at(i, j);
  return out;
}

inline Array concat_cols(const std::vector<Array>& parts) {
  std::size_t cols = 0;
  for (const auto& p : parts) cols += p.cols();
  Array out({parts.front().rows(), cols});
  std::size_t c0 = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < p.rows(); ++i)
      for (std::size_t j = 0; j < p.cols(); ++j) out.at(i, c0 + j) = p.at(i, j);
    c0 += p.cols();
  }
  return out;
}

inline Array attention_weights(const Array& q, const Array& k) {
  return softmax_rows(scale(matmul(q, transpose(k)), 1.0 / std::sqrt(double(q.cols()))));
}

inline Array attention(const Array& q, const Array& k, const Array& v) { return matmul(attention_weights(q, k), v); }

// x[C,H,W], w[O,C,K,K], b[O]
inline Array conv2d(const Array& x, const Array& w, const Array& b, std::size_t stride, std::size_t pad) {
  const std::size_t c_in = x.shape[0], h = x.shape[1], wd = x.shape[2];
  const std::size_t c_out = w.shape[0], k = w.shape[2];
  const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  Array out({c_out, oh, ow});
  for (std::size_t o = 0; o < c_out; ++o)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xo = 0; xo < ow; ++xo) {
        double s = b.v[o];
        for (std::size_t c = 0; c < c_in; ++c)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long iy = long(y * stride + ky) - long(pad);
              const long ix = long(xo * stride + kx) - long(pad);
              if (iy < 0 || ix < 0 || iy >= long(h) || ix >= long(wd)) continue;
              s += w.v[((o * c_in + c) * k + ky) * k + kx] * x.v[(c * h + std::size_t(iy)) * wd + std::size_t(ix)];
            }
        out.v[(o * oh + y) * ow + xo] = s;
      }
  return out;
}

inline Array max_pool2d(const Array& x, std::size_t window) {
  const std::size_t c = x.shape[0], h = x.shape[1], w = x.shape[2];
  const std::size_t oh = h / window, ow = w / window;
  Array out({c, oh, ow});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xo = 0; xo < ow; ++xo) {
        double m = -INFINITY;
        for (std::size_t dy = 0; dy < window; ++dy)
          for (std::size_t dx = 0; dx < window; ++dx)
            m = std::max(m, x.v[(ch * h + y * window + dy) * w + xo * window + dx]);
        out.v[(ch * oh + y) * ow + xo] = m;
      }
  return out;
}

inline Array patchify(const Array& image, std::size_t p) {
  const std::size_t h = image.rows(), w = image.cols();
  Array out({(h / p) * (w / p), p * p});
  std::size_t row = 0;
  for (std::size_t gy = 0; gy < h / p; ++gy)
    for (std::size_t gx = 0; gx < w / p; ++gx, ++row)
      for (std::size_t dy = 0; dy < p; ++dy)
        for (std::size_t dx = 0; dx < p; ++dx) out.at(row, dy * p + dx) = image.at(gy * p + dy, gx * p + dx);
  return out;
}

inline Array linear(const Array& x, const Array& w, const Array& b) { return add_bias(matmul(x, w), b); }

// p = {Wq, bq, Wk, bk, Wv, bv, Wo, bo}
inline Array msa(const Array& x, std::span<const Array> p, std::size_t heads) {
  const Array q = linear(x, p[0], p[1]), k = linear(x, p[2], p[3]), v = linear(x, p[4], p[5]);
  const std::size_t dh = q.cols() / heads;
  std::vector<Array> outs;
  for (std::size_t h = 0; h < heads; ++h)
    outs.push_back(attention(slice_cols(q, h * dh, dh), slice_cols(k, h * dh, dh), slice_cols(v, h * dh, dh)));
  return linear(concat_cols(outs), p[6], p[7]);
}

// p = {g1, b1, 8 attention arrays, g2, b2, W_in, b_in, W_out, b_out}
inline Array encoder_block(const Array& x, std::span<const Array> p, std::size_t heads) {
  const Array x1 = add(x, msa(layer_norm(x, p[0], p[1]), p.subspan(2, 8), heads));
  const Array hidden = gelu(linear(layer_norm(x1, p[10], p[11]), p[12], p[13]));
  return add(x1, linear(hidden, p[14], p[15]));
}

// Parameters in ViTModel::parameters() order.
inline Array vit_forward(const ViTConfig& c, const Array& image, std::span<const Array> p) {
  Array x = linear(patchify(image, c.patch_size), p[0], p[1]);
  x = add(concat_rows({p[2], x}), p[3]);
  std::size_t at = 4;
  for (std::size_t b = 0; b < c.depth; ++b, at += 16) x = encoder_block(x, p.subspan(at, 16), c.heads);
  const Array cls = layer_norm(slice_rows(x, 0, 1), p[at], p[at + 1]);
  return reshape(linear(cls, p[at + 2], p[at + 3]), {c.num_labels});
}

// Parameters in CnnModel::parameters() order.
inline Array cnn_forward(const CnnConfig& c, const Array& image, std::span<const Array> p) {
  Array x = reshape(image, {1, image.rows(), image.cols()});
  std::size_t at = 0;
  for (const auto& spec : c.conv_blocks) {
    x = relu(conv2d(x, p[at], p[at + 1], spec.stride, spec.kernel / 2));
    if (spec.pool > 1) x = max_pool2d(x, spec.pool);
    at += 2;
  }
  x = reshape(x, {1, x.v.size()});
  for (std::size_t i = 0; i < c.fc_widths.size(); ++i, at += 2) x = relu(linear(x, p[at], p[at + 1]));
  return reshape(linear(x, p[at], p[at + 1]), {c.num_outputs});
}

inline double bce(std::span<const double> probs, std::span<const std::uint8_t> labels,
                  std::span<const double> weights, double eps = 1e-7) {
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], eps, 1.0 - eps);
    const double w = weights.empty() ? 1.0 : weights[i];
    total += -(w * labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p));
  }
  return total / double(probs.size());
}

inline double cross_entropy(std::span<const double> logits, std::size_t target) {
  double z = 0.0;
  for (double l : logits) z += std::exp(l);
  return std::log(z) - logits[target];
}

// ---- gradient checking --------------------------------------------------------

using EngineFn = std::function<Tensor(const std::vector<Tensor>&)>;
using ReferenceFn = std::function<Array(const std::vector<Array>&)>;

struct GradientReport {
  double max_relative_error = 0.0;  // over every checked gradient element
  double forward_error = 0.0;       // engine output vs oracle output
  std::size_t checked = 0;
};

// Relative error with a small absolute floor so exact zeros do not divide by zero.
inline double relative_error(double a, double b, double floor = 1e-2) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Compares the engine gradient of sum(out * R), R fixed random, with central
// differences of the same contraction on the f64 oracle, for every input that
// requires grad.
inline GradientReport check_gradients(const std::vector<Tensor>& inputs, const EngineFn& engine,
                                      const ReferenceFn& oracle, std::uint64_t seed, double h = 1e-6) {
  for (const auto& t : inputs) t.node_ptr()->grad.clear();
  const Tensor out = engine(inputs);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<float> r(out.numel());
  for (auto& x : r) x = static_cast<float>(dist(rng));
  const Tensor weights(out.shape(), r);
  numis::sum(numis::mul(out, weights)).backward();

  std::vector<Array> args;
  for (const auto& t : inputs) args.push_back(to_array(t));
  auto contract = [&](const std::vector<Array>& a) {
    const Array y = oracle(a);
    if (y.v.size() != r.size()) throw std::logic_error("oracle output size differs from engine output");
    double s = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) s += double(r[i]) * y.v[i];
    return s;
  };

  GradientReport report;
  const Array reference_out = oracle(args);
  for (std::size_t i = 0; i < r.size(); ++i)
    report.forward_error = std::max(report.forward_error,
                                    std::abs(reference_out.v[i] - out.data()[i]) / std::max(1.0, std::abs(reference_out.v[i])));

  for (std::size_t t = 0; t < inputs.size(); ++t) {
    if (!inputs[t].requires_grad()) continue;
    const auto grad = inputs[t].has_grad() ? inputs[t].grad() : std::span<const float>();
    for (std::size_t j = 0; j < args[t].v.size(); ++j) {
      const double saved = args[t].v[j];
      args[t].v[j] = saved + h;
      const double up = contract(args);
      args[t].v[j] = saved - h;
      const double down = contract(args);
      args[t].v[j] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = grad.empty() ? 0.0 : grad[j];
      report.max_relative_error = std::max(report.max_relative_error, relative_error(analytic, numeric));
      ++report.checked;
    }
  }
  return report;
}

// Random tensor with entries in [lo, hi], optionally kept at least `gap` away from zero.
inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                            double gap = 0.0, bool requires_grad = true) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) {
    double s = dist(rng);
    while (std::abs(s) < gap) s = dist(rng);
    x = static_cast<float>(s);
  }
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

}  // namespace numis::reference
