#include "numis/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "numis/errors.hpp"

namespace numis {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace autograd {

std::vector<float>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0F);
  return grad;
}

Tensor make_result(const char* op, Shape shape, std::vector<float> data,
                   std::vector<Tensor> parents, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  const bool tracked = std::any_of(parents.begin(), parents.end(),
                                   [](const Tensor& p) { return p.requires_grad(); });
  if (tracked) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor::from_node(std::move(node));
}

}  // namespace autograd

using autograd::Node;

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<float> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor shape " + shape_string(shape) + " holds " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(data.size()));
  }
  if (std::any_of(shape.begin(), shape.end(), [](std::size_t e) { return e == 0; })) {
    throw ShapeError("tensor extents must be positive, got " + shape_string(shape));
  }
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<float>(n, 0.0F), requires_grad);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<float>(n, value), requires_grad);
}

Tensor Tensor::scalar(float value) { return Tensor({1}, {value}); }

Tensor Tensor::from_node(std::shared_ptr<Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

Node& Tensor::ref() const {
  if (!node_) throw Error("use of an undefined tensor");
  return *node_;
}

const Shape& Tensor::shape() const { return ref().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw ShapeError("axis out of range for " + shape_string(s));
  return s[axis];
}

std::span<const float> Tensor::data() const { return ref().data; }
std::span<float> Tensor::mutable_data() { return ref().data; }

float Tensor::item() const {
  const auto& n = ref();
  if (n.data.size() != 1) throw ShapeError("item() on non-scalar " + shape_string(n.shape));
  return n.data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  ref().requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }
std::span<const float> Tensor::grad() const { return ref().grad; }
std::span<float> Tensor::mutable_grad() { return ref().grad; }

void Tensor::zero_grad() {
  auto& g = ref().grad;
  std::fill(g.begin(), g.end(), 0.0F);
}

void Tensor::clear_grad() { ref().grad.clear(); }

Tensor Tensor::detach() const {
  const auto& n = ref();
  return Tensor(n.shape, n.data, false);
}

void Tensor::backward() const {
  Node& root = ref();
  if (root.data.size() != 1) {
    throw ShapeError("backward needs a scalar loss, got " + shape_string(root.shape));
  }
  if (!root.requires_grad) return;

  // Iterative post-order DFS; only tracked nodes are visited.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{&root, 0}};
  visited.insert(&root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->data.size(), 0.0F);
  }
  root.grad_buffer()[0] += 1.0F;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->is_leaf()) n->backward(*n);
  }
}

// ---- kernels ----------------------------------------------------------------

namespace kernels {
namespace {

double dot(const float* x, const float* y, std::size_t n) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += double(x[i]) * y[i];
    s1 += double(x[i + 1]) * y[i + 1];
    s2 += double(x[i + 2]) * y[i + 2];
    s3 += double(x[i + 3]) * y[i + 3];
  }
  for (; i < n; ++i) s0 += double(x[i]) * y[i];
  return (s0 + s1) + (s2 + s3);
}

std::vector<float> transposed(const float* a, std::size_t rows, std::size_t cols) {
  std::vector<float> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = a[r * cols + c];
  return t;
}

}  // namespace

void gemm_nt(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const float* row = a + i * k;
    float* out = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const auto v = static_cast<float>(dot(row, b + j * k, k));
      out[j] = accumulate ? out[j] + v : v;
    }
  }
}

void gemm_nn(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  const auto bt = transposed(b, k, n);
  gemm_nt(a, bt.data(), c, m, k, n, accumulate);
}

void gemm_tn(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  const auto at = transposed(a, k, m);
  const auto bt = transposed(b, k, n);
  gemm_nt(at.data(), bt.data(), c, m, k, n, accumulate);
}

}  // namespace kernels

// ---- helpers ----------------------------------------------------------------

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(t.shape()));
  }
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

// Accumulates `values` into parent i's gradient if that parent is tracked.
template <typename F>
void with_grad(Node& self, std::size_t i, F&& f) {
  Node& p = *self.parents[i];
  if (p.requires_grad) f(p.grad_buffer(), p);
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, const char* op, Fwd fwd, Deriv deriv) {
  const auto in = x.data();
  std::vector<float> out(in.size());
  std::transform(in.begin(), in.end(), out.begin(), fwd);
  return autograd::make_result(op, x.shape(), std::move(out), {x}, [deriv](Node& self) {
    with_grad(self, 0, [&](std::vector<float>& g, Node& p) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * deriv(p.data[i], self.data[i]);
    });
  });
}

}  // namespace

// ---- linear algebra -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner extents differ, " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  std::vector<float> out(m * n);
  kernels::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n, false);
  return autograd::make_result("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const Node& pa = *self.parents[0];
    const Node& pb = *self.parents[1];
    with_grad(self, 0, [&](std::vector<float>& g, Node&) {
      kernels::gemm_nt(self.grad.data(), pb.data.data(), g.data(), m, n, k, true);
    });
    with_grad(self, 1, [&](std::vector<float>& g, Node&) {
      kernels::gemm_tn(pa.data.data(), self.grad.data(), g.data(), k, m, n, true);
    });
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<float> out(r * c);
  const auto in = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
  return autograd::make_result("transpose", {c, r}, std::move(out), {a}, [r, c](Node& self) {
    with_grad(self, 0, [&](std::vector<float>& g, Node&) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
    });
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_string(a.shape()) + " as " +
                     shape_string(shape));
  }
  std::vector<float> out(a.data().begin(), a.data().end());
  return autograd::make_result("reshape", std::move(shape), std::move(out), {a}, [](Node& self) {
    with_grad(self, 0, [&](std::vector<float>& g, Node&) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
  });
}

// ---- elementwise ----------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  const auto x = a.data(), y = b.data();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return autograd::make_result("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      with_grad(self, p, [&](std::vector<float>& g, Node&) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      });
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  const auto x = a.data(), y = b.data();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return autograd::make_result("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
    with_grad(self, 0, [&](std::vector<float>& g, Node&) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
    with_grad(self, 1, [&](std::vector<float>& g, Node&) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    });
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  const auto x = a.data(), y = b.data();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return autograd::make_result("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    const Node& pa = *self.parents[0];
    const Node& pb = *self.parents[1];
    with_grad(self, 0, [&](std::vector<float>& g, Node&) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.data[i];
    });
    with_grad(self, 1, [&](std::vector<float>& g, Node&) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.data[i];
    });
  });
}

Tensor scale(const Tensor& a, float factor) {
  const auto x = a.data();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return autograd::make_result("scale", a.shape(), std::move(out), {a}, [factor](Node& self) {
    with_grad(self, 0, [&](std::vector<float>& g, Node&) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
    });
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank(bias, 1, "add_bias");
  const std::size_t d = bias.dim(0);
  if (x.shape().back() != d) {
    throw ShapeError("add_bias: last extent of " + shape_string(x.shape()) + " != bias " +
                     shape_string(bias.shape()));
  }
  const auto in = x.data(), b = bias.data();
  std::vector<float> out(in.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] + b[i % d];
  return autograd::make_result("add_bias", x.shape(), std::move(out), {x, bias}, [d](Node& self) {
    with_grad(self, 0, [&](std::vector<float>& g, Node&) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
    with_grad(self, 1, [&](std::vector<float>& g, Node&) {
      std::vector<double> acc(d, 0.0);
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc[i % d] += self.grad[i];
      for (std::size_t j = 0; j < d; ++j) g[j] += static_cast<float>(acc[j]);
    });
  });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](float v) { return v > 0.0F ? v : 0.0F; },
      [](float in, float) { return in > 0.0F ? 1.0F : 0.0F; });
}

Tensor gelu(const Tensor& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  return unary(
      x, "gelu",
      [](float v) {
        const double z = v;
        return static_cast<float>(0.5 * z * (1.0 + std::tanh(kC * (z + kA * z * z * z))));
      },
      [](float in, float) {
        const double z = in;
        const double t = std::tanh(kC * (z + kA * z * z * z));
        return static_cast<float>(0.5 * (1.0 + t) +
                                  0.5 * z * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * z * z));
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](float v) {
        const double z = v;
        return static_cast<float>(z >= 0 ? 1.0 / (1.0 + std::exp(-z))
                                         : std::exp(z) / (1.0 + std::exp(z)));
      },
      [](float, float out) { return out * (1.0F - out); });
}

// ---- reductions ------------------------------------------------------------------

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  return autograd::make_result("sum", {1}, {static_cast<float>(acc)}, {x}, [](Node& self) {
    with_grad(self, 0, [&](std::vector<float>& g, Node&) {
      for (auto& v : g) v += self.grad[0];
    });
  });
}

Tensor mean(const Tensor& x) {
  return scale(sum(x), 1.0F / static_cast<float>(x.numel()));
}

Tensor softmax_rows(const Tensor& x) {
  require_rank(x, 2, "softmax_rows");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  const auto in = x.data();
  std::vector<float> out(in.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = in.data() + r * cols;
    const float peak = *std::max_element(row, row + cols);
    double total = 0.0;
    std::vector<double> e(cols);
    for (std::size_t c = 0; c < cols; ++c) {
      e[c] = std::exp(double(row[c]) - peak);
      total += e[c];
    }
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = static_cast<float>(e[c] / total);
  }
  return autograd::make_result("softmax_rows", x.shape(), std::move(out), {x},
                               [rows, cols](Node& self) {
    with_grad(self, 0, [&](std::vector<float>& g, Node&) {
      for (std::size_t r = 0; r < rows; ++r) {
        const float* y = self.data.data() + r * cols;
        const float* dy = self.grad.data() + r * cols;
        double inner = 0.0;
        for (std::size_t c = 0; c < cols; ++c) inner += double(dy[c]) * y[c];
        for (std::size_t c = 0; c < cols; ++c)
          g[r * cols + c] += static_cast<float>(y[c] * (dy[c] - inner));
      }
    });
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float epsilon) {
  require_rank(gain, 1, "layer_norm");
  require_same(gain, bias, "layer_norm");
  const std::size_t d = gain.dim(0);
  if (x.shape().back() != d) {
    throw ShapeError("layer_norm: last extent of " + shape_string(x.shape()) + " != " +
                     std::to_string(d));
  }
  const std::size_t vectors = x.numel() / d;
  const auto in = x.data(), gv = gain.data(), bv = bias.data();
  std::vector<float> out(in.size());
  std::vector<float> normalised(in.size());
  std::vector<float> inv_std(vectors);
  for (std::size_t v = 0; v < vectors; ++v) {
    const float* row = in.data() + v * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= double(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= double(d);
    const double inv = 1.0 / std::sqrt(var + epsilon);
    inv_std[v] = static_cast<float>(inv);
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (row[j] - mu) * inv;
      normalised[v * d + j] = static_cast<float>(xh);
      out[v * d + j] = static_cast<float>(gv[j] * xh + bv[j]);
    }
  }
  return autograd::make_result(
      "layer_norm", x.shape(), std::move(out), {x, gain, bias},
      [d, vectors, normalised = std::move(normalised), inv_std = std::move(inv_std)](Node& self) {
        const Node& pg = *self.parents[1];
        with_grad(self, 0, [&](std::vector<float>& g, Node&) {
          for (std::size_t v = 0; v < vectors; ++v) {
            const float* dy = self.grad.data() + v * d;
            const float* xh = normalised.data() + v * d;
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = double(dy[j]) * pg.data[j];
              m1 += dxh;
              m2 += dxh * xh[j];
            }
            m1 /= double(d);
            m2 /= double(d);
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = double(dy[j]) * pg.data[j];
              g[v * d + j] += static_cast<float>(inv_std[v] * (dxh - m1 - xh[j] * m2));
            }
          }
        });
        with_grad(self, 1, [&](std::vector<float>& g, Node&) {
          for (std::size_t j = 0; j < d; ++j) {
            double acc = 0.0;
            for (std::size_t v = 0; v < vectors; ++v)
              acc += double(self.grad[v * d + j]) * normalised[v * d + j];
            g[j] += static_cast<float>(acc);
          }
        });
        with_grad(self, 2, [&](std::vector<float>& g, Node&) {
          for (std::size_t j = 0; j < d; ++j) {
            double acc = 0.0;
            for (std::size_t v = 0; v < vectors; ++v) acc += self.grad[v * d + j];
            g[j] += static_cast<float>(acc);
          }
        });
      });
}

// ---- slicing ---------------------------------------------------------------------

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  require_rank(x, 2, "slice_rows");
  const std::size_t cols = x.dim(1);
  if (count == 0 || begin + count > x.dim(0)) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside " + shape_string(x.shape()));
  }
  const auto in = x.data();
  std::vector<float> out(in.begin() + begin * cols, in.begin() + (begin + count) * cols);
  return autograd::make_result("slice_rows", {count, cols}, std::move(out), {x},
                               [begin, cols](Node& self) {
    with_grad(self, 0, [&](std::vector<float>& g, Node&) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * cols + i] += self.grad[i];
    });
  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  require_rank(x, 2, "slice_cols");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (count == 0 || begin + count > cols) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside " + shape_string(x.shape()));
  }
  const auto in = x.data();
  std::vector<float> out(rows * count);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(in.begin() + r * cols + begin, count, out.begin() + r * count);
  return autograd::make_result("slice_cols", {rows, count}, std::move(out), {x},
                               [rows, cols, begin, count](Node& self) {
    with_grad(self, 0, [&](std::vector<float>& g, Node&) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < count; ++c) g[r * cols + begin + c] += self.grad[r * count + c];
    });
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t cols = parts.front().dim(1);
  std::size_t rows = 0;
  std::vector<float> out;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.dim(1) != cols) throw ShapeError("concat_rows: column mismatch " + shape_string(p.shape()));
    rows += p.dim(0);
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return autograd::make_result("concat_rows", {rows, cols}, std::move(out), parts, [](Node& self) {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      const std::size_t n = self.parents[i]->data.size();
      with_grad(self, i, [&](std::vector<float>& g, Node&) {
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[offset + j];
      });
      offset += n;
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = parts.front().dim(0);
  std::size_t cols = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != rows) throw ShapeError("concat_cols: row mismatch " + shape_string(p.shape()));
    cols += p.dim(1);
  }
  std::vector<float> out(rows * cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(p.data().begin() + r * w, w, out.begin() + r * cols + offset);
    offset += w;
  }
  return autograd::make_result("concat_cols", {rows, cols}, std::move(out), parts,
                               [rows, cols](Node& self) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      const std::size_t w = self.parents[i]->shape[1];
      with_grad(self, i, [&](std::vector<float>& g, Node&) {
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < w; ++c) g[r * w + c] += self.grad[r * cols + off + c];
      });
      off += w;
    }
  });
}

// ---- attention ---------------------------------------------------------------------

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, Tensor* weights) {
  require_rank(q, 2, "scaled_dot_attention");
  require_rank(k, 2, "scaled_dot_attention");
  require_rank(v, 2, "scaled_dot_attention");
  if (q.dim(1) != k.dim(1) || q.dim(0) != k.dim(0) || k.dim(0) != v.dim(0)) {
    throw ShapeError("scaled_dot_attention: incompatible q " + shape_string(q.shape()) + ", k " +
                     shape_string(k.shape()) + ", v " + shape_string(v.shape()));
  }
  const float inv_scale = 1.0F / std::sqrt(static_cast<float>(q.dim(1)));
  Tensor attn = softmax_rows(scale(matmul(q, transpose(k)), inv_scale));
  if (weights != nullptr) *weights = attn.detach();
  return matmul(attn, v);
}

// ---- convolution -------------------------------------------------------------------

namespace {

struct ConvGeometry {
  std::size_t channels, height, width, kernel, stride, padding, out_h, out_w;
};

void im2col(const float* x, const ConvGeometry& g, float* col) {
  const std::size_t spatial = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < g.kernel; ++ky)
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        float* dst = col + ((c * g.kernel + ky) * g.kernel + kx) * spatial;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.padding);
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.padding);
            const bool inside = iy >= 0 && ix >= 0 && iy < std::ptrdiff_t(g.height) &&
                                ix < std::ptrdiff_t(g.width);
            dst[oy * g.out_w + ox] = inside ? x[(c * g.height + iy) * g.width + ix] : 0.0F;
          }
        }
      }
}

void col2im_add(const float* col, const ConvGeometry& g, float* dx) {
  const std::size_t spatial = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < g.kernel; ++ky)
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const float* src = col + ((c * g.kernel + ky) * g.kernel + kx) * spatial;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.padding);
          if (iy < 0 || iy >= std::ptrdiff_t(g.height)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.padding);
            if (ix < 0 || ix >= std::ptrdiff_t(g.width)) continue;
            dx[(c * g.height + iy) * g.width + ix] += src[oy * g.out_w + ox];
          }
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require_rank(x, 3, "conv2d");
  require_rank(weight, 4, "conv2d");
  require_rank(bias, 1, "conv2d");
  const std::size_t out_channels = weight.dim(0);
  const std::size_t kernel = weight.dim(2);
  if (weight.dim(1) != x.dim(0) || weight.dim(3) != kernel || bias.dim(0) != out_channels) {
    throw ShapeError("conv2d: input " + shape_string(x.shape()) + " incompatible with weight " +
                     shape_string(weight.shape()) + " / bias " + shape_string(bias.shape()));
  }
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), kernel, stride, padding, 0, 0};
  if (g.height + 2 * padding < kernel || g.width + 2 * padding < kernel) {
    throw ShapeError("conv2d: kernel larger than padded input " + shape_string(x.shape()));
  }
  g.out_h = (g.height + 2 * padding - kernel) / stride + 1;
  g.out_w = (g.width + 2 * padding - kernel) / stride + 1;
  const std::size_t patch = g.channels * kernel * kernel;
  const std::size_t spatial = g.out_h * g.out_w;

  std::vector<float> col(patch * spatial);
  im2col(x.data().data(), g, col.data());
  std::vector<float> out(out_channels * spatial);
  kernels::gemm_nn(weight.data().data(), col.data(), out.data(), out_channels, patch, spatial,
                   false);
  const auto b = bias.data();
  for (std::size_t o = 0; o < out_channels; ++o)
    for (std::size_t s = 0; s < spatial; ++s) out[o * spatial + s] += b[o];

  return autograd::make_result(
      "conv2d", {out_channels, g.out_h, g.out_w}, std::move(out), {x, weight, bias},
      [g, out_channels, patch, spatial, col = std::move(col)](Node& self) {
        const Node& pw = *self.parents[1];
        with_grad(self, 0, [&](std::vector<float>& dx, Node&) {
          std::vector<float> dcol(patch * spatial);
          kernels::gemm_tn(pw.data.data(), self.grad.data(), dcol.data(), patch, out_channels,
                           spatial, false);
          col2im_add(dcol.data(), g, dx.data());
        });
        with_grad(self, 1, [&](std::vector<float>& dw, Node&) {
          kernels::gemm_nt(self.grad.data(), col.data(), dw.data(), out_channels, spatial, patch,
                           true);
        });
        with_grad(self, 2, [&](std::vector<float>& db, Node&) {
          for (std::size_t o = 0; o < out_channels; ++o) {
            double acc = 0.0;
            for (std::size_t s = 0; s < spatial; ++s) acc += self.grad[o * spatial + s];
            db[o] += static_cast<float>(acc);
          }
        });
      });
}

Tensor max_pool2d(const Tensor& x, std::size_t window) {
  require_rank(x, 3, "max_pool2d");
  if (window == 0 || x.dim(1) < window || x.dim(2) < window) {
    throw ShapeError("max_pool2d: window " + std::to_string(window) + " does not fit " +
                     shape_string(x.shape()));
  }
  const std::size_t channels = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = h / window, ow = w / window;
  const auto in = x.data();
  std::vector<float> out(channels * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (c * h + oy * window) * w + ox * window;
        for (std::size_t ky = 0; ky < window; ++ky)
          for (std::size_t kx = 0; kx < window; ++kx) {
            const std::size_t idx = (c * h + oy * window + ky) * w + ox * window + kx;
            if (in[idx] > in[best]) best = idx;
          }
        const std::size_t o = (c * oh + oy) * ow + ox;
        out[o] = in[best];
        argmax[o] = best;
      }
  return autograd::make_result("max_pool2d", {channels, oh, ow}, std::move(out), {x},
                               [argmax = std::move(argmax)](Node& self) {
    with_grad(self, 0, [&](std::vector<float>& g, Node&) {
      for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += self.grad[o];
    });
  });
}

}  // namespace numis
