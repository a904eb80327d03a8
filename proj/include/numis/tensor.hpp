#pragma once

// Dense f32 tensors with reverse-mode differentiation.
//
// Every op records a node holding its parents and a backward rule; calling
// backward() on a scalar walks the recorded graph in reverse topological
// order. Leaves with requires_grad=false never receive a gradient buffer,
// which is how frozen parameters are expressed.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace numis {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace autograd {

struct Node {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until something is accumulated
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const noexcept { return !backward; }
  // Zero-filled on first use.
  std::vector<float>& grad_buffer();
};

}  // namespace autograd

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<float> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor scalar(float value);
  static Tensor from_node(std::shared_ptr<autograd::Node> node);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return data().size(); }

  std::span<const float> data() const;
  // Direct write access for optimisers and initialisers; bypasses the graph.
  std::span<float> mutable_data();
  float item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const float> grad() const;
  std::span<float> mutable_grad();
  void zero_grad();
  void clear_grad();

  // Same values, no history, requires_grad=false.
  Tensor detach() const;

  // Seeds d(this)/d(this)=1 and propagates. Leaf gradients accumulate across
  // calls; intermediate gradients are recomputed each call.
  void backward() const;

  const autograd::Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<autograd::Node>& node_ptr() const noexcept { return node_; }

 private:
  autograd::Node& ref() const;
  std::shared_ptr<autograd::Node> node_;
};

namespace autograd {

// Builds an op result. Parents that do not require grad are still kept when
// any sibling does so backward rules can index them positionally; when none
// does, the result is a constant and `backward` is dropped.
Tensor make_result(const char* op, Shape shape, std::vector<float> data,
                   std::vector<Tensor> parents, std::function<void(Node&)> backward);

}  // namespace autograd

// Row-major GEMM kernels with f64 accumulation. `accumulate` adds into c.
namespace kernels {
// c[m,n] (+)= a[m,k] * b[k,n]
void gemm_nn(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);
// c[m,n] (+)= a[m,k] * b[n,k]^T
void gemm_nt(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);
// c[m,n] (+)= a[k,m]^T * b[k,n]
void gemm_tn(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);
}  // namespace kernels

// ---- ops ------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float factor);
// x[..., d] + bias[d]; the only broadcast supported.
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor relu(const Tensor& x);
// tanh approximation: 0.5x(1 + tanh(sqrt(2/pi)(x + 0.044715x^3)))
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Row-wise softmax with per-row max subtraction.
Tensor softmax_rows(const Tensor& x);
// Normalises over the last axis, variance epsilon added before the sqrt.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float epsilon = 1e-5F);

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);

// softmax(q k^T / sqrt(d_k)) v. When `weights` is non-null it receives the
// attention matrix (detached).
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            Tensor* weights = nullptr);

// x[C,H,W], weight[O,C,K,K], bias[O] -> [O,H',W']
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);
// Non-overlapping max pooling; trailing rows/cols that do not fill a window are dropped.
Tensor max_pool2d(const Tensor& x, std::size_t window);

}  // namespace numis
