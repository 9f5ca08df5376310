#pragma once

// Minimal dense tensor with reverse-mode automatic differentiation.
//
// A Tensor is a shared handle. Operations on tensors that require gradients
// record a Node holding the inputs and a backward closure; Tensor::backward()
// walks the recorded graph in reverse topological order and then releases it.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace hcdg::nn {

using Shape = std::vector<int>;

size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;

struct Node {
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  // Receives the output tensor (with its gradient populated) and accumulates
  // into the inputs' gradients.
  std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  bool graph_consumed = false;
  std::shared_ptr<Node> creator;

  // Zero-initialized gradient buffer, allocated on first use.
  std::vector<double>& grad_buffer();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int dim(int i) const { return impl_->shape.at(i); }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  size_t numel() const { return impl_->data.size(); }

  std::span<double> data() { return impl_->data; }
  std::span<const double> data() const { return impl_->data; }
  std::vector<double>& values() { return impl_->data; }
  const std::vector<double>& values() const { return impl_->data; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> grad() { return impl_->grad; }
  void zero_grad();
  // Drops the gradient buffer entirely.
  void clear_grad() { impl_->grad.clear(); impl_->grad.shrink_to_fit(); }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on);
  bool is_leaf() const { return impl_->creator == nullptr; }

  double item() const;
  Tensor detach() const;
  Tensor clone() const;

  // Reverse-mode sweep from this scalar. Throws if the graph was already consumed.
  void backward();

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& ptr() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

// ---- primitive operations -------------------------------------------------

// x: N x Ci x H x W, w: Co x Ci x k x k, b: Co (may be undefined).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);

struct BatchNormState {
  std::span<double> running_mean;
  std::span<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;
  bool update_running = true;
};

// Per-channel affine normalization over (N, H, W). In training mode batch
// statistics are used and the running estimates are updated in place; in
// evaluation mode the running estimates are used.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState state,
                  bool training);

Tensor relu(const Tensor& x);
Tensor upsample_nearest2x(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
// 1 / (1 + exp(-delta * x)).
Tensor heaviside(const Tensor& x, double delta);
// Softmax across dimension 1 of an N x C x H x W tensor.
Tensor softmax_channels(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
// Elementwise product with a constant (non-differentiable) factor of equal size.
Tensor mul_const(const Tensor& x, std::span<const double> factor);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Items [begin, end) along dimension 0.
Tensor slice_batch(const Tensor& x, int begin, int end);
// Concatenation along dimension 0.
Tensor concat_batch(const std::vector<Tensor>& parts);

// ---- fused losses (scalar outputs) ----------------------------------------

// Mean binary cross-entropy of sigmoid(logits) against {0,1} targets,
// evaluated as max(x,0) - x*y + log(1 + exp(-|x|)).
Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets);
// Per-item mean BCE for an N-batch, without graph. Used for candidate audits.
std::vector<double> bce_with_logits_per_item(const Tensor& logits, std::span<const double> targets);

// Mean over (N, H, W) of KL(softmax_c(p) || softmax_c(q)) where p and q are
// N x C x H x W logits. Gradients flow into whichever arguments require them.
Tensor kl_softmax_channels(const Tensor& p_logits, const Tensor& q_logits);

// Mean squared difference against a constant target.
Tensor mse(const Tensor& x, std::span<const double> target);

}  // namespace hcdg::nn
