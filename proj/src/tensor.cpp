#include "hcdg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "hcdg/kernels.hpp"

namespace hcdg::nn {

namespace {

thread_local bool g_grad_enabled = true;

using ImplPtr = std::shared_ptr<TensorImpl>;

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void require_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

bool tracks(const Tensor& t) { return t.defined() && t.requires_grad(); }

// Creates the output of an operation and, when any input is tracked, the node
// that will propagate its gradient.
Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<const Tensor*> inputs,
                   std::function<void(const TensorImpl&)> backward) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  bool needs = false;
  if (g_grad_enabled) {
    for (const Tensor* t : inputs) {
      if (!tracks(*t)) continue;
      if (t->impl()->graph_consumed && t->impl()->creator == nullptr) {
        throw std::logic_error("operation on an intermediate tensor whose graph was already released");
      }
      needs = true;
    }
  }
  if (needs) {
    auto node = std::make_shared<Node>();
    for (const Tensor* t : inputs) {
      if (t->defined()) node->inputs.push_back(t->ptr());
    }
    node->backward = std::move(backward);
    impl->requires_grad = true;
    impl->creator = std::move(node);
  }
  return Tensor(impl);
}

void check_finite_shape(const Shape& shape) {
  require(!shape.empty() && shape.size() <= 4, "tensor rank must be 1..4");
  for (int d : shape) require(d > 0, "tensor dimensions must be positive");
}

}  // namespace

size_t numel_of(const Shape& shape) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::vector<double>& TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  check_finite_shape(shape);
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(numel_of(shape), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(impl);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  check_finite_shape(shape);
  require(values.size() == numel_of(shape), "Tensor::from: value count does not match shape");
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(impl);
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void Tensor::set_requires_grad(bool on) {
  if (!is_leaf()) throw std::logic_error("requires_grad can only be changed on leaf tensors");
  impl_->requires_grad = on;
  if (!on) clear_grad();
}

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item() on a tensor with " + std::to_string(numel()) + " elements");
  return impl_->data[0];
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return Tensor(impl);
}

Tensor Tensor::clone() const {
  Tensor t = detach();
  t.impl_->requires_grad = impl_->requires_grad && is_leaf();
  return t;
}

void Tensor::backward() {
  if (impl_->graph_consumed) throw std::logic_error("backward() called twice on the same graph");
  if (numel() != 1) throw std::invalid_argument("backward() requires a scalar loss");
  if (!impl_->requires_grad) throw std::logic_error("backward() on a tensor that does not require grad");

  // Iterative post-order DFS gives a topological order (inputs before outputs).
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (node->creator && next < node->creator->inputs.size()) {
      TensorImpl* child = node->creator->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  impl_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* t = *it;
    if (t->creator && !t->grad.empty()) t->creator->backward(*t);
  }
  // Release the graph; intermediate gradients are not kept.
  for (TensorImpl* t : order) {
    if (t->creator) {
      t->creator.reset();
      t->graph_consumed = true;
      if (t != impl_.get()) {
        t->grad.clear();
        t->grad.shrink_to_fit();
      }
    }
  }
  impl_->graph_consumed = true;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_mode_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  require(x.rank() == 4 && w.rank() == 4, "conv2d expects rank-4 input and weight");
  require(x.dim(1) == w.dim(1), "conv2d: channel mismatch " + shape_str(x.shape()) + " * " + shape_str(w.shape()));
  require(w.dim(2) == w.dim(3), "conv2d: square kernels only");
  kernels::ConvShape s;
  s.batch = x.dim(0);
  s.in_channels = x.dim(1);
  s.in_h = x.dim(2);
  s.in_w = x.dim(3);
  s.out_channels = w.dim(0);
  s.kernel = w.dim(2);
  s.stride = stride;
  s.pad = pad;
  require(s.out_h() > 0 && s.out_w() > 0, "conv2d: empty output");
  if (b.defined()) require(b.numel() == static_cast<size_t>(s.out_channels), "conv2d: bias size");

  std::vector<double> out(static_cast<size_t>(s.batch) * s.out_channels * s.out_h() * s.out_w());
  kernels::parallel::conv2d_forward(s, x.data(), w.data(), b.defined() ? b.data() : std::span<const double>{}, out);

  TensorImpl* xi = x.impl();
  TensorImpl* wi = w.impl();
  TensorImpl* bi = b.defined() ? b.impl() : nullptr;
  return make_result({s.batch, s.out_channels, s.out_h(), s.out_w()}, std::move(out), {&x, &w, &b},
                     [s, xi, wi, bi](const TensorImpl& o) {
                       std::span<double> dx, dw, db;
                       if (xi->requires_grad) dx = xi->grad_buffer();
                       if (wi->requires_grad) dw = wi->grad_buffer();
                       if (bi && bi->requires_grad) db = bi->grad_buffer();
                       kernels::parallel::conv2d_backward(s, xi->data, wi->data, o.grad, dx, dw, db);
                     });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState st, bool training) {
  require(x.rank() == 4, "batch_norm expects N x C x H x W");
  const int n = x.dim(0), c = x.dim(1);
  const size_t hw = static_cast<size_t>(x.dim(2)) * x.dim(3);
  require(gamma.numel() == static_cast<size_t>(c) && beta.numel() == static_cast<size_t>(c), "batch_norm: affine size");
  require(st.running_mean.size() == static_cast<size_t>(c) && st.running_var.size() == static_cast<size_t>(c),
          "batch_norm: running statistics size");
  const size_t m = static_cast<size_t>(n) * hw;
  const auto& xd = x.values();
  std::vector<double> out(xd.size());
  std::vector<double> xhat(xd.size());
  std::vector<double> inv_std(c);

  for (int ch = 0; ch < c; ++ch) {
    double mu, var;
    if (training) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) {
        const double* p = xd.data() + (static_cast<size_t>(i) * c + ch) * hw;
        for (size_t k = 0; k < hw; ++k) s += p[k];
      }
      mu = s / static_cast<double>(m);
      double v = 0.0;
      for (int i = 0; i < n; ++i) {
        const double* p = xd.data() + (static_cast<size_t>(i) * c + ch) * hw;
        for (size_t k = 0; k < hw; ++k) v += (p[k] - mu) * (p[k] - mu);
      }
      var = v / static_cast<double>(m);
      const double unbiased = m > 1 ? v / static_cast<double>(m - 1) : var;
      if (st.update_running) {
        st.running_mean[ch] = (1.0 - st.momentum) * st.running_mean[ch] + st.momentum * mu;
        st.running_var[ch] = (1.0 - st.momentum) * st.running_var[ch] + st.momentum * unbiased;
      }
    } else {
      mu = st.running_mean[ch];
      var = st.running_var[ch];
    }
    const double is = 1.0 / std::sqrt(var + st.eps);
    inv_std[ch] = is;
    const double g = gamma.data()[ch], bt = beta.data()[ch];
    for (int i = 0; i < n; ++i) {
      const size_t off = (static_cast<size_t>(i) * c + ch) * hw;
      for (size_t k = 0; k < hw; ++k) {
        const double xh = (xd[off + k] - mu) * is;
        xhat[off + k] = xh;
        out[off + k] = g * xh + bt;
      }
    }
  }

  TensorImpl* xi = x.impl();
  TensorImpl* gi = gamma.impl();
  TensorImpl* bi = beta.impl();
  return make_result(x.shape(), std::move(out), {&x, &gamma, &beta},
                     [n, c, hw, m, training, xi, gi, bi, xhat = std::move(xhat),
                      inv_std = std::move(inv_std)](const TensorImpl& o) {
                       const auto& dy = o.grad;
                       for (int ch = 0; ch < c; ++ch) {
                         double sum_dy = 0.0, sum_dy_xh = 0.0;
                         for (int i = 0; i < n; ++i) {
                           const size_t off = (static_cast<size_t>(i) * c + ch) * hw;
                           for (size_t k = 0; k < hw; ++k) {
                             sum_dy += dy[off + k];
                             sum_dy_xh += dy[off + k] * xhat[off + k];
                           }
                         }
                         if (gi->requires_grad) gi->grad_buffer()[ch] += sum_dy_xh;
                         if (bi->requires_grad) bi->grad_buffer()[ch] += sum_dy;
                         if (!xi->requires_grad) continue;
                         auto& dx = xi->grad_buffer();
                         const double g = gi->data[ch];
                         const double is = inv_std[ch];
                         if (training) {
                           const double inv_m = 1.0 / static_cast<double>(m);
                           for (int i = 0; i < n; ++i) {
                             const size_t off = (static_cast<size_t>(i) * c + ch) * hw;
                             for (size_t k = 0; k < hw; ++k) {
                               dx[off + k] += g * is * inv_m *
                                              (static_cast<double>(m) * dy[off + k] - sum_dy - xhat[off + k] * sum_dy_xh);
                             }
                           }
                         } else {
                           for (int i = 0; i < n; ++i) {
                             const size_t off = (static_cast<size_t>(i) * c + ch) * hw;
                             for (size_t k = 0; k < hw; ++k) dx[off + k] += g * is * dy[off + k];
                           }
                         }
                       }
                     });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto& xd = x.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > 0.0 ? xd[i] : 0.0;
  TensorImpl* xi = x.impl();
  return make_result(x.shape(), std::move(out), {&x}, [xi](const TensorImpl& o) {
    auto& dx = xi->grad_buffer();
    for (size_t i = 0; i < dx.size(); ++i) {
      if (xi->data[i] > 0.0) dx[i] += o.grad[i];
    }
  });
}

Tensor upsample_nearest2x(const Tensor& x) {
  require(x.rank() == 4, "upsample expects N x C x H x W");
  const int nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = 2 * h, ow = 2 * w;
  std::vector<double> out(static_cast<size_t>(nc) * oh * ow);
  const auto& xd = x.values();
  for (int p = 0; p < nc; ++p) {
    const double* src = xd.data() + static_cast<size_t>(p) * h * w;
    double* dst = out.data() + static_cast<size_t>(p) * oh * ow;
    for (int y = 0; y < oh; ++y) {
      const double* srow = src + static_cast<size_t>(y / 2) * w;
      double* drow = dst + static_cast<size_t>(y) * ow;
      for (int xx = 0; xx < ow; ++xx) drow[xx] = srow[xx / 2];
    }
  }
  TensorImpl* xi = x.impl();
  return make_result({x.dim(0), x.dim(1), oh, ow}, std::move(out), {&x}, [xi, nc, h, w](const TensorImpl& o) {
    auto& dx = xi->grad_buffer();
    const int oh = 2 * h, ow = 2 * w;
    for (int p = 0; p < nc; ++p) {
      const double* g = o.grad.data() + static_cast<size_t>(p) * oh * ow;
      double* d = dx.data() + static_cast<size_t>(p) * h * w;
      for (int y = 0; y < oh; ++y) {
        for (int xx = 0; xx < ow; ++xx) d[static_cast<size_t>(y / 2) * w + xx / 2] += g[static_cast<size_t>(y) * ow + xx];
      }
    }
  });
}

Tensor sigmoid(const Tensor& x) { return heaviside(x, 1.0); }

Tensor heaviside(const Tensor& x, double delta) {
  require(delta > 0.0, "heaviside: delta must be positive");
  std::vector<double> out(x.numel());
  const auto& xd = x.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-delta * xd[i]));
  TensorImpl* xi = x.impl();
  return make_result(x.shape(), std::move(out), {&x}, [xi, delta](const TensorImpl& o) {
    auto& dx = xi->grad_buffer();
    for (size_t i = 0; i < dx.size(); ++i) dx[i] += o.grad[i] * delta * o.data[i] * (1.0 - o.data[i]);
  });
}

Tensor tanh(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto& xd = x.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xd[i]);
  TensorImpl* xi = x.impl();
  return make_result(x.shape(), std::move(out), {&x}, [xi](const TensorImpl& o) {
    auto& dx = xi->grad_buffer();
    for (size_t i = 0; i < dx.size(); ++i) dx[i] += o.grad[i] * (1.0 - o.data[i] * o.data[i]);
  });
}

Tensor softmax_channels(const Tensor& x) {
  require(x.rank() == 4, "softmax_channels expects N x C x H x W");
  const int n = x.dim(0), c = x.dim(1);
  const size_t hw = static_cast<size_t>(x.dim(2)) * x.dim(3);
  std::vector<double> out(x.numel());
  const auto& xd = x.values();
  for (int i = 0; i < n; ++i) {
    const size_t base = static_cast<size_t>(i) * c * hw;
    for (size_t k = 0; k < hw; ++k) {
      double mx = -INFINITY;
      for (int ch = 0; ch < c; ++ch) mx = std::max(mx, xd[base + ch * hw + k]);
      double s = 0.0;
      for (int ch = 0; ch < c; ++ch) s += std::exp(xd[base + ch * hw + k] - mx);
      for (int ch = 0; ch < c; ++ch) out[base + ch * hw + k] = std::exp(xd[base + ch * hw + k] - mx) / s;
    }
  }
  TensorImpl* xi = x.impl();
  return make_result(x.shape(), std::move(out), {&x}, [xi, n, c, hw](const TensorImpl& o) {
    auto& dx = xi->grad_buffer();
    for (int i = 0; i < n; ++i) {
      const size_t base = static_cast<size_t>(i) * c * hw;
      for (size_t k = 0; k < hw; ++k) {
        double dot = 0.0;
        for (int ch = 0; ch < c; ++ch) dot += o.grad[base + ch * hw + k] * o.data[base + ch * hw + k];
        for (int ch = 0; ch < c; ++ch) {
          const size_t idx = base + ch * hw + k;
          dx[idx] += o.data[idx] * (o.grad[idx] - dot);
        }
      }
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  TensorImpl* ai = a.impl();
  TensorImpl* bi = b.impl();
  return make_result(a.shape(), std::move(out), {&a, &b}, [ai, bi](const TensorImpl& o) {
    if (ai->requires_grad) {
      auto& d = ai->grad_buffer();
      for (size_t i = 0; i < d.size(); ++i) d[i] += o.grad[i];
    }
    if (bi->requires_grad) {
      auto& d = bi->grad_buffer();
      for (size_t i = 0; i < d.size(); ++i) d[i] += o.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  TensorImpl* ai = a.impl();
  TensorImpl* bi = b.impl();
  return make_result(a.shape(), std::move(out), {&a, &b}, [ai, bi](const TensorImpl& o) {
    if (ai->requires_grad) {
      auto& d = ai->grad_buffer();
      for (size_t i = 0; i < d.size(); ++i) d[i] += o.grad[i];
    }
    if (bi->requires_grad) {
      auto& d = bi->grad_buffer();
      for (size_t i = 0; i < d.size(); ++i) d[i] -= o.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  TensorImpl* ai = a.impl();
  TensorImpl* bi = b.impl();
  return make_result(a.shape(), std::move(out), {&a, &b}, [ai, bi](const TensorImpl& o) {
    if (ai->requires_grad) {
      auto& d = ai->grad_buffer();
      for (size_t i = 0; i < d.size(); ++i) d[i] += o.grad[i] * bi->data[i];
    }
    if (bi->requires_grad) {
      auto& d = bi->grad_buffer();
      for (size_t i = 0; i < d.size(); ++i) d[i] += o.grad[i] * ai->data[i];
    }
  });
}

Tensor scale(const Tensor& x, double s) {
  std::vector<double> out(x.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * s;
  TensorImpl* xi = x.impl();
  return make_result(x.shape(), std::move(out), {&x}, [xi, s](const TensorImpl& o) {
    auto& d = xi->grad_buffer();
    for (size_t i = 0; i < d.size(); ++i) d[i] += o.grad[i] * s;
  });
}

Tensor mul_const(const Tensor& x, std::span<const double> factor) {
  require(factor.size() == x.numel(), "mul_const: size mismatch");
  std::vector<double> f(factor.begin(), factor.end());
  std::vector<double> out(x.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * f[i];
  TensorImpl* xi = x.impl();
  return make_result(x.shape(), std::move(out), {&x}, [xi, f = std::move(f)](const TensorImpl& o) {
    auto& d = xi->grad_buffer();
    for (size_t i = 0; i < d.size(); ++i) d[i] += o.grad[i] * f[i];
  });
}

Tensor sum(const Tensor& x) {
  const double s = std::accumulate(x.values().begin(), x.values().end(), 0.0);
  TensorImpl* xi = x.impl();
  return make_result({1}, {s}, {&x}, [xi](const TensorImpl& o) {
    auto& d = xi->grad_buffer();
    for (double& v : d) v += o.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor slice_batch(const Tensor& x, int begin, int end) {
  require(x.rank() >= 1 && 0 <= begin && begin < end && end <= x.dim(0), "slice_batch: bad range");
  const size_t item = x.numel() / static_cast<size_t>(x.dim(0));
  Shape shape = x.shape();
  shape[0] = end - begin;
  std::vector<double> out(x.values().begin() + begin * item, x.values().begin() + end * item);
  TensorImpl* xi = x.impl();
  return make_result(shape, std::move(out), {&x}, [xi, begin, item](const TensorImpl& o) {
    auto& d = xi->grad_buffer();
    for (size_t i = 0; i < o.grad.size(); ++i) d[begin * item + i] += o.grad[i];
  });
}

Tensor concat_batch(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_batch: no inputs");
  Shape shape = parts[0].shape();
  int total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    require(s.size() == shape.size() && std::equal(s.begin() + 1, s.end(), shape.begin() + 1),
            "concat_batch: trailing dimensions differ");
    total += s[0];
  }
  shape[0] = total;
  std::vector<double> out;
  out.reserve(numel_of(shape));
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());

  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->data = std::move(out);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parts) needs = needs || tracks(p);
  }
  if (needs) {
    auto node = std::make_shared<Node>();
    std::vector<TensorImpl*> raw;
    for (const auto& p : parts) {
      node->inputs.push_back(p.ptr());
      raw.push_back(p.impl());
    }
    node->backward = [raw](const TensorImpl& o) {
      size_t off = 0;
      for (TensorImpl* t : raw) {
        if (t->requires_grad) {
          auto& d = t->grad_buffer();
          for (size_t i = 0; i < d.size(); ++i) d[i] += o.grad[off + i];
        }
        off += t->data.size();
      }
    };
    impl->requires_grad = true;
    impl->creator = std::move(node);
  }
  return Tensor(impl);
}

// ---------------------------------------------------------------------------

Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets) {
  require(targets.size() == logits.numel(), "bce_with_logits: target size mismatch");
  const auto& x = logits.values();
  double s = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    s += std::max(x[i], 0.0) - x[i] * targets[i] + std::log1p(std::exp(-std::abs(x[i])));
  }
  const double inv = 1.0 / static_cast<double>(x.size());
  std::vector<double> y(targets.begin(), targets.end());
  TensorImpl* xi = logits.impl();
  return make_result({1}, {s * inv}, {&logits}, [xi, inv, y = std::move(y)](const TensorImpl& o) {
    auto& d = xi->grad_buffer();
    const double g = o.grad[0] * inv;
    for (size_t i = 0; i < d.size(); ++i) d[i] += g * (1.0 / (1.0 + std::exp(-xi->data[i])) - y[i]);
  });
}

std::vector<double> bce_with_logits_per_item(const Tensor& logits, std::span<const double> targets) {
  require(targets.size() == logits.numel(), "bce_with_logits_per_item: target size mismatch");
  const int n = logits.dim(0);
  const size_t item = logits.numel() / static_cast<size_t>(n);
  std::vector<double> out(n);
  const auto& x = logits.values();
  for (int b = 0; b < n; ++b) {
    double s = 0.0;
    for (size_t k = 0; k < item; ++k) {
      const size_t i = b * item + k;
      s += std::max(x[i], 0.0) - x[i] * targets[i] + std::log1p(std::exp(-std::abs(x[i])));
    }
    out[b] = s / static_cast<double>(item);
  }
  return out;
}

Tensor kl_softmax_channels(const Tensor& p_logits, const Tensor& q_logits) {
  require_shape(p_logits, q_logits, "kl_softmax_channels");
  require(p_logits.rank() == 4, "kl_softmax_channels expects N x C x H x W");
  const int n = p_logits.dim(0), c = p_logits.dim(1);
  const size_t hw = static_cast<size_t>(p_logits.dim(2)) * p_logits.dim(3);
  const size_t pixels = static_cast<size_t>(n) * hw;
  const auto& pd = p_logits.values();
  const auto& qd = q_logits.values();
  std::vector<double> p(pd.size()), logp(pd.size()), q(qd.size()), logq(qd.size());
  std::vector<double> kl_pixel(pixels);
  double total = 0.0;
  auto log_softmax = [c, hw](const double* src, double* lsm, double* sm, size_t base, size_t k) {
    double mx = -INFINITY;
    for (int ch = 0; ch < c; ++ch) mx = std::max(mx, src[base + ch * hw + k]);
    double s = 0.0;
    for (int ch = 0; ch < c; ++ch) s += std::exp(src[base + ch * hw + k] - mx);
    const double lse = mx + std::log(s);
    for (int ch = 0; ch < c; ++ch) {
      const size_t idx = base + ch * hw + k;
      lsm[idx] = src[idx] - lse;
      sm[idx] = std::exp(lsm[idx]);
    }
  };
  for (int i = 0; i < n; ++i) {
    const size_t base = static_cast<size_t>(i) * c * hw;
    for (size_t k = 0; k < hw; ++k) {
      log_softmax(pd.data(), logp.data(), p.data(), base, k);
      log_softmax(qd.data(), logq.data(), q.data(), base, k);
      double kl = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        const size_t idx = base + ch * hw + k;
        if (p[idx] > 0.0) kl += p[idx] * (logp[idx] - logq[idx]);
      }
      kl_pixel[static_cast<size_t>(i) * hw + k] = kl;
      total += kl;
    }
  }
  const double inv = 1.0 / static_cast<double>(pixels);
  TensorImpl* pi = p_logits.impl();
  TensorImpl* qi = q_logits.impl();
  return make_result({1}, {total * inv}, {&p_logits, &q_logits},
                     [pi, qi, n, c, hw, inv, p = std::move(p), q = std::move(q), logp = std::move(logp),
                      logq = std::move(logq), kl_pixel = std::move(kl_pixel)](const TensorImpl& o) {
                       const double g = o.grad[0] * inv;
                       std::vector<double>* dp = pi->requires_grad ? &pi->grad_buffer() : nullptr;
                       std::vector<double>* dq = qi->requires_grad ? &qi->grad_buffer() : nullptr;
                       for (int i = 0; i < n; ++i) {
                         const size_t base = static_cast<size_t>(i) * c * hw;
                         for (size_t k = 0; k < hw; ++k) {
                           const double kl = kl_pixel[static_cast<size_t>(i) * hw + k];
                           for (int ch = 0; ch < c; ++ch) {
                             const size_t idx = base + ch * hw + k;
                             if (dp) (*dp)[idx] += g * p[idx] * ((logp[idx] - logq[idx]) - kl);
                             if (dq) (*dq)[idx] += g * (q[idx] - p[idx]);
                           }
                         }
                       }
                     });
}

Tensor mse(const Tensor& x, std::span<const double> target) {
  require(target.size() == x.numel(), "mse: target size mismatch");
  const auto& xd = x.values();
  double s = 0.0;
  for (size_t i = 0; i < xd.size(); ++i) s += (xd[i] - target[i]) * (xd[i] - target[i]);
  const double inv = 1.0 / static_cast<double>(xd.size());
  std::vector<double> t(target.begin(), target.end());
  TensorImpl* xi = x.impl();
  return make_result({1}, {s * inv}, {&x}, [xi, inv, t = std::move(t)](const TensorImpl& o) {
    auto& d = xi->grad_buffer();
    const double g = 2.0 * o.grad[0] * inv;
    for (size_t i = 0; i < d.size(); ++i) d[i] += g * (xi->data[i] - t[i]);
  });
}

}  // namespace hcdg::nn
