#pragma once

// Finite-difference cases for every differentiable primitive and for the
// composite training objective. Each case draws its own random shapes and
// values from the supplied stream.

#include <functional>
#include <string>
#include <vector>

#include "hcdg/losses.hpp"
#include "hcdg/tensor.hpp"
#include "support.hpp"

namespace hcdg::testing {

struct GradCase {
  std::string name;
  std::function<GradCheck(Rng&)> run;
};

namespace detail {

using nn::Shape;
using nn::Tensor;

inline int dim(Rng& rng, int lo, int hi) { return lo + static_cast<int>(rng.below(hi - lo + 1)); }

inline Shape small_nchw(Rng& rng, int c_lo = 1, int c_hi = 3) {
  return {dim(rng, 1, 2), dim(rng, c_lo, c_hi), dim(rng, 1, 4), dim(rng, 1, 4)};
}

// Values kept at least `gap` away from zero, for ops with a kink there.
inline Tensor away_from_zero(Rng& rng, Shape shape, double gap = 0.05) {
  auto t = random_tensor(rng, std::move(shape));
  for (auto& v : t.values()) {
    if (std::abs(v) < gap) v = v < 0 ? v - gap : v + gap;
  }
  return t;
}

inline GradCheck unary(Rng& rng, Tensor x, const std::function<Tensor(const Tensor&)>& op) {
  const auto w = random_values(rng, op(x.detach()).numel());
  return check_gradients([&](const std::vector<Tensor>& in) { return weighted_sum(op(in[0]), w); }, {x});
}

inline std::vector<double> binary_targets(Rng& rng, size_t n) {
  std::vector<double> t(n);
  for (auto& v : t) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
  return t;
}

}  // namespace detail

inline std::vector<GradCase> gradient_cases() {
  using namespace detail;
  std::vector<GradCase> cases;

  cases.push_back({"conv2d", [](Rng& rng) {
    const int n = dim(rng, 1, 2), ci = dim(rng, 1, 3), co = dim(rng, 1, 3);
    const int h = dim(rng, 2, 4), w = dim(rng, 2, 4);
    const int k = rng.bernoulli(0.5) ? 3 : 1;
    const int stride = dim(rng, 1, 2);
    // A 3x3 kernel needs padding on inputs narrower than the kernel.
    const int pad_used = k == 3 && (h < 3 || w < 3 || rng.bernoulli(0.5)) ? 1 : 0;
    auto x = random_tensor(rng, {n, ci, h, w});
    auto wt = random_tensor(rng, {co, ci, k, k});
    auto b = random_tensor(rng, {co});
    const auto probe = nn::conv2d(x.detach(), wt.detach(), b.detach(), stride, pad_used);
    const auto r = random_values(rng, probe.numel());
    return check_gradients(
        [&](const std::vector<Tensor>& in) { return weighted_sum(nn::conv2d(in[0], in[1], in[2], stride, pad_used), r); },
        {x, wt, b});
  }});

  cases.push_back({"batch_norm", [](Rng& rng) {
    Shape s = small_nchw(rng);
    if (s[0] * s[2] * s[3] < 2) s[2] = 2;
    const int c = s[1];
    auto x = random_tensor(rng, s);
    auto g = random_tensor(rng, {c}, 0.5, 1.5);
    auto b = random_tensor(rng, {c});
    std::vector<double> rm(c, 0.0), rv(c, 1.0);
    const auto r = random_values(rng, x.numel());
    return check_gradients(
        [&](const std::vector<Tensor>& in) {
          nn::BatchNormState st{rm, rv};
          st.update_running = false;
          return weighted_sum(nn::batch_norm(in[0], in[1], in[2], st, true), r);
        },
        {x, g, b});
  }});

  cases.push_back({"batch_norm_eval", [](Rng& rng) {
    const Shape s = small_nchw(rng);
    const int c = s[1];
    auto x = random_tensor(rng, s);
    auto g = random_tensor(rng, {c}, 0.5, 1.5);
    auto b = random_tensor(rng, {c});
    std::vector<double> rm = random_values(rng, c), rv = random_values(rng, c, 0.5, 2.0);
    const auto r = random_values(rng, x.numel());
    return check_gradients(
        [&](const std::vector<Tensor>& in) {
          return weighted_sum(nn::batch_norm(in[0], in[1], in[2], nn::BatchNormState{rm, rv}, false), r);
        },
        {x, g, b});
  }});

  cases.push_back({"relu", [](Rng& rng) { return unary(rng, away_from_zero(rng, small_nchw(rng)), nn::relu); }});
  cases.push_back({"upsample_nearest2x",
                   [](Rng& rng) { return unary(rng, random_tensor(rng, small_nchw(rng)), nn::upsample_nearest2x); }});
  cases.push_back({"sigmoid", [](Rng& rng) {
    return unary(rng, random_tensor(rng, small_nchw(rng), -3, 3), nn::sigmoid);
  }});
  cases.push_back({"tanh", [](Rng& rng) {
    return unary(rng, random_tensor(rng, small_nchw(rng), -2, 2), [](const Tensor& t) { return nn::tanh(t); });
  }});
  cases.push_back({"heaviside", [](Rng& rng) {
    const double delta = rng.uniform(1.0, 20.0);
    return unary(rng, random_tensor(rng, small_nchw(rng), -0.3, 0.3),
                 [delta](const Tensor& t) { return nn::heaviside(t, delta); });
  }});
  cases.push_back({"softmax_channels", [](Rng& rng) {
    return unary(rng, random_tensor(rng, small_nchw(rng, 2, 3), -2, 2), nn::softmax_channels);
  }});
  cases.push_back({"scale", [](Rng& rng) {
    const double s = rng.uniform(-3, 3);
    return unary(rng, random_tensor(rng, small_nchw(rng)), [s](const Tensor& t) { return nn::scale(t, s); });
  }});
  cases.push_back({"mul_const", [](Rng& rng) {
    auto x = random_tensor(rng, small_nchw(rng));
    const auto f = random_values(rng, x.numel());
    return unary(rng, x, [&f](const Tensor& t) { return nn::mul_const(t, f); });
  }});
  cases.push_back({"sum", [](Rng& rng) {
    return check_gradients([](const std::vector<Tensor>& in) { return nn::sum(nn::mul(in[0], in[0])); },
                           {random_tensor(rng, small_nchw(rng))});
  }});
  cases.push_back({"mean", [](Rng& rng) {
    return check_gradients([](const std::vector<Tensor>& in) { return nn::mean(nn::mul(in[0], in[0])); },
                           {random_tensor(rng, small_nchw(rng))});
  }});

  auto binary_case = [](const char* name, Tensor (*op)(const Tensor&, const Tensor&)) {
    return GradCase{name, [op](Rng& rng) {
      const Shape s = small_nchw(rng);
      auto a = random_tensor(rng, s);
      auto b = random_tensor(rng, s);
      const auto r = random_values(rng, a.numel());
      return check_gradients([&](const std::vector<Tensor>& in) { return weighted_sum(op(in[0], in[1]), r); },
                             {a, b});
    }};
  };
  cases.push_back(binary_case("add", nn::add));
  cases.push_back(binary_case("sub", nn::sub));
  cases.push_back(binary_case("mul", nn::mul));

  cases.push_back({"slice_batch", [](Rng& rng) {
    Shape s = small_nchw(rng);
    s[0] = dim(rng, 2, 4);
    const int b = static_cast<int>(rng.below(s[0]));
    const int e = b + 1 + static_cast<int>(rng.below(s[0] - b));
    return unary(rng, random_tensor(rng, s), [b, e](const Tensor& t) { return nn::slice_batch(t, b, e); });
  }});
  cases.push_back({"concat_batch", [](Rng& rng) {
    Shape s = small_nchw(rng);
    auto a = random_tensor(rng, s);
    s[0] = dim(rng, 1, 2);
    auto b = random_tensor(rng, s);
    const auto r = random_values(rng, 2 * a.numel() + b.numel());
    return check_gradients(
        [&](const std::vector<Tensor>& in) { return weighted_sum(nn::concat_batch({in[0], in[1], in[0]}), r); },
        {a, b});
  }});

  cases.push_back({"bce_with_logits", [](Rng& rng) {
    auto x = random_tensor(rng, small_nchw(rng), -4, 4);
    const auto y = binary_targets(rng, x.numel());
    return check_gradients([&](const std::vector<Tensor>& in) { return nn::bce_with_logits(in[0], y); }, {x});
  }});
  cases.push_back({"kl_softmax_channels", [](Rng& rng) {
    const Shape s = small_nchw(rng, 2, 3);
    auto p = random_tensor(rng, s, -2, 2);
    auto q = random_tensor(rng, s, -2, 2);
    return check_gradients([](const std::vector<Tensor>& in) { return nn::kl_softmax_channels(in[0], in[1]); },
                           {p, q});
  }});
  cases.push_back({"mse", [](Rng& rng) {
    auto x = random_tensor(rng, small_nchw(rng));
    const auto t = random_values(rng, x.numel());
    return check_gradients([&](const std::vector<Tensor>& in) { return nn::mse(in[0], t); }, {x});
  }});

  cases.push_back({"kl_consistency", [](Rng& rng) {
    const Shape s = small_nchw(rng, 2, 2);
    auto stu = random_tensor(rng, s, -3, 3);
    const auto tea = random_tensor(rng, s, -3, 3).detach();
    const double T = rng.uniform(1.0, 10.0);
    return check_gradients(
        [&](const std::vector<Tensor>& in) { return losses::kl_consistency(in[0], tea, T); }, {stu});
  }});

  cases.push_back({"ic_consistency", [](Rng& rng) {
    const Shape s = small_nchw(rng, 2, 2);
    auto stu = random_tensor(rng, s, -2, 2);
    auto c1 = random_tensor(rng, s, -0.2, 0.2);
    auto c2 = random_tensor(rng, s, -0.2, 0.2);
    return check_gradients(
        [](const std::vector<Tensor>& in) { return losses::ic_consistency(in[0], {in[1], in[2]}, 20.0); },
        {stu, c1, c2});
  }});

  // (L_seg + gamma (L_EC_w2s + L_EC_s2w)) + (L_b + gamma L_IC) with the
  // classmates' tanh-bounded boundary regressions feeding both L_b and L_IC.
  cases.push_back({"composite_objective", [](Rng& rng) {
    const Shape s = small_nchw(rng, 2, 2);
    const size_t n = nn::numel_of(s);
    auto weak = random_tensor(rng, s, -2, 2);
    auto strong = random_tensor(rng, s, -2, 2);
    auto c1 = random_tensor(rng, s, -0.5, 0.5);
    auto c2 = random_tensor(rng, s, -0.5, 0.5);
    const auto tea_w = random_tensor(rng, s, -2, 2).detach();
    const auto tea_s = random_tensor(rng, s, -2, 2).detach();
    const auto y = binary_targets(rng, n);
    const auto boundary = random_values(rng, n);
    losses::LossConfig cfg;
    const double gamma = losses::rampup_gamma(static_cast<int>(rng.below(6)), cfg);
    return check_gradients(
        [&](const std::vector<Tensor>& in) {
          losses::LossParts parts;
          parts.seg = nn::add(losses::bce_seg(in[0], y), losses::bce_seg(in[1], y));
          const auto ec = losses::ec_loss(in[0], in[1], tea_w, tea_s, cfg.temperature);
          parts.ec_w2s = ec.w2s;
          parts.ec_s2w = ec.s2w;
          const std::vector<Tensor> cla{nn::tanh(in[2]), nn::tanh(in[3])};
          parts.boundary = losses::boundary_mse(cla, boundary);
          parts.ic = losses::ic_consistency(in[0], cla, cfg.delta);
          return losses::total_loss(parts, gamma);
        },
        {weak, strong, c1, c2});
  }});

  return cases;
}

}  // namespace hcdg::testing
