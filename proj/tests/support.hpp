#pragma once

// Oracles and helpers shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hcdg/common.hpp"
#include "hcdg/image.hpp"
#include "hcdg/synthdata.hpp"
#include "hcdg/tensor.hpp"

namespace hcdg::testing {

inline std::vector<double> random_values(Rng& rng, size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline nn::Tensor random_tensor(Rng& rng, nn::Shape shape, double lo = -1.0, double hi = 1.0) {
  const size_t n = nn::numel_of(shape);
  return nn::Tensor::from(std::move(shape), random_values(rng, n, lo, hi), true);
}

struct GradCheck {
  double max_rel_error = 0.0;
  double max_abs_analytic = 0.0;
};

// Central finite differences on every entry of every input. The relative
// error of an input is max|analytic - numeric| / max(|analytic|_inf, |numeric|_inf),
// and the worst input is reported.
inline GradCheck check_gradients(const std::function<nn::Tensor(const std::vector<nn::Tensor>&)>& f,
                                 std::vector<nn::Tensor> inputs, double h = 1e-5) {
  for (auto& t : inputs) t.zero_grad();
  nn::Tensor out = f(inputs);
  out.backward();

  GradCheck result;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    if (analytic.empty()) analytic.assign(t.numel(), 0.0);
    std::vector<double> numeric(t.numel());
    {
      nn::NoGradGuard guard;
      for (size_t i = 0; i < t.numel(); ++i) {
        const double saved = t.values()[i];
        t.values()[i] = saved + h;
        const double fp = f(inputs).item();
        t.values()[i] = saved - h;
        const double fm = f(inputs).item();
        t.values()[i] = saved;
        numeric[i] = (fp - fm) / (2.0 * h);
      }
    }
    double diff = 0.0, scale = 0.0;
    for (size_t i = 0; i < numeric.size(); ++i) {
      diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
      scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
    }
    result.max_abs_analytic = std::max(result.max_abs_analytic, scale);
    const double rel = scale > 0.0 ? diff / scale : diff;
    result.max_rel_error = std::max(result.max_rel_error, rel);
  }
  return result;
}

// Collapses a tensor to a scalar with fixed random weights, so every output
// entry contributes a distinct gradient.
inline nn::Tensor weighted_sum(const nn::Tensor& y, const std::vector<double>& weights) {
  return nn::sum(nn::mul_const(y, weights));
}

inline std::vector<uint8_t> random_plane(Rng& rng, int h, int w, double p) {
  std::vector<uint8_t> v(static_cast<size_t>(h) * w);
  for (auto& x : v) x = rng.bernoulli(p) ? 1 : 0;
  return v;
}

// Random blob: a few filled rectangles, giving realistic connected regions.
inline std::vector<uint8_t> random_blobs(Rng& rng, int h, int w) {
  std::vector<uint8_t> v(static_cast<size_t>(h) * w, 0);
  const int n = 1 + static_cast<int>(rng.below(3));
  for (int k = 0; k < n; ++k) {
    const int y0 = static_cast<int>(rng.below(h)), x0 = static_cast<int>(rng.below(w));
    const int y1 = std::min(h, y0 + 1 + static_cast<int>(rng.below(h / 2)));
    const int x1 = std::min(w, x0 + 1 + static_cast<int>(rng.below(w / 2)));
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) v[static_cast<size_t>(y) * w + x] = 1;
  }
  return v;
}

inline double oracle_dice(std::span<const uint8_t> p, std::span<const uint8_t> g) {
  int inter = 0, sp = 0, sg = 0;
  for (size_t i = 0; i < p.size(); ++i) {
    if (p[i] && g[i]) ++inter;
    if (p[i]) ++sp;
    if (g[i]) ++sg;
  }
  if (sp + sg == 0) return 1.0;
  return 2.0 * inter / (sp + sg);
}

// Foreground pixels touching background or the image border (4-neighbourhood).
inline std::vector<std::pair<int, int>> oracle_surface(std::span<const uint8_t> m, int h, int w) {
  std::vector<std::pair<int, int>> out;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!m[y * w + x]) continue;
      bool edge = false;
      const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
      for (int k = 0; k < 4; ++k) {
        const int yy = y + dy[k], xx = x + dx[k];
        if (yy < 0 || yy >= h || xx < 0 || xx >= w || !m[yy * w + xx]) edge = true;
      }
      if (edge) out.emplace_back(y, x);
    }
  }
  return out;
}

inline std::optional<double> oracle_asd(std::span<const uint8_t> p, std::span<const uint8_t> g, int h, int w) {
  const auto sp = oracle_surface(p, h, w);
  const auto sg = oracle_surface(g, h, w);
  if (sp.empty() || sg.empty()) return std::nullopt;
  auto directed = [](const auto& from, const auto& to) {
    double sum = 0.0;
    for (auto [y, x] : from) {
      long best = std::numeric_limits<long>::max();
      for (auto [v, u] : to) best = std::min(best, long(y - v) * (y - v) + long(x - u) * (x - u));
      sum += std::sqrt(static_cast<double>(best));
    }
    return sum / static_cast<double>(from.size());
  };
  return 0.5 * (directed(sp, sg) + directed(sg, sp));
}

// Signed distance by exhaustive search: inside pixels get the distance to the
// nearest outside pixel, outside pixels the negated distance to the nearest
// inside pixel, each side normalized by its own maximum.
inline std::vector<double> oracle_sdf(std::span<const uint8_t> m, int h, int w) {
  const size_t n = static_cast<size_t>(h) * w;
  const auto fg = static_cast<size_t>(std::count(m.begin(), m.end(), 1));
  if (fg == 0) return std::vector<double>(n, -1.0);
  if (fg == n) return std::vector<double>(n, 1.0);
  std::vector<double> d(n);
  double max_in = 0.0, max_out = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      long best = std::numeric_limits<long>::max();
      const uint8_t self = m[y * w + x];
      for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u)
          if (m[v * w + u] != self) best = std::min(best, long(y - v) * (y - v) + long(x - u) * (x - u));
      const double dist = std::sqrt(static_cast<double>(best));
      d[y * w + x] = dist;
      if (self) max_in = std::max(max_in, dist);
      else max_out = std::max(max_out, dist);
    }
  }
  for (size_t i = 0; i < n; ++i) d[i] = m[i] ? d[i] / max_in : -d[i] / max_out;
  return d;
}

// Small four-domain benchmark for fast end-to-end tests.
inline synth::BenchmarkSpec toy_benchmark(int size = 32, int n_train = 8, int n_test = 4, uint64_t seed = 7) {
  synth::BenchmarkSpec b;
  b.name = "toy";
  b.seed = seed;
  b.size = size;
  b.n_train = n_train;
  b.n_test = n_test;
  const double gammas[4] = {1.0, 1.4, 0.8, 1.8};
  for (int d = 0; d < 4; ++d) {
    synth::DomainSpec s;
    s.id = d;
    s.name = "toy_" + std::to_string(d);
    s.gamma = gammas[d];
    s.background = {0.45 - 0.05 * d, 0.2 + 0.05 * d, 0.1};
    s.texture_freq = 2.0 + d;
    b.domains.push_back(s);
  }
  return b;
}

}  // namespace hcdg::testing
