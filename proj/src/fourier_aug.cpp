#include "hcdg/fourier_aug.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <stdexcept>

namespace hcdg::fourier {

namespace {

struct FftwFree {
  void operator()(fftw_complex* p) const { fftw_free(p); }
};
using ComplexBuffer = std::unique_ptr<fftw_complex[], FftwFree>;

ComplexBuffer alloc_complex(size_t n) {
  auto* p = fftw_alloc_complex(n);
  if (p == nullptr) throw std::bad_alloc();
  return ComplexBuffer(p);
}

// FFTW planning is not thread-safe; execution on new arrays is. Plans are
// created once per (h, w, direction) with FFTW_ESTIMATE, which is
// deterministic, and reused through fftw_execute_dft.
class PlanCache {
 public:
  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  fftw_plan get(int h, int w, int sign) {
    std::lock_guard<std::mutex> lock(mutex_);
    auto key = std::make_tuple(h, w, sign);
    auto it = plans_.find(key);
    if (it != plans_.end()) return it->second;
    auto in = alloc_complex(static_cast<size_t>(h) * w);
    auto out = alloc_complex(static_cast<size_t>(h) * w);
    fftw_plan plan = fftw_plan_dft_2d(h, w, in.get(), out.get(), sign, FFTW_ESTIMATE);
    if (plan == nullptr) throw std::runtime_error("fftw planning failed");
    plans_.emplace(key, plan);
    return plan;
  }

 private:
  std::mutex mutex_;
  std::map<std::tuple<int, int, int>, fftw_plan> plans_;
};

double wrap_phase(double p) {
  // atan2 yields [-pi, pi]; fold -pi onto +pi.
  return p <= -std::numbers::pi ? std::numbers::pi : p;
}

void check_same_grid(const Spectrum& a, const Spectrum& b) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels) {
    throw std::invalid_argument("spectrum shape mismatch");
  }
}

}  // namespace

std::string to_string(MaskMode mode) { return mode == MaskMode::kAG ? "AG" : "AM"; }

MaskMode mask_mode_from_string(const std::string& s) {
  if (s == "AG") return MaskMode::kAG;
  if (s == "AM") return MaskMode::kAM;
  throw ConfigError("unknown mask mode '" + s + "' (expected AG or AM)");
}

double sigma_lower_bound() { return 1.0 / std::sqrt(2.0 * std::numbers::pi); }

double AugConfig::sigma_max() const { return eta_bounds_variance ? std::sqrt(eta) : eta; }

void AugConfig::validate() const {
  if (!(sigma_max() >= sigma_lower_bound())) throw ConfigError("aug.eta admits no sigma >= 1/sqrt(2*pi)");
  if (!(t > 0.0 && t <= 1.0)) throw ConfigError("aug.t must lie in (0, 1]");
  if (sample_t && !(t_lo > 0.0 && t_lo <= t_hi && t_hi <= 1.0)) {
    throw ConfigError("aug.t_lo/t_hi must satisfy 0 < t_lo <= t_hi <= 1");
  }
  if (!(am_lambda_max >= 0.0 && am_lambda_max <= 1.0)) {
    throw ConfigError("aug.am_lambda_max must lie in [0, 1]");
  }
}

double SigMask::peak() const { return *std::max_element(values.begin(), values.end()); }

Spectrum decompose(const Image& image) {
  const int h = image.height();
  const int w = image.width();
  if (h < 2 || w < 2) throw std::invalid_argument("decompose requires H, W >= 2");
  for (double v : image.data()) {
    if (!std::isfinite(v)) throw std::invalid_argument("decompose: non-finite input value");
  }
  Spectrum s;
  s.height = h;
  s.width = w;
  s.channels = image.channels();
  const size_t n = image.plane_size();
  s.amplitude.resize(n * s.channels);
  s.phase.resize(n * s.channels);

  fftw_plan plan = PlanCache::instance().get(h, w, FFTW_FORWARD);
  auto in = alloc_complex(n);
  auto out = alloc_complex(n);
  for (int c = 0; c < s.channels; ++c) {
    auto plane = image.plane(c);
    for (size_t i = 0; i < n; ++i) {
      in[i][0] = plane[i];
      in[i][1] = 0.0;
    }
    fftw_execute_dft(plan, in.get(), out.get());
    for (size_t i = 0; i < n; ++i) {
      s.amplitude[c * n + i] = std::hypot(out[i][0], out[i][1]);
      s.phase[c * n + i] = wrap_phase(std::atan2(out[i][1], out[i][0]));
    }
  }
  return s;
}

Image reconstruct_unclamped(const Spectrum& s) {
  const size_t n = s.plane_size();
  if (s.amplitude.size() != n * s.channels || s.phase.size() != s.amplitude.size()) {
    throw std::invalid_argument("reconstruct: amplitude/phase shape mismatch");
  }
  Image img(s.height, s.width, s.channels);
  fftw_plan plan = PlanCache::instance().get(s.height, s.width, FFTW_BACKWARD);
  auto in = alloc_complex(n);
  auto out = alloc_complex(n);
  const double norm = 1.0 / static_cast<double>(n);
  for (int c = 0; c < s.channels; ++c) {
    for (size_t i = 0; i < n; ++i) {
      const double a = s.amplitude[c * n + i];
      if (a < 0.0) throw std::invalid_argument("reconstruct: negative amplitude");
      const double p = s.phase[c * n + i];
      in[i][0] = a * std::cos(p);
      in[i][1] = a * std::sin(p);
    }
    fftw_execute_dft(plan, in.get(), out.get());
    auto plane = img.plane(c);
    for (size_t i = 0; i < n; ++i) plane[i] = out[i][0] * norm;  // imaginary residue dropped
  }
  return img;
}

Image reconstruct(const Spectrum& s) {
  Image img = reconstruct_unclamped(s);
  for (double& v : img.data()) v = std::clamp(v, 0.0, 1.0);
  return img;
}

double grid_coordinate(int i, int n, double t) {
  if (n == 1) return 0.0;
  return -t + 2.0 * t * static_cast<double>(i) / static_cast<double>(n - 1);
}

int nearest_grid_index(double a, int n, double t) {
  if (n == 1) return 0;
  const double pos = (a + t) * static_cast<double>(n - 1) / (2.0 * t);
  int i = static_cast<int>(std::floor(pos + 0.5));
  return std::clamp(i, 0, n - 1);
}

double gaussian_significance(double a, double b, double sigma, double mu1, double mu2) {
  const double s2 = sigma * sigma;
  const double d2 = (a - mu1) * (a - mu1) + (b - mu2) * (b - mu2);
  return std::exp(-d2 / (2.0 * s2)) / (2.0 * std::numbers::pi * s2);
}

SigMask gaussian_mask(int h, int w, double sigma, double mu1, double mu2, double t) {
  if (h < 1 || w < 1) throw std::invalid_argument("gaussian_mask: empty grid");
  if (!(sigma > 0.0) || !(t > 0.0)) throw std::invalid_argument("gaussian_mask: sigma and t must be positive");
  SigMask m;
  m.height = h;
  m.width = w;
  m.mode = MaskMode::kAG;
  m.sigma = sigma;
  m.t = t;
  m.mu1 = grid_coordinate(nearest_grid_index(mu1, h, t), h, t);
  m.mu2 = grid_coordinate(nearest_grid_index(mu2, w, t), w, t);
  m.values.resize(static_cast<size_t>(h) * w);
  for (int i = 0; i < h; ++i) {
    const double a = grid_coordinate(i, h, t);
    for (int j = 0; j < w; ++j) {
      const double b = grid_coordinate(j, w, t);
      m.values[static_cast<size_t>(i) * w + j] = gaussian_significance(a, b, sigma, m.mu1, m.mu2);
    }
  }
  return m;
}

SigMask constant_mask(int h, int w, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("constant_mask: lambda outside [0, 1]");
  SigMask m;
  m.height = h;
  m.width = w;
  m.mode = MaskMode::kAM;
  m.lambda = lambda;
  m.values.assign(static_cast<size_t>(h) * w, lambda);
  return m;
}

SigMask sample_sigmask(int h, int w, const AugConfig& cfg, Rng& rng) {
  cfg.validate();
  if (cfg.mask_mode == MaskMode::kAM) {
    return constant_mask(h, w, rng.uniform(0.0, cfg.am_lambda_max));
  }
  const double sigma = rng.uniform(sigma_lower_bound(), cfg.sigma_max());
  const double t = cfg.sample_t ? rng.uniform(cfg.t_lo, cfg.t_hi) : cfg.t;
  double mu1 = 0.0;
  double mu2 = 0.0;
  if (cfg.adaptive_mu) {
    mu1 = rng.uniform(-t / 2.0, t / 2.0);
    mu2 = rng.uniform(-t / 2.0, t / 2.0);
  }
  SigMask m = gaussian_mask(h, w, sigma, mu1, mu2, t);
  m.eta = cfg.eta;
  return m;
}

Spectrum mix_amplitude(const Spectrum& src, const Spectrum& counterpart, const SigMask& mask) {
  check_same_grid(src, counterpart);
  if (mask.height != src.height || mask.width != src.width) {
    throw std::invalid_argument("mix_amplitude: mask shape mismatch");
  }
  Spectrum out = src;
  const int h = src.height;
  const int w = src.width;
  const size_t n = src.plane_size();
  for (int c = 0; c < src.channels; ++c) {
    for (int u = 0; u < h; ++u) {
      const int mi = (u + h / 2) % h;
      for (int v = 0; v < w; ++v) {
        const int mj = (v + w / 2) % w;
        const double m = mask.at(mi, mj);
        const size_t k = c * n + static_cast<size_t>(u) * w + v;
        out.amplitude[k] = (1.0 - m) * src.amplitude[k] + m * counterpart.amplitude[k];
      }
    }
  }
  return out;
}

Image augment_with_mask_unclamped(const Image& src, const Image& counterpart, const SigMask& mask) {
  if (!src.same_shape(counterpart)) throw std::invalid_argument("augment: src/counterpart shape mismatch");
  return reconstruct_unclamped(mix_amplitude(decompose(src), decompose(counterpart), mask));
}

Image augment_with_mask(const Image& src, const Image& counterpart, const SigMask& mask) {
  Image img = augment_with_mask_unclamped(src, counterpart, mask);
  for (double& v : img.data()) v = std::clamp(v, 0.0, 1.0);
  return img;
}

Image augment_strong(const Image& src, const Image& counterpart, const AugConfig& cfg, Rng& rng) {
  if (!src.same_shape(counterpart)) throw std::invalid_argument("augment: src/counterpart shape mismatch");
  SigMask mask = sample_sigmask(src.height(), src.width(), cfg, rng);
  return augment_with_mask(src, counterpart, mask);
}

}  // namespace hcdg::fourier
