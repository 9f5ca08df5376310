#pragma once

// Amplitude/phase decomposition and Gaussian-weighted amplitude mixing.
//
// Spectra use the unshifted FFT layout: the DC term of every channel sits at
// index (0, 0). Significance masks are stored in the centered ("fftshifted")
// layout, where row index i corresponds to the scaled coordinate
//   a_i = -t + 2t * i / (H - 1)
// and the unshifted frequency row u reads mask row (u + H/2) mod H. The same
// holds for columns. With this convention a mask peak at the grid point
// nearest the origin lands on the DC term.

#include <string>
#include <vector>

#include "hcdg/common.hpp"
#include "hcdg/image.hpp"

namespace hcdg::fourier {

struct Spectrum {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> amplitude;  // (c, u, v), >= 0
  std::vector<double> phase;      // (c, u, v), in (-pi, pi]

  size_t plane_size() const { return static_cast<size_t>(height) * width; }
};

enum class MaskMode { kAG, kAM };

std::string to_string(MaskMode mode);
MaskMode mask_mode_from_string(const std::string& s);

struct AugConfig {
  double eta = 1.0;           // upper bound of sigma, or of sigma^2 with eta_bounds_variance
  bool eta_bounds_variance = false;
  double t = 0.5;             // scaled half-extent of the mask grid
  bool adaptive_mu = true;    // sample the peak location
  bool sample_t = false;      // draw t ~ U(t_lo, t_hi) per mask instead of using t
  double t_lo = 0.2;
  double t_hi = 0.8;
  MaskMode mask_mode = MaskMode::kAG;
  double am_lambda_max = 1.0;

  double sigma_max() const;
  void validate() const;
};

// Lower bound of sigma; keeps the Gaussian peak 1 / (2 pi sigma^2) at most 1.
double sigma_lower_bound();

struct SigMask {
  int height = 0;
  int width = 0;
  std::vector<double> values;  // centered layout, row-major
  MaskMode mode = MaskMode::kAG;
  double sigma = 0.0;
  double mu1 = 0.0;  // row coordinate of the peak (snapped to the grid)
  double mu2 = 0.0;  // column coordinate of the peak
  double t = 0.0;
  double eta = 0.0;
  double lambda = 0.0;  // AM only

  double at(int i, int j) const { return values[static_cast<size_t>(i) * width + j]; }
  double peak() const;
};

Spectrum decompose(const Image& image);

// Inverse transform without clamping; used where the pre-clamp tensor matters.
Image reconstruct_unclamped(const Spectrum& spectrum);
// Inverse transform clamped to [0, 1].
Image reconstruct(const Spectrum& spectrum);

// Scaled coordinate of grid index i on an axis of n points spanning [-t, t].
double grid_coordinate(int i, int n, double t);
// Index of the grid point nearest coordinate a (ties resolve to the larger index).
int nearest_grid_index(double a, int n, double t);

// M(a, b) = exp(-((a - mu1)^2 + (b - mu2)^2) / (2 sigma^2)) / (2 pi sigma^2)
double gaussian_significance(double a, double b, double sigma, double mu1, double mu2);

// Deterministic mask builders. mu values are snapped to the nearest grid point.
SigMask gaussian_mask(int h, int w, double sigma, double mu1, double mu2, double t);
SigMask constant_mask(int h, int w, double lambda);

SigMask sample_sigmask(int h, int w, const AugConfig& cfg, Rng& rng);

Spectrum mix_amplitude(const Spectrum& src, const Spectrum& counterpart, const SigMask& mask);

// Full strong augmentation: decompose both, mix amplitudes, reconstruct.
Image augment_strong(const Image& src, const Image& counterpart, const AugConfig& cfg, Rng& rng);
Image augment_with_mask(const Image& src, const Image& counterpart, const SigMask& mask);
Image augment_with_mask_unclamped(const Image& src, const Image& counterpart, const SigMask& mask);

}  // namespace hcdg::fourier
