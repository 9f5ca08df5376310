#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "hcdg/fourier_aug.hpp"
#include "hcdg/png_io.hpp"
#include "support.hpp"

using namespace hcdg;
using namespace hcdg::fourier;

namespace {

Image random_image(Rng& rng, int h, int w, int c) {
  Image img(h, w, c);
  for (auto& v : img.data()) v = rng.uniform01();
  return img;
}

double max_abs_diff(const Image& a, const Image& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace

TEST_CASE("decompose and reconstruct round trip") {
  Rng rng(1);
  for (int k = 0; k < 10; ++k) {
    const Image x = random_image(rng, 64, 64, 3);
    CHECK(max_abs_diff(reconstruct_unclamped(decompose(x)), x) <= 1e-12);
  }
  const Image odd = random_image(rng, 7, 5, 1);
  CHECK(max_abs_diff(reconstruct(decompose(odd)), odd) <= 1e-12);
}

TEST_CASE("amplitude is non-negative and phase lies in (-pi, pi]") {
  Rng rng(2);
  const Spectrum s = decompose(random_image(rng, 16, 16, 3));
  for (double a : s.amplitude) CHECK(a >= 0.0);
  for (double p : s.phase) {
    CHECK(p > -std::numbers::pi);
    CHECK(p <= std::numbers::pi);
  }
}

TEST_CASE("constant image has all energy at the DC term") {
  Image x(8, 8, 1, 0.25);
  const Spectrum s = decompose(x);
  CHECK(s.amplitude[0] == doctest::Approx(0.25 * 64));
  for (size_t i = 1; i < s.amplitude.size(); ++i) CHECK(s.amplitude[i] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("decompose rejects tiny and non-finite inputs") {
  CHECK_THROWS(decompose(Image(1, 8, 1)));
  Image bad(4, 4, 1);
  bad.at(0, 1, 1) = std::nan("");
  CHECK_THROWS(decompose(bad));
}

TEST_CASE("sigma lower bound gives a unit peak") {
  CHECK(sigma_lower_bound() == doctest::Approx(1.0 / std::sqrt(2.0 * std::numbers::pi)));
  const SigMask m = gaussian_mask(64, 64, sigma_lower_bound(), 0.0, 0.0, 0.5);
  CHECK(std::abs(m.peak() - 1.0) <= 1e-12);
}

TEST_CASE("sampled masks are bounded and peak at the snapped center") {
  Rng rng(3);
  AugConfig cfg;
  for (int k = 0; k < 200; ++k) {
    const SigMask m = sample_sigmask(64, 64, cfg, rng);
    CHECK(m.sigma >= sigma_lower_bound());
    CHECK(m.sigma <= cfg.sigma_max());
    CHECK(std::abs(m.mu1) <= cfg.t / 2 + cfg.t / 63);
    for (double v : m.values) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    const int i = nearest_grid_index(m.mu1, 64, m.t);
    const int j = nearest_grid_index(m.mu2, 64, m.t);
    const double expect = 1.0 / (2.0 * std::numbers::pi * m.sigma * m.sigma);
    CHECK(std::abs(m.at(i, j) - expect) <= 1e-9);
    CHECK(m.at(i, j) == m.peak());
  }
}

TEST_CASE("grid coordinates span [-t, t]") {
  CHECK(grid_coordinate(0, 64, 0.5) == doctest::Approx(-0.5));
  CHECK(grid_coordinate(63, 64, 0.5) == doctest::Approx(0.5));
  CHECK(nearest_grid_index(-0.5, 64, 0.5) == 0);
  CHECK(nearest_grid_index(0.5, 64, 0.5) == 63);
  CHECK(nearest_grid_index(0.0, 64, 0.5) == 32);
}

TEST_CASE("AM masks are constant in [0, 1]") {
  Rng rng(4);
  AugConfig cfg;
  cfg.mask_mode = MaskMode::kAM;
  for (int k = 0; k < 50; ++k) {
    const SigMask m = sample_sigmask(8, 8, cfg, rng);
    CHECK(m.mode == MaskMode::kAM);
    for (double v : m.values) CHECK(v == m.lambda);
  }
  CHECK_THROWS(constant_mask(4, 4, 1.5));
}

TEST_CASE("identity augmentation") {
  Rng rng(5);
  const Image src = random_image(rng, 32, 32, 3);
  const Image other = random_image(rng, 32, 32, 3);
  const SigMask g = gaussian_mask(32, 32, 0.5, 0.1, -0.1, 0.5);
  CHECK(max_abs_diff(augment_with_mask_unclamped(src, src, g), src) <= 1e-12);
  CHECK(max_abs_diff(augment_with_mask_unclamped(src, other, constant_mask(32, 32, 0.0)), src) <= 1e-12);
}

TEST_CASE("full AM mixing transfers the counterpart amplitude") {
  Rng rng(6);
  const Image src = random_image(rng, 16, 16, 3);
  const Image cp = random_image(rng, 16, 16, 3);
  const Spectrum mixed = mix_amplitude(decompose(src), decompose(cp), constant_mask(16, 16, 1.0));
  const Spectrum scp = decompose(cp);
  const Spectrum ssrc = decompose(src);
  for (size_t i = 0; i < mixed.amplitude.size(); ++i) {
    CHECK(mixed.amplitude[i] == doctest::Approx(scp.amplitude[i]));
    CHECK(mixed.phase[i] == ssrc.phase[i]);
  }
}

TEST_CASE("AG mixing weights the DC term by the mask peak") {
  Rng rng(7);
  const Image src = random_image(rng, 16, 16, 1);
  const Image cp = random_image(rng, 16, 16, 1);
  const SigMask m = gaussian_mask(16, 16, 0.6, 0.0, 0.0, 0.5);
  const Spectrum a = decompose(src), b = decompose(cp);
  const Spectrum mixed = mix_amplitude(a, b, m);
  const int i = nearest_grid_index(0.0, 16, 0.5);
  // Centered row i maps to frequency (i - 8) mod 16.
  const int u = (i + 8) % 16;
  const double mv = m.at(i, i);
  CHECK(mixed.amplitude[u * 16 + u] == doctest::Approx((1 - mv) * a.amplitude[u * 16 + u] + mv * b.amplitude[u * 16 + u]));
}

TEST_CASE("augmented output survives PNG round trip within quantization") {
  Rng rng(8);
  const Image src = random_image(rng, 16, 16, 3);
  Image q = augment_with_mask(src, src, constant_mask(16, 16, 0.0));
  const auto path = std::filesystem::temp_directory_path() / "hcdg_fourier_rt.png";
  png::write_image(path, q);
  const Image back = png::read_image(path);
  std::filesystem::remove(path);
  CHECK(max_abs_diff(back, src) <= 0.5 / 255.0 + 1e-12);
}

TEST_CASE("strong augmentation is deterministic for a seed") {
  Rng r0(11), r1(11);
  Rng gen(9);
  const Image src = random_image(gen, 16, 16, 3);
  const Image cp = random_image(gen, 16, 16, 3);
  AugConfig cfg;
  CHECK(augment_strong(src, cp, cfg, r0) == augment_strong(src, cp, cfg, r1));
}

TEST_CASE("eta can bound the variance instead of sigma") {
  AugConfig cfg;
  cfg.eta = 0.49;
  cfg.eta_bounds_variance = true;
  CHECK(cfg.sigma_max() == doctest::Approx(0.7));
  Rng rng(12);
  for (int k = 0; k < 100; ++k) CHECK(sample_sigmask(16, 16, cfg, rng).sigma <= 0.7);
  cfg.eta = 1.0;
  CHECK(cfg.sigma_max() == 1.0);
}

TEST_CASE("config validation") {
  AugConfig cfg;
  cfg.eta = 0.1;
  CHECK_THROWS(cfg.validate());
  CHECK(mask_mode_from_string(to_string(MaskMode::kAM)) == MaskMode::kAM);
  CHECK_THROWS(mask_mode_from_string("XX"));
}
