#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "hcdg/png_io.hpp"
#include "hcdg/synthdata.hpp"
#include "support.hpp"

using namespace hcdg;
using namespace hcdg::synth;
using namespace hcdg::testing;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("hcdg_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

// Two-sample Kolmogorov-Smirnov statistic.
double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == v) ++i;
    while (j < b.size() && b[j] == v) ++j;
    d = std::max(d, std::abs(double(i) / a.size() - double(j) / b.size()));
  }
  return d;
}

double mean_intensity(const Image& img) {
  double s = 0.0;
  for (double v : img.data()) s += v;
  return s / img.size();
}

}  // namespace

TEST_CASE("cup lies inside disc and masks are non-empty") {
  const DomainSet ds = generate(toy_benchmark(32, 20, 5));
  for (const auto& dom : ds.domains) {
    for (const auto& s : dom) {
      CHECK(s.mask.count(0) > 0);
      CHECK(s.mask.count(1) > s.mask.count(0));
      for (size_t i = 0; i < s.mask.plane_size(); ++i) {
        if (s.mask.plane(0)[i]) CHECK(s.mask.plane(1)[i] == 1);
      }
      for (double v : s.image.data()) CHECK(v == png::from_byte(png::to_byte(v)));
    }
  }
}

TEST_CASE("generation is deterministic and seed sensitive") {
  auto b = toy_benchmark(32, 4, 2);
  CHECK(content_hash(generate(b)) == content_hash(generate(b)));
  b.seed += 1;
  const auto h2 = content_hash(generate(b));
  b.seed -= 1;
  CHECK(h2 != content_hash(generate(b)));
}

TEST_CASE("piecewise-constant images without texture or noise") {
  DomainSpec d;
  d.texture_amp = 0.0;
  d.noise_sigma = 0.0;
  d.color_jitter = 0.0;
  const Sample s = render_sample(d, 48, 3, 0, "train");
  // Every pixel value is one of the three region colours, and the colour
  // changes exactly where the mask changes.
  for (int y = 0; y < 48; ++y) {
    for (int x = 0; x + 1 < 48; ++x) {
      const bool mask_edge = s.mask.at(0, y, x) != s.mask.at(0, y, x + 1) || s.mask.at(1, y, x) != s.mask.at(1, y, x + 1);
      const bool color_edge = s.image.at(0, y, x) != s.image.at(0, y, x + 1) ||
                              s.image.at(1, y, x) != s.image.at(1, y, x + 1) ||
                              s.image.at(2, y, x) != s.image.at(2, y, x + 1);
      CHECK(mask_edge == color_edge);
    }
  }
}

TEST_CASE("swapping appearance leaves masks bit-identical") {
  auto b = toy_benchmark(32, 10, 3);
  auto swapped = b;
  std::swap(swapped.domains[0].background, swapped.domains[1].background);
  std::swap(swapped.domains[0].gamma, swapped.domains[1].gamma);
  std::swap(swapped.domains[0].texture_freq, swapped.domains[1].texture_freq);
  const auto a = generate(b), s = generate(swapped);
  bool any_image_changed = false;
  for (int d = 0; d < 2; ++d) {
    for (size_t i = 0; i < a.domains[d].size(); ++i) {
      CHECK(a.domains[d][i].mask == s.domains[d][i].mask);
      any_image_changed |= !(a.domains[d][i].image == s.domains[d][i].image);
    }
  }
  CHECK(any_image_changed);
}

TEST_CASE("gamma shifts intensity but not geometry statistics") {
  BenchmarkSpec b;
  b.seed = 11;
  b.size = 32;
  b.n_train = 200;
  b.n_test = 0;
  DomainSpec d0, d1;
  d0.id = 0;
  d0.name = "g1";
  d1 = d0;
  d1.id = 1;
  d1.name = "g2";
  d1.gamma = 2.0;
  b.domains = {d0, d1};
  const auto ds = generate(b);
  std::vector<double> i0, i1, cup0, cup1, disc0, disc1;
  for (const auto& s : ds.domains[0]) {
    i0.push_back(mean_intensity(s.image));
    cup0.push_back(s.mask.count(0));
    disc0.push_back(s.mask.count(1));
  }
  for (const auto& s : ds.domains[1]) {
    i1.push_back(mean_intensity(s.image));
    cup1.push_back(s.mask.count(0));
    disc1.push_back(s.mask.count(1));
  }
  // Critical value at alpha = 0.05 for n = m = 200 is 1.36 * sqrt(2 / 200).
  const double crit = 1.36 * std::sqrt(2.0 / 200.0);
  CHECK(ks_statistic(i0, i1) > crit);
  CHECK(ks_statistic(cup0, cup1) < crit);
  CHECK(ks_statistic(disc0, disc1) < crit);
}

TEST_CASE("save and load round trip bit-exactly") {
  const auto dir = temp_dir("roundtrip");
  const DomainSet ds = generate(toy_benchmark(16, 3, 2));
  save(ds, dir);
  const DomainSet back = load(dir);
  REQUIRE(back.num_domains() == ds.num_domains());
  CHECK(content_hash(back) == content_hash(ds));
  for (int d = 0; d < ds.num_domains(); ++d) {
    REQUIRE(back.domains[d].size() == ds.domains[d].size());
    for (size_t i = 0; i < ds.domains[d].size(); ++i) {
      CHECK(back.domains[d][i].image == ds.domains[d][i].image);
      CHECK(back.domains[d][i].mask == ds.domains[d][i].mask);
      CHECK(back.domains[d][i].id == ds.domains[d][i].id);
    }
  }
  CHECK(back.seed == ds.seed);
  std::filesystem::remove_all(dir);
}

TEST_CASE("tampered dataset is rejected") {
  const auto dir = temp_dir("tamper");
  DomainSet ds = generate(toy_benchmark(16, 2, 1));
  save(ds, dir);
  Image img = ds.domains[0][0].image;
  img.at(0, 0, 0) = img.at(0, 0, 0) > 0.5 ? 0.0 : 1.0;
  png::write_image(dir / "domain0" / "train" / "0_image.png", img);
  CHECK_THROWS_AS(load(dir), DataError);
  CHECK_THROWS_AS(load(temp_dir("missing")), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("degenerate geometry is rejected") {
  GeometryRanges g;
  g.disc_radius_lo = 0.3;
  g.disc_radius_hi = 0.2;
  CHECK_THROWS(g.validate());
  g = {};
  g.cup_ratio_hi = 1.2;
  CHECK_THROWS(g.validate());
}

TEST_CASE("leave-one-domain-out splits") {
  const auto s4 = loo_splits(4);
  REQUIRE(s4.size() == 4);
  for (size_t k = 0; k < 4; ++k) {
    CHECK(s4[k].train_domains.size() == 3);
    CHECK(std::find(s4[k].train_domains.begin(), s4[k].train_domains.end(), s4[k].held_out) ==
          s4[k].train_domains.end());
  }
  CHECK(loo_splits(2).size() == 2);
  CHECK_THROWS(loo_splits(1));
}

TEST_CASE("benchmark spec json round trip") {
  const auto b = toy_benchmark();
  const auto back = benchmark_from_json(to_json(b));
  CHECK(to_json(back) == to_json(b));
  auto j = to_json(b);
  j["unexpected"] = 1;
  CHECK_THROWS_AS(benchmark_from_json(j), ConfigError);
}

TEST_CASE("shipped benchmark is valid") {
  const auto b = load_benchmark(HCDG_SOURCE_DIR "/data/benchmark_v1.json");
  CHECK(b.domains.size() == 4);
  CHECK(b.size == 64);
  CHECK(b.n_train == 100);
  CHECK(b.n_test == 25);
}

TEST_CASE("png masks encode one bit per class") {
  const auto path = std::filesystem::temp_directory_path() / "hcdg_mask.png";
  BinaryMask m(4, 4, 2);
  m.at(0, 1, 1) = 1;
  m.at(1, 1, 1) = 1;
  m.at(1, 2, 2) = 1;
  png::write_mask(path, m);
  CHECK(png::read_mask(path, 2) == m);
  CHECK_THROWS(png::read_mask(path, 1));
  std::filesystem::remove(path);
}
