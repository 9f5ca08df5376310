#pragma once

// Multi-domain synthetic segmentation benchmark: fundus-like images with an
// elliptical "disc" and an inner "cup" on a textured background. Domains
// share the geometry distribution and differ only in appearance.

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hcdg/image.hpp"

namespace hcdg::synth {

using Rgb = std::array<double, 3>;

struct GeometryRanges {
  double disc_radius_lo = 0.16;  // fraction of the image side
  double disc_radius_hi = 0.24;
  double cup_ratio_lo = 0.35;    // cup radius / disc radius
  double cup_ratio_hi = 0.65;
  double aspect_lo = 0.85;       // vertical / horizontal radius
  double aspect_hi = 1.15;
  double center_jitter = 0.12;   // max center offset, fraction of the side

  void validate() const;
};

struct DomainSpec {
  int id = 0;
  std::string name;
  Rgb background{0.45, 0.20, 0.10};
  Rgb disc{0.85, 0.60, 0.35};
  Rgb cup{0.97, 0.90, 0.75};
  double gamma = 1.0;
  double texture_freq = 3.0;   // cycles per image side
  double texture_amp = 0.05;
  double color_jitter = 0.05;  // per-sample relative brightness jitter
  double noise_sigma = 0.02;
  GeometryRanges geometry;

  void validate() const;
};

struct Sample {
  Image image;      // size x size x 3, values on the 8-bit grid
  BinaryMask mask;  // channel 0 = cup, channel 1 = disc
  int domain = 0;
  int index = 0;
  std::string split;  // "train" or "test"
  std::string id;
};

struct DomainSet {
  std::string name;
  uint64_t seed = 0;
  int size = 64;
  std::vector<DomainSpec> specs;
  std::vector<std::vector<Sample>> domains;  // indexed by position in specs
  std::optional<int> held_out;

  int num_domains() const { return static_cast<int>(domains.size()); }
  std::vector<const Sample*> select(int domain, const std::string& split) const;
};

struct BenchmarkSpec {
  std::string name = "benchmark";
  int version = 1;
  uint64_t seed = 0;
  int size = 64;
  int n_train = 100;
  int n_test = 25;
  std::vector<DomainSpec> domains;

  void validate() const;
};

nlohmann::json to_json(const DomainSpec& d);
DomainSpec domain_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BenchmarkSpec& b);
BenchmarkSpec benchmark_from_json(const nlohmann::json& j);
BenchmarkSpec load_benchmark(const std::filesystem::path& path);

// Geometry and appearance draw from separate streams keyed by (seed, domain
// id, split, index), so changing appearance parameters never moves a mask.
Sample render_sample(const DomainSpec& spec, int size, uint64_t seed, int index, const std::string& split);

DomainSet generate(const BenchmarkSpec& bench);

// SHA-256 over the pixel bytes of every sample in domain, split and index order.
std::string content_hash(const DomainSet& ds);

// Writes <dir>/manifest.json plus PNGs under <dir>/<domain>/<split>/.
void save(const DomainSet& ds, const std::filesystem::path& dir);
// Verifies the manifest schema and content hash.
DomainSet load(const std::filesystem::path& dir);

struct Split {
  std::vector<int> train_domains;
  int held_out = 0;
};
std::vector<Split> loo_splits(int num_domains);

}  // namespace hcdg::synth
