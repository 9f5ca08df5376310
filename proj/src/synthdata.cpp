#include "hcdg/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "hcdg/common.hpp"
#include "hcdg/png_io.hpp"

namespace hcdg::synth {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kSchema = "hcdg-dataset";
constexpr int kSchemaVersion = 1;

void check_unit(const Rgb& c, const std::string& what) {
  for (double v : c)
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(what + " components must lie in [0, 1]");
}

uint64_t split_code(const std::string& split) {
  if (split == "train") return 0;
  if (split == "test") return 1;
  throw ConfigError("unknown split '" + split + "'");
}

struct Ellipse {
  double cx, cy, rx, ry, cos_t, sin_t;

  // Squared normalized radius of (x, y); inside when <= 1.
  double norm2(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double u = (dx * cos_t + dy * sin_t) / rx;
    const double v = (-dx * sin_t + dy * cos_t) / ry;
    return u * u + v * v;
  }
};

}  // namespace

void GeometryRanges::validate() const {
  auto range = [](double lo, double hi, double min, double max, const char* what) {
    if (!(lo > min && hi < max && lo <= hi)) throw ConfigError(std::string("degenerate geometry range: ") + what);
  };
  range(disc_radius_lo, disc_radius_hi, 0.0, 0.5, "disc radius");
  range(cup_ratio_lo, cup_ratio_hi, 0.0, 1.0, "cup ratio");
  range(aspect_lo, aspect_hi, 0.0, 10.0, "aspect");
  if (!(center_jitter >= 0.0 && center_jitter + disc_radius_hi * std::max(1.0, aspect_hi) < 0.5)) {
    throw ConfigError("degenerate geometry range: disc may leave the image");
  }
}

void DomainSpec::validate() const {
  check_unit(background, "background");
  check_unit(disc, "disc");
  check_unit(cup, "cup");
  if (!(gamma > 0.0)) throw ConfigError("gamma must be > 0");
  if (!(texture_freq >= 0.0) || !(texture_amp >= 0.0)) throw ConfigError("texture parameters must be >= 0");
  if (!(color_jitter >= 0.0 && color_jitter < 1.0)) throw ConfigError("color_jitter must lie in [0, 1)");
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
  geometry.validate();
}

void BenchmarkSpec::validate() const {
  if (domains.size() < 2) throw ConfigError("benchmark needs at least two domains");
  if (size < 8) throw ConfigError("benchmark size must be >= 8");
  if (n_train < 1 || n_test < 0) throw ConfigError("benchmark needs n_train >= 1 and n_test >= 0");
  for (size_t i = 0; i < domains.size(); ++i) {
    domains[i].validate();
    for (size_t j = 0; j < i; ++j)
      if (domains[i].id == domains[j].id) throw ConfigError("duplicate domain id");
  }
}

std::vector<const Sample*> DomainSet::select(int domain, const std::string& split) const {
  std::vector<const Sample*> out;
  for (const auto& s : domains.at(domain))
    if (split.empty() || s.split == split) out.push_back(&s);
  return out;
}

json to_json(const DomainSpec& d) {
  const auto& g = d.geometry;
  return {{"id", d.id},
          {"name", d.name},
          {"background", d.background},
          {"disc", d.disc},
          {"cup", d.cup},
          {"gamma", d.gamma},
          {"texture_freq", d.texture_freq},
          {"texture_amp", d.texture_amp},
          {"color_jitter", d.color_jitter},
          {"noise_sigma", d.noise_sigma},
          {"geometry",
           {{"disc_radius", {g.disc_radius_lo, g.disc_radius_hi}},
            {"cup_ratio", {g.cup_ratio_lo, g.cup_ratio_hi}},
            {"aspect", {g.aspect_lo, g.aspect_hi}},
            {"center_jitter", g.center_jitter}}}};
}

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& what) {
  if (!j.is_object()) throw ConfigError(what + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return it.key() == k; })) {
      throw ConfigError("unknown key '" + it.key() + "' in " + what);
    }
  }
}

}  // namespace

DomainSpec domain_from_json(const json& j) {
  reject_unknown(j, {"id", "name", "background", "disc", "cup", "gamma", "texture_freq", "texture_amp",
                     "color_jitter", "noise_sigma", "geometry"},
                 "domain spec");
  try {
    DomainSpec d;
    d.id = j.at("id").get<int>();
    d.name = j.value("name", "domain" + std::to_string(d.id));
    d.background = j.at("background").get<Rgb>();
    d.disc = j.at("disc").get<Rgb>();
    d.cup = j.at("cup").get<Rgb>();
    d.gamma = j.at("gamma").get<double>();
    d.texture_freq = j.at("texture_freq").get<double>();
    d.texture_amp = j.at("texture_amp").get<double>();
    d.color_jitter = j.value("color_jitter", d.color_jitter);
    d.noise_sigma = j.at("noise_sigma").get<double>();
    if (j.contains("geometry")) {
      const auto& g = j.at("geometry");
      reject_unknown(g, {"disc_radius", "cup_ratio", "aspect", "center_jitter"}, "geometry");
      auto pair = [&g](const char* key, double& lo, double& hi) {
        if (!g.contains(key)) return;
        const auto v = g.at(key).get<std::array<double, 2>>();
        lo = v[0];
        hi = v[1];
      };
      pair("disc_radius", d.geometry.disc_radius_lo, d.geometry.disc_radius_hi);
      pair("cup_ratio", d.geometry.cup_ratio_lo, d.geometry.cup_ratio_hi);
      pair("aspect", d.geometry.aspect_lo, d.geometry.aspect_hi);
      d.geometry.center_jitter = g.value("center_jitter", d.geometry.center_jitter);
    }
    return d;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid domain spec: ") + e.what());
  }
}

json to_json(const BenchmarkSpec& b) {
  json doms = json::array();
  for (const auto& d : b.domains) doms.push_back(to_json(d));
  return {{"name", b.name}, {"version", b.version}, {"seed", b.seed},     {"size", b.size},
          {"n_train", b.n_train}, {"n_test", b.n_test}, {"domains", doms}};
}

BenchmarkSpec benchmark_from_json(const json& j) {
  BenchmarkSpec b;
  reject_unknown(j, {"name", "version", "seed", "size", "n_train", "n_test", "domains"}, "benchmark spec");
  try {
    b.name = j.value("name", b.name);
    b.version = j.value("version", b.version);
    b.seed = j.value("seed", b.seed);
    b.size = j.value("size", b.size);
    b.n_train = j.value("n_train", b.n_train);
    b.n_test = j.value("n_test", b.n_test);
    for (const auto& d : j.at("domains")) b.domains.push_back(domain_from_json(d));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid benchmark spec: ") + e.what());
  }
  b.validate();
  return b;
}

BenchmarkSpec load_benchmark(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open benchmark spec " + path.string());
  try {
    return benchmark_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

Sample render_sample(const DomainSpec& spec, int size, uint64_t seed, int index, const std::string& split) {
  const uint64_t code = split_code(split);
  const auto dom = static_cast<uint64_t>(spec.id);
  const auto idx = static_cast<uint64_t>(index);
  Rng geo = Rng::derive(seed, "synth/geometry", {dom, code, idx});
  Rng app = Rng::derive(seed, "synth/appearance", {dom, code, idx});
  const auto& g = spec.geometry;
  const double n = size;

  const double theta = geo.uniform(0.0, std::numbers::pi);
  const double r = geo.uniform(g.disc_radius_lo, g.disc_radius_hi) * n;
  const double aspect = geo.uniform(g.aspect_lo, g.aspect_hi);
  const double cx = (0.5 + geo.uniform(-g.center_jitter, g.center_jitter)) * n;
  const double cy = (0.5 + geo.uniform(-g.center_jitter, g.center_jitter)) * n;
  const Ellipse disc{cx, cy, r, r * aspect, std::cos(theta), std::sin(theta)};
  const double ratio = geo.uniform(g.cup_ratio_lo, g.cup_ratio_hi);
  // Offset in the disc's normalized frame; at most half the free margin so
  // the cup stays strictly inside the disc.
  const double off = geo.uniform(0.0, 0.5 * (1.0 - ratio));
  const double phi = geo.uniform(0.0, 2.0 * std::numbers::pi);
  const double ou = off * std::cos(phi) * disc.rx, ov = off * std::sin(phi) * disc.ry;
  const Ellipse cup{cx + ou * disc.cos_t - ov * disc.sin_t, cy + ou * disc.sin_t + ov * disc.cos_t,
                    ratio * disc.rx, ratio * disc.ry, disc.cos_t, disc.sin_t};

  const double bright = 1.0 + app.uniform(-spec.color_jitter, spec.color_jitter);
  const double tex_theta = app.uniform(0.0, std::numbers::pi);
  const double ph1 = app.uniform(0.0, 2.0 * std::numbers::pi);
  const double ph2 = app.uniform(0.0, 2.0 * std::numbers::pi);
  const double w = 2.0 * std::numbers::pi * spec.texture_freq / n;

  Sample s;
  s.domain = spec.id;
  s.index = index;
  s.split = split;
  s.id = "d" + std::to_string(spec.id) + "_" + split + "_" + std::to_string(index);
  s.image = Image(size, size, 3);
  s.mask = BinaryMask(size, size, 2);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const bool in_disc = disc.norm2(px, py) <= 1.0;
      const bool in_cup = in_disc && cup.norm2(px, py) <= 1.0;
      s.mask.at(0, y, x) = in_cup;
      s.mask.at(1, y, x) = in_disc;
      const Rgb& base = in_cup ? spec.cup : (in_disc ? spec.disc : spec.background);
      const double u = px * std::cos(tex_theta) + py * std::sin(tex_theta);
      const double v = -px * std::sin(tex_theta) + py * std::cos(tex_theta);
      const double tex = spec.texture_amp * std::sin(w * u + ph1) * std::sin(w * v + ph2);
      for (int c = 0; c < 3; ++c) {
        double val = std::clamp(base[c] * bright + tex, 0.0, 1.0);
        val = std::pow(val, spec.gamma);
        if (spec.noise_sigma > 0.0) val += app.normal(0.0, spec.noise_sigma);
        s.image.at(c, y, x) = png::from_byte(png::to_byte(val));
      }
    }
  }
  return s;
}

DomainSet generate(const BenchmarkSpec& bench) {
  bench.validate();
  DomainSet ds;
  ds.name = bench.name;
  ds.seed = bench.seed;
  ds.size = bench.size;
  ds.specs = bench.domains;
  const int k = static_cast<int>(bench.domains.size());
  const int per = bench.n_train + bench.n_test;
  ds.domains.assign(k, std::vector<Sample>(per));
#pragma omp parallel for collapse(2) schedule(static)
  for (int d = 0; d < k; ++d) {
    for (int i = 0; i < per; ++i) {
      const bool train = i < bench.n_train;
      ds.domains[d][i] = render_sample(bench.domains[d], bench.size, bench.seed, train ? i : i - bench.n_train,
                                       train ? "train" : "test");
    }
  }
  return ds;
}

std::string content_hash(const DomainSet& ds) {
  std::string bytes;
  for (const auto& dom : ds.domains) {
    for (const auto& s : dom) {
      bytes += s.id;
      bytes.push_back('\0');
      for (double v : s.image.data()) bytes.push_back(static_cast<char>(png::to_byte(v)));
      for (uint8_t v : s.mask.data()) bytes.push_back(static_cast<char>(v));
    }
  }
  return sha256_hex(bytes);
}

void save(const DomainSet& ds, const fs::path& dir) {
  fs::create_directories(dir);
  json samples = json::array();
  json specs = json::array();
  for (const auto& sp : ds.specs) specs.push_back(to_json(sp));
  for (size_t d = 0; d < ds.domains.size(); ++d) {
    for (const auto& s : ds.domains[d]) {
      const fs::path rel = fs::path("domain" + std::to_string(s.domain)) / s.split;
      fs::create_directories(dir / rel);
      const fs::path img = rel / (std::to_string(s.index) + "_image.png");
      const fs::path msk = rel / (std::to_string(s.index) + "_mask.png");
      png::write_image(dir / img, s.image);
      png::write_mask(dir / msk, s.mask);
      samples.push_back({{"id", s.id},
                         {"domain", s.domain},
                         {"split", s.split},
                         {"index", s.index},
                         {"image", img.generic_string()},
                         {"mask", msk.generic_string()}});
    }
  }
  json manifest = {{"schema", kSchema},        {"schema_version", kSchemaVersion}, {"name", ds.name},
                   {"seed", ds.seed},          {"size", ds.size},                   {"domains", specs},
                   {"samples", samples},       {"content_hash", content_hash(ds)}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw DataError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";
}

DomainSet load(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DataError("no manifest.json in " + dir.string());
  DomainSet ds;
  std::string expected;
  try {
    const json m = json::parse(in);
    if (m.at("schema") != kSchema || m.at("schema_version") != kSchemaVersion) {
      throw DataError("unsupported dataset schema in " + dir.string());
    }
    ds.name = m.at("name").get<std::string>();
    ds.seed = m.at("seed").get<uint64_t>();
    ds.size = m.at("size").get<int>();
    for (const auto& d : m.at("domains")) ds.specs.push_back(domain_from_json(d));
    ds.domains.resize(ds.specs.size());
    for (const auto& e : m.at("samples")) {
      Sample s;
      s.id = e.at("id").get<std::string>();
      s.domain = e.at("domain").get<int>();
      s.split = e.at("split").get<std::string>();
      s.index = e.at("index").get<int>();
      s.image = png::read_image(dir / e.at("image").get<std::string>());
      s.mask = png::read_mask(dir / e.at("mask").get<std::string>(), 2);
      if (s.image.height() != ds.size || s.image.width() != ds.size || s.image.channels() != 3 ||
          s.mask.height() != ds.size || s.mask.width() != ds.size) {
        throw DataError(s.id + ": unexpected sample dimensions");
      }
      auto pos = std::find_if(ds.specs.begin(), ds.specs.end(), [&](const DomainSpec& d) { return d.id == s.domain; });
      if (pos == ds.specs.end()) throw DataError(s.id + ": unknown domain id");
      ds.domains[pos - ds.specs.begin()].push_back(std::move(s));
    }
    expected = m.at("content_hash").get<std::string>();
  } catch (const json::exception& e) {
    throw DataError("invalid manifest in " + dir.string() + ": " + e.what());
  }
  if (content_hash(ds) != expected) throw DataError("content hash mismatch in " + dir.string() + ": corrupt dataset");
  return ds;
}

std::vector<Split> loo_splits(int num_domains) {
  if (num_domains < 2) throw ConfigError("leave-one-domain-out needs at least two domains");
  std::vector<Split> out;
  for (int h = 0; h < num_domains; ++h) {
    Split s;
    s.held_out = h;
    for (int d = 0; d < num_domains; ++d)
      if (d != h) s.train_domains.push_back(d);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace hcdg::synth
