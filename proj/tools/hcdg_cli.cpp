// Command line entry point: dataset generation, augmentation previews,
// training, evaluation and the ablation grid.

#include <omp.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hcdg/checkpoint.hpp"
#include "hcdg/common.hpp"
#include "hcdg/config.hpp"
#include "hcdg/fourier_aug.hpp"
#include "hcdg/png_io.hpp"
#include "hcdg/synthdata.hpp"
#include "hcdg/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hcdg;

namespace {

void apply_thread_cap() {
  const char* env = std::getenv("HCDG_THREADS");
  if (!env || !*env) return;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError("HCDG_THREADS must be a positive integer");
  omp_set_num_threads(static_cast<int>(std::min<long>(n, omp_get_max_threads())));
}

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open " + p.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError(p.string() + " is not valid JSON");
  return j;
}

void write_json_file(const fs::path& p, const json& j) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw DataError("cannot write " + p.string());
  out << j.dump(2) << "\n";
}

// A dataset directory holds manifest.json; a .json file is a benchmark spec
// generated in memory.
synth::DomainSet load_data(const fs::path& p) {
  if (fs::is_directory(p)) return synth::load(p);
  if (!fs::exists(p)) throw DataError("dataset not found: " + p.string());
  return synth::generate(synth::load_benchmark(p));
}

struct ConfigArgs {
  std::string config_file;
  std::string preset;
  std::optional<uint64_t> seed;
  std::vector<std::string> overrides;

  void add(CLI::App* app) {
    app->add_option("--config", config_file, "JSON config layered over the defaults");
    app->add_option("--preset", preset, "Mode preset: baseline, A, B, C, D, E or hcdg");
    app->add_option("--seed", seed, "Master seed");
    app->add_option("--set", overrides, "Override a config key, e.g. --set loss.temperature=5")->take_all();
  }

  // defaults <- config file <- preset <- seed <- overrides
  train::TrainConfig resolve() const {
    json tree = train::to_json(train::TrainConfig{});
    if (!config_file.empty()) {
      json layer = read_json_file(config_file);
      if (layer.contains("config") && layer.at("config").is_object()) layer = layer.at("config");
      train::merge_json(tree, layer);
    }
    if (!preset.empty()) {
      train::TrainConfig tmp = train::train_config_from_json(tree);
      train::apply_preset(tmp, preset);
      tree = train::to_json(tmp);
    }
    if (seed) tree["seed"] = *seed;
    for (const auto& o : overrides) train::apply_override(tree, o);
    return train::train_config_from_json(tree);
  }
};

int find_domain(const synth::DomainSet& ds, const std::string& key) {
  for (size_t i = 0; i < ds.specs.size(); ++i)
    if (ds.specs[i].name == key || std::to_string(ds.specs[i].id) == key) return static_cast<int>(i);
  throw ConfigError("unknown domain '" + key + "'");
}

// ---- gen-data --------------------------------------------------------------

int cmd_gen_data(const std::string& bench_path, const std::string& out, std::optional<uint64_t> seed,
                 const std::vector<std::string>& overrides) {
  json tree = read_json_file(bench_path);
  if (seed) tree["seed"] = *seed;
  for (const auto& o : overrides) train::apply_override(tree, o);
  const auto bench = synth::benchmark_from_json(tree);
  fs::create_directories(out);
  write_json_file(fs::path(out) / "benchmark.json", synth::to_json(bench));
  const auto ds = synth::generate(bench);
  synth::save(ds, out);
  std::cout << synth::content_hash(ds) << "\n";
  return 0;
}

// ---- augment ---------------------------------------------------------------

struct AugmentArgs {
  std::string src, counterpart, out;
  std::string mode = "AG";
  std::optional<double> sigma, t, lambda;
  std::vector<double> mu;
  bool sweep = false;
  uint64_t seed = 0;
};

int cmd_augment(const AugmentArgs& a) {
  const Image src = png::read_image(a.src);
  const Image cp = png::read_image(a.counterpart);
  if (!src.same_shape(cp)) throw DataError("source and counterpart images differ in shape");
  fourier::AugConfig cfg;
  cfg.mask_mode = fourier::mask_mode_from_string(a.mode);
  if (a.t) cfg.t = *a.t;
  cfg.validate();
  if (!a.mu.empty() && a.mu.size() != 2) throw ConfigError("--mu takes two values");
  fs::create_directories(a.out);

  json log = {{"src", a.src}, {"counterpart", a.counterpart}, {"mode", a.mode}, {"outputs", json::array()}};
  Rng rng = Rng::derive(a.seed, "augment");
  auto make_mask = [&](std::optional<double> sigma) {
    if (cfg.mask_mode == fourier::MaskMode::kAM) {
      const double lambda = a.lambda ? *a.lambda : rng.uniform(0.0, cfg.am_lambda_max);
      return fourier::constant_mask(src.height(), src.width(), lambda);
    }
    if (!sigma && a.mu.empty()) return fourier::sample_sigmask(src.height(), src.width(), cfg, rng);
    const double s = sigma ? *sigma : rng.uniform(fourier::sigma_lower_bound(), cfg.sigma_max());
    const double mu1 = a.mu.empty() ? rng.uniform(-cfg.t / 2, cfg.t / 2) : a.mu[0];
    const double mu2 = a.mu.empty() ? rng.uniform(-cfg.t / 2, cfg.t / 2) : a.mu[1];
    return fourier::gaussian_mask(src.height(), src.width(), s, mu1, mu2, cfg.t);
  };
  auto emit = [&](const fourier::SigMask& m, const std::string& name) {
    png::write_image(fs::path(a.out) / name, fourier::augment_with_mask(src, cp, m));
    json entry = {{"file", name}, {"mode", fourier::to_string(m.mode)}, {"mask_peak", m.peak()}};
    if (m.mode == fourier::MaskMode::kAG) {
      entry["sigma"] = m.sigma;
      entry["mu"] = {m.mu1, m.mu2};
      entry["t"] = m.t;
    } else {
      entry["lambda"] = m.lambda;
    }
    log["outputs"].push_back(entry);
    std::cout << name << ": mask peak " << m.peak() << "\n";
  };
  if (a.sweep) {
    if (cfg.mask_mode != fourier::MaskMode::kAG) throw ConfigError("--sweep needs --mode AG");
    const double sigmas[] = {0.4, 0.5, 0.6, 0.7, 0.8};
    for (int i = 0; i < 5; ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "sweep_%d.png", i);
      emit(make_mask(sigmas[i]), name);
    }
  } else {
    emit(make_mask(a.sigma), "augmented.png");
  }
  write_json_file(fs::path(a.out) / "augment_log.json", log);
  return 0;
}

// ---- train / eval / ablate -------------------------------------------------

int cmd_train(const std::string& data_path, const std::string& out, const std::string& held_out_key,
              const ConfigArgs& ca) {
  const auto cfg = ca.resolve();
  const auto ds = load_data(data_path);
  std::optional<int> held_out;
  std::vector<int> train_domains;
  if (!held_out_key.empty() && held_out_key != "none") held_out = find_domain(ds, held_out_key);
  for (int d = 0; d < ds.num_domains(); ++d)
    if (!held_out || d != *held_out) train_domains.push_back(d);
  train::Trainer trainer(cfg, ds, train_domains, held_out);
  const auto rec = trainer.run(fs::path(out));
  const auto& f = rec.epochs.back();
  json summary = {{"final_epoch", f.epoch},
                  {"in_domain", train::to_json(f.in_domain)},
                  {"parameter_hash", rec.parameter_hash},
                  {"seconds", rec.seconds}};
  if (f.has_held_out) summary["held_out"] = train::to_json(f.held_out);
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_eval(const std::string& data_path, const std::string& checkpoint, const std::string& domain_key,
             const std::string& split, bool teacher, const std::string& out) {
  const auto ds = load_data(data_path);
  // The model shape comes from the checkpoint header.
  const json header = nn::read_checkpoint_header(checkpoint);
  train::TrainConfig cfg;
  if (header.contains("config")) cfg = train::train_config_from_json(header.at("config"));
  nn::SegModel model(cfg.model, cfg.seed);
  nn::load_checkpoint(checkpoint, model);

  int domain = -1;
  if (!domain_key.empty()) {
    domain = find_domain(ds, domain_key);
  } else if (header.contains("held_out") && !header.at("held_out").is_null()) {
    domain = header.at("held_out").get<int>();
  } else {
    throw ConfigError("no --domain given and the checkpoint has no held-out domain");
  }
  if (split != "all" && split != "train" && split != "test") throw ConfigError("--split must be all, train or test");
  const auto samples = ds.select(domain, split == "all" ? "" : split);
  if (samples.empty()) throw DataError("no samples in the selected domain/split");
  const auto r = train::evaluate(model, samples, !teacher, cfg.eval_batch);
  json j = train::to_json(r);
  j["domain"] = ds.specs[domain].name;
  j["split"] = split;
  j["model"] = teacher ? "teacher" : "student";
  j["checkpoint"] = checkpoint;
  std::cout << j.dump(2) << "\n";
  if (!out.empty()) {
    write_json_file(fs::path(out) / "eval.json", j);
    std::ofstream csv(fs::path(out) / "eval.csv");
    csv << "domain,split,model,images,dice_cup,dice_disc,dice_mean,asd_cup,asd_disc\n";
    csv << j["domain"].get<std::string>() << ',' << split << ',' << j["model"].get<std::string>() << ',' << r.images
        << ',' << r.dice[0] << ',' << r.dice[1] << ',' << r.mean_dice() << ',' << r.asd[0] << ',' << r.asd[1] << "\n";
  }
  return 0;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

int cmd_ablate(const std::string& data_path, const std::string& out, const std::string& presets_arg,
               const std::string& seeds_arg, const ConfigArgs& ca) {
  const auto cfg = ca.resolve();
  const auto ds = load_data(data_path);
  const auto presets = presets_arg.empty() ? train::preset_names() : split_list(presets_arg);
  for (const auto& p : presets) {
    train::TrainConfig probe;
    train::apply_preset(probe, p);
  }
  std::vector<uint64_t> seeds;
  for (const auto& s : split_list(seeds_arg)) {
    try {
      seeds.push_back(std::stoull(s));
    } catch (const std::exception&) {
      throw ConfigError("invalid seed '" + s + "'");
    }
  }
  if (seeds.empty()) throw ConfigError("--seeds must list at least one seed");
  fs::create_directories(out);
  write_json_file(fs::path(out) / "resolved_config.json",
                  {{"config", train::to_json(cfg)}, {"presets", presets}, {"seeds", seeds}});
  const auto report = train::run_ablation_grid(cfg, ds, presets, seeds, fs::path(out), [](const train::GridCell& c) {
    std::cerr << c.preset << " held-out " << c.held_out << " seed " << c.seed << ": dice "
              << c.final_metrics.held_out.mean_dice() << "\n";
  });
  std::cout << report.markdown;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical consistency domain generalization toolkit"};
  app.require_subcommand(1);

  std::string bench_path = "data/benchmark_v1.json", gen_out;
  std::optional<uint64_t> gen_seed;
  std::vector<std::string> gen_overrides;
  auto* gen = app.add_subcommand("gen-data", "Generate and save a synthetic multi-domain dataset");
  gen->add_option("--benchmark", bench_path, "Benchmark spec JSON")->capture_default_str();
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", gen_seed, "Override the benchmark seed");
  gen->add_option("--set", gen_overrides, "Override a benchmark key")->take_all();

  AugmentArgs aug_args;
  auto* aug = app.add_subcommand("augment", "Fourier amplitude mixing of two PNG images");
  aug->add_option("--src", aug_args.src, "Source image (keeps its phase)")->required();
  aug->add_option("--counterpart", aug_args.counterpart, "Counterpart image (donates amplitude)")->required();
  aug->add_option("--out", aug_args.out, "Output directory")->required();
  aug->add_option("--mode", aug_args.mode, "AG or AM")->capture_default_str();
  aug->add_option("--sigma", aug_args.sigma, "Gaussian width");
  aug->add_option("--mu", aug_args.mu, "Peak location (two values)")->expected(2);
  aug->add_option("--t", aug_args.t, "Grid half-extent");
  aug->add_option("--lambda", aug_args.lambda, "Constant mixing weight for AM");
  aug->add_flag("--sweep", aug_args.sweep, "Write a sigma sweep 0.4..0.8");
  aug->add_option("--seed", aug_args.seed, "Seed for unspecified parameters");

  std::string data_path, run_out, held_out;
  ConfigArgs train_cfg;
  auto* train = app.add_subcommand("train", "Train one model");
  train->add_option("--data", data_path, "Dataset directory or benchmark spec JSON")->required();
  train->add_option("--out", run_out, "Run directory")->required();
  train->add_option("--held-out", held_out, "Held-out domain name or id (none for all)");
  train_cfg.add(train);

  std::string eval_data, ckpt, eval_domain, eval_split = "all", eval_out;
  bool eval_teacher = false;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on one domain");
  eval->add_option("--data", eval_data, "Dataset directory or benchmark spec JSON")->required();
  eval->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  eval->add_option("--domain", eval_domain, "Domain name or id (defaults to the run's held-out domain)");
  eval->add_option("--split", eval_split, "all, train or test")->capture_default_str();
  eval->add_flag("--teacher", eval_teacher, "Evaluate the EMA teacher instead of the student");
  eval->add_option("--out", eval_out, "Directory for eval.json / eval.csv");

  std::string abl_data, abl_out, abl_presets, abl_seeds = "0,1,2";
  ConfigArgs abl_cfg;
  auto* abl = app.add_subcommand("ablate", "Leave-one-domain-out ablation grid");
  abl->add_option("--data", abl_data, "Dataset directory or benchmark spec JSON")->required();
  abl->add_option("--out", abl_out, "Output directory")->required();
  abl->add_option("--presets", abl_presets, "Comma-separated presets (default: all rows)");
  abl->add_option("--seeds", abl_seeds, "Comma-separated seeds")->capture_default_str();
  abl_cfg.add(abl);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ErrorKind::kConfig);
  }

  try {
    apply_thread_cap();
    if (*gen) return cmd_gen_data(bench_path, gen_out, gen_seed, gen_overrides);
    if (*aug) return cmd_augment(aug_args);
    if (*train) return cmd_train(data_path, run_out, held_out, train_cfg);
    if (*eval) return cmd_eval(eval_data, ckpt, eval_domain, eval_split, eval_teacher, eval_out);
    if (*abl) return cmd_ablate(abl_data, abl_out, abl_presets, abl_seeds, abl_cfg);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
