#pragma once

// Training loop: domain-covering batches, weak augmentation, worst-case
// Fourier augmentation, per-loss optimizer steps with gradient routing, EMA
// teacher updates, evaluation, and run records.

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hcdg/config.hpp"
#include "hcdg/losses.hpp"
#include "hcdg/model.hpp"
#include "hcdg/synthdata.hpp"

namespace hcdg::train {

struct Augmented {
  Image image;
  BinaryMask mask;
};

// Random scale about the center (bilinear image, nearest mask, edge
// replication), horizontal flip, and brightness gain clamped to [0, 1].
Augmented weak_augment(const Image& image, const BinaryMask& mask, const WeakAugConfig& cfg, Rng& rng);

struct SampleRef {
  int domain = 0;  // position in the DomainSet
  int index = 0;   // position in that domain's training split
};

// One training sample per source domain per batch. Each domain walks its own
// permutation, reshuffled when exhausted.
class DomainSampler {
 public:
  DomainSampler(std::vector<int> domains, std::vector<int> sizes, uint64_t seed);

  std::vector<SampleRef> batch(long long step);
  int num_domains() const { return static_cast<int>(domains_.size()); }

 private:
  std::vector<int> domains_;
  std::vector<int> sizes_;
  uint64_t seed_;
  std::vector<std::vector<int>> perms_;
  std::vector<long long> cycle_;
  void ensure(int d, long long cycle);
};

nn::Tensor stack_images(const std::vector<Image>& images);
std::vector<double> stack_masks(const std::vector<BinaryMask>& masks);
std::vector<double> stack_boundaries(const std::vector<BinaryMask>& masks);

struct EvalResult {
  int images = 0;
  std::array<double, 2> dice{};  // percent per channel (cup, disc)
  std::array<double, 2> asd{};   // pixels per channel, over images where defined
  std::array<int, 2> asd_count{};
  double mean_dice() const { return 0.5 * (dice[0] + dice[1]); }
};

// Deterministic forward passes with running normalization statistics and a
// strict 0.5 threshold (a probability of exactly 0.5 is background).
EvalResult evaluate(nn::SegModel& model, const std::vector<const synth::Sample*>& samples, bool use_student,
                    int batch_size = 25);
EvalResult evaluate_logits(const std::vector<double>& logits, const std::vector<const synth::Sample*>& samples);
nlohmann::json to_json(const EvalResult& r);

struct StepRecord {
  long long step = 0;
  int epoch = 0;
  double gamma = 0.0;
  double lr = 0.0;
  std::vector<SampleRef> batch;
  double seg_weak = 0.0;
  double seg_strong = 0.0;
  std::vector<int> winners;
  double ec_w2s = 0.0;
  double ec_s2w = 0.0;
  double boundary = 0.0;
  double ic = 0.0;
  double total = 0.0;
};

nlohmann::json to_json(const StepRecord& r);

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double gamma = 0.0;
  double seg = 0.0;
  double ec = 0.0;
  double boundary = 0.0;
  double ic = 0.0;
  EvalResult held_out;
  EvalResult in_domain;
  bool has_held_out = false;
};

struct RunRecord {
  std::vector<EpochMetrics> epochs;
  std::vector<long long> winner_histogram;
  std::vector<std::string> checkpoints;
  std::string config_hash;
  std::string dataset_hash;
  std::string parameter_hash;
  double seconds = 0.0;
};

enum class Stage { kSeg, kEc, kBoundary, kIc, kBeforeEma, kAfterEma };

struct DomainUpAudit {
  const std::vector<nn::Tensor>* candidates;
  const std::vector<double>* target;
  const losses::DomainUpResult* result;
};

struct Hooks {
  // Called after the candidate probe and before any parameter update.
  std::function<void(nn::SegModel&, const DomainUpAudit&)> on_domainup;
  // Called after each optimizer step or EMA boundary of an iteration.
  std::function<void(nn::SegModel&, Stage)> on_stage;
};

class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const synth::DomainSet& data, std::vector<int> train_domains,
          std::optional<int> held_out);

  // One iteration of the schedule at global step `step` within `epoch`.
  StepRecord step(long long step, int epoch);

  // Full schedule. With an output directory, writes config.json, metrics.csv,
  // losses.jsonl, checkpoints/epoch_<n>.bin and report.md.
  RunRecord run(const std::optional<std::filesystem::path>& out_dir = std::nullopt);

  EpochMetrics evaluate_epoch(int epoch);

  nn::SegModel& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }
  int iterations_per_epoch() const { return iters_per_epoch_; }
  double lr_at(int epoch) const;
  double gamma_at(int epoch) const;

  Hooks hooks;

 private:
  struct Batch {
    std::vector<SampleRef> refs;
    std::vector<Image> weak;
    std::vector<BinaryMask> masks;
    nn::Tensor weak_tensor;
    std::vector<double> target;
    std::vector<double> boundary;
  };

  Batch make_batch(long long step);
  std::vector<nn::Tensor> make_candidates(const Batch& b, long long step);
  void optimize(nn::Tensor loss, const std::vector<nn::GroupId>& groups, double lr);
  void check_finite(const StepRecord& r, const char* stage, double value);
  std::vector<nn::Tensor> classmate_outputs(const nn::Tensor& z, long long step, int stage);
  nn::Tensor classmate_loss(const std::vector<nn::Tensor>& preds, const Batch& b);
  nn::Tensor classmate_consistency(const nn::Tensor& student_logits, const std::vector<nn::Tensor>& preds);
  void step_sequential(const Batch& b, const std::vector<nn::Tensor>& candidates, StepRecord& rec, double lr,
                       double gamma);
  void step_accumulated(const Batch& b, const std::vector<nn::Tensor>& candidates, StepRecord& rec, double lr,
                        double gamma);

  TrainConfig cfg_;
  const synth::DomainSet& data_;
  std::vector<int> train_domains_;
  std::optional<int> held_out_;
  std::vector<std::vector<const synth::Sample*>> train_samples_;
  nn::SegModel model_;
  nn::Adam adam_;
  DomainSampler sampler_;
  int iters_per_epoch_ = 0;
  std::vector<long long> winner_histogram_;
  bool pretraining_ = false;
};

// Ablation over presets x held-out domains x seeds.
struct GridCell {
  std::string preset;
  int held_out = 0;
  uint64_t seed = 0;
  EpochMetrics final_metrics;
  std::string run_dir;
};

struct GridReport {
  std::vector<GridCell> cells;
  std::string markdown;  // table with one row per preset, mean +- std over seeds
};

GridReport run_ablation_grid(const TrainConfig& base, const synth::DomainSet& data,
                             const std::vector<std::string>& presets, const std::vector<uint64_t>& seeds,
                             const std::optional<std::filesystem::path>& out_dir,
                             const std::function<void(const GridCell&)>& progress = {});

std::string render_grid_markdown(const std::vector<GridCell>& cells, const std::vector<std::string>& presets,
                                 const std::vector<std::string>& domain_names);

}  // namespace hcdg::train
