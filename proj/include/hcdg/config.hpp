#pragma once

// Training configuration, its JSON form, named ablation presets, and
// key=value overrides on the JSON tree.

#include <string>
#include <vector>

#include <json.hpp>

#include "hcdg/fourier_aug.hpp"
#include "hcdg/losses.hpp"
#include "hcdg/model.hpp"

namespace hcdg::train {

struct WeakAugConfig {
  bool enabled = true;
  double scale_lo = 0.9;
  double scale_hi = 1.1;
  double flip_p = 0.5;
  double brightness_lo = 0.9;
  double brightness_hi = 1.1;

  void validate() const;
};

struct TrainConfig {
  uint64_t seed = 0;
  int epochs = 40;
  int pretrain_epochs = 10;       // supervised warm start before the main schedule
  int iterations_per_epoch = 0;   // 0: size of the largest source training split
  double lr = 1e-3;
  double lr_decay = 0.5;
  double lr_decay_at = 2.0 / 3.0;  // fraction of epochs after which lr is decayed
  double ema_momentum = 0.9995;

  // Mode flags; all off is plain supervised training on weakly augmented data.
  bool use_domainup = true;
  bool use_ec = true;
  bool use_classmates = true;
  bool use_ic_dual_task = true;  // classmates regress boundaries; otherwise they segment
  bool use_feature_perturbation = true;
  bool accumulate_losses = false;
  double boundary_weight = 1.0;

  int checkpoint_every = 0;  // epochs between checkpoints; the final epoch is always saved
  int eval_batch = 25;

  fourier::AugConfig aug;
  losses::LossConfig loss;
  nn::ModelConfig model;
  WeakAugConfig weak;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
// Strict: unknown keys and type mismatches raise ConfigError.
TrainConfig train_config_from_json(const nlohmann::json& j);

// Names of the ablation rows in table order.
const std::vector<std::string>& preset_names();
// Mode flags for a named row ("baseline", "A".."E", "hcdg"); other fields untouched.
void apply_preset(TrainConfig& cfg, const std::string& name);

// Sets a dotted path ("loss.temperature=5", "use_ec=false") on a JSON tree.
// The key must already exist; the value is parsed as JSON when possible and
// kept as a string otherwise.
void apply_override(nlohmann::json& tree, const std::string& assignment);

// Layers a JSON object over another, key by key.
void merge_json(nlohmann::json& base, const nlohmann::json& layer);

// Hex SHA-256 of the canonical JSON dump.
std::string config_hash(const nlohmann::json& j);

}  // namespace hcdg::train
