#include "hcdg/config.hpp"

#include <cmath>

#include "hcdg/common.hpp"

namespace hcdg::train {

using nlohmann::json;

void WeakAugConfig::validate() const {
  if (!(scale_lo > 0.0 && scale_lo <= scale_hi)) throw ConfigError("weak.scale range is invalid");
  if (!(flip_p >= 0.0 && flip_p <= 1.0)) throw ConfigError("weak.flip_p must lie in [0, 1]");
  if (!(brightness_lo >= 0.0 && brightness_lo <= brightness_hi)) throw ConfigError("weak.brightness range is invalid");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (pretrain_epochs < 0) throw ConfigError("pretrain_epochs must be >= 0");
  if (iterations_per_epoch < 0) throw ConfigError("iterations_per_epoch must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (!(lr_decay > 0.0)) throw ConfigError("lr_decay must be > 0");
  if (!(lr_decay_at >= 0.0 && lr_decay_at <= 1.0)) throw ConfigError("lr_decay_at must lie in [0, 1]");
  if (!(ema_momentum >= 0.0 && ema_momentum <= 1.0)) throw ConfigError("ema_momentum must lie in [0, 1]");
  if (!(boundary_weight >= 0.0)) throw ConfigError("boundary_weight must be >= 0");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  if (eval_batch < 1) throw ConfigError("eval_batch must be >= 1");
  aug.validate();
  loss.validate();
  model.validate();
  weak.validate();
}

json to_json(const TrainConfig& c) {
  return {
      {"seed", c.seed},
      {"epochs", c.epochs},
      {"pretrain_epochs", c.pretrain_epochs},
      {"iterations_per_epoch", c.iterations_per_epoch},
      {"lr", c.lr},
      {"lr_decay", c.lr_decay},
      {"lr_decay_at", c.lr_decay_at},
      {"ema_momentum", c.ema_momentum},
      {"use_domainup", c.use_domainup},
      {"use_ec", c.use_ec},
      {"use_classmates", c.use_classmates},
      {"use_ic_dual_task", c.use_ic_dual_task},
      {"use_feature_perturbation", c.use_feature_perturbation},
      {"accumulate_losses", c.accumulate_losses},
      {"boundary_weight", c.boundary_weight},
      {"checkpoint_every", c.checkpoint_every},
      {"eval_batch", c.eval_batch},
      {"aug",
       {{"eta", c.aug.eta},
        {"eta_bounds_variance", c.aug.eta_bounds_variance},
        {"t", c.aug.t},
        {"adaptive_mu", c.aug.adaptive_mu},
        {"sample_t", c.aug.sample_t},
        {"t_lo", c.aug.t_lo},
        {"t_hi", c.aug.t_hi},
        {"mask_mode", fourier::to_string(c.aug.mask_mode)},
        {"am_lambda_max", c.aug.am_lambda_max}}},
      {"loss",
       {{"temperature", c.loss.temperature},
        {"gamma_max", c.loss.gamma_max},
        {"rampup_epochs", c.loss.rampup_epochs},
        {"delta", c.loss.delta},
        {"omega", c.loss.omega}}},
      {"model",
       {{"in_channels", c.model.in_channels},
        {"num_classes", c.model.num_classes},
        {"encoder_widths", c.model.encoder_widths},
        {"decoder_widths", c.model.decoder_widths},
        {"classmate_widths", c.model.classmate_widths},
        {"num_classmates", c.model.num_classmates},
        {"dropout_p", c.model.dropout_p},
        {"noise_amplitude", c.model.noise_amplitude}}},
      {"weak",
       {{"enabled", c.weak.enabled},
        {"scale_lo", c.weak.scale_lo},
        {"scale_hi", c.weak.scale_hi},
        {"flip_p", c.weak.flip_p},
        {"brightness_lo", c.weak.brightness_lo},
        {"brightness_hi", c.weak.brightness_hi}}},
  };
}

namespace {

// Rejects keys of `j` that the reference tree does not know.
void check_keys(const json& j, const json& reference, const std::string& prefix) {
  if (!j.is_object()) throw ConfigError("config section '" + prefix + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!reference.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    if (reference.at(it.key()).is_object()) check_keys(it.value(), reference.at(it.key()), key);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  check_keys(j, to_json(c), "");
  try {
    read(j, "seed", c.seed);
    read(j, "epochs", c.epochs);
    read(j, "pretrain_epochs", c.pretrain_epochs);
    read(j, "iterations_per_epoch", c.iterations_per_epoch);
    read(j, "lr", c.lr);
    read(j, "lr_decay", c.lr_decay);
    read(j, "lr_decay_at", c.lr_decay_at);
    read(j, "ema_momentum", c.ema_momentum);
    read(j, "use_domainup", c.use_domainup);
    read(j, "use_ec", c.use_ec);
    read(j, "use_classmates", c.use_classmates);
    read(j, "use_ic_dual_task", c.use_ic_dual_task);
    read(j, "use_feature_perturbation", c.use_feature_perturbation);
    read(j, "accumulate_losses", c.accumulate_losses);
    read(j, "boundary_weight", c.boundary_weight);
    read(j, "checkpoint_every", c.checkpoint_every);
    read(j, "eval_batch", c.eval_batch);
    if (j.contains("aug")) {
      const auto& a = j.at("aug");
      read(a, "eta", c.aug.eta);
      read(a, "eta_bounds_variance", c.aug.eta_bounds_variance);
      read(a, "t", c.aug.t);
      read(a, "adaptive_mu", c.aug.adaptive_mu);
      read(a, "sample_t", c.aug.sample_t);
      read(a, "t_lo", c.aug.t_lo);
      read(a, "t_hi", c.aug.t_hi);
      if (a.contains("mask_mode")) c.aug.mask_mode = fourier::mask_mode_from_string(a.at("mask_mode").get<std::string>());
      read(a, "am_lambda_max", c.aug.am_lambda_max);
    }
    if (j.contains("loss")) {
      const auto& l = j.at("loss");
      read(l, "temperature", c.loss.temperature);
      read(l, "gamma_max", c.loss.gamma_max);
      read(l, "rampup_epochs", c.loss.rampup_epochs);
      read(l, "delta", c.loss.delta);
      read(l, "omega", c.loss.omega);
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      read(m, "in_channels", c.model.in_channels);
      read(m, "num_classes", c.model.num_classes);
      read(m, "encoder_widths", c.model.encoder_widths);
      read(m, "decoder_widths", c.model.decoder_widths);
      read(m, "classmate_widths", c.model.classmate_widths);
      read(m, "num_classmates", c.model.num_classmates);
      read(m, "dropout_p", c.model.dropout_p);
      read(m, "noise_amplitude", c.model.noise_amplitude);
    }
    if (j.contains("weak")) {
      const auto& w = j.at("weak");
      read(w, "enabled", c.weak.enabled);
      read(w, "scale_lo", c.weak.scale_lo);
      read(w, "scale_hi", c.weak.scale_hi);
      read(w, "flip_p", c.weak.flip_p);
      read(w, "brightness_lo", c.weak.brightness_lo);
      read(w, "brightness_hi", c.weak.brightness_hi);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config value: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  c.validate();
  return c;
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"baseline", "A", "B", "C", "D", "E", "hcdg"};
  return names;
}

void apply_preset(TrainConfig& c, const std::string& name) {
  using fourier::MaskMode;
  struct Row {
    const char* name;
    bool domainup, ec, classmates, dual;
    MaskMode mode;
  };
  static const Row rows[] = {
      {"baseline", false, false, false, false, MaskMode::kAG},
      {"A", true, true, false, false, MaskMode::kAM},
      {"B", true, true, false, false, MaskMode::kAG},
      {"C", true, true, true, false, MaskMode::kAM},
      {"D", true, true, true, true, MaskMode::kAM},
      {"E", true, false, true, true, MaskMode::kAG},
      {"hcdg", true, true, true, true, MaskMode::kAG},
  };
  for (const auto& r : rows) {
    if (name != r.name) continue;
    c.use_domainup = r.domainup;
    c.use_ec = r.ec;
    c.use_classmates = r.classmates;
    c.use_ic_dual_task = r.dual;
    c.use_feature_perturbation = r.classmates;
    c.aug.mask_mode = r.mode;
    return;
  }
  throw ConfigError("unknown preset '" + name + "'");
}

void apply_override(json& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json* node = &tree;
  size_t start = 0;
  while (true) {
    const size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(key)) throw ConfigError("unknown config key '" + path + "'");
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  *node = value;
}

void merge_json(json& base, const json& layer) {
  if (!layer.is_object()) throw ConfigError("config layer must be a JSON object");
  for (auto it = layer.begin(); it != layer.end(); ++it) {
    if (base.contains(it.key()) && base[it.key()].is_object() && it.value().is_object()) {
      merge_json(base[it.key()], it.value());
    } else {
      base[it.key()] = it.value();
    }
  }
}

std::string config_hash(const json& j) { return sha256_hex(j.dump()); }

}  // namespace hcdg::train
