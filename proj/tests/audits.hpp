#pragma once

// Training-loop audits shared by the unit tests and the acceptance runner.
// Each recomputes the quantity under test with code independent of the
// trainer's own bookkeeping.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "hcdg/config.hpp"
#include "hcdg/trainer.hpp"

namespace hcdg::testing {

struct AuditResult {
  int checked = 0;
  int failures = 0;
  double worst = 0.0;  // audit-specific error measure
  std::string note;

  bool ok() const { return checked > 0 && failures == 0; }
};

// Per-item mean of max(x,0) - x y + log(1 + exp(-|x|)) over one item's logits.
inline std::vector<double> oracle_bce_per_item(const nn::Tensor& logits, const std::vector<double>& target) {
  const int n = logits.dim(0);
  const size_t per = logits.numel() / n;
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (size_t k = 0; k < per; ++k) {
      const double x = logits.values()[i * per + k];
      const double y = target[i * per + k];
      s += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
    }
    out[i] = s / static_cast<double>(per);
  }
  return out;
}

// Over `steps` iterations, every logged winner must carry the largest BCE
// among all candidates, recomputed with fresh probe-mode forward passes.
inline AuditResult domainup_audit(train::Trainer& trainer, int steps) {
  AuditResult r;
  trainer.hooks.on_domainup = [&](nn::SegModel& model, const train::DomainUpAudit& a) {
    nn::NoGradGuard guard;
    const auto& cands = *a.candidates;
    std::vector<std::vector<double>> bce;  // [candidate][item]
    for (const auto& c : cands) {
      bce.push_back(oracle_bce_per_item(model.forward_student(c, nn::NormMode::kProbe).logits, *a.target));
    }
    const auto& winners = a.result->winners;
    bool ok = winners.size() == static_cast<size_t>(cands.front().dim(0));
    for (size_t i = 0; ok && i < winners.size(); ++i) {
      const double won = bce.at(winners[i])[i];
      for (size_t c = 0; c < cands.size(); ++c) {
        const double gap = bce[c][i] - won;
        r.worst = std::max(r.worst, gap);
        if (gap > 1e-12 * std::max(1.0, std::abs(won))) ok = false;
      }
    }
    ++r.checked;
    if (!ok) ++r.failures;
  };
  const int ipe = trainer.iterations_per_epoch();
  for (int s = 0; s < steps; ++s) trainer.step(s, s / ipe);
  trainer.hooks.on_domainup = nullptr;
  return r;
}

inline std::map<std::string, std::vector<double>> snapshot(const nn::ParamGroup& g) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& [name, t] : g.params) out[name].assign(t.values().begin(), t.values().end());
  for (const auto& [name, b] : g.buffers) out["buffer:" + name] = *b;
  return out;
}

// After every iteration the teacher must equal m * previous + (1 - m) * student
// entrywise, to a relative tolerance of 1e-12.
inline AuditResult ema_audit(train::Trainer& trainer, int steps) {
  AuditResult r;
  const double m = trainer.config().ema_momentum;
  std::map<std::string, std::vector<double>> before_teacher, before_student;
  trainer.hooks.on_stage = [&](nn::SegModel& model, train::Stage stage) {
    if (stage == train::Stage::kBeforeEma) {
      before_teacher = snapshot(model.group(nn::GroupId::kTeacher));
      before_student = snapshot(model.student());
      return;
    }
    if (stage != train::Stage::kAfterEma) return;
    const auto after = snapshot(model.group(nn::GroupId::kTeacher));
    bool ok = after.size() == before_teacher.size();
    for (const auto& [name, vals] : after) {
      const auto& prev = before_teacher.at(name);
      const auto& stu = before_student.at(name);
      for (size_t i = 0; i < vals.size(); ++i) {
        const double expect = m * prev[i] + (1.0 - m) * stu[i];
        const double scale = std::max({std::abs(expect), std::abs(prev[i]), std::abs(stu[i]), 1e-300});
        const double rel = std::abs(vals[i] - expect) / scale;
        r.worst = std::max(r.worst, rel);
        if (rel > 1e-12) ok = false;
      }
    }
    ++r.checked;
    if (!ok) ++r.failures;
  };
  const int ipe = trainer.iterations_per_epoch();
  for (int s = 0; s < steps; ++s) trainer.step(s, s / ipe);
  trainer.hooks.on_stage = nullptr;
  return r;
}

// With m = 1 the teacher never moves.
inline AuditResult frozen_teacher_audit(train::Trainer& trainer, int steps) {
  AuditResult r;
  const auto initial = nn::parameter_hash({trainer.model().group(nn::GroupId::kTeacher)});
  const int ipe = trainer.iterations_per_epoch();
  for (int s = 0; s < steps; ++s) {
    trainer.step(s, s / ipe);
    ++r.checked;
    if (nn::parameter_hash({trainer.model().group(nn::GroupId::kTeacher)}) != initial) ++r.failures;
  }
  return r;
}

// Every mode flag off: the trainer must follow the same parameter trajectory
// as a plain supervised loop built directly from the public pieces.
inline AuditResult inert_equivalence(train::TrainConfig cfg, const synth::DomainSet& data,
                                     const std::vector<int>& train_domains, int steps) {
  cfg.use_domainup = false;
  cfg.use_ec = false;
  cfg.use_classmates = false;
  cfg.use_ic_dual_task = false;
  cfg.use_feature_perturbation = false;
  train::Trainer trainer(cfg, data, train_domains, std::nullopt);

  nn::SegModel model(cfg.model, cfg.seed);
  nn::Adam adam;
  std::vector<int> sizes;
  std::vector<std::vector<const synth::Sample*>> pools;
  for (int d : train_domains) {
    pools.push_back(data.select(d, "train"));
    sizes.push_back(static_cast<int>(pools.back().size()));
  }
  train::DomainSampler sampler(train_domains, sizes, cfg.seed);

  AuditResult r;
  const int ipe = trainer.iterations_per_epoch();
  for (int s = 0; s < steps; ++s) {
    trainer.step(s, s / ipe);

    const auto refs = sampler.batch(s);
    std::vector<Image> imgs;
    std::vector<BinaryMask> masks;
    for (size_t i = 0; i < refs.size(); ++i) {
      const size_t slot = std::find(train_domains.begin(), train_domains.end(), refs[i].domain) - train_domains.begin();
      const synth::Sample& sample = *pools[slot][refs[i].index];
      Rng rng = Rng::derive(cfg.seed, "weak", {static_cast<uint64_t>(s), static_cast<uint64_t>(i)});
      auto a = train::weak_augment(sample.image, sample.mask, cfg.weak, rng);
      imgs.push_back(std::move(a.image));
      masks.push_back(std::move(a.mask));
    }
    const auto target = train::stack_masks(masks);
    model.zero_grad();
    auto loss = nn::bce_with_logits(model.forward_student(train::stack_images(imgs)).logits, target);
    loss.backward();
    adam.step({model.student()}, trainer.lr_at(s / ipe));
    model.zero_grad();

    ++r.checked;
    const auto a = nn::parameter_hash({trainer.model().student()});
    const auto b = nn::parameter_hash({model.student()});
    if (a != b) {
      ++r.failures;
      if (r.note.empty()) r.note = "diverged at step " + std::to_string(s);
    }
  }
  return r;
}

}  // namespace hcdg::testing
