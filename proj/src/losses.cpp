#include "hcdg/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "hcdg/common.hpp"

namespace hcdg::losses {

using nn::NormMode;

void LossConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("loss.temperature must be > 0");
  if (!(gamma_max >= 0.0)) throw ConfigError("loss.gamma_max must be >= 0");
  if (rampup_epochs < 0) throw ConfigError("loss.rampup_epochs must be >= 0");
  if (!(delta > 0.0)) throw ConfigError("loss.delta must be > 0");
  if (omega < 1) throw ConfigError("loss.omega must be >= 1");
}

Tensor bce_seg(const Tensor& logits, std::span<const double> target) { return nn::bce_with_logits(logits, target); }

Tensor kl_consistency(const Tensor& student_logits, const Tensor& teacher_logits, double temperature) {
  if (student_logits.shape() != teacher_logits.shape()) {
    throw std::invalid_argument("kl_consistency: shape mismatch");
  }
  const double inv_t = 1.0 / temperature;
  return nn::kl_softmax_channels(nn::scale(student_logits, inv_t), nn::scale(teacher_logits.detach(), inv_t));
}

std::vector<std::vector<double>> candidate_bce_table(nn::SegModel& model, const std::vector<Tensor>& candidates,
                                                     std::span<const double> target) {
  if (candidates.empty()) throw std::invalid_argument("domainup: empty candidate list");
  const int n = candidates.front().dim(0);
  std::vector<std::vector<double>> table(n, std::vector<double>(candidates.size()));
  nn::NoGradGuard guard;
  for (size_t r = 0; r < candidates.size(); ++r) {
    if (candidates[r].shape() != candidates.front().shape()) {
      throw std::invalid_argument("domainup: candidate batches differ in shape");
    }
    const Tensor logits = model.forward_student(candidates[r], NormMode::kProbe).logits;
    const auto per_item = nn::bce_with_logits_per_item(logits, target);
    for (int i = 0; i < n; ++i) table[i][r] = per_item[i];
  }
  return table;
}

DomainUpResult domainup_seg_loss(nn::SegModel& model, const Tensor& weak, const std::vector<Tensor>& candidates,
                                 std::span<const double> target) {
  DomainUpResult res;
  res.candidate_bce = candidate_bce_table(model, candidates, target);
  res.candidate_passes = static_cast<int>(candidates.size());

  const int n = weak.dim(0);
  const size_t item = weak.numel() / n;
  if (candidates.front().shape() != weak.shape()) throw std::invalid_argument("domainup: weak/strong shape mismatch");
  std::vector<double> strong(weak.numel());
  res.winners.resize(n);
  for (int i = 0; i < n; ++i) {
    int best = 0;
    for (size_t r = 1; r < candidates.size(); ++r) {
      if (res.candidate_bce[i][r] > res.candidate_bce[i][best]) best = static_cast<int>(r);
    }
    res.winners[i] = best;
    const auto src = candidates[best].data().subspan(i * item, item);
    std::copy(src.begin(), src.end(), strong.begin() + static_cast<std::ptrdiff_t>(i * item));
  }
  res.strong_images = Tensor::from(weak.shape(), std::move(strong));

  const auto weak_out = model.forward_student(weak);
  res.weak_logits = weak_out.logits;
  res.weak_features = weak_out.features;
  res.strong_logits = model.forward_student(res.strong_images).logits;
  res.weak_loss = bce_seg(res.weak_logits, target);
  res.strong_loss = bce_seg(res.strong_logits, target);
  res.loss = nn::add(res.strong_loss, res.weak_loss);
  return res;
}

EcTerms ec_loss(const Tensor& student_weak, const Tensor& student_strong, const Tensor& teacher_weak,
                const Tensor& teacher_strong, double temperature) {
  return {kl_consistency(student_weak, teacher_strong, temperature),
          kl_consistency(student_strong, teacher_weak, temperature)};
}

EcTerms ec_loss(nn::SegModel& model, const Tensor& weak, const Tensor& strong, double temperature) {
  const Tensor tw = model.forward_teacher(weak);
  const Tensor ts = model.forward_teacher(strong);
  const Tensor sw = model.forward_student(weak).logits;
  const Tensor ss = model.forward_student(strong).logits;
  return ec_loss(sw, ss, tw, ts, temperature);
}

Tensor boundary_mse(const std::vector<Tensor>& classmate_preds, std::span<const double> boundary_target) {
  if (classmate_preds.empty()) throw std::invalid_argument("boundary_mse: no classmate predictions");
  Tensor acc;
  for (const auto& p : classmate_preds) {
    Tensor term = nn::mse(p, boundary_target);
    acc = acc.defined() ? nn::add(acc, term) : term;
  }
  return acc;
}

Tensor ic_consistency(const Tensor& student_logits, const std::vector<Tensor>& classmate_preds, double delta) {
  if (classmate_preds.empty()) throw std::invalid_argument("ic_consistency: no classmate predictions");
  Tensor acc;
  for (const auto& p : classmate_preds) {
    if (p.shape() != student_logits.shape()) throw std::invalid_argument("ic_consistency: shape mismatch");
    Tensor term = nn::kl_softmax_channels(student_logits, nn::heaviside(p, delta));
    acc = acc.defined() ? nn::add(acc, term) : term;
  }
  return acc;
}

double rampup_gamma(int epoch, const LossConfig& cfg) {
  if (cfg.rampup_epochs == 0) return cfg.gamma_max;
  const double r = static_cast<double>(std::min(std::max(epoch, 0), cfg.rampup_epochs)) / cfg.rampup_epochs;
  return cfg.gamma_max * std::exp(-5.0 * (1.0 - r) * (1.0 - r));
}

Tensor total_loss(const LossParts& parts, double gamma) {
  Tensor acc;
  auto push = [&acc](const Tensor& t) {
    if (t.defined()) acc = acc.defined() ? nn::add(acc, t) : t;
  };
  push(parts.seg);
  if (parts.ec_w2s.defined() || parts.ec_s2w.defined()) {
    Tensor ec;
    if (parts.ec_w2s.defined()) ec = parts.ec_w2s;
    if (parts.ec_s2w.defined()) ec = ec.defined() ? nn::add(ec, parts.ec_s2w) : parts.ec_s2w;
    push(nn::scale(ec, gamma));
  }
  push(parts.boundary);
  if (parts.ic.defined()) push(nn::scale(parts.ic, gamma));
  if (!acc.defined()) throw std::invalid_argument("total_loss: no loss terms");
  return acc;
}

}  // namespace hcdg::losses
