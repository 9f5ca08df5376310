#pragma once

// Training objectives: worst-case supervised loss over Fourier-augmented
// candidates, dual-view and dual-task KL consistency, boundary regression and
// the consistency ramp-up.

#include <span>
#include <vector>

#include "hcdg/model.hpp"
#include "hcdg/tensor.hpp"

namespace hcdg::losses {

using nn::Tensor;

struct LossConfig {
  double temperature = 10.0;
  double gamma_max = 200.0;
  int rampup_epochs = 5;
  double delta = 20.0;
  int omega = 1;

  void validate() const;
};

// Mean binary cross-entropy of sigmoid(logits) against {0,1} targets.
Tensor bce_seg(const Tensor& logits, std::span<const double> target);

// KL(softmax(student / T) || softmax(teacher / T)) over channels, averaged over
// batch and pixels. The teacher side never receives gradients.
Tensor kl_consistency(const Tensor& student_logits, const Tensor& teacher_logits, double temperature);

struct DomainUpResult {
  Tensor loss;         // weak + strong, differentiable
  Tensor weak_loss;    // BCE of the weak view
  Tensor strong_loss;  // BCE of the assembled winners batch
  Tensor weak_logits;
  Tensor weak_features;
  Tensor strong_logits;
  Tensor strong_images;                            // winners, one per item
  std::vector<int> winners;                        // candidate index per item
  std::vector<std::vector<double>> candidate_bce;  // [item][candidate]
  int candidate_passes = 0;
};

// candidates[r] is an N x C x H x W batch holding, for every item, its strong
// view built from candidate r. Each candidate batch is probed without
// gradients; per item the candidate with the largest BCE wins (lowest index
// on ties), and the winners are re-run together with the weak batch to form
// the differentiable loss.
DomainUpResult domainup_seg_loss(nn::SegModel& model, const Tensor& weak, const std::vector<Tensor>& candidates,
                                 std::span<const double> target);

// Per-item BCE of every candidate batch under the probe normalization mode,
// evaluated independently of the selection above. Used for audits.
std::vector<std::vector<double>> candidate_bce_table(nn::SegModel& model, const std::vector<Tensor>& candidates,
                                                     std::span<const double> target);

struct EcTerms {
  Tensor w2s;
  Tensor s2w;
};

// w2s = KL(stu(weak) || tea(strong)), s2w = KL(stu(strong) || tea(weak)).
EcTerms ec_loss(const Tensor& student_weak, const Tensor& student_strong, const Tensor& teacher_weak,
                const Tensor& teacher_strong, double temperature);
EcTerms ec_loss(nn::SegModel& model, const Tensor& weak, const Tensor& strong, double temperature);

// Sum over classmates of the mean squared error to the boundary target.
Tensor boundary_mse(const std::vector<Tensor>& classmate_preds, std::span<const double> boundary_target);

// Sum over classmates of KL(softmax(student) || softmax(H(pred_j; delta))).
Tensor ic_consistency(const Tensor& student_logits, const std::vector<Tensor>& classmate_preds, double delta);

double rampup_gamma(int epoch, const LossConfig& cfg);

struct LossParts {
  Tensor seg;
  Tensor ec_w2s;
  Tensor ec_s2w;
  Tensor boundary;
  Tensor ic;
};

// (seg + gamma (w2s + s2w)) + (boundary + gamma ic); undefined parts count as 0.
Tensor total_loss(const LossParts& parts, double gamma);

}  // namespace hcdg::losses
