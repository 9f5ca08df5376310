#include "hcdg/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "hcdg/checkpoint.hpp"
#include "hcdg/common.hpp"
#include "hcdg/fourier_aug.hpp"
#include "hcdg/sdf_geometry.hpp"

namespace hcdg::train {

namespace fs = std::filesystem;
using nlohmann::json;
using nn::GroupId;
using nn::NormMode;
using nn::Tensor;

// ---- weak augmentation -----------------------------------------------------

Augmented weak_augment(const Image& image, const BinaryMask& mask, const WeakAugConfig& cfg, Rng& rng) {
  if (!cfg.enabled) return {image, mask};
  const double s = rng.uniform(cfg.scale_lo, cfg.scale_hi);
  const bool flip = rng.bernoulli(cfg.flip_p);
  const double gain = rng.uniform(cfg.brightness_lo, cfg.brightness_hi);

  const int h = image.height(), w = image.width();
  const double cy = 0.5 * (h - 1), cx = 0.5 * (w - 1);
  Augmented out{Image(h, w, image.channels()), BinaryMask(mask.height(), mask.width(), mask.channels())};
  for (int y = 0; y < h; ++y) {
    const double sy = std::clamp((y - cy) / s + cy, 0.0, h - 1.0);
    const int y0 = std::min(static_cast<int>(sy), h - 2 < 0 ? 0 : h - 2);
    const double fy = sy - y0;
    const int y1 = std::min(y0 + 1, h - 1);
    const int ny = static_cast<int>(std::lround(sy));
    for (int x = 0; x < w; ++x) {
      const int xs = flip ? w - 1 - x : x;
      const double sx = std::clamp((xs - cx) / s + cx, 0.0, w - 1.0);
      const int x0 = std::min(static_cast<int>(sx), w - 2 < 0 ? 0 : w - 2);
      const double fx = sx - x0;
      const int x1 = std::min(x0 + 1, w - 1);
      const int nx = static_cast<int>(std::lround(sx));
      for (int c = 0; c < image.channels(); ++c) {
        const double top = (1.0 - fx) * image.at(c, y0, x0) + fx * image.at(c, y0, x1);
        const double bot = (1.0 - fx) * image.at(c, y1, x0) + fx * image.at(c, y1, x1);
        out.image.at(c, y, x) = std::clamp(gain * ((1.0 - fy) * top + fy * bot), 0.0, 1.0);
      }
      for (int c = 0; c < mask.channels(); ++c) out.mask.at(c, y, x) = mask.at(c, ny, nx);
    }
  }
  return out;
}

// ---- sampling --------------------------------------------------------------

DomainSampler::DomainSampler(std::vector<int> domains, std::vector<int> sizes, uint64_t seed)
    : domains_(std::move(domains)), sizes_(std::move(sizes)), seed_(seed) {
  if (domains_.size() != sizes_.size()) throw std::invalid_argument("DomainSampler: domains/sizes mismatch");
  for (size_t d = 0; d < sizes_.size(); ++d) {
    if (sizes_[d] <= 0) {
      throw ConfigError("source domain " + std::to_string(domains_[d]) + " has no training samples");
    }
  }
  perms_.resize(domains_.size());
  cycle_.assign(domains_.size(), -1);
}

void DomainSampler::ensure(int d, long long cycle) {
  if (cycle_[d] == cycle) return;
  auto& p = perms_[d];
  p.resize(sizes_[d]);
  std::iota(p.begin(), p.end(), 0);
  Rng rng = Rng::derive(seed_, "sampler", {static_cast<uint64_t>(domains_[d]), static_cast<uint64_t>(cycle)});
  for (int i = sizes_[d] - 1; i > 0; --i) std::swap(p[i], p[rng.below(static_cast<uint64_t>(i) + 1)]);
  cycle_[d] = cycle;
}

std::vector<SampleRef> DomainSampler::batch(long long step) {
  std::vector<SampleRef> out;
  for (int d = 0; d < num_domains(); ++d) {
    ensure(d, step / sizes_[d]);
    out.push_back({domains_[d], perms_[d][step % sizes_[d]]});
  }
  return out;
}

// ---- tensors ---------------------------------------------------------------

Tensor stack_images(const std::vector<Image>& images) {
  if (images.empty()) throw std::invalid_argument("stack_images: empty batch");
  const Image& f = images.front();
  std::vector<double> v;
  v.reserve(images.size() * f.size());
  for (const auto& im : images) {
    if (!im.same_shape(f)) throw std::invalid_argument("stack_images: shape mismatch");
    v.insert(v.end(), im.data().begin(), im.data().end());
  }
  return Tensor::from({static_cast<int>(images.size()), f.channels(), f.height(), f.width()}, std::move(v));
}

std::vector<double> stack_masks(const std::vector<BinaryMask>& masks) {
  std::vector<double> v;
  for (const auto& m : masks) v.insert(v.end(), m.data().begin(), m.data().end());
  return v;
}

std::vector<double> stack_boundaries(const std::vector<BinaryMask>& masks) {
  std::vector<double> v;
  for (const auto& m : masks) {
    const auto b = sdf::mask_to_boundary(m);
    v.insert(v.end(), b.data.begin(), b.data.end());
  }
  return v;
}

// ---- evaluation ------------------------------------------------------------

EvalResult evaluate_logits(const std::vector<double>& logits, const std::vector<const synth::Sample*>& samples) {
  EvalResult r;
  r.images = static_cast<int>(samples.size());
  if (samples.empty()) return r;
  const size_t per = samples.front()->mask.data().size();
  if (logits.size() != per * samples.size()) throw std::invalid_argument("evaluate_logits: size mismatch");
  for (size_t i = 0; i < samples.size(); ++i) {
    const BinaryMask& gt = samples[i]->mask;
    BinaryMask pred(gt.height(), gt.width(), gt.channels());
    for (size_t k = 0; k < per; ++k) {
      const double p = 1.0 / (1.0 + std::exp(-logits[i * per + k]));
      pred.data()[k] = p > 0.5;
    }
    const auto d = sdf::dice(pred, gt);
    const auto a = sdf::asd(pred, gt);
    for (int c = 0; c < 2; ++c) {
      r.dice[c] += 100.0 * d[c];
      if (a[c]) {
        r.asd[c] += *a[c];
        ++r.asd_count[c];
      }
    }
  }
  for (int c = 0; c < 2; ++c) {
    r.dice[c] /= r.images;
    r.asd[c] = r.asd_count[c] ? r.asd[c] / r.asd_count[c] : std::nan("");
  }
  return r;
}

EvalResult evaluate(nn::SegModel& model, const std::vector<const synth::Sample*>& samples, bool use_student,
                    int batch_size) {
  std::vector<double> logits;
  nn::NoGradGuard guard;
  for (size_t start = 0; start < samples.size(); start += batch_size) {
    const size_t end = std::min(samples.size(), start + static_cast<size_t>(batch_size));
    std::vector<Image> imgs;
    for (size_t i = start; i < end; ++i) imgs.push_back(samples[i]->image);
    const Tensor x = stack_images(imgs);
    const Tensor out = use_student ? model.forward_student(x, NormMode::kEval).logits : model.forward_teacher(x);
    logits.insert(logits.end(), out.values().begin(), out.values().end());
  }
  return evaluate_logits(logits, samples);
}

json to_json(const EvalResult& r) {
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  return {{"images", r.images},
          {"dice_cup", r.dice[0]},
          {"dice_disc", r.dice[1]},
          {"dice_mean", r.mean_dice()},
          {"asd_cup", num(r.asd[0])},
          {"asd_disc", num(r.asd[1])},
          {"asd_images_cup", r.asd_count[0]},
          {"asd_images_disc", r.asd_count[1]}};
}

json to_json(const StepRecord& r) {
  json batch = json::array();
  for (const auto& s : r.batch) batch.push_back({s.domain, s.index});
  return {{"step", r.step},       {"epoch", r.epoch},     {"lr", r.lr},           {"gamma", r.gamma},
          {"batch", batch},       {"L_seg_w", r.seg_weak}, {"L_seg_s", r.seg_strong}, {"winner_index", r.winners},
          {"L_EC_w2s", r.ec_w2s}, {"L_EC_s2w", r.ec_s2w}, {"L_b", r.boundary},    {"L_IC_cla", r.ic},
          {"L_total", r.total}};
}

// ---- trainer ---------------------------------------------------------------

namespace {

std::vector<int> sizes_of(const synth::DomainSet& data, const std::vector<int>& domains) {
  std::vector<int> out;
  for (int d : domains) {
    if (d < 0 || d >= data.num_domains()) throw ConfigError("training domain index out of range");
    out.push_back(static_cast<int>(data.select(d, "train").size()));
  }
  return out;
}

std::vector<nn::ParamGroup> groups_of(nn::SegModel& m, const std::vector<GroupId>& ids) {
  std::vector<nn::ParamGroup> out;
  for (auto id : ids) out.push_back(m.group(id));
  return out;
}

const std::vector<GroupId> kStudent{GroupId::kEncoder, GroupId::kStudentDecoder};
const std::vector<GroupId> kBoundaryGroups{GroupId::kEncoder, GroupId::kClassmates};
const std::vector<GroupId> kAllTrainable{GroupId::kEncoder, GroupId::kStudentDecoder, GroupId::kClassmates};

}  // namespace

Trainer::Trainer(const TrainConfig& cfg, const synth::DomainSet& data, std::vector<int> train_domains,
                 std::optional<int> held_out)
    : cfg_(cfg),
      data_(data),
      train_domains_(std::move(train_domains)),
      held_out_(held_out),
      model_((cfg.validate(), cfg.model), cfg.seed),
      sampler_(train_domains_, sizes_of(data, train_domains_), cfg.seed) {
  if (train_domains_.size() < 2) throw ConfigError("training needs at least two source domains");
  for (size_t i = 0; i < train_domains_.size(); ++i) {
    for (size_t j = 0; j < i; ++j)
      if (train_domains_[i] == train_domains_[j]) throw ConfigError("duplicate source domain");
    if (held_out_ && *held_out_ == train_domains_[i]) throw ConfigError("held-out domain is also a source domain");
  }
  if (held_out_ && (*held_out_ < 0 || *held_out_ >= data.num_domains())) {
    throw ConfigError("held-out domain index out of range");
  }
  if (cfg.model.in_channels != 3 || cfg.model.num_classes != 2) {
    throw ConfigError("the benchmark needs in_channels = 3 and num_classes = 2");
  }
  if (data.size % model_.downsample_factor() != 0) throw ConfigError("image size is not divisible by the encoder stride");
  for (int d : train_domains_) train_samples_.push_back(data.select(d, "train"));
  int largest = 0;
  for (const auto& s : train_samples_) largest = std::max(largest, static_cast<int>(s.size()));
  iters_per_epoch_ = cfg.iterations_per_epoch > 0 ? cfg.iterations_per_epoch : largest;
  winner_histogram_.assign(static_cast<size_t>(cfg.loss.omega) * train_domains_.size(), 0);
}

double Trainer::lr_at(int epoch) const {
  const int decay_epoch = static_cast<int>(std::floor(cfg_.lr_decay_at * cfg_.epochs));
  return epoch >= decay_epoch ? cfg_.lr * cfg_.lr_decay : cfg_.lr;
}

double Trainer::gamma_at(int epoch) const { return losses::rampup_gamma(epoch, cfg_.loss); }

Trainer::Batch Trainer::make_batch(long long step) {
  Batch b;
  b.refs = sampler_.batch(step);
  const int n = static_cast<int>(b.refs.size());
  b.weak.resize(n);
  b.masks.resize(n);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    const int slot = static_cast<int>(std::find(train_domains_.begin(), train_domains_.end(), b.refs[i].domain) -
                                      train_domains_.begin());
    const synth::Sample& s = *train_samples_[slot][b.refs[i].index];
    Rng rng = Rng::derive(cfg_.seed, "weak", {static_cast<uint64_t>(step), static_cast<uint64_t>(i)});
    auto a = weak_augment(s.image, s.mask, cfg_.weak, rng);
    b.weak[i] = std::move(a.image);
    b.masks[i] = std::move(a.mask);
  }
  b.weak_tensor = stack_images(b.weak);
  b.target = stack_masks(b.masks);
  if (cfg_.use_classmates && cfg_.use_ic_dual_task) b.boundary = stack_boundaries(b.masks);
  return b;
}

std::vector<Tensor> Trainer::make_candidates(const Batch& b, long long step) {
  const int n = static_cast<int>(b.weak.size());
  // Counterparts: the batch itself, plus omega - 1 extra draws per source domain.
  std::vector<Image> sources(b.weak.begin(), b.weak.end());
  for (int e = 1; e < cfg_.loss.omega; ++e) {
    for (int d = 0; d < static_cast<int>(train_domains_.size()); ++d) {
      const auto ids = {static_cast<uint64_t>(step), static_cast<uint64_t>(d), static_cast<uint64_t>(e)};
      Rng pick = Rng::derive(cfg_.seed, "counterpart", ids);
      const synth::Sample& s = *train_samples_[d][pick.below(train_samples_[d].size())];
      Rng wr = Rng::derive(cfg_.seed, "counterpart/weak", ids);
      sources.push_back(weak_augment(s.image, s.mask, cfg_.weak, wr).image);
    }
  }
  const int r_count = static_cast<int>(sources.size());
  std::vector<std::vector<Image>> strong(r_count, std::vector<Image>(n));
#pragma omp parallel for collapse(2) schedule(static)
  for (int r = 0; r < r_count; ++r) {
    for (int i = 0; i < n; ++i) {
      Rng rng = Rng::derive(cfg_.seed, "sigmask",
                            {static_cast<uint64_t>(step), static_cast<uint64_t>(i), static_cast<uint64_t>(r)});
      strong[r][i] = fourier::augment_strong(b.weak[i], sources[r], cfg_.aug, rng);
    }
  }
  std::vector<Tensor> out;
  for (const auto& batch : strong) out.push_back(stack_images(batch));
  return out;
}

void Trainer::optimize(Tensor loss, const std::vector<GroupId>& groups, double lr) {
  model_.zero_grad();
  loss.backward();
  adam_.step(groups_of(model_, groups), lr);
  model_.zero_grad();
}

void Trainer::check_finite(const StepRecord& r, const char* stage, double value) {
  if (std::isfinite(value)) return;
  throw NumericalError("non-finite " + std::string(stage) + " loss at step " + std::to_string(r.step) + " (epoch " +
                       std::to_string(r.epoch) + "): " + to_json(r).dump());
}

std::vector<Tensor> Trainer::classmate_outputs(const Tensor& z, long long step, int stage) {
  Rng rng = Rng::derive(cfg_.seed, "perturb", {static_cast<uint64_t>(step), static_cast<uint64_t>(stage)});
  return model_.forward_classmates(z, rng, cfg_.use_feature_perturbation, cfg_.use_ic_dual_task, NormMode::kTrain);
}

Tensor Trainer::classmate_loss(const std::vector<Tensor>& preds, const Batch& b) {
  if (cfg_.use_ic_dual_task) return losses::boundary_mse(preds, b.boundary);
  Tensor acc;
  for (const auto& p : preds) {
    Tensor t = losses::bce_seg(p, b.target);
    acc = acc.defined() ? nn::add(acc, t) : t;
  }
  return acc;
}

Tensor Trainer::classmate_consistency(const Tensor& student_logits, const std::vector<Tensor>& preds) {
  if (cfg_.use_ic_dual_task) return losses::ic_consistency(student_logits, preds, cfg_.loss.delta);
  Tensor acc;
  for (const auto& p : preds) {
    Tensor t = nn::kl_softmax_channels(student_logits, p);
    acc = acc.defined() ? nn::add(acc, t) : t;
  }
  return acc;
}

void Trainer::step_sequential(const Batch& b, const std::vector<Tensor>& candidates, StepRecord& rec, double lr,
                              double gamma) {
  const bool domainup = !candidates.empty();
  Tensor strong = b.weak_tensor;
  {
    Tensor loss;
    if (domainup) {
      auto res = losses::domainup_seg_loss(model_, b.weak_tensor, candidates, b.target);
      if (hooks.on_domainup) hooks.on_domainup(model_, DomainUpAudit{&candidates, &b.target, &res});
      rec.seg_weak = res.weak_loss.item();
      rec.seg_strong = res.strong_loss.item();
      rec.winners = res.winners;
      for (int w : res.winners) ++winner_histogram_[w];
      strong = res.strong_images;
      loss = res.loss;
    } else {
      loss = losses::bce_seg(model_.forward_student(b.weak_tensor).logits, b.target);
      rec.seg_weak = loss.item();
    }
    check_finite(rec, "segmentation", loss.item());
    rec.total += loss.item();
    optimize(loss, kStudent, lr);
    if (hooks.on_stage) hooks.on_stage(model_, Stage::kSeg);
  }
  if (cfg_.use_ec && gamma > 0.0) {
    auto ec = losses::ec_loss(model_, b.weak_tensor, strong, cfg_.loss.temperature);
    rec.ec_w2s = ec.w2s.item();
    rec.ec_s2w = ec.s2w.item();
    check_finite(rec, "EC", rec.ec_w2s + rec.ec_s2w);
    rec.total += gamma * (rec.ec_w2s + rec.ec_s2w);
    optimize(nn::scale(nn::add(ec.w2s, ec.s2w), gamma), kStudent, lr);
    if (hooks.on_stage) hooks.on_stage(model_, Stage::kEc);
  }
  if (cfg_.use_classmates && cfg_.boundary_weight > 0.0) {
    const Tensor z = model_.encode(b.weak_tensor, NormMode::kTrain);
    Tensor lb = classmate_loss(classmate_outputs(z, rec.step, 0), b);
    rec.boundary = lb.item();
    check_finite(rec, "boundary", rec.boundary);
    rec.total += cfg_.boundary_weight * rec.boundary;
    optimize(nn::scale(lb, cfg_.boundary_weight), kBoundaryGroups, lr);
    if (hooks.on_stage) hooks.on_stage(model_, Stage::kBoundary);
  }
  if (cfg_.use_classmates && gamma > 0.0) {
    const auto out = model_.forward_student(b.weak_tensor);
    Tensor ic = classmate_consistency(out.logits, classmate_outputs(out.features, rec.step, 1));
    rec.ic = ic.item();
    check_finite(rec, "IC", rec.ic);
    rec.total += gamma * rec.ic;
    optimize(nn::scale(ic, gamma), kAllTrainable, lr);
    if (hooks.on_stage) hooks.on_stage(model_, Stage::kIc);
  }
}

void Trainer::step_accumulated(const Batch& b, const std::vector<Tensor>& candidates, StepRecord& rec, double lr,
                               double gamma) {
  losses::LossParts parts;
  Tensor weak_logits, weak_features, strong_logits;
  Tensor strong = b.weak_tensor;
  if (!candidates.empty()) {
    auto res = losses::domainup_seg_loss(model_, b.weak_tensor, candidates, b.target);
    if (hooks.on_domainup) hooks.on_domainup(model_, DomainUpAudit{&candidates, &b.target, &res});
    rec.seg_weak = res.weak_loss.item();
    rec.seg_strong = res.strong_loss.item();
    rec.winners = res.winners;
    for (int w : res.winners) ++winner_histogram_[w];
    parts.seg = res.loss;
    weak_logits = res.weak_logits;
    weak_features = res.weak_features;
    strong_logits = res.strong_logits;
    strong = res.strong_images;
  } else {
    const auto out = model_.forward_student(b.weak_tensor);
    weak_logits = out.logits;
    weak_features = out.features;
    strong_logits = out.logits;
    parts.seg = losses::bce_seg(out.logits, b.target);
    rec.seg_weak = parts.seg.item();
  }
  if (cfg_.use_ec && gamma > 0.0) {
    auto ec = losses::ec_loss(weak_logits, strong_logits, model_.forward_teacher(b.weak_tensor),
                              model_.forward_teacher(strong), cfg_.loss.temperature);
    parts.ec_w2s = ec.w2s;
    parts.ec_s2w = ec.s2w;
    rec.ec_w2s = ec.w2s.item();
    rec.ec_s2w = ec.s2w.item();
  }
  if (cfg_.use_classmates) {
    const auto preds = classmate_outputs(weak_features, rec.step, 0);
    if (cfg_.boundary_weight > 0.0) {
      Tensor lb = classmate_loss(preds, b);
      rec.boundary = lb.item();
      parts.boundary = nn::scale(lb, cfg_.boundary_weight);
    }
    if (gamma > 0.0) {
      parts.ic = classmate_consistency(weak_logits, preds);
      rec.ic = parts.ic.item();
    }
  }
  Tensor total = losses::total_loss(parts, gamma);
  rec.total = total.item();
  check_finite(rec, "total", rec.total);
  optimize(total, cfg_.use_classmates ? kAllTrainable : kStudent, lr);
  if (hooks.on_stage) hooks.on_stage(model_, Stage::kSeg);
}

StepRecord Trainer::step(long long step, int epoch) {
  StepRecord rec;
  rec.step = step;
  rec.epoch = epoch;
  rec.lr = pretraining_ ? cfg_.lr : lr_at(epoch);
  rec.gamma = pretraining_ ? 0.0 : gamma_at(epoch);
  const Batch b = make_batch(step);
  rec.batch = b.refs;

  if (pretraining_) {
    Tensor loss = losses::bce_seg(model_.forward_student(b.weak_tensor).logits, b.target);
    rec.seg_weak = loss.item();
    rec.total = rec.seg_weak;
    check_finite(rec, "segmentation", rec.seg_weak);
    optimize(loss, kStudent, rec.lr);
    return rec;
  }

  const std::vector<Tensor> candidates = cfg_.use_domainup ? make_candidates(b, step) : std::vector<Tensor>{};
  if (cfg_.accumulate_losses) {
    step_accumulated(b, candidates, rec, rec.lr, rec.gamma);
  } else {
    step_sequential(b, candidates, rec, rec.lr, rec.gamma);
  }
  if (cfg_.use_ec) {
    if (hooks.on_stage) hooks.on_stage(model_, Stage::kBeforeEma);
    auto teacher = model_.group(GroupId::kTeacher);
    nn::ema_update(teacher, model_.student(), cfg_.ema_momentum);
    if (hooks.on_stage) hooks.on_stage(model_, Stage::kAfterEma);
  }
  return rec;
}

EpochMetrics Trainer::evaluate_epoch(int epoch) {
  EpochMetrics m;
  m.epoch = epoch;
  m.lr = lr_at(epoch);
  m.gamma = gamma_at(epoch);
  if (held_out_) {
    m.held_out = evaluate(model_, data_.select(*held_out_, ""), true, cfg_.eval_batch);
    m.has_held_out = true;
  }
  std::vector<const synth::Sample*> in_domain;
  for (int d : train_domains_) {
    auto t = data_.select(d, "test");
    in_domain.insert(in_domain.end(), t.begin(), t.end());
  }
  if (!in_domain.empty()) m.in_domain = evaluate(model_, in_domain, true, cfg_.eval_batch);
  return m;
}

namespace {

std::string fmt(double v) {
  if (!std::isfinite(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

const char* kCsvHeader =
    "epoch,lr,gamma,loss_seg,loss_ec,loss_b,loss_ic,heldout_dice_cup,heldout_dice_disc,heldout_dice_mean,"
    "heldout_asd_cup,heldout_asd_disc,indomain_dice_cup,indomain_dice_disc,indomain_dice_mean";

std::string csv_row(const EpochMetrics& m) {
  std::ostringstream os;
  os << m.epoch << ',' << fmt(m.lr) << ',' << fmt(m.gamma) << ',' << fmt(m.seg) << ',' << fmt(m.ec) << ','
     << fmt(m.boundary) << ',' << fmt(m.ic) << ',';
  if (m.has_held_out) {
    os << fmt(m.held_out.dice[0]) << ',' << fmt(m.held_out.dice[1]) << ',' << fmt(m.held_out.mean_dice()) << ','
       << fmt(m.held_out.asd[0]) << ',' << fmt(m.held_out.asd[1]) << ',';
  } else {
    os << ",,,,,";
  }
  os << fmt(m.in_domain.dice[0]) << ',' << fmt(m.in_domain.dice[1]) << ',' << fmt(m.in_domain.mean_dice());
  return os.str();
}

}  // namespace

RunRecord Trainer::run(const std::optional<fs::path>& out_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  RunRecord rec;
  const json cfg_json = to_json(cfg_);
  rec.config_hash = config_hash(cfg_json);
  rec.dataset_hash = synth::content_hash(data_);

  std::ofstream metrics, steps;
  if (out_dir) {
    fs::create_directories(*out_dir / "checkpoints");
    json snapshot = {{"config", cfg_json},
                     {"config_hash", rec.config_hash},
                     {"train_domains", train_domains_},
                     {"held_out", held_out_ ? json(*held_out_) : json(nullptr)},
                     {"dataset", {{"name", data_.name}, {"content_hash", rec.dataset_hash}}}};
    std::ofstream(*out_dir / "config.json") << snapshot.dump(2) << "\n";
    metrics.open(*out_dir / "metrics.csv");
    steps.open(*out_dir / "losses.jsonl");
    if (!metrics || !steps) throw DataError("cannot write run record in " + out_dir->string());
    metrics << kCsvHeader << "\n";
  }

  long long global = 0;
  pretraining_ = true;
  for (int e = 0; e < cfg_.pretrain_epochs; ++e) {
    for (int it = 0; it < iters_per_epoch_; ++it) {
      StepRecord s = step(global++, e);
      if (steps) steps << json{{"phase", "pretrain"}, {"record", to_json(s)}}.dump() << "\n";
    }
  }
  pretraining_ = false;
  if (cfg_.pretrain_epochs > 0) model_.sync_teacher();

  const int last = cfg_.epochs - 1;
  for (int e = 0; e < cfg_.epochs; ++e) {
    double seg = 0, ec = 0, lb = 0, ic = 0;
    for (int it = 0; it < iters_per_epoch_; ++it) {
      StepRecord s = step(global++, e);
      seg += s.seg_weak + s.seg_strong;
      ec += s.ec_w2s + s.ec_s2w;
      lb += s.boundary;
      ic += s.ic;
      if (steps) steps << to_json(s).dump() << "\n";
    }
    EpochMetrics m = evaluate_epoch(e);
    m.seg = seg / iters_per_epoch_;
    m.ec = ec / iters_per_epoch_;
    m.boundary = lb / iters_per_epoch_;
    m.ic = ic / iters_per_epoch_;
    if (metrics) metrics << csv_row(m) << "\n" << std::flush;
    if (out_dir && (e == last || (cfg_.checkpoint_every > 0 && (e + 1) % cfg_.checkpoint_every == 0))) {
      char name[64];
      std::snprintf(name, sizeof(name), "epoch_%d.bin", e + 1);
      const fs::path p = *out_dir / "checkpoints" / name;
      nn::save_checkpoint(p, model_,
                          {{"epoch", e + 1},
                           {"config", cfg_json},
                           {"config_hash", rec.config_hash},
                           {"dataset_hash", rec.dataset_hash},
                           {"train_domains", train_domains_},
                           {"held_out", held_out_ ? json(*held_out_) : json(nullptr)}});
      rec.checkpoints.push_back(fs::relative(p, *out_dir).generic_string());
    }
    rec.epochs.push_back(m);
  }
  rec.winner_histogram = winner_histogram_;
  rec.parameter_hash = nn::parameter_hash(model_.all_groups());
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (out_dir) {
    const EpochMetrics& f = rec.epochs.back();
    std::ofstream md(*out_dir / "report.md");
    md << "# Training run\n\n";
    md << "- config hash: `" << rec.config_hash << "`\n";
    md << "- dataset hash: `" << rec.dataset_hash << "`\n";
    md << "- final parameter hash: `" << rec.parameter_hash << "`\n";
    md << "- source domains:";
    for (int d : train_domains_) md << ' ' << data_.specs[d].name;
    md << "\n- held-out domain: " << (held_out_ ? data_.specs[*held_out_].name : std::string("none")) << "\n";
    md << "- epochs: " << cfg_.epochs << " x " << iters_per_epoch_ << " iterations";
    if (cfg_.pretrain_epochs) md << " (after " << cfg_.pretrain_epochs << " supervised warm-up epochs)";
    md << "\n- wall time: " << fmt(rec.seconds) << " s\n\n";
    md << "## Final epoch\n\n| split | Dice cup | Dice disc | Dice mean | ASD cup | ASD disc |\n|---|---|---|---|---|---|\n";
    auto row = [&md](const char* name, const EvalResult& r) {
      md << "| " << name << " | " << fmt(r.dice[0]) << " | " << fmt(r.dice[1]) << " | " << fmt(r.mean_dice()) << " | "
         << fmt(r.asd[0]) << " | " << fmt(r.asd[1]) << " |\n";
    };
    if (f.has_held_out) row("held-out", f.held_out);
    row("in-domain test", f.in_domain);
    md << "\n## DomainUp winners\n\n";
    long long total = 0;
    for (auto c : rec.winner_histogram) total += c;
    if (total == 0) {
      md << "DomainUp disabled.\n";
    } else {
      md << "| candidate | count |\n|---|---|\n";
      for (size_t i = 0; i < rec.winner_histogram.size(); ++i) md << "| " << i << " | " << rec.winner_histogram[i] << " |\n";
    }
    md << "\n## Checkpoints\n\n";
    for (const auto& c : rec.checkpoints) md << "- `" << c << "`\n";
  }
  return rec;
}

// ---- ablation grid -------------------------------------------------------

namespace {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

MeanStd mean_std(const std::vector<double>& v) {
  MeanStd r;
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= v.size();
  if (v.size() > 1) {
    double s = 0.0;
    for (double x : v) s += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(s / (v.size() - 1));
  }
  return r;
}

std::string cell_text(const MeanStd& m) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f ± %.2f", m.mean, m.std);
  return buf;
}

}  // namespace

std::string render_grid_markdown(const std::vector<GridCell>& cells, const std::vector<std::string>& presets,
                                 const std::vector<std::string>& domain_names) {
  std::vector<int> domains;
  std::vector<uint64_t> seeds;
  for (const auto& c : cells) {
    if (std::find(domains.begin(), domains.end(), c.held_out) == domains.end()) domains.push_back(c.held_out);
    if (std::find(seeds.begin(), seeds.end(), c.seed) == seeds.end()) seeds.push_back(c.seed);
  }
  std::sort(domains.begin(), domains.end());

  std::ostringstream md;
  md << "| Method | EC | Classmates | IC | AM | AG |";
  for (int d : domains) {
    const std::string n = d < static_cast<int>(domain_names.size()) ? domain_names[d] : std::to_string(d);
    md << ' ' << n << " cup | " << n << " disc |";
  }
  md << " Avg. |\n|---|---|---|---|---|---|";
  for (size_t i = 0; i < domains.size(); ++i) md << "---|---|";
  md << "---|\n";

  for (const auto& p : presets) {
    TrainConfig flags;
    apply_preset(flags, p);
    auto mark = [](bool b) { return b ? "✓" : "-"; };
    const bool am = flags.use_domainup && flags.aug.mask_mode == fourier::MaskMode::kAM;
    const bool ag = flags.use_domainup && flags.aug.mask_mode == fourier::MaskMode::kAG;
    md << "| " << (p == "baseline" ? "Baseline" : p == "hcdg" ? "HCDG" : "Model " + p) << " | " << mark(flags.use_ec)
       << " | " << mark(flags.use_classmates) << " | " << mark(flags.use_classmates && flags.use_ic_dual_task) << " | "
       << mark(am) << " | " << mark(ag) << " |";
    std::vector<double> avg_per_seed(seeds.size(), 0.0);
    std::vector<int> avg_count(seeds.size(), 0);
    for (int d : domains) {
      for (int ch = 0; ch < 2; ++ch) {
        std::vector<double> vals;
        for (const auto& c : cells) {
          if (c.preset != p || c.held_out != d) continue;
          const double v = c.final_metrics.held_out.dice[ch];
          vals.push_back(v);
          const size_t si = std::find(seeds.begin(), seeds.end(), c.seed) - seeds.begin();
          avg_per_seed[si] += v;
          ++avg_count[si];
        }
        md << ' ' << (vals.empty() ? std::string("n/a") : cell_text(mean_std(vals))) << " |";
      }
    }
    std::vector<double> avgs;
    for (size_t s = 0; s < seeds.size(); ++s)
      if (avg_count[s]) avgs.push_back(avg_per_seed[s] / avg_count[s]);
    md << ' ' << (avgs.empty() ? std::string("n/a") : cell_text(mean_std(avgs))) << " |\n";
  }
  return md.str();
}

GridReport run_ablation_grid(const TrainConfig& base, const synth::DomainSet& data,
                             const std::vector<std::string>& presets, const std::vector<uint64_t>& seeds,
                             const std::optional<fs::path>& out_dir,
                             const std::function<void(const GridCell&)>& progress) {
  GridReport report;
  std::vector<std::string> names;
  for (const auto& s : data.specs) names.push_back(s.name);
  for (const auto& p : presets) {
    for (const auto& split : synth::loo_splits(data.num_domains())) {
      for (uint64_t seed : seeds) {
        TrainConfig cfg = base;
        apply_preset(cfg, p);
        cfg.seed = seed;
        GridCell cell;
        cell.preset = p;
        cell.held_out = split.held_out;
        cell.seed = seed;
        std::optional<fs::path> dir;
        if (out_dir) {
          dir = *out_dir / p / ("heldout_" + names[split.held_out]) / ("seed_" + std::to_string(seed));
          cell.run_dir = dir->string();
        }
        Trainer trainer(cfg, data, split.train_domains, split.held_out);
        cell.final_metrics = trainer.run(dir).epochs.back();
        if (progress) progress(cell);
        report.cells.push_back(cell);
      }
    }
  }
  report.markdown = render_grid_markdown(report.cells, presets, names);
  if (out_dir) {
    fs::create_directories(*out_dir);
    std::ofstream(*out_dir / "ablation.md") << "# Ablation\n\nMean ± std of held-out Dice (%) over seeds.\n\n"
                                            << report.markdown;
    std::ofstream csv(*out_dir / "ablation.csv");
    csv << "preset,held_out,seed,dice_cup,dice_disc,dice_mean,asd_cup,asd_disc,indomain_dice_mean\n";
    for (const auto& c : report.cells) {
      const auto& m = c.final_metrics;
      csv << c.preset << ',' << names[c.held_out] << ',' << c.seed << ',' << fmt(m.held_out.dice[0]) << ','
          << fmt(m.held_out.dice[1]) << ',' << fmt(m.held_out.mean_dice()) << ',' << fmt(m.held_out.asd[0]) << ','
          << fmt(m.held_out.asd[1]) << ',' << fmt(m.in_domain.mean_dice()) << "\n";
    }
  }
  return report;
}

}  // namespace hcdg::train
