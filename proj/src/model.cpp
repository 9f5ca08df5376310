#include "hcdg/model.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace hcdg::nn {

namespace {

ConvLayer make_layer(int in_ch, int out_ch, int stride, bool upsample, bool norm_relu, Rng& rng) {
  ConvLayer l;
  l.upsample_before = upsample;
  l.stride = stride;
  l.norm_relu = norm_relu;
  const int fan_in = in_ch * 9;
  const double stddev = std::sqrt(2.0 / fan_in);
  std::vector<double> w(static_cast<size_t>(out_ch) * fan_in);
  for (double& v : w) v = rng.normal(0.0, stddev);
  l.weight = Tensor::from({out_ch, in_ch, 3, 3}, std::move(w), true);
  if (norm_relu) {
    l.gamma = Tensor::full({out_ch}, 1.0, true);
    l.beta = Tensor::zeros({out_ch}, true);
    l.running_mean.assign(out_ch, 0.0);
    l.running_var.assign(out_ch, 1.0);
  } else {
    l.bias = Tensor::zeros({out_ch}, true);
  }
  return l;
}

void require_mirror(const ParamGroup& a, const ParamGroup& b) {
  if (a.params.size() != b.params.size() || a.buffers.size() != b.buffers.size()) {
    throw std::invalid_argument("ema_update: teacher and student groups do not mirror");
  }
  for (const auto& [name, t] : a.params) {
    auto it = b.params.find(name);
    if (it == b.params.end() || it->second.shape() != t.shape()) {
      throw std::invalid_argument("ema_update: mirror violation at parameter '" + name + "'");
    }
  }
  for (const auto& [name, buf] : a.buffers) {
    auto it = b.buffers.find(name);
    if (it == b.buffers.end() || it->second->size() != buf->size()) {
      throw std::invalid_argument("ema_update: mirror violation at buffer '" + name + "'");
    }
  }
}

}  // namespace

std::string to_string(GroupId id) {
  switch (id) {
    case GroupId::kEncoder: return "encoder";
    case GroupId::kStudentDecoder: return "student_decoder";
    case GroupId::kTeacher: return "teacher";
    case GroupId::kClassmates: return "classmates";
  }
  return "?";
}

void ParamGroup::merge(const ParamGroup& other) {
  for (const auto& [k, v] : other.params) {
    if (!params.emplace(k, v).second) throw std::invalid_argument("ParamGroup::merge: duplicate '" + k + "'");
  }
  for (const auto& [k, v] : other.buffers) {
    if (!buffers.emplace(k, v).second) throw std::invalid_argument("ParamGroup::merge: duplicate '" + k + "'");
  }
}

size_t ParamGroup::parameter_count() const {
  size_t n = 0;
  for (const auto& [k, t] : params) n += t.numel();
  return n;
}

Tensor Stack::forward(const Tensor& x, NormMode mode) {
  Tensor h = x;
  for (auto& l : layers) {
    if (l.upsample_before) h = upsample_nearest2x(h);
    h = conv2d(h, l.weight, l.bias, l.stride, 1);
    if (l.norm_relu) {
      BatchNormState st{l.running_mean, l.running_var};
      st.update_running = mode == NormMode::kTrain;
      h = relu(batch_norm(h, l.gamma, l.beta, st, mode != NormMode::kEval));
    }
  }
  return h;
}

void Stack::collect(const std::string& prefix, ParamGroup& group) {
  for (size_t i = 0; i < layers.size(); ++i) {
    auto& l = layers[i];
    const std::string base = prefix + "." + std::to_string(i) + ".";
    group.params.emplace(base + "weight", l.weight);
    if (l.bias.defined()) group.params.emplace(base + "bias", l.bias);
    if (l.norm_relu) {
      group.params.emplace(base + "gamma", l.gamma);
      group.params.emplace(base + "beta", l.beta);
      group.buffers.emplace(base + "running_mean", &l.running_mean);
      group.buffers.emplace(base + "running_var", &l.running_var);
    }
  }
}

Stack Stack::copy_detached() const {
  Stack s;
  for (const auto& l : layers) {
    ConvLayer c = l;
    c.weight = l.weight.detach();
    if (l.bias.defined()) c.bias = l.bias.detach();
    if (l.gamma.defined()) c.gamma = l.gamma.detach();
    if (l.beta.defined()) c.beta = l.beta.detach();
    s.layers.push_back(std::move(c));
  }
  return s;
}

void ModelConfig::validate() const {
  if (in_channels <= 0 || num_classes <= 0) throw ConfigError("model: channel counts must be positive");
  if (encoder_widths.size() < 2) throw ConfigError("model: encoder needs at least two blocks");
  if (decoder_widths.size() + 1 != encoder_widths.size() - 1) {
    throw ConfigError("model: decoder must have one upsampling block per encoder downsampling");
  }
  if (classmate_widths.size() != encoder_widths.size() - 1) {
    throw ConfigError("model: classmates need one hidden layer per upsampling step");
  }
  if (num_classmates < 0) throw ConfigError("model: num_classmates must be >= 0");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("model: dropout_p must lie in [0, 1)");
  if (!(noise_amplitude >= 0.0 && noise_amplitude < 1.0)) throw ConfigError("model: noise_amplitude must lie in [0, 1)");
  for (int w : encoder_widths) if (w <= 0) throw ConfigError("model: widths must be positive");
  for (int w : decoder_widths) if (w <= 0) throw ConfigError("model: widths must be positive");
  for (int w : classmate_widths) if (w <= 0) throw ConfigError("model: widths must be positive");
}

Tensor perturb_features(const Tensor& z, PerturbKind kind, Rng& rng, double p, double amplitude) {
  std::vector<double> factor(z.numel());
  if (kind == PerturbKind::kDropout) {
    if (p == 0.0) return z;
    const double keep_scale = 1.0 / (1.0 - p);
    for (double& f : factor) f = rng.bernoulli(p) ? 0.0 : keep_scale;
  } else {
    if (amplitude == 0.0) return z;
    for (double& f : factor) f = 1.0 + rng.uniform(-amplitude, amplitude);
  }
  return mul_const(z, factor);
}

SegModel::SegModel(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng enc_rng = Rng::derive(seed, "init/encoder");
  int ch = cfg_.in_channels;
  for (size_t i = 0; i < cfg_.encoder_widths.size(); ++i) {
    encoder_.layers.push_back(make_layer(ch, cfg_.encoder_widths[i], i == 0 ? 1 : 2, false, true, enc_rng));
    ch = cfg_.encoder_widths[i];
  }
  const int feat = ch;

  Rng dec_rng = Rng::derive(seed, "init/decoder");
  for (int w : cfg_.decoder_widths) {
    decoder_.layers.push_back(make_layer(ch, w, 1, true, true, dec_rng));
    ch = w;
  }
  decoder_.layers.push_back(make_layer(ch, cfg_.num_classes, 1, true, false, dec_rng));

  for (int q = 0; q < cfg_.num_classmates; ++q) {
    Rng cls_rng = Rng::derive(seed, "init/classmate", {static_cast<uint64_t>(q)});
    Stack s;
    ch = feat;
    for (size_t i = 0; i < cfg_.classmate_widths.size(); ++i) {
      s.layers.push_back(make_layer(ch, cfg_.classmate_widths[i], 1, i > 0, true, cls_rng));
      ch = cfg_.classmate_widths[i];
    }
    s.layers.push_back(make_layer(ch, cfg_.num_classes, 1, true, false, cls_rng));
    classmates_.push_back(std::move(s));
  }
  sync_teacher();
}

int SegModel::downsample_factor() const { return 1 << (cfg_.encoder_widths.size() - 1); }

Tensor SegModel::encode(const Tensor& x, NormMode mode) {
  if (x.rank() != 4 || x.dim(1) != cfg_.in_channels || x.dim(2) % downsample_factor() != 0 ||
      x.dim(3) % downsample_factor() != 0) {
    throw std::invalid_argument("SegModel: input shape " + shape_str(x.shape()) + " does not match the model");
  }
  return encoder_.forward(x, mode);
}

Tensor SegModel::decode(const Tensor& z, NormMode mode) { return decoder_.forward(z, mode); }

SegModel::StudentOutput SegModel::forward_student(const Tensor& x, NormMode mode) {
  Tensor z = encode(x, mode);
  Tensor logits = decode(z, mode);
  return {logits, z};
}

Tensor SegModel::forward_teacher(const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != cfg_.in_channels) {
    throw std::invalid_argument("SegModel: input shape " + shape_str(x.shape()) + " does not match the model");
  }
  NoGradGuard guard;
  return teacher_decoder_.forward(teacher_encoder_.forward(x, NormMode::kEval), NormMode::kEval);
}

std::vector<Tensor> SegModel::forward_classmates(const Tensor& z, Rng& rng, bool perturb, bool tanh_output,
                                                 NormMode mode) {
  std::vector<Tensor> out;
  out.reserve(classmates_.size());
  for (size_t j = 0; j < classmates_.size(); ++j) {
    Tensor input = z;
    if (perturb) {
      const auto kind = (j % 2 == 0) ? PerturbKind::kDropout : PerturbKind::kUniformNoise;
      input = perturb_features(z, kind, rng, cfg_.dropout_p, cfg_.noise_amplitude);
    }
    Tensor head = classmates_[j].forward(input, mode);
    out.push_back(tanh_output ? tanh(head) : head);
  }
  return out;
}

ParamGroup SegModel::group(GroupId id) {
  ParamGroup g;
  g.id = id;
  switch (id) {
    case GroupId::kEncoder: encoder_.collect("encoder", g); break;
    case GroupId::kStudentDecoder: decoder_.collect("decoder", g); break;
    case GroupId::kTeacher:
      teacher_encoder_.collect("encoder", g);
      teacher_decoder_.collect("decoder", g);
      break;
    case GroupId::kClassmates:
      for (size_t j = 0; j < classmates_.size(); ++j) classmates_[j].collect("classmate." + std::to_string(j), g);
      break;
  }
  return g;
}

ParamGroup SegModel::student() {
  ParamGroup g = group(GroupId::kEncoder);
  g.merge(group(GroupId::kStudentDecoder));
  return g;
}

std::vector<ParamGroup> SegModel::all_groups() {
  return {group(GroupId::kEncoder), group(GroupId::kStudentDecoder), group(GroupId::kClassmates),
          group(GroupId::kTeacher)};
}

void SegModel::zero_grad() {
  for (auto& g : all_groups()) {
    for (auto& [name, t] : g.params) t.clear_grad();
  }
}

void SegModel::sync_teacher() {
  teacher_encoder_ = encoder_.copy_detached();
  teacher_decoder_ = decoder_.copy_detached();
}

void ema_update(ParamGroup& teacher, const ParamGroup& student, double m) {
  if (!(m >= 0.0 && m <= 1.0)) throw std::invalid_argument("ema_update: m must lie in [0, 1]");
  require_mirror(teacher, student);
  const double keep = m;
  const double take = 1.0 - m;
  for (auto& [name, t] : teacher.params) {
    if (t.requires_grad()) throw std::logic_error("ema_update: teacher parameter '" + name + "' requires grad");
    auto dst = t.data();
    auto src = student.params.at(name).data();
    for (size_t i = 0; i < dst.size(); ++i) dst[i] = keep * dst[i] + take * src[i];
  }
  for (auto& [name, buf] : teacher.buffers) {
    const auto& src = *student.buffers.at(name);
    for (size_t i = 0; i < buf->size(); ++i) (*buf)[i] = keep * (*buf)[i] + take * src[i];
  }
}

void Adam::step(const std::vector<ParamGroup>& groups, double lr) {
  for (const auto& g : groups) {
    for (const auto& [name, p] : g.params) {
      if (!p.requires_grad() || !p.has_grad()) continue;
      auto& st = state_[p.impl()];
      auto grad = p.grad();
      auto data = const_cast<Tensor&>(p).data();
      if (st.m.empty()) {
        st.m.assign(data.size(), 0.0);
        st.v.assign(data.size(), 0.0);
      }
      ++st.t;
      const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(st.t));
      const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(st.t));
      for (size_t i = 0; i < data.size(); ++i) {
        const double gi = grad[i];
        st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * gi;
        st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * gi * gi;
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        data[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }
}

std::string parameter_hash(const std::vector<ParamGroup>& groups) {
  std::string bytes;
  for (const auto& g : groups) {
    bytes += to_string(g.id);
    for (const auto& [name, t] : g.params) {
      bytes += name;
      bytes.append(reinterpret_cast<const char*>(t.data().data()), t.numel() * sizeof(double));
    }
    for (const auto& [name, buf] : g.buffers) {
      bytes += name;
      bytes.append(reinterpret_cast<const char*>(buf->data()), buf->size() * sizeof(double));
    }
  }
  return sha256_hex(bytes);
}

}  // namespace hcdg::nn
