#pragma once

// Shared-encoder segmentation network: student encoder + decoder, Q classmate
// decoders on the encoder feature map, and an EMA teacher mirroring the
// student encoder and decoder.

#include <map>
#include <string>
#include <vector>

#include "hcdg/common.hpp"
#include "hcdg/tensor.hpp"

namespace hcdg::nn {

enum class GroupId { kEncoder, kStudentDecoder, kTeacher, kClassmates };

std::string to_string(GroupId id);

// Named view over parameters (shared handles) and normalization buffers.
struct ParamGroup {
  GroupId id = GroupId::kEncoder;
  std::map<std::string, Tensor> params;
  std::map<std::string, std::vector<double>*> buffers;

  void merge(const ParamGroup& other);
  size_t parameter_count() const;
};

// kTrain: batch statistics, running estimates updated.
// kProbe: batch statistics, running estimates left untouched.
// kEval: running estimates.
enum class NormMode { kTrain, kProbe, kEval };

struct ConvLayer {
  bool upsample_before = false;
  int stride = 1;
  bool norm_relu = true;  // conv -> batch norm -> ReLU; false for output heads
  Tensor weight;
  Tensor bias;
  Tensor gamma;
  Tensor beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
};

class Stack {
 public:
  std::vector<ConvLayer> layers;

  Tensor forward(const Tensor& x, NormMode mode);
  void collect(const std::string& prefix, ParamGroup& group);
  Stack copy_detached() const;
};

struct ModelConfig {
  int in_channels = 3;
  int num_classes = 2;
  std::vector<int> encoder_widths{8, 16, 32, 32};  // first block stride 1, then stride 2
  std::vector<int> decoder_widths{16, 8};          // hidden widths; last block emits logits
  std::vector<int> classmate_widths{16, 8, 8};     // hidden widths of the four-layer classmates
  int num_classmates = 2;
  double dropout_p = 0.5;
  double noise_amplitude = 0.3;

  void validate() const;
};

enum class PerturbKind { kDropout, kUniformNoise };

// Dropout zeroes each (channel, position) with probability p and rescales
// survivors by 1/(1-p); uniform noise multiplies by (1 + u), u ~ U(-a, a).
Tensor perturb_features(const Tensor& z, PerturbKind kind, Rng& rng, double p, double amplitude);

class SegModel {
 public:
  SegModel(const ModelConfig& cfg, uint64_t seed);

  struct StudentOutput {
    Tensor logits;
    Tensor features;
  };

  const ModelConfig& config() const { return cfg_; }
  int downsample_factor() const;

  Tensor encode(const Tensor& x, NormMode mode);
  Tensor decode(const Tensor& z, NormMode mode);
  StudentOutput forward_student(const Tensor& x, NormMode mode = NormMode::kTrain);
  // Gradient-free; normalization uses the teacher's running statistics.
  Tensor forward_teacher(const Tensor& x);
  // Q outputs, each from an independently perturbed copy of z. With
  // `tanh_output` the heads are squashed into (-1, 1) for boundary regression.
  std::vector<Tensor> forward_classmates(const Tensor& z, Rng& rng, bool perturb, bool tanh_output,
                                         NormMode mode = NormMode::kTrain);

  ParamGroup group(GroupId id);
  ParamGroup student();  // encoder + student decoder
  std::vector<ParamGroup> all_groups();

  void zero_grad();

  // Copies student encoder/decoder parameters and buffers into the teacher.
  void sync_teacher();

 private:
  ModelConfig cfg_;
  Stack encoder_;
  Stack decoder_;
  std::vector<Stack> classmates_;
  Stack teacher_encoder_;
  Stack teacher_decoder_;
};

// teacher <- m * teacher + (1 - m) * student, parameters and buffers. The two
// groups must mirror each other by name and shape.
void ema_update(ParamGroup& teacher, const ParamGroup& student, double m);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  // Updates every parameter of the given groups that holds a gradient.
  void step(const std::vector<ParamGroup>& groups, double lr);

 private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
    long long t = 0;
  };
  AdamConfig cfg_;
  std::map<const TensorImpl*, Moments> state_;
};

// SHA-256 over every parameter and buffer value, in group and name order.
std::string parameter_hash(const std::vector<ParamGroup>& groups);

}  // namespace hcdg::nn
