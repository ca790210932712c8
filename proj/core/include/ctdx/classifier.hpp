#pragma once

#include <array>
#include <memory>
#include <vector>

#include "ctdx/corpus.hpp"
#include "ctdx/layers.hpp"

namespace ctdx {

// Channel order of every two-way output.
enum ClassIndex : int { kInfected = 0, kUninfected = 1 };

struct ClassProbabilities {
  double p_infected = 0.0;
  double p_uninfected = 0.0;
  bool infected() const { return p_infected > p_uninfected; }  // tie -> uninfected
};

struct ActivationMap {
  int h = 0, w = 0;
  std::vector<float> raw;         // rectified weighted feature sum
  std::vector<float> normalized;  // min-max rescaled; constant maps become 0
};

struct ClassifierConfig {
  int input_size = 224;    // square edge, divisible by 32
  int base_channels = 16;  // stage widths: base * {1,2,4,8,8}, divisible by 4
  std::uint64_t init_seed = 0;

  void validate() const;
  std::array<int, 5> stage_widths() const;
};

// Five-stage convolutional backbone. Each stage halves resolution and runs a
// multi-scale residual block that splits its channels into four lanes with
// cascaded 3x3 convolutions. Output strides are {2,4,8,16,32}; a global
// average pool plus a two-way linear head sits on top.
class ClassifierModel {
public:
  explicit ClassifierModel(const ClassifierConfig& cfg);
  ~ClassifierModel();
  ClassifierModel(const ClassifierModel&) = delete;
  ClassifierModel& operator=(const ClassifierModel&) = delete;
  ClassifierModel(ClassifierModel&&) noexcept;
  ClassifierModel& operator=(ClassifierModel&&) noexcept;

  struct Forward {
    std::vector<ag::Var> stages;  // 5 feature maps, strides {2,4,8,16,32}
    ag::Var pooled;               // [N, C5]
    ag::Var logits;               // [N, 2]
    ag::Var probs;                // [N, 2] softmax rows
  };
  // batch is [N,1,S,S] with S == config().input_size.
  Forward forward(const Tensor& batch) const;

  // Builds the training-time explanation map for class `cls` of every sample
  // in an already-computed forward: [N,1,S/32,S/32], min-max normalized.
  // Uses the pooled-head identity (head weight / map area) so the result is
  // an ordinary first-order node of the same graph.
  ag::Var explanation_map_node(const Forward& fwd, int cls) const;

  ClassProbabilities classify_image(const CTImage& image) const;
  ActivationMap activation_map(const CTImage& image, int cls) const;

  const ClassifierConfig& config() const { return cfg_; }
  ParamStore& params() { return *params_; }
  const ParamStore& params() const { return *params_; }
  ag::Var head_weight() const { return head_w_; }

private:
  struct Block;
  ClassifierConfig cfg_;
  std::unique_ptr<ParamStore> params_;
  Conv2d stem_;
  std::vector<std::shared_ptr<Block>> blocks_;
  Linear head_;
  ag::Var head_w_;
};

// Gradient-route explanation map: backpropagates `score` (a scalar graph
// node), averages the gradient at `feature` per channel into weights, and
// rectifies the weighted feature sum channel by channel. feature is
// [1,C,h,w].
ActivationMap activation_map_from(const ag::Var& score, const ag::Var& feature);

struct PatientDiagnosis {
  int infected_images = 0;
  int total_images = 0;
  int threshold = 0;
  bool positive = false;
};
// Positive when at least `threshold` images are classified infected.
PatientDiagnosis patient_decision(const std::vector<bool>& image_infected, int threshold);

struct TrainClsConfig {
  ClassifierConfig model;
  int epochs = 100;
  int batch_size = 32;
  double lr = 0.1;
  double momentum = 0.9;
  int lr_step_epochs = 30;
  double lr_step_factor = 0.1;
  bool mixup = true;
  double mixup_alpha = 0.5;
  double map_loss_weight = 1.0;  // weight of the pixel-supervision term
  bool augment = true;
  bool verbose = false;  // stream one line per epoch to stderr
  std::uint64_t seed = 0;

  void validate() const;
};

struct ClsEpochLog {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double ce_loss = 0.0;
  double map_loss = 0.0;
  double train_accuracy = 0.0;
};

struct TrainedClassifier {
  ClassifierModel model;
  std::vector<ClsEpochLog> log;
};

TrainedClassifier train_classifier(const DatasetManifest& data, const TrainClsConfig& cfg);

}  // namespace ctdx
