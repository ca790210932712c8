#pragma once

#include <array>
#include <memory>
#include <vector>

#include "ctdx/classifier.hpp"
#include "ctdx/corpus.hpp"
#include "ctdx/layers.hpp"

namespace ctdx {

struct FeatureMap {
  Tensor values;  // [N,C,H,W]
  int stride = 1;
};

// 3x3 convolution with dilation `rate` and zero padding `rate`, so the output
// keeps the input's spatial size. x is [N,C,H,W] , w is [O,C,3,3], b is [O].
Tensor atrous_conv3x3(const Tensor& x, const Tensor& w, const Tensor& b, int rate);

struct GroupedAtrousConfig {
  std::array<int, 4> rates{1, 3, 6, 9};
  int expansion = 2;
  int se_reduction = 4;
};

// Grouped atrous block: 1x1 expansion, four channel groups convolved at the
// four dilation rates, channel attention, 1x1 projection back, residual add.
class Gam {
public:
  Gam() = default;
  Gam(ParamStore& store, const std::string& name, int channels, const GroupedAtrousConfig& cfg,
      Rng& rng);
  ag::Var operator()(const ag::Var& x) const;
  int channels() const { return channels_; }

private:
  int channels_ = 0, group_c_ = 0;
  std::array<int, 4> rates_{};
  Conv2d expand_;
  std::array<Conv2d, 4> branch_;
  SeBlock se_;
  Conv2d project_;
};

// Decoder stage: reduce the encoder map and the upsampled deeper decoder map
// to half the stage width each, concatenate, gate, fuse 3x3; non-initial
// stages then concatenate an adapted copy of the deeper map again and fuse
// back to the stage width. Every stage emits a one-channel side logit.
class AffStage {
public:
  AffStage() = default;
  AffStage(ParamStore& store, const std::string& name, int enc_c, int deeper_c, bool initial,
           int se_reduction, Rng& rng);
  struct Out {
    ag::Var feature;     // [N,enc_c,H,W]
    ag::Var side_logit;  // [N,1,H,W]
  };
  Out operator()(const ag::Var& m_e, const ag::Var& m_d_deeper) const;

private:
  bool initial_ = false;
  Conv2d reduce_e_, reduce_d_, trans1_, prev_, trans2_, side_;
  SeBlock se1_, se2_;
};

// Folds one classifier stage feature into the matching encoder level.
class FusionAdapter {
public:
  FusionAdapter() = default;
  FusionAdapter(ParamStore& store, const std::string& name, int enc_c, int cls_c,
                int se_reduction, Rng& rng);
  ag::Var operator()(const ag::Var& m_e, const ag::Var& a_k) const;

private:
  Conv2d merge_, trans_;
  SeBlock se_;
};

struct SegmenterConfig {
  double width_mult = 0.25;  // scales encoder widths {64,128,256,512,512}
  int in_channels = 1;
  GroupedAtrousConfig gam1{{1, 3, 6, 9}, 2, 4};
  GroupedAtrousConfig gam2{{1, 2, 3, 4}, 2, 4};
  int se_reduction = 4;
  bool dice_factor_2 = false;  // doubles the overlap numerator in the loss
  bool classifier_fusion = false;
  std::array<int, 5> fusion_channels{};  // classifier stage widths when fusing
  std::uint64_t init_seed = 0;

  void validate() const;
  std::array<int, 5> stage_widths() const;
};

// Encoder-decoder lesion segmenter. The encoder is a five-block VGG-shaped
// stack (pooling in front of blocks 2..5) whose deepest map is refined by two
// grouped atrous blocks around one extra pooling, giving six feature levels
// at strides {1,2,4,8,16,32}. The decoder walks back up with one AffStage per
// level and emits five side outputs at strides {16,8,4,2,1}; the stride-1
// output is the prediction.
class SegmenterModel {
public:
  explicit SegmenterModel(const SegmenterConfig& cfg);
  ~SegmenterModel();
  SegmenterModel(const SegmenterModel&) = delete;
  SegmenterModel& operator=(const SegmenterModel&) = delete;
  SegmenterModel(SegmenterModel&&) noexcept;
  SegmenterModel& operator=(SegmenterModel&&) noexcept;

  struct Forward {
    std::vector<ag::Var> encoder;        // 6 levels
    std::vector<int> encoder_strides;    // {1,2,4,8,16,32}
    std::array<ag::Var, 5> side_logits;  // decoder stages deep-to-shallow
    std::array<int, 5> side_strides;     // {16,8,4,2,1}
    std::array<ag::Var, 5> side_probs;   // each upsampled to input size, sigmoid
    ag::Var final_prob;                  // side_probs[4]
  };
  // batch [N,in_channels,H,W], H and W divisible by 32. cls_features must be
  // given exactly when classifier fusion is configured: five batch-stacked
  // classifier stage maps.
  Forward forward(const Tensor& batch, const std::array<Tensor, 5>* cls_features) const;

  std::vector<FeatureMap> encode(const CTImage& image) const;
  Tensor segment(const CTImage& image) const;  // [H,W] probabilities
  Tensor segment(const CTImage& image, const ClassifierModel& cls) const;

  bool trained() const { return trained_; }
  void mark_trained() { trained_ = true; }

  const SegmenterConfig& config() const { return cfg_; }
  ParamStore& params() { return *params_; }
  const ParamStore& params() const { return *params_; }

private:
  SegmenterConfig cfg_;
  std::unique_ptr<ParamStore> params_;
  std::vector<std::vector<Conv2d>> enc_blocks_;
  Gam gam1_, gam2_;
  std::array<FusionAdapter, 5> fusion_;
  std::array<AffStage, 5> dec_;  // index 0 is the deepest stage
  bool trained_ = false;
};

struct TrainSegConfig {
  SegmenterConfig model;
  int iterations = 21000;
  int batch_size = 4;
  double lr = 2.5e-5;
  double poly_power = 0.9;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool augment = true;
  int log_every = 50;
  bool verbose = false;  // stream logged iterations to stderr
  std::uint64_t seed = 0;

  void validate() const;
};

struct SegIterLog {
  int iter = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainedSegmenter {
  SegmenterModel model;
  std::vector<SegIterLog> log;
};

// Trains on every annotated image in the manifest. When classifier fusion is
// configured, `cls` supplies the frozen classifier; only the segmenter and
// the fusion adapters learn.
TrainedSegmenter train_segmenter(const DatasetManifest& data, const TrainSegConfig& cfg,
                                 const ClassifierModel* cls);

}  // namespace ctdx
