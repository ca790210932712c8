#include "ctdx/classifier.hpp"

#include <fmt/format.h>

#include <cmath>
#include <stdexcept>

#include "ctdx/image.hpp"

namespace ctdx {

void ClassifierConfig::validate() const {
  if (input_size < 32 || input_size % 32 != 0)
    throw std::invalid_argument("classifier config: input size must be a positive multiple of 32");
  if (base_channels < 4 || base_channels % 4 != 0)
    throw std::invalid_argument("classifier config: base channels must be a positive multiple of 4");
}

std::array<int, 5> ClassifierConfig::stage_widths() const {
  return {base_channels, base_channels * 2, base_channels * 4, base_channels * 8,
          base_channels * 8};
}

// Residual block whose inner 3x3 convolutions run on four channel lanes, each
// lane seeing the previous lane's output, so one block mixes several receptive
// field sizes.
struct ClassifierModel::Block {
  int in_c = 0, out_c = 0;
  Conv2d reduce;               // 1x1 in -> out
  std::array<Conv2d, 3> lane;  // 3x3 on lanes 2..4
  Conv2d expand;               // 1x1 out -> out
  Conv2d project;              // 1x1 in -> out when widths differ
  bool has_project = false;

  Block(ParamStore& store, const std::string& name, int in, int out, Rng& rng)
      : in_c(in), out_c(out) {
    if (out % 4 != 0) throw std::invalid_argument("block width must be divisible by 4");
    reduce = Conv2d(store, name + ".reduce", in, out, 1, 1, 0, 1, rng);
    int lane_c = out / 4;
    for (int i = 0; i < 3; ++i)
      lane[static_cast<size_t>(i)] =
          Conv2d(store, fmt::format("{}.lane{}", name, i + 1), lane_c, lane_c, 3, 1, 1, 1, rng);
    expand = Conv2d(store, name + ".expand", out, out, 1, 1, 0, 1, rng);
    has_project = in != out;
    if (has_project) project = Conv2d(store, name + ".project", in, out, 1, 1, 0, 1, rng);
  }

  ag::Var operator()(const ag::Var& x) const {
    ag::Var r = ag::relu(reduce(x));
    int lane_c = out_c / 4;
    std::vector<ag::Var> lanes;
    lanes.push_back(ag::slice_channels(r, 0, lane_c));
    ag::Var prev = lanes[0];
    for (int i = 1; i < 4; ++i) {
      ag::Var xi = ag::slice_channels(r, i * lane_c, (i + 1) * lane_c);
      ag::Var yi = i == 1 ? ag::relu(lane[0](xi))
                          : ag::relu(lane[static_cast<size_t>(i - 1)](ag::add(xi, prev)));
      lanes.push_back(yi);
      prev = yi;
    }
    ag::Var merged = expand(ag::concat_channels(lanes));
    ag::Var skip = has_project ? project(x) : x;
    return ag::relu(ag::add(merged, skip));
  }
};

ClassifierModel::ClassifierModel(const ClassifierConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  params_ = std::make_unique<ParamStore>();
  Rng rng(mix_seed(cfg.init_seed, 0xC1A55));
  auto widths = cfg.stage_widths();
  stem_ = Conv2d(*params_, "stem", 1, widths[0], 3, 1, 1, 1, rng);
  int in_c = widths[0];
  for (int s = 0; s < 5; ++s) {
    blocks_.push_back(std::make_shared<Block>(*params_, fmt::format("stage{}", s + 1), in_c,
                                              widths[static_cast<size_t>(s)], rng));
    in_c = widths[static_cast<size_t>(s)];
  }
  head_ = Linear(*params_, "head", widths[4], 2, rng);
  head_w_ = head_.weight();
}

ClassifierModel::~ClassifierModel() = default;
ClassifierModel::ClassifierModel(ClassifierModel&&) noexcept = default;
ClassifierModel& ClassifierModel::operator=(ClassifierModel&&) noexcept = default;

ClassifierModel::Forward ClassifierModel::forward(const Tensor& batch) const {
  const auto& s = batch.shape();
  if (s.size() != 4 || s[1] != 1)
    throw std::invalid_argument("classifier forward: expects [N,1,S,S]");
  if (s[2] != cfg_.input_size || s[3] != cfg_.input_size)
    throw std::invalid_argument(fmt::format(
        "classifier forward: input is {}x{} but the model expects {}x{}", s[2], s[3],
        cfg_.input_size, cfg_.input_size));
  Forward f;
  ag::Var x = ag::relu(stem_(ag::constant(batch)));
  for (const auto& block : blocks_) {
    x = (*block)(ag::maxpool2x2(x));
    f.stages.push_back(x);
  }
  f.pooled = ag::global_avg_pool(x);
  f.logits = head_(f.pooled);
  f.probs = ag::softmax_rows(f.logits);
  return f;
}

ag::Var ClassifierModel::explanation_map_node(const Forward& fwd, int cls) const {
  if (cls < 0 || cls > 1) throw std::invalid_argument("explanation map: bad class index");
  const ag::Var& feat = fwd.stages.back();
  const int n = feat->value.dim(0);
  const double hw = static_cast<double>(feat->value.dim(2)) * feat->value.dim(3);
  // For a pooled linear head the score gradient at the feature map is the
  // head weight divided by the map area, so the weighting can be built
  // directly into the graph.
  ag::Var w = ag::scale(ag::matrix_row(head_w_, cls), 1.0 / hw);
  ag::Var weighted = ag::channel_scale(feat, ag::broadcast_rows(w, n));
  return ag::minmax_normalize(ag::sum_channels(ag::relu(weighted)));
}

ClassProbabilities ClassifierModel::classify_image(const CTImage& image) const {
  if (image.h != cfg_.input_size || image.w != cfg_.input_size)
    throw std::invalid_argument(fmt::format(
        "classify_image: image is {}x{} but the model expects {}x{}; resize first", image.h,
        image.w, cfg_.input_size, cfg_.input_size));
  Tensor batch({1, 1, image.h, image.w});
  std::copy(image.pixels.begin(), image.pixels.end(), batch.data());
  Forward f = forward(batch);
  ClassProbabilities p;
  p.p_infected = f.probs->value.at2(0, kInfected);
  p.p_uninfected = f.probs->value.at2(0, kUninfected);
  return p;
}

ActivationMap ClassifierModel::activation_map(const CTImage& image, int cls) const {
  if (cls < 0 || cls > 1) throw std::invalid_argument("activation_map: bad class index");
  if (image.h != cfg_.input_size || image.w != cfg_.input_size)
    throw std::invalid_argument("activation_map: image size does not match the model input size");
  Tensor batch({1, 1, image.h, image.w});
  std::copy(image.pixels.begin(), image.pixels.end(), batch.data());
  Forward f = forward(batch);
  Tensor onehot({1, 2});
  onehot.at2(0, cls) = 1.0f;
  ag::Var score = ag::sum(ag::hadamard(f.logits, ag::constant(onehot)));
  return activation_map_from(score, f.stages.back());
}

ActivationMap activation_map_from(const ag::Var& score, const ag::Var& feature) {
  const auto& s = feature->value.shape();
  if (s.size() != 4 || s[0] != 1)
    throw std::invalid_argument("activation_map_from: feature must be [1,C,h,w]");
  ag::backward(score);
  if (feature->grad.size() != feature->value.size())
    throw std::runtime_error("activation_map_from: no gradient reached the feature map");
  const int c = s[1], h = s[2], w = s[3];
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  ActivationMap am;
  am.h = h;
  am.w = w;
  am.raw.assign(static_cast<size_t>(plane), 0.0f);
  for (int k = 0; k < c; ++k) {
    const float* gp = feature->grad.data() + k * plane;
    const float* xp = feature->value.data() + k * plane;
    double wk = 0.0;
    for (std::int64_t i = 0; i < plane; ++i) wk += gp[i];
    wk /= static_cast<double>(plane);
    for (std::int64_t i = 0; i < plane; ++i) {
      float t = static_cast<float>(wk) * xp[i];
      if (t > 0.0f) am.raw[static_cast<size_t>(i)] += t;
    }
  }
  am.normalized.assign(am.raw.begin(), am.raw.end());
  float lo = am.raw[0], hi = am.raw[0];
  for (float v : am.raw) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  float range = hi - lo;
  for (float& v : am.normalized) v = range > 0.0f ? (v - lo) / range : 0.0f;
  return am;
}

PatientDiagnosis patient_decision(const std::vector<bool>& image_infected, int threshold) {
  if (image_infected.empty())
    throw std::invalid_argument("patient_decision: patient has no image results");
  if (threshold < 1) throw std::invalid_argument("patient_decision: threshold must be >= 1");
  PatientDiagnosis d;
  d.total_images = static_cast<int>(image_infected.size());
  for (bool b : image_infected)
    if (b) ++d.infected_images;
  d.threshold = threshold;
  d.positive = d.infected_images >= threshold;
  return d;
}

}  // namespace ctdx
