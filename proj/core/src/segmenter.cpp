#include "ctdx/segmenter.hpp"

#include <fmt/format.h>

#include <cmath>
#include <stdexcept>

#include "ctdx/image.hpp"

namespace ctdx {

Tensor atrous_conv3x3(const Tensor& x, const Tensor& w, const Tensor& b, int rate) {
  if (rate < 1) throw std::invalid_argument("atrous_conv3x3: rate must be >= 1");
  if (w.ndim() != 4 || w.dim(2) != 3 || w.dim(3) != 3)
    throw std::invalid_argument("atrous_conv3x3: weights must be [O,C,3,3]");
  Tensor input = x;
  bool squeeze = false;
  if (x.ndim() == 3) {
    input = Tensor::from({1, x.dim(0), x.dim(1), x.dim(2)},
                         std::vector<float>(x.data(), x.data() + x.size()));
    squeeze = true;
  } else if (x.ndim() != 4) {
    throw std::invalid_argument("atrous_conv3x3: input must be [C,H,W] or [N,C,H,W]");
  }
  ag::Var out = ag::conv2d(ag::constant(std::move(input)), ag::constant(w), ag::constant(b), 1,
                           rate, rate);
  Tensor v = out->value;
  if (squeeze)
    return Tensor::from({v.dim(1), v.dim(2), v.dim(3)},
                        std::vector<float>(v.data(), v.data() + v.size()));
  return v;
}

Gam::Gam(ParamStore& store, const std::string& name, int channels, const GroupedAtrousConfig& cfg,
         Rng& rng)
    : channels_(channels), rates_(cfg.rates) {
  if (cfg.expansion < 1) throw std::invalid_argument("grouped atrous: bad expansion");
  for (int r : cfg.rates)
    if (r < 1) throw std::invalid_argument("grouped atrous: rates must be >= 1");
  int expanded = channels * cfg.expansion;
  if (expanded % 4 != 0)
    throw std::invalid_argument(
        fmt::format("grouped atrous: {} expanded channels do not split into 4 groups", expanded));
  group_c_ = expanded / 4;
  expand_ = Conv2d(store, name + ".expand", channels, expanded, 1, 1, 0, 1, rng);
  for (int i = 0; i < 4; ++i)
    branch_[static_cast<size_t>(i)] =
        Conv2d(store, fmt::format("{}.branch{}", name, i), group_c_, group_c_, 3, 1,
               cfg.rates[static_cast<size_t>(i)], cfg.rates[static_cast<size_t>(i)], rng);
  se_ = SeBlock(store, name + ".se", expanded, cfg.se_reduction, rng);
  project_ = Conv2d(store, name + ".project", expanded, channels, 1, 1, 0, 1, rng);
}

ag::Var Gam::operator()(const ag::Var& x) const {
  if (x->value.dim(1) != channels_)
    throw std::invalid_argument("grouped atrous: channel count mismatch");
  ag::Var e = ag::relu(expand_(x));
  std::vector<ag::Var> groups;
  for (int i = 0; i < 4; ++i) {
    ag::Var gi = ag::slice_channels(e, i * group_c_, (i + 1) * group_c_);
    groups.push_back(ag::relu(branch_[static_cast<size_t>(i)](gi)));
  }
  ag::Var merged = se_(ag::concat_channels(groups));
  return ag::relu(ag::add(project_(merged), x));
}

AffStage::AffStage(ParamStore& store, const std::string& name, int enc_c, int deeper_c,
                   bool initial, int se_reduction, Rng& rng)
    : initial_(initial) {
  if (enc_c % 2 != 0) throw std::invalid_argument("decoder stage: width must be even");
  int half = enc_c / 2;
  reduce_e_ = Conv2d(store, name + ".reduce_e", enc_c, half, 1, 1, 0, 1, rng);
  reduce_d_ = Conv2d(store, name + ".reduce_d", deeper_c, half, 1, 1, 0, 1, rng);
  se1_ = SeBlock(store, name + ".se1", enc_c, se_reduction, rng);
  trans1_ = Conv2d(store, name + ".trans1", enc_c, enc_c, 3, 1, 1, 1, rng);
  if (!initial) {
    prev_ = Conv2d(store, name + ".prev", deeper_c, enc_c, 1, 1, 0, 1, rng);
    se2_ = SeBlock(store, name + ".se2", enc_c * 2, se_reduction, rng);
    trans2_ = Conv2d(store, name + ".trans2", enc_c * 2, enc_c, 3, 1, 1, 1, rng);
  }
  side_ = Conv2d(store, name + ".side", enc_c, 1, 1, 1, 0, 1, rng);
}

AffStage::Out AffStage::operator()(const ag::Var& m_e, const ag::Var& m_d_deeper) const {
  const int h = m_e->value.dim(2), w = m_e->value.dim(3);
  ag::Var d_up = ag::upsample_bilinear(m_d_deeper, h, w);
  ag::Var a = ag::relu(reduce_e_(m_e));
  ag::Var b = ag::relu(reduce_d_(d_up));
  ag::Var fused = ag::relu(trans1_(se1_(ag::concat_channels({a, b}))));
  ag::Var feature = fused;
  if (!initial_) {
    ag::Var p = ag::relu(prev_(d_up));
    feature = ag::relu(trans2_(se2_(ag::concat_channels({fused, p}))));
  }
  return {feature, side_(feature)};
}

FusionAdapter::FusionAdapter(ParamStore& store, const std::string& name, int enc_c, int cls_c,
                             int se_reduction, Rng& rng) {
  merge_ = Conv2d(store, name + ".merge", enc_c + cls_c, enc_c, 1, 1, 0, 1, rng);
  se_ = SeBlock(store, name + ".se", enc_c, se_reduction, rng);
  trans_ = Conv2d(store, name + ".trans", enc_c, enc_c, 3, 1, 1, 1, rng);
}

ag::Var FusionAdapter::operator()(const ag::Var& m_e, const ag::Var& a_k) const {
  ag::Var a_sized = ag::upsample_bilinear(a_k, m_e->value.dim(2), m_e->value.dim(3));
  ag::Var merged = ag::relu(merge_(ag::concat_channels({m_e, a_sized})));
  return ag::relu(trans_(se_(merged)));
}

void SegmenterConfig::validate() const {
  if (width_mult <= 0.0 || width_mult > 2.0)
    throw std::invalid_argument("segmenter config: width multiplier out of (0,2]");
  if (in_channels < 1) throw std::invalid_argument("segmenter config: bad channel count");
  if (se_reduction < 1) throw std::invalid_argument("segmenter config: bad reduction");
  if (classifier_fusion)
    for (int c : fusion_channels)
      if (c < 1)
        throw std::invalid_argument(
            "segmenter config: classifier fusion requires the classifier stage widths");
}

std::array<int, 5> SegmenterConfig::stage_widths() const {
  const int base[5] = {64, 128, 256, 512, 512};
  std::array<int, 5> w{};
  for (int i = 0; i < 5; ++i) {
    int v = static_cast<int>(std::lround(width_mult * base[i] / 4.0)) * 4;
    w[static_cast<size_t>(i)] = std::max(4, v);
  }
  return w;
}

namespace {
const int kEncConvs[5] = {2, 2, 3, 3, 3};  // convolutions per encoder block
}

SegmenterModel::SegmenterModel(const SegmenterConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  params_ = std::make_unique<ParamStore>();
  Rng rng(mix_seed(cfg.init_seed, 0x5E65));
  auto w = cfg_.stage_widths();

  int in_c = cfg_.in_channels;
  for (int bidx = 0; bidx < 5; ++bidx) {
    std::vector<Conv2d> block;
    for (int c = 0; c < kEncConvs[bidx]; ++c) {
      block.emplace_back(*params_, fmt::format("enc{}_{}", bidx + 1, c + 1), in_c,
                         w[static_cast<size_t>(bidx)], 3, 1, 1, 1, rng);
      in_c = w[static_cast<size_t>(bidx)];
    }
    enc_blocks_.push_back(std::move(block));
  }
  gam1_ = Gam(*params_, "gam1", w[4], cfg_.gam1, rng);
  gam2_ = Gam(*params_, "gam2", w[4], cfg_.gam2, rng);

  if (cfg_.classifier_fusion)
    for (int k = 0; k < 5; ++k)
      fusion_[static_cast<size_t>(k)] =
          FusionAdapter(*params_, fmt::format("fuse{}", k + 1), w[static_cast<size_t>(k)],
                        cfg_.fusion_channels[static_cast<size_t>(k)], cfg_.se_reduction, rng);

  // Deepest decoder stage first: its deeper input is the atrous-refined
  // stride-32 level; every other stage's deeper input has the width of the
  // stage below, which equals that stage's encoder width.
  const int deeper_c[5] = {w[4], w[4], w[3], w[2], w[1]};
  const int enc_c[5] = {w[4], w[3], w[2], w[1], w[0]};
  for (int i = 0; i < 5; ++i)
    dec_[static_cast<size_t>(i)] =
        AffStage(*params_, fmt::format("dec{}", 5 - i), enc_c[i], deeper_c[i], i == 0,
                 cfg_.se_reduction, rng);
}

SegmenterModel::~SegmenterModel() = default;
SegmenterModel::SegmenterModel(SegmenterModel&&) noexcept = default;
SegmenterModel& SegmenterModel::operator=(SegmenterModel&&) noexcept = default;

SegmenterModel::Forward SegmenterModel::forward(const Tensor& batch,
                                                const std::array<Tensor, 5>* cls_features) const {
  const auto& s = batch.shape();
  if (s.size() != 4 || s[1] != cfg_.in_channels)
    throw std::invalid_argument("segmenter forward: expects [N,C,H,W]");
  const int H = s[2], W = s[3];
  if (H < 32 || W < 32 || H % 32 != 0 || W % 32 != 0)
    throw std::invalid_argument(
        fmt::format("segmenter forward: {}x{} input; sizes must be positive multiples of 32", H, W));
  if (cfg_.classifier_fusion && cls_features == nullptr)
    throw std::invalid_argument(
        "segmenter forward: classifier fusion is configured but no classifier features given");
  if (!cfg_.classifier_fusion && cls_features != nullptr)
    throw std::invalid_argument(
        "segmenter forward: classifier features given but fusion is not configured");

  Forward f;
  ag::Var x = ag::constant(batch);
  for (int b = 0; b < 5; ++b) {
    if (b > 0) x = ag::maxpool2x2(x);
    for (const auto& conv : enc_blocks_[static_cast<size_t>(b)]) x = ag::relu(conv(x));
    if (b == 4) x = gam1_(x);
    f.encoder.push_back(x);
  }
  f.encoder.push_back(gam2_(ag::maxpool2x2(f.encoder.back())));
  f.encoder_strides = {1, 2, 4, 8, 16, 32};

  std::vector<ag::Var> levels(f.encoder.begin(), f.encoder.end() - 1);
  if (cfg_.classifier_fusion) {
    for (int k = 0; k < 5; ++k) {
      const Tensor& a_k = (*cls_features)[static_cast<size_t>(k)];
      if (a_k.ndim() != 4 || a_k.dim(0) != s[0] ||
          a_k.dim(1) != cfg_.fusion_channels[static_cast<size_t>(k)])
        throw std::invalid_argument(fmt::format(
            "segmenter forward: classifier feature {} has shape {}, expected [{},{},h,w]", k + 1,
            shape_str(a_k.shape()), s[0], cfg_.fusion_channels[static_cast<size_t>(k)]));
      levels[static_cast<size_t>(k)] =
          fusion_[static_cast<size_t>(k)](levels[static_cast<size_t>(k)], ag::constant(a_k));
    }
  }

  ag::Var d = f.encoder.back();
  f.side_strides = {16, 8, 4, 2, 1};
  for (int i = 0; i < 5; ++i) {
    auto out = dec_[static_cast<size_t>(i)](levels[static_cast<size_t>(4 - i)], d);
    d = out.feature;
    f.side_logits[static_cast<size_t>(i)] = out.side_logit;
    f.side_probs[static_cast<size_t>(i)] =
        ag::sigmoid(ag::upsample_bilinear(out.side_logit, H, W));
  }
  f.final_prob = f.side_probs[4];
  return f;
}

namespace {

Tensor image_to_batch(const CTImage& image) {
  Tensor t({1, 1, image.h, image.w});
  std::copy(image.pixels.begin(), image.pixels.end(), t.data());
  return t;
}

}  // namespace

std::vector<FeatureMap> SegmenterModel::encode(const CTImage& image) const {
  Tensor batch = image_to_batch(image);
  const auto& s = batch.shape();
  const int H = s[2], W = s[3];
  if (H < 32 || W < 32 || H % 32 != 0 || W % 32 != 0)
    throw std::invalid_argument("encode: image sides must be positive multiples of 32");
  ag::Var x = ag::constant(batch);
  std::vector<FeatureMap> out;
  int stride = 1;
  for (int b = 0; b < 5; ++b) {
    if (b > 0) {
      x = ag::maxpool2x2(x);
      stride *= 2;
    }
    for (const auto& conv : enc_blocks_[static_cast<size_t>(b)]) x = ag::relu(conv(x));
    if (b == 4) x = gam1_(x);
    out.push_back({x->value, stride});
  }
  x = gam2_(ag::maxpool2x2(x));
  out.push_back({x->value, stride * 2});
  return out;
}

Tensor SegmenterModel::segment(const CTImage& image) const {
  if (!trained_)
    throw std::logic_error("segment: model has not been trained or loaded from a checkpoint");
  if (cfg_.classifier_fusion)
    throw std::invalid_argument("segment: this model needs classifier features; pass the classifier");
  Forward f = forward(image_to_batch(image), nullptr);
  return Tensor::from({image.h, image.w},
                      std::vector<float>(f.final_prob->value.data(),
                                         f.final_prob->value.data() + f.final_prob->value.size()));
}

Tensor SegmenterModel::segment(const CTImage& image, const ClassifierModel& cls) const {
  if (!trained_)
    throw std::logic_error("segment: model has not been trained or loaded from a checkpoint");
  if (!cfg_.classifier_fusion)
    throw std::invalid_argument("segment: classifier fusion is not configured for this model");
  std::array<Tensor, 5> feats = [&] {
    CTImage resized;
    resized.h = cls.config().input_size;
    resized.w = cls.config().input_size;
    resized.pixels = bilinear_resize(image.pixels, image.h, image.w, resized.h, resized.w);
    Tensor b({1, 1, resized.h, resized.w});
    std::copy(resized.pixels.begin(), resized.pixels.end(), b.data());
    auto fwd = cls.forward(b);
    std::array<Tensor, 5> out;
    for (int k = 0; k < 5; ++k) out[static_cast<size_t>(k)] = fwd.stages[static_cast<size_t>(k)]->value;
    return out;
  }();
  Forward f = forward(image_to_batch(image), &feats);
  return Tensor::from({image.h, image.w},
                      std::vector<float>(f.final_prob->value.data(),
                                         f.final_prob->value.data() + f.final_prob->value.size()));
}

}  // namespace ctdx
