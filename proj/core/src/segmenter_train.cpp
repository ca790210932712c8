#include <fmt/format.h>

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ctdx/image.hpp"
#include "ctdx/losses.hpp"
#include "ctdx/segmenter.hpp"

namespace ctdx {

void TrainSegConfig::validate() const {
  model.validate();
  if (iterations < 1) throw std::invalid_argument("segmenter training: iterations must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("segmenter training: batch size must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("segmenter training: learning rate must be > 0");
  if (!(poly_power > 0.0)) throw std::invalid_argument("segmenter training: bad poly power");
  if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0)
    throw std::invalid_argument("segmenter training: betas must be in [0,1)");
  if (!(adam_eps > 0.0)) throw std::invalid_argument("segmenter training: bad epsilon");
  if (log_every < 1) throw std::invalid_argument("segmenter training: bad log interval");
}

namespace {

struct Item {
  CTImage image;
  PixelMask mask;
};

}  // namespace

TrainedSegmenter train_segmenter(const DatasetManifest& data, const TrainSegConfig& cfg,
                                 const ClassifierModel* cls) {
  cfg.validate();
  if (cfg.model.classifier_fusion && cls == nullptr)
    throw std::invalid_argument("segmenter training: classifier fusion needs a trained classifier");
  if (!cfg.model.classifier_fusion && cls != nullptr)
    throw std::invalid_argument(
        "segmenter training: a classifier was given but fusion is not configured");

  std::vector<Item> pool;
  for (const auto& p : data.patients)
    for (const auto& ref : p.images) {
      auto mask = load_mask(data, ref);
      if (!mask) continue;
      pool.push_back({load_image(data, ref), std::move(*mask)});
    }
  if (pool.empty())
    throw std::runtime_error("segmenter training: manifest has no lesion-annotated images");
  const int H = pool[0].image.h, W = pool[0].image.w;
  for (const auto& it : pool)
    if (it.image.h != H || it.image.w != W)
      throw std::runtime_error("segmenter training: all annotated images must share one size");
  if (H % 32 != 0 || W % 32 != 0)
    throw std::runtime_error("segmenter training: image sides must be multiples of 32");

  SegmenterConfig mc = cfg.model;
  mc.init_seed = mix_seed(cfg.seed, 2);
  if (mc.classifier_fusion) mc.fusion_channels = cls->config().stage_widths();
  TrainedSegmenter out{SegmenterModel(mc), {}};
  SegmenterModel& model = out.model;
  ParamStore& params = model.params();

  std::vector<Tensor> adam_m, adam_v;
  for (const auto& p : params.all()) {
    adam_m.push_back(Tensor::zeros(p->value.shape()));
    adam_v.push_back(Tensor::zeros(p->value.shape()));
  }

  AugmentConfig acfg;  // keeps native size
  Rng master(cfg.seed);
  std::vector<int> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  size_t cursor = order.size();

  const int cls_s = cls ? cls->config().input_size : 0;
  long adam_t = 0;

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    double lr = poly_lr(cfg.lr, iter, cfg.iterations, cfg.poly_power);
    Rng irng = master.fork(500000 + static_cast<std::uint64_t>(iter));

    const int b = cfg.batch_size;
    Tensor batch({b, 1, H, W});
    Tensor gt({b, 1, H, W});
    std::array<Tensor, 5> feats;
    std::vector<std::array<Tensor, 5>> per_sample_feats;

    for (int i = 0; i < b; ++i) {
      if (cursor == order.size()) {
        irng.shuffle(order);
        cursor = 0;
      }
      const Item& it = pool[static_cast<size_t>(order[cursor++])];
      Rng srng = irng.fork(10 + static_cast<std::uint64_t>(i));
      CTImage img = it.image;
      PixelMask mask = it.mask;
      if (cfg.augment) {
        Augmented a = augment_sample(it.image, it.mask, acfg, srng);
        img = std::move(a.image);
        mask = std::move(*a.mask);
      }
      std::copy(img.pixels.begin(), img.pixels.end(), batch.data() + batch.idx4(i, 0, 0, 0));
      float* g = gt.data() + gt.idx4(i, 0, 0, 0);
      for (size_t px = 0; px < mask.values.size(); ++px) g[px] = mask.values[px];

      if (cls) {
        auto resized = bilinear_resize(img.pixels, img.h, img.w, cls_s, cls_s);
        Tensor cx({1, 1, cls_s, cls_s});
        std::copy(resized.begin(), resized.end(), cx.data());
        auto cf = cls->forward(cx);
        std::array<Tensor, 5> sf;
        for (int k = 0; k < 5; ++k) sf[static_cast<size_t>(k)] = cf.stages[static_cast<size_t>(k)]->value;
        per_sample_feats.push_back(std::move(sf));
      }
    }

    if (cls) {
      for (int k = 0; k < 5; ++k) {
        const Tensor& first = per_sample_feats[0][static_cast<size_t>(k)];
        Tensor stacked({b, first.dim(1), first.dim(2), first.dim(3)});
        for (int i = 0; i < b; ++i) {
          const Tensor& src = per_sample_feats[static_cast<size_t>(i)][static_cast<size_t>(k)];
          std::copy(src.data(), src.data() + src.size(),
                    stacked.data() + stacked.idx4(i, 0, 0, 0));
        }
        feats[static_cast<size_t>(k)] = std::move(stacked);
      }
    }

    auto fwd = model.forward(batch, cls ? &feats : nullptr);
    ag::Var loss = deep_supervision_loss_graph(fwd.side_probs, gt, mc.dice_factor_2);

    params.zero_grads();
    ag::backward(loss);
    ++adam_t;
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(adam_t));
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(adam_t));
    const auto& plist = params.all();
    for (size_t pi = 0; pi < plist.size(); ++pi) {
      ag::Node& p = *plist[pi];
      if (p.grad.size() != p.value.size()) continue;
      Tensor& m = adam_m[pi];
      Tensor& v = adam_v[pi];
      const float b1 = static_cast<float>(cfg.adam_beta1), b2 = static_cast<float>(cfg.adam_beta2);
      for (std::int64_t j = 0; j < p.value.size(); ++j) {
        float g = p.grad[j];
        m[j] = b1 * m[j] + (1.0f - b1) * g;
        v[j] = b2 * v[j] + (1.0f - b2) * g * g;
        double mhat = m[j] / bc1;
        double vhat = v[j] / bc2;
        p.value[j] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + cfg.adam_eps));
      }
    }

    if (iter % cfg.log_every == 0 || iter + 1 == cfg.iterations) {
      out.log.push_back({iter + 1, lr, ag::scalar(loss)});
      if (cfg.verbose)
        fmt::print(stderr, "iter {:5d}  lr {:.4g}  loss {:.4f}\n", iter + 1, lr,
                   out.log.back().loss);
    }
  }

  model.mark_trained();
  return out;
}

}  // namespace ctdx
