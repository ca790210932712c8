#include <fmt/format.h>

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ctdx/classifier.hpp"
#include "ctdx/image.hpp"
#include "ctdx/losses.hpp"

namespace ctdx {

void TrainClsConfig::validate() const {
  model.validate();
  if (epochs < 1) throw std::invalid_argument("classifier training: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("classifier training: batch size must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("classifier training: learning rate must be > 0");
  if (momentum < 0.0 || momentum >= 1.0)
    throw std::invalid_argument("classifier training: momentum must be in [0,1)");
  if (lr_step_epochs < 1) throw std::invalid_argument("classifier training: bad lr step");
  if (!(lr_step_factor > 0.0 && lr_step_factor <= 1.0))
    throw std::invalid_argument("classifier training: bad lr step factor");
  if (mixup && !(mixup_alpha > 0.0))
    throw std::invalid_argument("classifier training: mixup alpha must be > 0");
  if (map_loss_weight < 0.0)
    throw std::invalid_argument("classifier training: map loss weight must be >= 0");
}

namespace {

struct Item {
  CTImage image;
  std::optional<PixelMask> mask;
  bool infected = false;
};

std::vector<Item> preload(const DatasetManifest& data) {
  std::vector<Item> items;
  for (const auto& p : data.patients)
    for (const auto& ref : p.images) {
      Item it;
      it.image = load_image(data, ref);
      it.mask = load_mask(data, ref);
      it.infected = p.label == PatientLabel::positive;
      items.push_back(std::move(it));
    }
  if (items.empty()) throw std::runtime_error("classifier training: manifest has no images");
  return items;
}

Tensor plain_input(const CTImage& img, int size) {
  Tensor t({1, 1, size, size});
  if (img.h == size && img.w == size) {
    std::copy(img.pixels.begin(), img.pixels.end(), t.data());
  } else {
    auto resized = bilinear_resize(img.pixels, img.h, img.w, size, size);
    std::copy(resized.begin(), resized.end(), t.data());
  }
  return t;
}

}  // namespace

TrainedClassifier train_classifier(const DatasetManifest& data, const TrainClsConfig& cfg) {
  cfg.validate();
  auto items = preload(data);
  bool has_pos = false, has_neg = false;
  for (const auto& it : items) (it.infected ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg)
    throw std::invalid_argument(
        "classifier training: manifest must contain both infected and uninfected patients");

  ClassifierConfig mc = cfg.model;
  mc.init_seed = mix_seed(cfg.seed, 1);
  TrainedClassifier out{ClassifierModel(mc), {}};
  ClassifierModel& model = out.model;
  ParamStore& params = model.params();

  const int S = mc.input_size;
  AugmentConfig acfg;
  acfg.out_h = S;
  acfg.out_w = S;

  std::vector<Tensor> velocity;
  for (const auto& p : params.all()) velocity.push_back(Tensor::zeros(p->value.shape()));

  // Plain resized copies for the end-of-epoch accuracy pass.
  std::vector<Tensor> eval_inputs;
  eval_inputs.reserve(items.size());
  for (const auto& it : items) eval_inputs.push_back(plain_input(it.image, S));

  Rng master(cfg.seed);
  std::vector<int> order(items.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = cfg.lr * std::pow(cfg.lr_step_factor, epoch / cfg.lr_step_epochs);
    Rng erng = master.fork(1000 + static_cast<std::uint64_t>(epoch));
    erng.shuffle(order);

    double ep_ce = 0.0, ep_map = 0.0;
    int batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      int b = static_cast<int>(stop - start);

      std::vector<Tensor> images;
      std::vector<std::array<double, 2>> labels;
      std::vector<Tensor> sup_images;
      std::vector<const PixelMask*> sup_masks;
      std::vector<PixelMask> sup_mask_storage;
      sup_mask_storage.reserve(static_cast<size_t>(b));
      for (size_t i = start; i < stop; ++i) {
        const Item& it = items[static_cast<size_t>(order[i])];
        Rng srng = erng.fork(10000 + i);
        Tensor x;
        std::optional<PixelMask> mask;
        if (cfg.augment) {
          Augmented a = augment_sample(it.image, it.mask, acfg, srng);
          x = plain_input(a.image, S);
          mask = std::move(a.mask);
        } else {
          x = plain_input(it.image, S);
          if (it.mask) {
            PixelMask m;
            m.h = S;
            m.w = S;
            m.values = nearest_resize(it.mask->values, it.mask->h, it.mask->w, S, S);
            mask = std::move(m);
          }
        }
        images.push_back(std::move(x));
        labels.push_back(it.infected ? std::array<double, 2>{1.0, 0.0}
                                     : std::array<double, 2>{0.0, 1.0});
        if (mask && cfg.map_loss_weight > 0.0) {
          sup_images.push_back(images.back());
          sup_mask_storage.push_back(std::move(*mask));
        }
      }
      for (const auto& m : sup_mask_storage) sup_masks.push_back(&m);

      Tensor batch({b, 1, S, S});
      Tensor soft({b, 2});
      if (cfg.mixup && b >= 2) {
        double lam = sample_lambda(cfg.mixup_alpha, erng);
        std::vector<int> perm(static_cast<size_t>(b));
        std::iota(perm.begin(), perm.end(), 0);
        erng.shuffle(perm);
        for (int i = 0; i < b; ++i) {
          MixedSample ms = mix_samples(images[static_cast<size_t>(i)],
                                       labels[static_cast<size_t>(i)],
                                       images[static_cast<size_t>(perm[i])],
                                       labels[static_cast<size_t>(perm[i])], lam);
          std::copy(ms.image.data(), ms.image.data() + ms.image.size(),
                    batch.data() + batch.idx4(i, 0, 0, 0));
          soft.at2(i, 0) = static_cast<float>(ms.soft_label[0]);
          soft.at2(i, 1) = static_cast<float>(ms.soft_label[1]);
        }
      } else {
        for (int i = 0; i < b; ++i) {
          const Tensor& x = images[static_cast<size_t>(i)];
          std::copy(x.data(), x.data() + x.size(), batch.data() + batch.idx4(i, 0, 0, 0));
          soft.at2(i, 0) = static_cast<float>(labels[static_cast<size_t>(i)][0]);
          soft.at2(i, 1) = static_cast<float>(labels[static_cast<size_t>(i)][1]);
        }
      }

      auto fwd = model.forward(batch);
      ag::Var ce = classification_loss_graph(fwd.probs, soft);
      ag::Var total = ce;
      double map_val = 0.0;
      if (!sup_images.empty()) {
        int m = static_cast<int>(sup_images.size());
        Tensor sup_batch({m, 1, S, S});
        Tensor sup_gt({m, 1, S, S});
        for (int i = 0; i < m; ++i) {
          const Tensor& x = sup_images[static_cast<size_t>(i)];
          std::copy(x.data(), x.data() + x.size(), sup_batch.data() + sup_batch.idx4(i, 0, 0, 0));
          const PixelMask& pm = *sup_masks[static_cast<size_t>(i)];
          float* dst = sup_gt.data() + sup_gt.idx4(i, 0, 0, 0);
          for (size_t px = 0; px < pm.values.size(); ++px) dst[px] = pm.values[px];
        }
        auto fwd_sup = model.forward(sup_batch);
        ag::Var am = model.explanation_map_node(fwd_sup, kInfected);
        ag::Var am_up = ag::upsample_bilinear(am, S, S);
        ag::Var map_loss = map_supervision_loss_graph(am_up, sup_gt);
        map_val = ag::scalar(map_loss);
        total = ag::add(total, ag::scale(map_loss, cfg.map_loss_weight));
      }

      params.zero_grads();
      ag::backward(total);
      const auto& plist = params.all();
      for (size_t pi = 0; pi < plist.size(); ++pi) {
        ag::Node& p = *plist[pi];
        if (p.grad.size() != p.value.size()) continue;
        Tensor& vel = velocity[pi];
        const float mu = static_cast<float>(cfg.momentum);
        const float step = static_cast<float>(lr);
        for (std::int64_t j = 0; j < p.value.size(); ++j) {
          vel[j] = mu * vel[j] - step * p.grad[j];
          p.value[j] += vel[j];
        }
      }

      ep_ce += ag::scalar(ce);
      ep_map += map_val;
      ++batches;
    }

    int correct = 0;
    const int eval_batch = 64;
    for (size_t start = 0; start < items.size(); start += eval_batch) {
      size_t stop = std::min(items.size(), start + eval_batch);
      int b = static_cast<int>(stop - start);
      Tensor batch({b, 1, S, S});
      for (int i = 0; i < b; ++i) {
        const Tensor& x = eval_inputs[start + static_cast<size_t>(i)];
        std::copy(x.data(), x.data() + x.size(), batch.data() + batch.idx4(i, 0, 0, 0));
      }
      auto fwd = model.forward(batch);
      for (int i = 0; i < b; ++i) {
        bool pred = fwd.probs->value.at2(i, kInfected) > fwd.probs->value.at2(i, kUninfected);
        if (pred == items[start + static_cast<size_t>(i)].infected) ++correct;
      }
    }

    ClsEpochLog log;
    log.epoch = epoch + 1;
    log.lr = lr;
    log.ce_loss = ep_ce / batches;
    log.map_loss = ep_map / batches;
    log.loss = log.ce_loss + cfg.map_loss_weight * log.map_loss;
    log.train_accuracy = static_cast<double>(correct) / static_cast<double>(items.size());
    if (cfg.verbose)
      fmt::print(stderr, "epoch {:3d}  lr {:.4g}  loss {:.4f}  ce {:.4f}  map {:.4f}  acc {:.3f}\n",
                 log.epoch, log.lr, log.loss, log.ce_loss, log.map_loss, log.train_accuracy);
    out.log.push_back(log);
  }
  return out;
}

}  // namespace ctdx
