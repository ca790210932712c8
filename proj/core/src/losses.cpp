#include "ctdx/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace ctdx {

namespace {

double clamp_prob(double p) { return std::min(1.0 - kProbEps, std::max(kProbEps, p)); }

}  // namespace

double classification_loss(const std::array<double, 2>& probs,
                           const std::array<double, 2>& soft_label) {
  double l = 0.0;
  for (int c = 0; c < 2; ++c) l -= soft_label[c] * std::log(clamp_prob(probs[c]));
  return l;
}

ag::Var classification_loss_graph(const ag::Var& probs, const Tensor& soft_labels) {
  if (!probs->value.same_shape(soft_labels))
    throw std::invalid_argument("classification loss: label shape mismatch");
  const int n = probs->value.dim(0);
  ag::Var lp = ag::logv(ag::clamp(probs, kProbEps, 1.0 - kProbEps));
  ag::Var weighted = ag::hadamard(lp, ag::constant(soft_labels));
  return ag::scale(ag::sum(weighted), -1.0 / static_cast<double>(n));
}

double sample_lambda(double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw std::invalid_argument("sample_lambda: alpha must be positive");
  return rng.beta(alpha, alpha);
}

MixedSample mix_samples(const Tensor& xi, const std::array<double, 2>& yi, const Tensor& xj,
                        const std::array<double, 2>& yj, double lambda) {
  if (!xi.same_shape(xj)) throw std::invalid_argument("mix_samples: image shape mismatch");
  if (lambda < 0.0 || lambda > 1.0)
    throw std::invalid_argument("mix_samples: lambda out of [0,1]");
  MixedSample m;
  m.lambda = lambda;
  const float lam = static_cast<float>(lambda);
  const float inv = 1.0f - lam;
  Tensor mixed(xi.shape());
  for (std::int64_t i = 0; i < xi.size(); ++i) mixed[i] = lam * xi[i] + inv * xj[i];
  m.image = std::move(mixed);
  for (int c = 0; c < 2; ++c) m.soft_label[c] = lambda * yi[c] + (1.0 - lambda) * yj[c];
  return m;
}

ag::Var map_supervision_loss_graph(const ag::Var& am, const Tensor& masks) {
  if (!am->value.same_shape(masks))
    throw std::invalid_argument("map supervision: mask shape mismatch");
  const auto& s = am->value.shape();
  if (s.size() != 4 || s[1] != 1)
    throw std::invalid_argument("map supervision: expects [N,1,H,W]");
  const int n = s[0];
  const double hw = static_cast<double>(s[2]) * s[3];
  ag::Var diff = ag::sub(am, ag::constant(masks));
  ag::Var sq = ag::hadamard(diff, diff);
  ag::Var total;
  for (int i = 0; i < n; ++i) {
    ag::Var norm = ag::sqrtv(ag::sum(ag::slice_batch(sq, i, i + 1)));
    total = i == 0 ? norm : ag::add(total, norm);
  }
  return ag::scale(total, 1.0 / (hw * n));
}

double map_supervision_loss(const std::vector<float>& am, const PixelMask& mask) {
  if (am.size() != mask.values.size())
    throw std::invalid_argument("map supervision: size mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < am.size(); ++i) {
    double d = static_cast<double>(am[i]) - mask.values[i];
    acc += d * d;
  }
  return std::sqrt(acc) / (static_cast<double>(mask.h) * mask.w);
}

namespace {

ag::Var per_sample_seg_loss(const ag::Var& p, const Tensor& g, bool factor_2) {
  const double hw = static_cast<double>(p->value.dim(2)) * p->value.dim(3);
  ag::Var pc = ag::clamp(p, kProbEps, 1.0 - kProbEps);
  ag::Var gv = ag::constant(g);
  Tensor ones_minus_g(g.shape());
  for (std::int64_t i = 0; i < g.size(); ++i) ones_minus_g[i] = 1.0f - g[i];
  ag::Var pos = ag::hadamard(ag::logv(pc), gv);
  ag::Var one_minus_pc = ag::add_const(ag::scale(pc, -1.0), 1.0);
  ag::Var neg = ag::hadamard(ag::logv(one_minus_pc), ag::constant(ones_minus_g));
  ag::Var bce = ag::scale(ag::add(ag::sum(pos), ag::sum(neg)), -1.0 / hw);

  ag::Var inter = ag::sum(ag::hadamard(p, gv));
  if (factor_2) inter = ag::scale(inter, 2.0);
  Tensor gsum({1});
  gsum[0] = static_cast<float>(g.sum());
  ag::Var denom = ag::add(ag::sum(p), ag::constant(gsum));
  ag::Var frac = ag::divide(inter, denom);
  return ag::add(bce, ag::add_const(ag::scale(frac, -1.0), 1.0));
}

}  // namespace

ag::Var segmentation_loss_graph(const ag::Var& probs, const Tensor& gt, bool factor_2) {
  if (!probs->value.same_shape(gt))
    throw std::invalid_argument("segmentation loss: ground-truth shape mismatch");
  const auto& s = probs->value.shape();
  if (s.size() != 4 || s[1] != 1)
    throw std::invalid_argument("segmentation loss: expects [N,1,H,W]");
  const int n = s[0];
  ag::Var total;
  for (int i = 0; i < n; ++i) {
    Tensor gi({1, 1, s[2], s[3]});
    std::copy(gt.data() + gt.idx4(i, 0, 0, 0), gt.data() + gt.idx4(i, 0, 0, 0) + gi.size(),
              gi.data());
    ag::Var li = per_sample_seg_loss(ag::slice_batch(probs, i, i + 1), gi, factor_2);
    total = i == 0 ? li : ag::add(total, li);
  }
  return ag::scale(total, 1.0 / n);
}

double segmentation_loss(const std::vector<float>& probs, const PixelMask& gt, bool factor_2) {
  if (probs.size() != gt.values.size())
    throw std::invalid_argument("segmentation loss: size mismatch");
  double bce = 0.0, inter = 0.0, psum = 0.0, gsum = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    double p = clamp_prob(probs[i]);
    double g = gt.values[i];
    bce -= g * std::log(p) + (1.0 - g) * std::log(1.0 - p);
    inter += static_cast<double>(probs[i]) * g;
    psum += probs[i];
    gsum += g;
  }
  bce /= static_cast<double>(probs.size());
  double denom = psum + gsum;
  double frac = denom > 0.0 ? (factor_2 ? 2.0 : 1.0) * inter / denom : 0.0;
  return bce + 1.0 - frac;
}

ag::Var deep_supervision_loss_graph(const std::array<ag::Var, 5>& side_probs, const Tensor& gt,
                                    bool factor_2) {
  ag::Var total;
  for (int i = 0; i < 5; ++i) {
    ag::Var li = segmentation_loss_graph(side_probs[static_cast<size_t>(i)], gt, factor_2);
    total = i == 0 ? li : ag::add(total, li);
  }
  return ag::scale(total, 1.0 / 5.0);
}

double poly_lr(double base_lr, int iter, int max_iter, double power) {
  if (max_iter < 1) throw std::invalid_argument("poly_lr: max_iter must be positive");
  if (iter < 0 || iter > max_iter) throw std::invalid_argument("poly_lr: iter out of range");
  return base_lr * std::pow(1.0 - static_cast<double>(iter) / max_iter, power);
}

}  // namespace ctdx
