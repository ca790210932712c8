#pragma once

#include <array>

#include "ctdx/autograd.hpp"
#include "ctdx/corpus.hpp"
#include "ctdx/rng.hpp"

namespace ctdx {

// Probabilities are clamped to [kProbEps, 1-kProbEps] before any log.
constexpr double kProbEps = 1e-7;

// Two-way cross entropy against a soft label; per-sample scalar form.
double classification_loss(const std::array<double, 2>& probs,
                           const std::array<double, 2>& soft_label);
// Batch-mean graph form; probs [N,2], soft_labels [N,2].
ag::Var classification_loss_graph(const ag::Var& probs, const Tensor& soft_labels);

// Mixing coefficient for label smoothing by convex image pairs.
double sample_lambda(double alpha, Rng& rng);

struct MixedSample {
  Tensor image;
  std::array<double, 2> soft_label{};
  double lambda = 1.0;
};
MixedSample mix_samples(const Tensor& xi, const std::array<double, 2>& yi, const Tensor& xj,
                        const std::array<double, 2>& yj, double lambda);

// Map supervision: mean over samples of ||A - S||_2 / (H*W), where A is the
// normalized activation map upsampled to the mask size. am and masks are
// [N,1,H,W].
ag::Var map_supervision_loss_graph(const ag::Var& am, const Tensor& masks);
double map_supervision_loss(const std::vector<float>& am, const PixelMask& mask);

// Per-pixel binary cross entropy plus a soft overlap penalty:
//   bce(P,G) + 1 - <P,G> / (|P|_1 + |G|_1)
// With factor_2 the overlap numerator is doubled. probs and gt are [N,1,H,W];
// the result is the mean of per-sample losses.
ag::Var segmentation_loss_graph(const ag::Var& probs, const Tensor& gt, bool factor_2);
double segmentation_loss(const std::vector<float>& probs, const PixelMask& gt,
                         bool factor_2 = false);

// Mean of the five side-output losses.
ag::Var deep_supervision_loss_graph(const std::array<ag::Var, 5>& side_probs, const Tensor& gt,
                                    bool factor_2);

// Polynomial learning-rate decay; reaches exactly 0 at iter == max_iter.
double poly_lr(double base_lr, int iter, int max_iter, double power);

}  // namespace ctdx
