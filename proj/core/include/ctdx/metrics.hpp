#pragma once

#include <optional>
#include <vector>

#include "ctdx/corpus.hpp"
#include "ctdx/tensor.hpp"

namespace ctdx {

using BinaryMask = PixelMask;

// prob_map is [H,W]; pixels with value >= tau become 1. tau must be in (0,1).
BinaryMask binarize(const Tensor& prob_map, double tau = 0.5);

// Overlap scores; when both masks are empty the pair counts as a perfect
// match (1.0).
double dice_score(const BinaryMask& pred, const BinaryMask& gt);
double iou_score(const BinaryMask& pred, const BinaryMask& gt);

// Alignment between the centered prediction and centered ground truth,
// mapped through ((xi+1)^2)/4 and averaged. A constant ground truth falls
// back to 1 - mean absolute error.
double e_measure(const BinaryMask& pred, const BinaryMask& gt);

struct ClassTally {
  int tp = 0, fp = 0, tn = 0, fn = 0;
};

struct SensSpec {
  std::optional<double> sensitivity;  // empty when no actual positives
  std::optional<double> specificity;  // empty when no actual negatives
  ClassTally tally;
};

SensSpec sensitivity_specificity(const std::vector<bool>& predicted,
                                 const std::vector<bool>& actual);

struct SweepRow {
  int threshold = 0;
  SensSpec result;
};

// Patient-level decision sweep: patient i is declared positive at threshold t
// when infected_counts[i] >= t.
std::vector<SweepRow> threshold_sweep(const std::vector<int>& infected_counts,
                                      const std::vector<bool>& actual_positive,
                                      const std::vector<int>& thresholds = {15, 20, 25, 30});

}  // namespace ctdx
