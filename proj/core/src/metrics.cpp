#include "ctdx/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace ctdx {

BinaryMask binarize(const Tensor& prob_map, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("binarize: tau must be in (0,1)");
  if (prob_map.ndim() != 2) throw std::invalid_argument("binarize: expects an [H,W] map");
  BinaryMask m;
  m.h = prob_map.dim(0);
  m.w = prob_map.dim(1);
  m.values.resize(static_cast<size_t>(prob_map.size()));
  const float t = static_cast<float>(tau);
  for (std::int64_t i = 0; i < prob_map.size(); ++i) m.values[static_cast<size_t>(i)] = prob_map[i] >= t ? 1 : 0;
  return m;
}

namespace {

void check_pair(const BinaryMask& a, const BinaryMask& b, const char* what) {
  if (a.h != b.h || a.w != b.w || a.values.size() != b.values.size())
    throw std::invalid_argument(std::string(what) + ": mask sizes differ");
  if (a.values.empty()) throw std::invalid_argument(std::string(what) + ": empty masks");
}

}  // namespace

double dice_score(const BinaryMask& pred, const BinaryMask& gt) {
  check_pair(pred, gt, "dice");
  long inter = 0, pa = 0, ga = 0;
  for (size_t i = 0; i < pred.values.size(); ++i) {
    bool p = pred.values[i] != 0, g = gt.values[i] != 0;
    inter += p && g;
    pa += p;
    ga += g;
  }
  if (pa + ga == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(pa + ga);
}

double iou_score(const BinaryMask& pred, const BinaryMask& gt) {
  check_pair(pred, gt, "iou");
  long inter = 0, uni = 0;
  for (size_t i = 0; i < pred.values.size(); ++i) {
    bool p = pred.values[i] != 0, g = gt.values[i] != 0;
    inter += p && g;
    uni += p || g;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double e_measure(const BinaryMask& pred, const BinaryMask& gt) {
  check_pair(pred, gt, "e_measure");
  const double n = static_cast<double>(gt.values.size());
  double mean_g = 0.0, mean_p = 0.0;
  for (size_t i = 0; i < gt.values.size(); ++i) {
    mean_g += gt.values[i] != 0;
    mean_p += pred.values[i] != 0;
  }
  mean_g /= n;
  mean_p /= n;
  if (mean_g == 0.0 || mean_g == 1.0) {
    // Degenerate ground truth: centered maps carry no contrast, fall back to
    // plain agreement.
    double err = 0.0;
    for (size_t i = 0; i < gt.values.size(); ++i)
      err += std::abs(static_cast<double>(pred.values[i] != 0) - (gt.values[i] != 0));
    return 1.0 - err / n;
  }
  double acc = 0.0;
  for (size_t i = 0; i < gt.values.size(); ++i) {
    double fg = (gt.values[i] != 0) - mean_g;
    double fp = (pred.values[i] != 0) - mean_p;
    double denom = fg * fg + fp * fp;
    double xi = denom > 0.0 ? 2.0 * fg * fp / denom : 0.0;
    double enhanced = (xi + 1.0) * (xi + 1.0) / 4.0;
    acc += enhanced;
  }
  return acc / n;
}

SensSpec sensitivity_specificity(const std::vector<bool>& predicted,
                                 const std::vector<bool>& actual) {
  if (predicted.size() != actual.size())
    throw std::invalid_argument("sensitivity_specificity: size mismatch");
  SensSpec r;
  for (size_t i = 0; i < predicted.size(); ++i) {
    if (actual[i])
      predicted[i] ? ++r.tally.tp : ++r.tally.fn;
    else
      predicted[i] ? ++r.tally.fp : ++r.tally.tn;
  }
  int pos = r.tally.tp + r.tally.fn;
  int neg = r.tally.tn + r.tally.fp;
  if (pos > 0) r.sensitivity = static_cast<double>(r.tally.tp) / pos;
  if (neg > 0) r.specificity = static_cast<double>(r.tally.tn) / neg;
  return r;
}

std::vector<SweepRow> threshold_sweep(const std::vector<int>& infected_counts,
                                      const std::vector<bool>& actual_positive,
                                      const std::vector<int>& thresholds) {
  if (infected_counts.size() != actual_positive.size())
    throw std::invalid_argument("threshold_sweep: size mismatch");
  for (int c : infected_counts)
    if (c < 0) throw std::invalid_argument("threshold_sweep: negative count");
  std::vector<SweepRow> rows;
  for (int t : thresholds) {
    if (t < 1) throw std::invalid_argument("threshold_sweep: thresholds must be >= 1");
    std::vector<bool> decisions(infected_counts.size());
    for (size_t i = 0; i < infected_counts.size(); ++i) decisions[i] = infected_counts[i] >= t;
    rows.push_back({t, sensitivity_specificity(decisions, actual_positive)});
  }
  return rows;
}

}  // namespace ctdx
