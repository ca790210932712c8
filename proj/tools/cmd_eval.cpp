#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <memory>
#include <nlohmann/json.hpp>

#include "commands.hpp"
#include "ctdx/checkpoint.hpp"
#include "ctdx/image.hpp"
#include "ctdx/metrics.hpp"

namespace ctdx::cli {

namespace {

struct Opts {
  std::string manifest, cls_ckpt, seg_ckpt, out, config_file;
  int threshold = 25;
  double tau = 0.5;
  std::shared_ptr<FlagMerge> merge;
};

std::string opt_str(const std::optional<double>& v) {
  return v ? fmt::format("{:.4f}", *v) : std::string("n/a");
}

void run(Opts& o) {
  if (!o.config_file.empty()) o.merge->merge_file(o.config_file);
  if (o.manifest.empty()) throw CLI::RequiredError("--manifest");
  if (o.cls_ckpt.empty()) throw CLI::RequiredError("--cls");
  if (o.seg_ckpt.empty()) throw CLI::RequiredError("--seg");
  std::filesystem::path out = resolve_out_dir(o.out);
  o.out = out.string();
  echo_config(o.merge->resolved(), out);

  DatasetManifest data = load_manifest(o.manifest);
  ClassifierModel cls = load_classifier_checkpoint(o.cls_ckpt);
  SegmenterModel seg = load_segmenter_checkpoint(o.seg_ckpt);
  const bool fused = seg.config().classifier_fusion;
  const int s = cls.config().input_size;

  std::vector<int> counts;
  std::vector<bool> actual;
  double dice_sum = 0, iou_sum = 0, e_sum = 0;
  int annotated = 0;

  for (const auto& patient : data.patients) {
    int infected = 0;
    for (const auto& ref : patient.images) {
      CTImage img = load_image(data, ref);
      CTImage sized = img;
      if (img.h != s || img.w != s)
        sized = CTImage{s, s, bilinear_resize(img.pixels, img.h, img.w, s, s)};
      if (cls.classify_image(sized).infected()) ++infected;

      std::optional<PixelMask> gt = load_mask(data, ref);
      if (!gt) continue;
      Tensor prob = fused ? seg.segment(img, cls) : seg.segment(img);
      BinaryMask pred = binarize(prob, o.tau);
      dice_sum += dice_score(pred, *gt);
      iou_sum += iou_score(pred, *gt);
      e_sum += e_measure(pred, *gt);
      ++annotated;
    }
    counts.push_back(infected);
    actual.push_back(patient.label == PatientLabel::positive);
  }

  if (annotated == 0) throw std::runtime_error("manifest has no annotated images to score");
  double dice = dice_sum / annotated, iou = iou_sum / annotated, e_phi = e_sum / annotated;

  std::vector<int> thresholds{15, 20, 25, 30};
  if (std::find(thresholds.begin(), thresholds.end(), o.threshold) == thresholds.end()) {
    thresholds.push_back(o.threshold);
    std::sort(thresholds.begin(), thresholds.end());
  }
  std::vector<SweepRow> sweep = threshold_sweep(counts, actual, thresholds);

  fmt::print("segmentation over {} annotated images (tau {:.2f}): dice {:.4f}  iou {:.4f}  "
             "e_phi {:.4f}\n",
             annotated, o.tau, dice, iou, e_phi);
  fmt::print("patient decisions over {} patients:\n", data.patients.size());
  fmt::print("  {:>9}  {:>11}  {:>11}  {:>6}  {:>6}  {:>6}\n", "threshold", "sensitivity",
             "specificity", "dice", "iou", "e_phi");
  for (const auto& row : sweep)
    fmt::print("  {:>9}  {:>11}  {:>11}  {:.4f}  {:.4f}  {:.4f}{}\n", row.threshold,
               opt_str(row.result.sensitivity), opt_str(row.result.specificity), dice, iou, e_phi,
               row.threshold == o.threshold ? "  *" : "");

  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : sweep) {
    nlohmann::json jr{{"threshold", row.threshold},
                      {"tp", row.result.tally.tp},
                      {"fp", row.result.tally.fp},
                      {"tn", row.result.tally.tn},
                      {"fn", row.result.tally.fn}};
    if (row.result.sensitivity) jr["sensitivity"] = *row.result.sensitivity;
    if (row.result.specificity) jr["specificity"] = *row.result.specificity;
    rows.push_back(std::move(jr));
  }
  nlohmann::json j{{"annotated_images", annotated}, {"tau", o.tau},     {"dice", dice},
                   {"iou", iou},                    {"e_phi", e_phi},   {"threshold", o.threshold},
                   {"patients", data.patients.size()},                  {"sweep", rows}};
  std::ofstream f(out / "eval.json", std::ios::binary);
  f << j.dump(2) << "\n";
  fmt::print("wrote {}\n", (out / "eval.json").string());
}

}  // namespace

void register_eval(CLI::App& app) {
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("eval", "score a trained pipeline against a manifest");
  sub->add_option("--manifest", o->manifest, "evaluation manifest JSON");
  sub->add_option("--cls", o->cls_ckpt, "classifier checkpoint");
  sub->add_option("--seg", o->seg_ckpt, "segmenter checkpoint");
  sub->add_option("--threshold", o->threshold, "patient decision threshold (infected images)");
  sub->add_option("--tau", o->tau, "mask binarization threshold");
  sub->add_option("--out", o->out, "output directory (default: $CTDX_OUT_DIR)");
  sub->add_option("--config", o->config_file, "key=value file; explicit flags win");

  o->merge = std::make_shared<FlagMerge>(*sub, "eval");
  o->merge->bind("manifest", "--manifest", o->manifest);
  o->merge->bind("cls", "--cls", o->cls_ckpt);
  o->merge->bind("seg", "--seg", o->seg_ckpt);
  o->merge->bind_int("threshold", "--threshold", o->threshold);
  o->merge->bind_double("tau", "--tau", o->tau);
  o->merge->bind("out", "--out", o->out);
  sub->callback([o] { run(*o); });
}

}  // namespace ctdx::cli
