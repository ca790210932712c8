#include <fmt/format.h>

#include <memory>

#include "commands.hpp"
#include "ctdx/checkpoint.hpp"
#include "ctdx/diagnose.hpp"

namespace ctdx::cli {

namespace {

struct Opts {
  std::string manifest, cls_ckpt, seg_ckpt, out, config_file;
  int threshold = 25;
  double tau = 0.5;
  std::shared_ptr<FlagMerge> merge;
};

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

  DiagnoseOptions opt;
  opt.threshold = o.threshold;
  opt.binarize_tau = o.tau;
  opt.out_dir = out;

  for (const auto& patient : data.patients) {
    DiagnosisReport report = joint_diagnose(data, patient, cls, seg, opt);
    write_report(report, out);
    fmt::print("{}: {}  {}/{} images infected  cls {:.2f}s  seg {:.2f}s  total {:.2f}s\n",
               report.patient_id, report.positive ? "POSITIVE" : "negative",
               report.infected_count, report.images.size(), report.wall_clock.classification_s,
               report.wall_clock.segmentation_s, report.wall_clock.total_s);
  }
  fmt::print("reports under {}\n", out.string());
}

}  // namespace

void register_infer(CLI::App& app) {
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("infer", "diagnose every patient in a manifest");
  sub->add_option("--manifest", o->manifest, "manifest JSON");
  sub->add_option("--cls", o->cls_ckpt, "classifier checkpoint");
  sub->add_option("--seg", o->seg_ckpt, "segmenter checkpoint");
  sub->add_option("--threshold", o->threshold, "patient decision threshold (infected images)");
  sub->add_option("--tau", o->tau, "mask binarization threshold");
  sub->add_option("--out", o->out, "output directory (default: $CTDX_OUT_DIR)");
  sub->add_option("--config", o->config_file, "key=value file; explicit flags win");

  o->merge = std::make_shared<FlagMerge>(*sub, "infer");
  o->merge->bind("manifest", "--manifest", o->manifest);
  o->merge->bind("cls", "--cls", o->cls_ckpt);
  o->merge->bind("seg", "--seg", o->seg_ckpt);
  o->merge->bind_int("threshold", "--threshold", o->threshold);
  o->merge->bind_double("tau", "--tau", o->tau);
  o->merge->bind("out", "--out", o->out);
  sub->callback([o] { run(*o); });
}

}  // namespace ctdx::cli
