#include <fmt/format.h>

#include <fstream>
#include <memory>
#include <optional>

#include "commands.hpp"
#include "ctdx/checkpoint.hpp"
#include "ctdx/segmenter.hpp"

namespace ctdx::cli {

namespace {

struct Opts {
  std::string manifest, out, config_file, with_classifier;
  int iters = 21000, batch = 4;
  double lr = 2.5e-5, width_mult = 0.25, poly_power = 0.9;
  bool dice_factor_2 = false, no_augment = false;
  std::uint64_t seed = 0;
  std::shared_ptr<FlagMerge> merge;
};

void run(Opts& o) {
  if (!o.config_file.empty()) o.merge->merge_file(o.config_file);
  if (o.manifest.empty()) throw CLI::RequiredError("--manifest");
  std::filesystem::path out = resolve_out_dir(o.out);
  o.out = out.string();
  echo_config(o.merge->resolved(), out);

  DatasetManifest data = load_manifest(o.manifest);

  std::optional<ClassifierModel> cls;
  TrainSegConfig cfg;
  cfg.model.width_mult = o.width_mult;
  cfg.model.dice_factor_2 = o.dice_factor_2;
  if (!o.with_classifier.empty()) {
    cls.emplace(load_classifier_checkpoint(o.with_classifier));
    cfg.model.classifier_fusion = true;
    cfg.model.fusion_channels = cls->config().stage_widths();
  }
  cfg.iterations = o.iters;
  cfg.batch_size = o.batch;
  cfg.lr = o.lr;
  cfg.poly_power = o.poly_power;
  cfg.augment = !o.no_augment;
  cfg.verbose = true;
  cfg.seed = o.seed;

  TrainedSegmenter trained = train_segmenter(data, cfg, cls ? &*cls : nullptr);

  std::filesystem::path ckpt = out / "seg.ckpt";
  save_checkpoint(trained.model, ckpt);

  std::ofstream log(out / "train-log.txt");
  log << "iter lr loss\n";
  for (const auto& e : trained.log) log << fmt::format("{} {} {}\n", e.iter, e.lr, e.loss);

  fmt::print("trained {} iterations on {} annotated images{}\n", cfg.iterations,
             data.annotated_images(), cls ? " with classifier feature fusion" : "");
  fmt::print("checkpoint: {}\n", ckpt.string());
}

}  // namespace

void register_train_seg(CLI::App& app) {
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("train-seg", "train the lesion segmentation branch");
  sub->add_option("--manifest", o->manifest, "training manifest JSON");
  sub->add_option("--iters", o->iters, "training iterations");
  sub->add_option("--batch", o->batch, "batch size");
  sub->add_option("--lr", o->lr, "base learning rate (polynomial decay)");
  sub->add_option("--poly-power", o->poly_power, "learning-rate decay exponent");
  sub->add_option("--width-mult", o->width_mult, "encoder width multiplier");
  sub->add_option("--with-classifier", o->with_classifier,
                  "classifier checkpoint whose features are fused in");
  sub->add_flag("--dice-factor-2", o->dice_factor_2, "double the overlap numerator in the loss");
  sub->add_flag("--no-augment", o->no_augment, "disable flip/crop augmentation");
  sub->add_option("--seed", o->seed, "training seed");
  sub->add_option("--out", o->out, "output directory (default: $CTDX_OUT_DIR)");
  sub->add_option("--config", o->config_file, "key=value file; explicit flags win");

  o->merge = std::make_shared<FlagMerge>(*sub, "train-seg");
  o->merge->bind("manifest", "--manifest", o->manifest);
  o->merge->bind_int("iters", "--iters", o->iters);
  o->merge->bind_int("batch", "--batch", o->batch);
  o->merge->bind_double("lr", "--lr", o->lr);
  o->merge->bind_double("poly_power", "--poly-power", o->poly_power);
  o->merge->bind_double("width_mult", "--width-mult", o->width_mult);
  o->merge->bind("with_classifier", "--with-classifier", o->with_classifier);
  o->merge->bind_bool("dice_factor_2", "--dice-factor-2", o->dice_factor_2);
  o->merge->bind_bool("no_augment", "--no-augment", o->no_augment);
  o->merge->bind_u64("seed", "--seed", o->seed);
  o->merge->bind("out", "--out", o->out);
  sub->callback([o] { run(*o); });
}

}  // namespace ctdx::cli
