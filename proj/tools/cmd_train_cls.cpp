#include <fmt/format.h>

#include <fstream>
#include <memory>

#include "commands.hpp"
#include "ctdx/checkpoint.hpp"
#include "ctdx/classifier.hpp"

namespace ctdx::cli {

namespace {

struct Opts {
  std::string manifest, out, config_file;
  int epochs = 100, batch = 32, input_size = 224, base_channels = 16;
  double lr = 0.1, momentum = 0.9, mixup_alpha = 0.5, seg_loss_weight = 1.0;
  int lr_step_epochs = 30;
  bool no_mixup = false, no_augment = false;
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

  TrainClsConfig cfg;
  cfg.model.input_size = o.input_size;
  cfg.model.base_channels = o.base_channels;
  cfg.epochs = o.epochs;
  cfg.batch_size = o.batch;
  cfg.lr = o.lr;
  cfg.momentum = o.momentum;
  cfg.lr_step_epochs = o.lr_step_epochs;
  cfg.mixup = !o.no_mixup;
  cfg.mixup_alpha = o.mixup_alpha;
  cfg.map_loss_weight = o.seg_loss_weight;
  cfg.augment = !o.no_augment;
  cfg.verbose = true;
  cfg.seed = o.seed;

  TrainedClassifier trained = train_classifier(data, cfg);

  std::filesystem::path ckpt = out / "cls.ckpt";
  save_checkpoint(trained.model, ckpt);

  std::ofstream log(out / "train-log.txt");
  log << "epoch lr loss ce_loss map_loss train_accuracy\n";
  for (const auto& e : trained.log)
    log << fmt::format("{} {} {} {} {} {}\n", e.epoch, e.lr, e.loss, e.ce_loss, e.map_loss,
                       e.train_accuracy);

  fmt::print("trained {} epochs on {} images; final train accuracy {:.3f}\n", cfg.epochs,
             data.total_images(), trained.log.back().train_accuracy);
  fmt::print("checkpoint: {}\n", ckpt.string());
}

}  // namespace

void register_train_cls(CLI::App& app) {
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("train-cls", "train the classification branch");
  sub->add_option("--manifest", o->manifest, "training manifest JSON");
  sub->add_option("--epochs", o->epochs, "training epochs");
  sub->add_option("--batch", o->batch, "batch size");
  sub->add_option("--lr", o->lr, "initial learning rate");
  sub->add_option("--momentum", o->momentum, "SGD momentum");
  sub->add_option("--lr-step-epochs", o->lr_step_epochs, "epochs between tenfold lr drops");
  sub->add_option("--mixup-alpha", o->mixup_alpha, "mixing concentration");
  sub->add_flag("--no-mixup", o->no_mixup, "disable sample mixing");
  sub->add_option("--seg-loss-weight", o->seg_loss_weight,
                  "weight of the pixel supervision on the activation map");
  sub->add_flag("--no-augment", o->no_augment, "disable flip/crop augmentation");
  sub->add_option("--input-size", o->input_size, "network input edge, divisible by 32");
  sub->add_option("--base-channels", o->base_channels, "first-stage width");
  sub->add_option("--seed", o->seed, "training seed");
  sub->add_option("--out", o->out, "output directory (default: $CTDX_OUT_DIR)");
  sub->add_option("--config", o->config_file, "key=value file; explicit flags win");

  o->merge = std::make_shared<FlagMerge>(*sub, "train-cls");
  o->merge->bind("manifest", "--manifest", o->manifest);
  o->merge->bind_int("epochs", "--epochs", o->epochs);
  o->merge->bind_int("batch", "--batch", o->batch);
  o->merge->bind_double("lr", "--lr", o->lr);
  o->merge->bind_double("momentum", "--momentum", o->momentum);
  o->merge->bind_int("lr_step_epochs", "--lr-step-epochs", o->lr_step_epochs);
  o->merge->bind_double("mixup_alpha", "--mixup-alpha", o->mixup_alpha);
  o->merge->bind_bool("no_mixup", "--no-mixup", o->no_mixup);
  o->merge->bind_double("seg_loss_weight", "--seg-loss-weight", o->seg_loss_weight);
  o->merge->bind_bool("no_augment", "--no-augment", o->no_augment);
  o->merge->bind_int("input_size", "--input-size", o->input_size);
  o->merge->bind_int("base_channels", "--base-channels", o->base_channels);
  o->merge->bind_u64("seed", "--seed", o->seed);
  o->merge->bind("out", "--out", o->out);
  sub->callback([o] { run(*o); });
}

}  // namespace ctdx::cli
