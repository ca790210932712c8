#include <fmt/format.h>

#include <cmath>
#include <memory>

#include "commands.hpp"

namespace ctdx::cli {

namespace {

struct Opts {
  std::string out, config_file;
  std::uint64_t seed = 7;
  int n_positive = 40, n_negative = 40, image_size = 64;
  std::string images_per_patient = "30:38";
  std::string lesions_per_image = "1:4";
  std::string lesion_extent = "5:16";
  double lesion_brightness = 0.5, noise_sd = 0.02, test_fraction = 0.25;
  std::shared_ptr<FlagMerge> merge;
};

void run(Opts& o) {
  if (!o.config_file.empty()) o.merge->merge_file(o.config_file);
  std::filesystem::path out = resolve_out_dir(o.out);
  o.out = out.string();  // echo the directory actually used
  echo_config(o.merge->resolved(), out);

  SyntheticConfig cfg;
  cfg.n_positive = o.n_positive;
  cfg.n_negative = o.n_negative;
  cfg.image_size = o.image_size;
  cfg.images_per_patient = parse_int_range(o.images_per_patient);
  cfg.lesions_per_image = parse_int_range(o.lesions_per_image);
  cfg.lesion_extent = parse_real_range(o.lesion_extent);
  cfg.lesion_brightness = o.lesion_brightness;
  cfg.noise_sd = o.noise_sd;
  cfg.validate();
  if (o.test_fraction < 0.0 || o.test_fraction >= 1.0)
    throw std::invalid_argument("--test-fraction must lie in [0, 1)");

  DatasetManifest train = generate_synthetic(cfg, Split::train, o.seed, out / "train");
  fmt::print("train: {} patients, {} images, {} annotated -> {}\n", train.patients.size(),
             train.total_images(), train.annotated_images(),
             (out / "train" / "manifest.json").string());

  if (o.test_fraction > 0.0) {
    SyntheticConfig tcfg = cfg;
    tcfg.n_positive = std::max<int>(1, static_cast<int>(std::lround(o.test_fraction * cfg.n_positive)));
    tcfg.n_negative = std::max<int>(1, static_cast<int>(std::lround(o.test_fraction * cfg.n_negative)));
    DatasetManifest test = generate_synthetic(tcfg, Split::test, o.seed, out / "test");
    check_split_disjoint(train, test);
    fmt::print("test:  {} patients, {} images, {} annotated -> {}\n", test.patients.size(),
               test.total_images(), test.annotated_images(),
               (out / "test" / "manifest.json").string());
  }
}

}  // namespace

void register_generate(CLI::App& app) {
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("generate-synthetic",
                                 "write a deterministic synthetic lesion corpus");
  sub->add_option("--out", o->out, "output directory (default: $CTDX_OUT_DIR)");
  sub->add_option("--seed", o->seed, "corpus seed");
  sub->add_option("--n-positive", o->n_positive, "positive training patients");
  sub->add_option("--n-negative", o->n_negative, "negative training patients");
  sub->add_option("--image-size", o->image_size, "square image edge, divisible by 32");
  sub->add_option("--images-per-patient", o->images_per_patient, "count range lo:hi");
  sub->add_option("--lesions-per-image", o->lesions_per_image, "count range lo:hi");
  sub->add_option("--lesion-extent", o->lesion_extent, "lesion diameter range in pixels");
  sub->add_option("--lesion-brightness", o->lesion_brightness, "peak added intensity");
  sub->add_option("--noise-sd", o->noise_sd, "additive noise level");
  sub->add_option("--test-fraction", o->test_fraction,
                  "held-out patients as a fraction of the training counts");
  sub->add_option("--config", o->config_file, "key=value file; explicit flags win");

  o->merge = std::make_shared<FlagMerge>(*sub, "generate-synthetic");
  o->merge->bind("out", "--out", o->out);
  o->merge->bind_u64("seed", "--seed", o->seed);
  o->merge->bind_int("n_positive", "--n-positive", o->n_positive);
  o->merge->bind_int("n_negative", "--n-negative", o->n_negative);
  o->merge->bind_int("image_size", "--image-size", o->image_size);
  o->merge->bind("images_per_patient", "--images-per-patient", o->images_per_patient);
  o->merge->bind("lesions_per_image", "--lesions-per-image", o->lesions_per_image);
  o->merge->bind("lesion_extent", "--lesion-extent", o->lesion_extent);
  o->merge->bind_double("lesion_brightness", "--lesion-brightness", o->lesion_brightness);
  o->merge->bind_double("noise_sd", "--noise-sd", o->noise_sd);
  o->merge->bind_double("test_fraction", "--test-fraction", o->test_fraction);
  sub->callback([o] { run(*o); });
}

}  // namespace ctdx::cli
