#include <fmt/format.h>

#include <memory>

#include "commands.hpp"
#include "ctdx/checkpoint.hpp"
#include "ctdx/diagnose.hpp"
#include "ctdx/image.hpp"

namespace ctdx::cli {

namespace {

struct Opts {
  std::string manifest, cls_ckpt, out, config_file, patient;
  std::shared_ptr<FlagMerge> merge;
};

void run(Opts& o) {
  if (!o.config_file.empty()) o.merge->merge_file(o.config_file);
  if (o.manifest.empty()) throw CLI::RequiredError("--manifest");
  if (o.cls_ckpt.empty()) throw CLI::RequiredError("--cls");
  std::filesystem::path out = resolve_out_dir(o.out);
  o.out = out.string();
  echo_config(o.merge->resolved(), out);

  DatasetManifest data = load_manifest(o.manifest);
  ClassifierModel cls = load_classifier_checkpoint(o.cls_ckpt);
  const int s = cls.config().input_size;

  if (!o.patient.empty() && !data.find_patient(o.patient))
    throw std::runtime_error("patient not in manifest: " + o.patient);

  int written = 0;
  for (const auto& patient : data.patients) {
    if (!o.patient.empty() && patient.id != o.patient) continue;
    std::filesystem::create_directories(out / patient.id);
    for (size_t i = 0; i < patient.images.size(); ++i) {
      CTImage img = load_image(data, patient.images[i]);
      CTImage sized = img;
      if (img.h != s || img.w != s)
        sized = CTImage{s, s, bilinear_resize(img.pixels, img.h, img.w, s, s)};
      ActivationMap am = cls.activation_map(sized, kInfected);
      render_overlay(img, am, out / patient.id / fmt::format("am_{:03d}.png", i));
      ++written;
    }
  }
  fmt::print("wrote {} activation-map overlays under {}\n", written, out.string());
}

}  // namespace

void register_explain(CLI::App& app) {
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("explain", "write activation-map overlays for a manifest");
  sub->add_option("--manifest", o->manifest, "manifest JSON");
  sub->add_option("--cls", o->cls_ckpt, "classifier checkpoint");
  sub->add_option("--patient", o->patient, "restrict to one patient id");
  sub->add_option("--out", o->out, "output directory (default: $CTDX_OUT_DIR)");
  sub->add_option("--config", o->config_file, "key=value file; explicit flags win");

  o->merge = std::make_shared<FlagMerge>(*sub, "explain");
  o->merge->bind("manifest", "--manifest", o->manifest);
  o->merge->bind("cls", "--cls", o->cls_ckpt);
  o->merge->bind("patient", "--patient", o->patient);
  o->merge->bind("out", "--out", o->out);
  sub->callback([o] { run(*o); });
}

}  // namespace ctdx::cli
