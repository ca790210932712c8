#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ctdx/rng.hpp"

namespace ctdx {

enum class Split { train, test };
enum class PatientLabel { negative, positive };

const char* to_string(Split s);
const char* to_string(PatientLabel l);
Split split_from_string(const std::string& s);
PatientLabel label_from_string(const std::string& s);

struct ImageRef {
  std::string image_path;                 // relative to manifest directory
  std::optional<std::string> mask_path;   // never set for negative patients
};

struct PatientRecord {
  std::string id;
  PatientLabel label = PatientLabel::negative;
  std::vector<ImageRef> images;
};

struct DatasetManifest {
  Split split = Split::train;
  std::uint64_t seed = 0;
  std::vector<PatientRecord> patients;
  std::filesystem::path root;  // directory the manifest was loaded from / written to

  int total_images() const;
  int annotated_images() const;
  const PatientRecord* find_patient(const std::string& id) const;
};

DatasetManifest load_manifest(const std::filesystem::path& file);
void save_manifest(const DatasetManifest& m, const std::filesystem::path& file);
// Both splits must come from disjoint patient sets.
void check_split_disjoint(const DatasetManifest& a, const DatasetManifest& b);

struct CTImage {
  int h = 0, w = 0;
  std::vector<float> pixels;  // row-major, values in [0,1]
};

struct PixelMask {
  int h = 0, w = 0;
  std::vector<std::uint8_t> values;  // 0 background, 1 lesion
};

CTImage load_image(const DatasetManifest& m, const ImageRef& ref);
std::optional<PixelMask> load_mask(const DatasetManifest& m, const ImageRef& ref);

struct IntRange {
  int lo = 0, hi = 0;
};
struct RealRange {
  double lo = 0.0, hi = 0.0;
};

struct SyntheticConfig {
  int n_positive = 8;
  int n_negative = 8;
  IntRange images_per_patient{30, 38};
  int image_size = 64;                  // square, must be divisible by 32
  IntRange lesions_per_image{1, 4};
  RealRange lesion_extent{5.0, 16.0};   // lesion diameter range in pixels
  double lesion_brightness = 0.5;
  double noise_sd = 0.02;

  void validate() const;
};

// Writes PNGs plus a manifest under out_dir and returns the loaded-form
// manifest. Same config and seed give byte-identical files.
DatasetManifest generate_synthetic(const SyntheticConfig& cfg, Split split, std::uint64_t seed,
                                   const std::filesystem::path& out_dir);

struct AugmentConfig {
  double flip_prob = 0.5;
  double min_crop_frac = 0.8;  // per-axis lower bound on kept extent
  int out_h = 0, out_w = 0;    // 0 keeps the input size
};

struct Augmented {
  CTImage image;
  std::optional<PixelMask> mask;
  bool flipped = false;
  int crop_y0 = 0, crop_x0 = 0, crop_h = 0, crop_w = 0;
};

// Random horizontal flip + random crop, resized back to the training size.
// The mask, when present, goes through the same geometry (nearest-neighbor).
Augmented augment_sample(const CTImage& img, const std::optional<PixelMask>& mask,
                         const AugmentConfig& cfg, Rng& rng);

}  // namespace ctdx
