#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ctdx/classifier.hpp"
#include "ctdx/metrics.hpp"
#include "ctdx/segmenter.hpp"

namespace ctdx {

struct BoundingBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // inclusive pixel bounds
  int width() const { return x1 - x0 + 1; }
  int height() const { return y1 - y0 + 1; }
};

struct LesionStats {
  int count = 0;
  std::int64_t total_area = 0;      // lesion pixels over the whole mask
  std::vector<BoundingBox> boxes;   // one per component, scan order
};

// 8-connected component statistics of a binary mask.
LesionStats lesion_stats(const BinaryMask& mask);

struct ImageFinding {
  std::string image_path;  // as listed in the manifest
  ClassProbabilities probs;
  bool infected = false;
  std::string activation_map_path;       // overlay artifact, relative to the report root
  std::optional<std::string> mask_path;  // present only for positive patients
  std::optional<LesionStats> lesions;    // likewise
};

struct StageTimes {
  double classification_s = 0.0;
  double segmentation_s = 0.0;  // 0 when the segmenter never ran
  double total_s = 0.0;
};

struct DiagnosisReport {
  std::string patient_id;
  std::vector<ImageFinding> images;
  int infected_count = 0;
  int threshold = 0;
  bool positive = false;
  int segmenter_invocations = 0;
  StageTimes wall_clock;
};

struct DiagnoseOptions {
  int threshold = 25;
  double binarize_tau = 0.5;
  std::filesystem::path out_dir;  // artifact root; a per-patient subdirectory is created
};

// Classifies every image of the patient, applies the patient threshold, and
// only when the patient is positive runs the segmenter over the images.
// Activation-map overlays (always) and binarized lesion masks (positive only)
// land under out_dir/<patient id>/; report paths are relative to out_dir.
// Whether the segmenter consumes classifier features follows its own
// configuration.
DiagnosisReport joint_diagnose(const DatasetManifest& data, const PatientRecord& patient,
                               const ClassifierModel& cls, const SegmenterModel& seg,
                               const DiagnoseOptions& opt);

std::string report_json(const DiagnosisReport& r);
std::string report_text(const DiagnosisReport& r);
// Writes <out_dir>/<patient id>/report.json and report.txt.
void write_report(const DiagnosisReport& r, const std::filesystem::path& out_dir);

// Composites a color-mapped copy of the map (resized to the image size) over
// the grayscale image and writes a lossless PNG. A zero map reproduces the
// grayscale image in RGB; mask pixels get a fixed-strength tint.
void render_overlay(const CTImage& image, const ActivationMap& map,
                    const std::filesystem::path& out_path);
void render_overlay(const CTImage& image, const BinaryMask& mask,
                    const std::filesystem::path& out_path);

}  // namespace ctdx
