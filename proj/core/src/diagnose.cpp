#include "ctdx/diagnose.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>

#include "ctdx/image.hpp"
#include "ctdx/png_io.hpp"

namespace ctdx {

using nlohmann::json;

LesionStats lesion_stats(const BinaryMask& mask) {
  LesionStats out;
  const int h = mask.h, w = mask.w;
  std::vector<std::uint8_t> seen(static_cast<size_t>(h) * w, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      size_t at = static_cast<size_t>(y) * w + x;
      if (!mask.values[at]) continue;
      ++out.total_area;
      if (seen[at]) continue;
      // flood this component, tracking its extents
      BoundingBox box{x, y, x, y};
      std::deque<std::pair<int, int>> queue{{y, x}};
      seen[at] = 1;
      while (!queue.empty()) {
        auto [cy, cx] = queue.front();
        queue.pop_front();
        box.x0 = std::min(box.x0, cx);
        box.x1 = std::max(box.x1, cx);
        box.y0 = std::min(box.y0, cy);
        box.y1 = std::max(box.y1, cy);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            int ny = cy + dy, nx = cx + dx;
            if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
            size_t nat = static_cast<size_t>(ny) * w + nx;
            if (seen[nat] || !mask.values[nat]) continue;
            seen[nat] = 1;
            queue.emplace_back(ny, nx);
          }
        }
      }
      ++out.count;
      out.boxes.push_back(box);
    }
  }
  return out;
}

namespace {

constexpr float kOverlayStrength = 0.6f;

// v in [0,1] -> saturated blue-to-red ramp.
void heat_color(float v, float& r, float& g, float& b) {
  auto band = [](float x) { return std::clamp(x, 0.0f, 1.0f); };
  r = band(1.5f - std::fabs(4.0f * v - 3.0f));
  g = band(1.5f - std::fabs(4.0f * v - 2.0f));
  b = band(1.5f - std::fabs(4.0f * v - 1.0f));
}

// map01 must already be at image size; alpha scales with the map value, so a
// zero map leaves the quantized grayscale untouched.
void composite_and_write(const CTImage& image, const std::vector<float>& map01,
                         const std::filesystem::path& out_path) {
  const int h = image.h, w = image.w;
  std::vector<std::uint8_t> rgb(static_cast<size_t>(h) * w * 3);
  for (size_t i = 0; i < map01.size(); ++i) {
    float gray = 255.0f * std::clamp(image.pixels[i], 0.0f, 1.0f);
    auto g8 = static_cast<float>(std::lround(gray));
    float v = std::clamp(map01[i], 0.0f, 1.0f);
    float a = kOverlayStrength * v;
    float cr, cg, cb;
    heat_color(v, cr, cg, cb);
    rgb[i * 3 + 0] = static_cast<std::uint8_t>(std::lround((1.0f - a) * g8 + a * 255.0f * cr));
    rgb[i * 3 + 1] = static_cast<std::uint8_t>(std::lround((1.0f - a) * g8 + a * 255.0f * cg));
    rgb[i * 3 + 2] = static_cast<std::uint8_t>(std::lround((1.0f - a) * g8 + a * 255.0f * cb));
  }
  write_png_rgb(out_path, w, h, rgb);
}

}  // namespace

void render_overlay(const CTImage& image, const ActivationMap& map,
                    const std::filesystem::path& out_path) {
  if (map.h < 1 || map.w < 1) throw std::invalid_argument("activation map is empty");
  std::vector<float> resized =
      bilinear_resize(map.normalized, map.h, map.w, image.h, image.w);
  composite_and_write(image, resized, out_path);
}

void render_overlay(const CTImage& image, const BinaryMask& mask,
                    const std::filesystem::path& out_path) {
  if (mask.h < 1 || mask.w < 1) throw std::invalid_argument("mask is empty");
  std::vector<std::uint8_t> resized =
      nearest_resize(mask.values, mask.h, mask.w, image.h, image.w);
  std::vector<float> map01(resized.size());
  for (size_t i = 0; i < resized.size(); ++i) map01[i] = resized[i] ? 1.0f : 0.0f;
  composite_and_write(image, map01, out_path);
}

DiagnosisReport joint_diagnose(const DatasetManifest& data, const PatientRecord& patient,
                               const ClassifierModel& cls, const SegmenterModel& seg,
                               const DiagnoseOptions& opt) {
  if (patient.images.empty())
    throw std::invalid_argument("patient " + patient.id + " has no images");
  if (opt.threshold < 1) throw std::invalid_argument("decision threshold must be >= 1");
  if (!(opt.binarize_tau > 0.0 && opt.binarize_tau < 1.0))
    throw std::invalid_argument("binarize threshold must lie in (0,1)");
  if (!seg.trained()) throw std::logic_error("segmenter has not been trained");

  std::filesystem::path patient_dir = opt.out_dir / patient.id;
  std::filesystem::create_directories(patient_dir);

  DiagnosisReport report;
  report.patient_id = patient.id;
  report.threshold = opt.threshold;

  using clock = std::chrono::steady_clock;
  auto seconds_since = [](clock::time_point t0) {
    return std::chrono::duration<double>(clock::now() - t0).count();
  };
  auto t_start = clock::now();

  const int s = cls.config().input_size;
  std::vector<CTImage> originals;
  originals.reserve(patient.images.size());
  std::vector<bool> flags;

  auto t_cls = clock::now();
  for (size_t i = 0; i < patient.images.size(); ++i) {
    const ImageRef& ref = patient.images[i];
    CTImage img = load_image(data, ref);
    CTImage sized = img;
    if (img.h != s || img.w != s)
      sized = CTImage{s, s, bilinear_resize(img.pixels, img.h, img.w, s, s)};

    ImageFinding finding;
    finding.image_path = ref.image_path;
    finding.probs = cls.classify_image(sized);
    finding.infected = finding.probs.infected();
    flags.push_back(finding.infected);

    ActivationMap am = cls.activation_map(sized, kInfected);
    std::string am_rel = fmt::format("{}/am_{:03d}.png", patient.id, i);
    render_overlay(img, am, opt.out_dir / am_rel);
    finding.activation_map_path = am_rel;

    report.images.push_back(std::move(finding));
    originals.push_back(std::move(img));
  }
  report.wall_clock.classification_s = seconds_since(t_cls);

  PatientDiagnosis decision = patient_decision(flags, opt.threshold);
  report.infected_count = decision.infected_images;
  report.positive = decision.positive;

  if (report.positive) {
    auto t_seg = clock::now();
    const bool fused = seg.config().classifier_fusion;
    for (size_t i = 0; i < originals.size(); ++i) {
      Tensor prob = fused ? seg.segment(originals[i], cls) : seg.segment(originals[i]);
      ++report.segmenter_invocations;
      BinaryMask mask = binarize(prob, opt.binarize_tau);
      report.images[i].lesions = lesion_stats(mask);

      std::vector<std::uint8_t> bytes(mask.values.size());
      for (size_t k = 0; k < bytes.size(); ++k) bytes[k] = mask.values[k] ? 255 : 0;
      std::string mask_rel = fmt::format("{}/mask_{:03d}.png", patient.id, i);
      write_png_gray(opt.out_dir / mask_rel, mask.w, mask.h, bytes);
      report.images[i].mask_path = mask_rel;
    }
    report.wall_clock.segmentation_s = seconds_since(t_seg);
  }

  report.wall_clock.total_s = seconds_since(t_start);
  return report;
}

std::string report_json(const DiagnosisReport& r) {
  json images = json::array();
  for (const auto& f : r.images) {
    json jf{{"image_path", f.image_path},
            {"p_infected", f.probs.p_infected},
            {"p_uninfected", f.probs.p_uninfected},
            {"infected", f.infected},
            {"activation_map", f.activation_map_path}};
    if (f.mask_path) jf["mask"] = *f.mask_path;
    if (f.lesions) {
      jf["lesion_count"] = f.lesions->count;
      jf["lesion_area"] = f.lesions->total_area;
      json boxes = json::array();
      for (const auto& b : f.lesions->boxes) boxes.push_back({b.x0, b.y0, b.x1, b.y1});
      jf["lesion_boxes"] = boxes;
    }
    images.push_back(std::move(jf));
  }
  json j{{"patient_id", r.patient_id},
         {"threshold", r.threshold},
         {"total_images", r.images.size()},
         {"infected_count", r.infected_count},
         {"positive", r.positive},
         {"segmenter_invocations", r.segmenter_invocations},
         {"wall_clock",
          {{"classification_s", r.wall_clock.classification_s},
           {"segmentation_s", r.wall_clock.segmentation_s},
           {"total_s", r.wall_clock.total_s}}},
         {"images", images}};
  return j.dump(2) + "\n";
}

std::string report_text(const DiagnosisReport& r) {
  std::string out = fmt::format("patient {}: {}  ({}/{} images infected, threshold {})\n",
                                r.patient_id, r.positive ? "POSITIVE" : "negative",
                                r.infected_count, r.images.size(), r.threshold);
  out += fmt::format("wall clock: classification {:.3f} s, segmentation {:.3f} s, total {:.3f} s\n",
                     r.wall_clock.classification_s, r.wall_clock.segmentation_s,
                     r.wall_clock.total_s);
  out += fmt::format("segmenter invocations: {}\n", r.segmenter_invocations);
  for (const auto& f : r.images) {
    out += fmt::format("  {}  p_infected={:.4f}  {}  am={}", f.image_path, f.probs.p_infected,
                       f.infected ? "infected" : "clean", f.activation_map_path);
    if (f.mask_path) out += fmt::format("  mask={}", *f.mask_path);
    if (f.lesions) {
      out += fmt::format("  lesions={}  area={}px  boxes=", f.lesions->count,
                         f.lesions->total_area);
      for (const auto& b : f.lesions->boxes)
        out += fmt::format("({},{},{},{})", b.x0, b.y0, b.x1, b.y1);
    }
    out += "\n";
  }
  return out;
}

void write_report(const DiagnosisReport& r, const std::filesystem::path& out_dir) {
  std::filesystem::path dir = out_dir / r.patient_id;
  std::filesystem::create_directories(dir);
  for (const char* name : {"report.json", "report.txt"}) {
    std::ofstream f(dir / name, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write report under " + dir.string());
    f << (std::string(name) == "report.json" ? report_json(r) : report_text(r));
  }
}

}  // namespace ctdx
