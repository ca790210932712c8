#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>

#include "ctdx/corpus.hpp"
#include "ctdx/png_io.hpp"

namespace ctdx {

namespace {

constexpr double kHalfMaxQ = 2.0 * M_LN2;  // exp(-q/2) crosses 1/2 at this q

struct Lung {
  double cx, cy, ax, ay;
  double q(double x, double y) const {
    double dx = (x - cx) / ax, dy = (y - cy) / ay;
    return dx * dx + dy * dy;
  }
};

struct Lesion {
  double cx, cy, sa, sb, cos_t, sin_t;
  double q(double x, double y) const {
    double dx = x - cx, dy = y - cy;
    double u = (dx * cos_t + dy * sin_t) / sa;
    double v = (-dx * sin_t + dy * cos_t) / sb;
    return u * u + v * v;
  }
  double half_max_radius() const { return std::max(sa, sb) * std::sqrt(kHalfMaxQ); }
};

int count_components_8(const std::vector<std::uint8_t>& mask, int h, int w) {
  std::vector<std::uint8_t> seen(mask.size(), 0);
  int count = 0;
  std::deque<int> q;
  for (int start = 0; start < h * w; ++start) {
    if (!mask[static_cast<size_t>(start)] || seen[static_cast<size_t>(start)]) continue;
    ++count;
    seen[static_cast<size_t>(start)] = 1;
    q.push_back(start);
    while (!q.empty()) {
      int cur = q.front();
      q.pop_front();
      int cy = cur / w, cx = cur % w;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          int ny = cy + dy, nx = cx + dx;
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          int ni = ny * w + nx;
          if (mask[static_cast<size_t>(ni)] && !seen[static_cast<size_t>(ni)]) {
            seen[static_cast<size_t>(ni)] = 1;
            q.push_back(ni);
          }
        }
    }
  }
  return count;
}

std::pair<double, double> point_in_lung(const Lung& lung, double max_q, Rng& rng) {
  for (int i = 0; i < 256; ++i) {
    double x = rng.uniform(lung.cx - lung.ax, lung.cx + lung.ax);
    double y = rng.uniform(lung.cy - lung.ay, lung.cy + lung.ay);
    if (lung.q(x, y) <= max_q) return {x, y};
  }
  return {lung.cx, lung.cy};
}

void add_streak(std::vector<double>& field, int s, const Lung& lung, Rng& rng) {
  auto [x0, y0] = point_in_lung(lung, 0.7, rng);
  auto [x1, y1] = point_in_lung(lung, 0.7, rng);
  double sigma = rng.uniform(0.7, 1.2);
  double amp = rng.uniform(0.18, 0.32);
  double vx = x1 - x0, vy = y1 - y0;
  double len2 = vx * vx + vy * vy;
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      double t = len2 > 0.0 ? ((x - x0) * vx + (y - y0) * vy) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      double dx = x - (x0 + t * vx), dy = y - (y0 + t * vy);
      double d2 = dx * dx + dy * dy;
      field[static_cast<size_t>(y) * s + x] += amp * std::exp(-d2 / (2.0 * sigma * sigma));
    }
}

// Chest-like canvas: brighter body, two darker lung fields, slow intensity
// drift, thin bright streaks inside the lungs standing in for vessels. The
// streaks appear in both classes so mean brightness alone does not separate
// them.
std::vector<double> render_canvas(int s, PatientLabel label, Rng& rng, Lung lungs[2]) {
  double j1 = rng.uniform(-0.02, 0.02), j2 = rng.uniform(-0.02, 0.02);
  lungs[0] = {(0.30 + j1) * s, (0.54 + j2) * s, 0.165 * s, 0.30 * s};
  lungs[1] = {(0.70 - j1) * s, (0.54 - j2) * s, 0.165 * s, 0.30 * s};

  std::vector<double> field(static_cast<size_t>(s) * s, 0.0);
  double base = 0.36 + rng.uniform(-0.04, 0.04);
  struct Blob {
    double cx, cy, sigma, amp;
  } blobs[3];
  for (auto& b : blobs)
    b = {rng.uniform(0.0, s), rng.uniform(0.0, s), rng.uniform(0.35 * s, 0.6 * s),
         rng.uniform(-0.05, 0.05)};

  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      double v = base;
      for (const auto& b : blobs) {
        double dx = x - b.cx, dy = y - b.cy;
        v += b.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
      }
      for (int l = 0; l < 2; ++l) {
        double q = lungs[l].q(x, y);
        if (q < 1.0) v -= 0.13 * std::sqrt(1.0 - q);
      }
      field[static_cast<size_t>(y) * s + x] = v;
    }

  int n_streaks = label == PatientLabel::positive ? rng.uniform_int(2, 4) : rng.uniform_int(4, 7);
  for (int i = 0; i < n_streaks; ++i) add_streak(field, s, lungs[rng.uniform_int(0, 1)], rng);
  return field;
}

std::vector<Lesion> place_lesions(int s, const SyntheticConfig& cfg, const Lung lungs[2],
                                  int n, std::vector<std::uint8_t>& mask, Rng& rng) {
  const double inv_fwhm = 1.0 / (2.0 * std::sqrt(kHalfMaxQ));
  for (int attempt = 0; attempt < 60; ++attempt) {
    Rng arng = rng.fork(200 + static_cast<std::uint64_t>(attempt));
    double shrink = std::max(0.4, std::pow(0.9, attempt / 3));
    std::vector<Lesion> lesions;
    // draw all shapes first and place the biggest ones first, alternating
    // lungs, so two large lesions never compete for the same small lung
    std::vector<Lesion> shapes;
    for (int j = 0; j < n; ++j) {
      double ea = arng.uniform(cfg.lesion_extent.lo, cfg.lesion_extent.hi) * shrink;
      double eb = arng.uniform(cfg.lesion_extent.lo, cfg.lesion_extent.hi) * shrink;
      double theta = arng.uniform(0.0, M_PI);
      shapes.push_back({0, 0, ea * inv_fwhm, eb * inv_fwhm, std::cos(theta), std::sin(theta)});
    }
    std::stable_sort(shapes.begin(), shapes.end(), [](const Lesion& a, const Lesion& b) {
      return a.half_max_radius() > b.half_max_radius();
    });
    int lung_start = arng.uniform_int(0, 1);
    bool ok = true;
    for (int j = 0; j < n && ok; ++j) {
      Lesion les = shapes[static_cast<size_t>(j)];
      const Lung& lung = lungs[(lung_start + j) % 2];
      double min_axis = std::min(lung.ax, lung.ay);
      double r = les.half_max_radius();
      double max_r = 0.8 * min_axis - 1.0;
      if (r > max_r && max_r > 1.0) {
        double f = max_r / r;
        les.sa *= f;
        les.sb *= f;
        r = max_r;
      }
      double keep = 1.0 - 0.7 * (r + 1.0) / min_axis;
      keep = std::max(keep, 0.08);
      bool placed = false;
      for (int t = 0; t < 80 && !placed; ++t) {
        auto [cx, cy] = point_in_lung(lung, keep * keep, arng);
        bool clear = true;
        for (const auto& other : lesions) {
          double dx = cx - other.cx, dy = cy - other.cy;
          double need = 1.05 * (r + other.half_max_radius()) + 2.0;
          if (dx * dx + dy * dy < need * need) {
            clear = false;
            break;
          }
        }
        if (clear) {
          les.cx = cx;
          les.cy = cy;
          placed = true;
        }
      }
      if (!placed) ok = false;
      if (placed) lesions.push_back(les);
    }
    if (!ok) continue;
    std::fill(mask.begin(), mask.end(), 0);
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x)
        for (const auto& les : lesions)
          if (les.q(x, y) <= kHalfMaxQ) {
            mask[static_cast<size_t>(y) * s + x] = 1;
            break;
          }
    if (count_components_8(mask, s, s) == n) return lesions;
  }
  throw std::runtime_error(
      "lesion placement failed; lesion extent range is too large for the image size");
}

}  // namespace

void SyntheticConfig::validate() const {
  if (n_positive < 0 || n_negative < 0 || n_positive + n_negative < 1)
    throw std::invalid_argument("synthetic config: need at least one patient");
  if (image_size < 32 || image_size % 32 != 0)
    throw std::invalid_argument("synthetic config: image size must be a positive multiple of 32");
  if (images_per_patient.lo < 1 || images_per_patient.hi < images_per_patient.lo)
    throw std::invalid_argument("synthetic config: bad images-per-patient range");
  if (lesions_per_image.lo < 1 || lesions_per_image.hi < lesions_per_image.lo ||
      lesions_per_image.hi > 10)
    throw std::invalid_argument("synthetic config: lesions per image must stay within [1,10]");
  if (lesion_extent.lo < 3.0 || lesion_extent.hi < lesion_extent.lo)
    throw std::invalid_argument("synthetic config: bad lesion extent range");
  if (lesion_extent.hi > image_size / 3.0)
    throw std::invalid_argument("synthetic config: lesion extent too large for image size");
  if (lesion_brightness <= 0.0 || lesion_brightness > 1.0)
    throw std::invalid_argument("synthetic config: lesion brightness must be in (0,1]");
  if (noise_sd < 0.0 || noise_sd > 0.2)
    throw std::invalid_argument("synthetic config: noise level must be in [0,0.2]");
}

DatasetManifest generate_synthetic(const SyntheticConfig& cfg, Split split, std::uint64_t seed,
                                   const std::filesystem::path& out_dir) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir))
    throw std::runtime_error(fmt::format("cannot create output directory {}", out_dir.string()));

  DatasetManifest m;
  m.split = split;
  m.seed = seed;
  m.root = out_dir;

  const int s = cfg.image_size;
  Rng master(seed);
  Rng split_rng = master.fork(split == Split::train ? 0 : 1);

  for (int cls = 0; cls < 2; ++cls) {
    PatientLabel label = cls == 0 ? PatientLabel::positive : PatientLabel::negative;
    int count = cls == 0 ? cfg.n_positive : cfg.n_negative;
    Rng class_rng = split_rng.fork(static_cast<std::uint64_t>(cls));
    for (int i = 0; i < count; ++i) {
      Rng prng = class_rng.fork(static_cast<std::uint64_t>(i));
      PatientRecord rec;
      rec.id = fmt::format("{}_{}_{:03d}", to_string(split), cls == 0 ? "pos" : "neg", i);
      rec.label = label;
      auto pdir = out_dir / rec.id;
      std::filesystem::create_directories(pdir, ec);
      if (ec) throw std::runtime_error("cannot create directory " + pdir.string());

      int n_imgs = prng.uniform_int(cfg.images_per_patient.lo, cfg.images_per_patient.hi);
      for (int k = 0; k < n_imgs; ++k) {
        Rng irng = prng.fork(100 + static_cast<std::uint64_t>(k));
        Lung lungs[2];
        std::vector<double> field = render_canvas(s, label, irng, lungs);
        std::vector<std::uint8_t> mask(static_cast<size_t>(s) * s, 0);

        if (label == PatientLabel::positive) {
          int n = irng.uniform_int(cfg.lesions_per_image.lo, cfg.lesions_per_image.hi);
          auto lesions = place_lesions(s, cfg, lungs, n, mask, irng);
          for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x) {
              double add = 0.0;
              for (const auto& les : lesions) add += std::exp(-les.q(x, y) / 2.0);
              field[static_cast<size_t>(y) * s + x] += cfg.lesion_brightness * add;
            }
        }

        std::vector<std::uint8_t> img8(static_cast<size_t>(s) * s);
        for (size_t px = 0; px < img8.size(); ++px) {
          double v = field[px] + cfg.noise_sd * irng.normal();
          v = std::clamp(v, 0.0, 1.0);
          img8[px] = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }

        std::string img_rel = fmt::format("{}/img_{:03d}.png", rec.id, k);
        write_png_gray(out_dir / img_rel, s, s, img8);
        ImageRef ref;
        ref.image_path = img_rel;
        if (label == PatientLabel::positive) {
          std::vector<std::uint8_t> mask8(mask.size());
          for (size_t px = 0; px < mask.size(); ++px) mask8[px] = mask[px] ? 255 : 0;
          std::string mask_rel = fmt::format("{}/mask_{:03d}.png", rec.id, k);
          write_png_gray(out_dir / mask_rel, s, s, mask8);
          ref.mask_path = mask_rel;
        }
        rec.images.push_back(std::move(ref));
      }
      m.patients.push_back(std::move(rec));
    }
  }

  save_manifest(m, out_dir / "manifest.json");
  return m;
}

}  // namespace ctdx
