#include <fmt/format.h>

#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <stdexcept>

#include "ctdx/corpus.hpp"
#include "ctdx/png_io.hpp"

namespace ctdx {

using nlohmann::json;

const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }
const char* to_string(PatientLabel l) {
  return l == PatientLabel::positive ? "positive" : "negative";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw std::invalid_argument(fmt::format("invalid split '{}', expected train or test", s));
}

PatientLabel label_from_string(const std::string& s) {
  if (s == "positive") return PatientLabel::positive;
  if (s == "negative") return PatientLabel::negative;
  throw std::invalid_argument(fmt::format("invalid label '{}', expected positive or negative", s));
}

int DatasetManifest::total_images() const {
  int n = 0;
  for (const auto& p : patients) n += static_cast<int>(p.images.size());
  return n;
}

int DatasetManifest::annotated_images() const {
  int n = 0;
  for (const auto& p : patients)
    for (const auto& im : p.images)
      if (im.mask_path) ++n;
  return n;
}

const PatientRecord* DatasetManifest::find_patient(const std::string& id) const {
  for (const auto& p : patients)
    if (p.id == id) return &p;
  return nullptr;
}

namespace {

void require_keys(const json& obj, std::initializer_list<const char*> required,
                  std::initializer_list<const char*> optional, const std::string& where) {
  for (const char* k : required)
    if (!obj.contains(k))
      throw std::runtime_error(fmt::format("{}: missing key '{}'", where, k));
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* k : required)
      if (it.key() == k) known = true;
    for (const char* k : optional)
      if (it.key() == k) known = true;
    if (!known)
      throw std::runtime_error(fmt::format("{}: unknown key '{}'", where, it.key()));
  }
}

}  // namespace

DatasetManifest load_manifest(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error(fmt::format("cannot open manifest {}", file.string()));
  json root;
  try {
    in >> root;
  } catch (const json::exception& e) {
    throw std::runtime_error(fmt::format("{}: invalid json: {}", file.string(), e.what()));
  }
  if (!root.is_object()) throw std::runtime_error(file.string() + ": manifest must be an object");
  require_keys(root, {"patients", "split", "seed"}, {}, file.string());

  DatasetManifest m;
  m.root = file.parent_path();
  m.split = split_from_string(root.at("split").get<std::string>());
  if (!root.at("seed").is_number_unsigned())
    throw std::runtime_error(file.string() + ": seed must be a non-negative integer");
  m.seed = root.at("seed").get<std::uint64_t>();

  if (!root.at("patients").is_array())
    throw std::runtime_error(file.string() + ": patients must be an array");

  std::set<std::string> ids;
  for (const auto& pj : root.at("patients")) {
    require_keys(pj, {"id", "label", "images"}, {}, file.string() + " patient");
    PatientRecord p;
    p.id = pj.at("id").get<std::string>();
    if (p.id.empty()) throw std::runtime_error(file.string() + ": empty patient id");
    if (!ids.insert(p.id).second)
      throw std::runtime_error(fmt::format("{}: duplicate patient id '{}'", file.string(), p.id));
    p.label = label_from_string(pj.at("label").get<std::string>());
    if (!pj.at("images").is_array() || pj.at("images").empty())
      throw std::runtime_error(
          fmt::format("{}: patient '{}' has no images", file.string(), p.id));
    for (const auto& ij : pj.at("images")) {
      require_keys(ij, {"image_path"}, {"mask_path"}, file.string() + " image");
      ImageRef ref;
      ref.image_path = ij.at("image_path").get<std::string>();
      if (ij.contains("mask_path") && !ij.at("mask_path").is_null())
        ref.mask_path = ij.at("mask_path").get<std::string>();
      if (p.label == PatientLabel::negative && ref.mask_path)
        throw std::runtime_error(fmt::format(
            "{}: negative patient '{}' must not reference lesion masks", file.string(), p.id));
      p.images.push_back(std::move(ref));
    }
    m.patients.push_back(std::move(p));
  }

  // Referenced files must exist; a mask must match its image pixel-for-pixel
  // in size. Only headers are read here.
  for (const auto& p : m.patients)
    for (const auto& im : p.images) {
      auto ipath = m.root / im.image_path;
      if (!std::filesystem::exists(ipath))
        throw std::runtime_error(fmt::format("{}: missing image file {}", file.string(),
                                             ipath.string()));
      if (im.mask_path) {
        auto mpath = m.root / *im.mask_path;
        if (!std::filesystem::exists(mpath))
          throw std::runtime_error(fmt::format("{}: missing mask file {}", file.string(),
                                               mpath.string()));
        auto [iw, ih] = read_png_size(ipath);
        auto [mw, mh] = read_png_size(mpath);
        if (iw != mw || ih != mh)
          throw std::runtime_error(
              fmt::format("{}: mask size {}x{} does not match image size {}x{} for {}",
                          file.string(), mw, mh, iw, ih, im.image_path));
      }
    }
  return m;
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& file) {
  json root;
  root["split"] = to_string(m.split);
  root["seed"] = m.seed;
  root["patients"] = json::array();
  for (const auto& p : m.patients) {
    json pj;
    pj["id"] = p.id;
    pj["label"] = to_string(p.label);
    pj["images"] = json::array();
    for (const auto& im : p.images) {
      json ij;
      ij["image_path"] = im.image_path;
      if (im.mask_path)
        ij["mask_path"] = *im.mask_path;
      else
        ij["mask_path"] = nullptr;
      pj["images"].push_back(std::move(ij));
    }
    root["patients"].push_back(std::move(pj));
  }
  std::ofstream out(file);
  if (!out) throw std::runtime_error(fmt::format("cannot write manifest {}", file.string()));
  out << root.dump(2) << "\n";
  if (!out) throw std::runtime_error(fmt::format("failed writing manifest {}", file.string()));
}

void check_split_disjoint(const DatasetManifest& a, const DatasetManifest& b) {
  std::set<std::string> ids;
  for (const auto& p : a.patients) ids.insert(p.id);
  for (const auto& p : b.patients)
    if (ids.count(p.id))
      throw std::runtime_error(fmt::format(
          "patient '{}' appears in both the {} and {} splits", p.id, to_string(a.split),
          to_string(b.split)));
}

CTImage load_image(const DatasetManifest& m, const ImageRef& ref) {
  PngImage png = read_png(m.root / ref.image_path);
  if (png.channels != 1)
    throw std::runtime_error(fmt::format("{}: expected grayscale image", ref.image_path));
  CTImage img;
  img.h = png.height;
  img.w = png.width;
  img.pixels.resize(png.pixels.size());
  for (size_t i = 0; i < png.pixels.size(); ++i)
    img.pixels[i] = static_cast<float>(png.pixels[i]) / 255.0f;
  return img;
}

std::optional<PixelMask> load_mask(const DatasetManifest& m, const ImageRef& ref) {
  if (!ref.mask_path) return std::nullopt;
  PngImage png = read_png(m.root / *ref.mask_path);
  if (png.channels != 1)
    throw std::runtime_error(fmt::format("{}: expected grayscale mask", *ref.mask_path));
  PixelMask mask;
  mask.h = png.height;
  mask.w = png.width;
  mask.values.resize(png.pixels.size());
  for (size_t i = 0; i < png.pixels.size(); ++i)
    mask.values[i] = png.pixels[i] >= 128 ? 1 : 0;
  return mask;
}

}  // namespace ctdx
