#include "ctdx/checkpoint.hpp"

#include <fmt/format.h>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace ctdx {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'C', 'T', 'D', 'X', 'C', 'K', 'P', '1'};

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void put_bytes(std::FILE* f, const void* p, size_t n, const std::filesystem::path& path) {
  if (std::fwrite(p, 1, n, f) != n)
    throw std::runtime_error("checkpoint write failed: " + path.string());
}

void get_bytes(std::FILE* f, void* p, size_t n, const std::filesystem::path& path) {
  if (std::fread(p, 1, n, f) != n)
    throw std::runtime_error("checkpoint is truncated or unreadable: " + path.string());
}

void put_u32(std::FILE* f, std::uint32_t v, const std::filesystem::path& p) {
  put_bytes(f, &v, sizeof(v), p);
}
void put_u64(std::FILE* f, std::uint64_t v, const std::filesystem::path& p) {
  put_bytes(f, &v, sizeof(v), p);
}
std::uint32_t get_u32(std::FILE* f, const std::filesystem::path& p) {
  std::uint32_t v;
  get_bytes(f, &v, sizeof(v), p);
  return v;
}
std::uint64_t get_u64(std::FILE* f, const std::filesystem::path& p) {
  std::uint64_t v;
  get_bytes(f, &v, sizeof(v), p);
  return v;
}

void put_string(std::FILE* f, const std::string& s, const std::filesystem::path& p) {
  put_u32(f, static_cast<std::uint32_t>(s.size()), p);
  put_bytes(f, s.data(), s.size(), p);
}

std::string get_string(std::FILE* f, const std::filesystem::path& p) {
  std::uint32_t n = get_u32(f, p);
  if (n > (1u << 24)) throw std::runtime_error("checkpoint field too large: " + p.string());
  std::string s(n, '\0');
  get_bytes(f, s.data(), n, p);
  return s;
}

void write_file(const std::filesystem::path& path, const std::string& kind,
                const std::string& config_json, const ParamStore& params) {
  FilePtr f(std::fopen(path.string().c_str(), "wb"));
  if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  put_bytes(f.get(), kMagic, sizeof(kMagic), path);
  put_string(f.get(), kind, path);
  put_string(f.get(), config_json, path);
  put_u32(f.get(), static_cast<std::uint32_t>(params.all().size()), path);
  for (const auto& p : params.all()) {
    put_string(f.get(), p->name, path);
    const auto& shape = p->value.shape();
    put_u32(f.get(), static_cast<std::uint32_t>(shape.size()), path);
    for (int d : shape) put_u32(f.get(), static_cast<std::uint32_t>(d), path);
    put_u64(f.get(), static_cast<std::uint64_t>(p->value.size()), path);
    put_bytes(f.get(), p->value.data(), sizeof(float) * static_cast<size_t>(p->value.size()),
              path);
  }
}

struct LoadedFile {
  std::string kind;
  json config;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

LoadedFile read_file(const std::filesystem::path& path) {
  FilePtr f(std::fopen(path.string().c_str(), "rb"));
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[8];
  get_bytes(f.get(), magic, sizeof(magic), path);
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("not a checkpoint file: " + path.string());
  LoadedFile out;
  out.kind = get_string(f.get(), path);
  std::string cfg = get_string(f.get(), path);
  try {
    out.config = json::parse(cfg);
  } catch (const json::exception& e) {
    throw std::runtime_error(fmt::format("{}: bad checkpoint config: {}", path.string(), e.what()));
  }
  std::uint32_t count = get_u32(f.get(), path);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = get_string(f.get(), path);
    std::uint32_t ndim = get_u32(f.get(), path);
    if (ndim > 8) throw std::runtime_error("corrupt checkpoint tensor rank: " + path.string());
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = static_cast<int>(get_u32(f.get(), path));
    std::uint64_t n = get_u64(f.get(), path);
    if (n != static_cast<std::uint64_t>(shape_numel(shape)))
      throw std::runtime_error("corrupt checkpoint tensor size: " + path.string());
    std::vector<float> data(n);
    get_bytes(f.get(), data.data(), sizeof(float) * n, path);
    out.tensors.emplace_back(std::move(name), Tensor::from(shape, std::move(data)));
  }
  return out;
}

template <typename Model>
void restore_params(Model& model, const LoadedFile& file, const std::filesystem::path& path) {
  if (file.tensors.size() != model.params().all().size())
    throw std::runtime_error(fmt::format("{}: checkpoint holds {} tensors but the model has {}",
                                         path.string(), file.tensors.size(),
                                         model.params().all().size()));
  for (const auto& [name, tensor] : file.tensors) {
    ag::Var p = model.params().find(name);
    if (!p->value.same_shape(tensor))
      throw std::runtime_error(fmt::format("{}: tensor '{}' has shape {}, expected {}",
                                           path.string(), name, shape_str(tensor.shape()),
                                           shape_str(p->value.shape())));
    p->value = tensor;
  }
}

}  // namespace

void save_checkpoint(const ClassifierModel& model, const std::filesystem::path& path) {
  const auto& c = model.config();
  json cfg{{"input_size", c.input_size},
           {"base_channels", c.base_channels},
           {"init_seed", c.init_seed}};
  write_file(path, "classifier", cfg.dump(), model.params());
}

void save_checkpoint(const SegmenterModel& model, const std::filesystem::path& path) {
  const auto& c = model.config();
  json cfg{{"width_mult", c.width_mult},
           {"in_channels", c.in_channels},
           {"gam1_rates", c.gam1.rates},
           {"gam1_expansion", c.gam1.expansion},
           {"gam1_se_reduction", c.gam1.se_reduction},
           {"gam2_rates", c.gam2.rates},
           {"gam2_expansion", c.gam2.expansion},
           {"gam2_se_reduction", c.gam2.se_reduction},
           {"se_reduction", c.se_reduction},
           {"dice_factor_2", c.dice_factor_2},
           {"classifier_fusion", c.classifier_fusion},
           {"fusion_channels", c.fusion_channels},
           {"init_seed", c.init_seed}};
  write_file(path, "segmenter", cfg.dump(), model.params());
}

ClassifierModel load_classifier_checkpoint(const std::filesystem::path& path) {
  LoadedFile file = read_file(path);
  if (file.kind != "classifier")
    throw std::runtime_error(
        fmt::format("{}: expected a classifier checkpoint, found '{}'", path.string(), file.kind));
  ClassifierConfig cfg;
  cfg.input_size = file.config.at("input_size").get<int>();
  cfg.base_channels = file.config.at("base_channels").get<int>();
  cfg.init_seed = file.config.at("init_seed").get<std::uint64_t>();
  ClassifierModel model(cfg);
  restore_params(model, file, path);
  return model;
}

SegmenterModel load_segmenter_checkpoint(const std::filesystem::path& path) {
  LoadedFile file = read_file(path);
  if (file.kind != "segmenter")
    throw std::runtime_error(
        fmt::format("{}: expected a segmenter checkpoint, found '{}'", path.string(), file.kind));
  SegmenterConfig cfg;
  cfg.width_mult = file.config.at("width_mult").get<double>();
  cfg.in_channels = file.config.at("in_channels").get<int>();
  file.config.at("gam1_rates").get_to(cfg.gam1.rates);
  cfg.gam1.expansion = file.config.at("gam1_expansion").get<int>();
  cfg.gam1.se_reduction = file.config.at("gam1_se_reduction").get<int>();
  file.config.at("gam2_rates").get_to(cfg.gam2.rates);
  cfg.gam2.expansion = file.config.at("gam2_expansion").get<int>();
  cfg.gam2.se_reduction = file.config.at("gam2_se_reduction").get<int>();
  cfg.se_reduction = file.config.at("se_reduction").get<int>();
  cfg.dice_factor_2 = file.config.at("dice_factor_2").get<bool>();
  cfg.classifier_fusion = file.config.at("classifier_fusion").get<bool>();
  file.config.at("fusion_channels").get_to(cfg.fusion_channels);
  cfg.init_seed = file.config.at("init_seed").get<std::uint64_t>();
  SegmenterModel model(cfg);
  restore_params(model, file, path);
  model.mark_trained();
  return model;
}

}  // namespace ctdx
