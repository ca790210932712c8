#include <fmt/format.h>

#include <charconv>
#include <cstdlib>
#include <iostream>
#include <stdexcept>

#include "commands.hpp"

namespace ctdx::cli {

namespace {

std::int64_t parse_i64(const std::string& key, const std::string& v) {
  std::int64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    throw std::invalid_argument(fmt::format("config key {} is not an integer: '{}'", key, v));
  return out;
}

double parse_dbl(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing text");
    return out;
  } catch (const std::exception&) {
    throw std::invalid_argument(fmt::format("config key {} is not a number: '{}'", key, v));
  }
}

}  // namespace

void FlagMerge::bind(const std::string& key, const std::string& flag, std::string& slot) {
  items_.push_back({key, flag, [&slot](const std::string& v) { slot = v; },
                    [&slot] { return slot; }});
}

void FlagMerge::bind_int(const std::string& key, const std::string& flag, int& slot) {
  items_.push_back({key, flag,
                    [&slot, key](const std::string& v) { slot = static_cast<int>(parse_i64(key, v)); },
                    [&slot] { return std::to_string(slot); }});
}

void FlagMerge::bind_u64(const std::string& key, const std::string& flag, std::uint64_t& slot) {
  items_.push_back({key, flag,
                    [&slot, key](const std::string& v) {
                      std::int64_t x = parse_i64(key, v);
                      if (x < 0)
                        throw std::invalid_argument("config key " + key + " must be >= 0");
                      slot = static_cast<std::uint64_t>(x);
                    },
                    [&slot] { return std::to_string(slot); }});
}

void FlagMerge::bind_double(const std::string& key, const std::string& flag, double& slot) {
  items_.push_back({key, flag,
                    [&slot, key](const std::string& v) { slot = parse_dbl(key, v); },
                    [&slot] { return fmt::format("{}", slot); }});
}

void FlagMerge::bind_bool(const std::string& key, const std::string& flag, bool& slot) {
  items_.push_back({key, flag,
                    [&slot, key](const std::string& v) {
                      if (v == "true") slot = true;
                      else if (v == "false") slot = false;
                      else
                        throw std::invalid_argument(
                            fmt::format("config key {} must be true or false: '{}'", key, v));
                    },
                    [&slot] { return slot ? std::string("true") : std::string("false"); }});
}

void FlagMerge::merge_file(const std::string& config_path) {
  RunConfig file = RunConfig::load(config_path);
  std::vector<std::string> known{"command"};
  for (const auto& it : items_) known.push_back(it.key);
  file.require_known(known);
  if (file.has("command") && file.get("command") != command_)
    throw std::invalid_argument(fmt::format("config file is for '{}', not '{}'",
                                            file.get("command"), command_));
  for (const auto& it : items_)
    if (sub_->count(it.flag) == 0 && file.has(it.key)) it.apply(file.get(it.key));
}

RunConfig FlagMerge::resolved() const {
  RunConfig out;
  out.set("command", command_);
  for (const auto& it : items_) out.set(it.key, it.current());
  return out;
}

std::filesystem::path resolve_out_dir(const std::string& out_flag) {
  if (!out_flag.empty()) return out_flag;
  const char* env = std::getenv("CTDX_OUT_DIR");
  if (env && *env) return env;
  throw CLI::RequiredError("--out (or the CTDX_OUT_DIR environment variable)");
}

void echo_config(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  std::cout << cfg.serialize() << std::flush;
  std::filesystem::create_directories(out_dir);
  cfg.save(out_dir / "run-config.txt");
}

IntRange parse_int_range(const std::string& text) {
  size_t colon = text.find(':');
  IntRange r;
  if (colon == std::string::npos) {
    r.lo = r.hi = static_cast<int>(parse_i64("range", text));
  } else {
    r.lo = static_cast<int>(parse_i64("range", text.substr(0, colon)));
    r.hi = static_cast<int>(parse_i64("range", text.substr(colon + 1)));
  }
  if (r.lo > r.hi) throw std::invalid_argument("range '" + text + "' is reversed");
  return r;
}

RealRange parse_real_range(const std::string& text) {
  size_t colon = text.find(':');
  RealRange r;
  if (colon == std::string::npos) {
    r.lo = r.hi = parse_dbl("range", text);
  } else {
    r.lo = parse_dbl("range", text.substr(0, colon));
    r.hi = parse_dbl("range", text.substr(colon + 1));
  }
  if (r.lo > r.hi) throw std::invalid_argument("range '" + text + "' is reversed");
  return r;
}

}  // namespace ctdx::cli
