#include "ctdx/runconfig.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ctdx {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

void RunConfig::set(const std::string& key, std::string value) {
  for (auto& e : entries_) {
    if (e.first == key) {
      e.second = std::move(value);
      return;
    }
  }
  entries_.emplace_back(key, std::move(value));
}

void RunConfig::set_int(const std::string& key, std::int64_t v) { set(key, std::to_string(v)); }

void RunConfig::set_double(const std::string& key, double v) {
  set(key, fmt::format("{}", v));  // shortest round-trip form
}

void RunConfig::set_bool(const std::string& key, bool v) { set(key, v ? "true" : "false"); }

bool RunConfig::has(const std::string& key) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const auto& e) { return e.first == key; });
}

const std::string& RunConfig::get(const std::string& key) const {
  for (const auto& e : entries_)
    if (e.first == key) return e.second;
  throw std::out_of_range("config key not set: " + key);
}

std::int64_t RunConfig::get_int(const std::string& key) const {
  const std::string& v = get(key);
  std::int64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    throw std::invalid_argument(fmt::format("config key {} is not an integer: '{}'", key, v));
  return out;
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  try {
    size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing text");
    return out;
  } catch (const std::exception&) {
    throw std::invalid_argument(fmt::format("config key {} is not a number: '{}'", key, v));
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true") return true;
  if (v == "false") return false;
  throw std::invalid_argument(fmt::format("config key {} must be true or false: '{}'", key, v));
}

void RunConfig::require_known(const std::vector<std::string>& known) const {
  for (const auto& e : entries_) {
    if (std::find(known.begin(), known.end(), e.first) == known.end())
      throw std::invalid_argument("unknown config key: " + e.first);
  }
}

std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += fmt::format("{} = {}\n", k, v);
  return out;
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(fmt::format("config line {} has no '=': '{}'", lineno, t));
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty())
      throw std::invalid_argument(fmt::format("config line {} has an empty key", lineno));
    if (cfg.has(key))
      throw std::invalid_argument(fmt::format("config line {} repeats key '{}'", lineno, key));
    cfg.entries_.emplace_back(std::move(key), std::move(value));
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config file: " + file.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

void RunConfig::save(const std::filesystem::path& file) const {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write config file: " + file.string());
  out << serialize();
}

}  // namespace ctdx
