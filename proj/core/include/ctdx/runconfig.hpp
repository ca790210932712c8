#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ctdx {

// Flat ordered key=value configuration, the on-disk echo format of every run.
// One `key = value` line per entry; blank lines and '#' comments are allowed
// in files. Keys keep first-insertion order so serialization is stable.
class RunConfig {
public:
  void set(const std::string& key, std::string value);
  void set_int(const std::string& key, std::int64_t v);
  void set_double(const std::string& key, double v);
  void set_bool(const std::string& key, bool v);

  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;  // throws when absent
  std::int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;  // "true" / "false"

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  // Rejects any key not in `known`.
  void require_known(const std::vector<std::string>& known) const;

  std::string serialize() const;
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& file);
  void save(const std::filesystem::path& file) const;

private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace ctdx
