#pragma once

#include <CLI11.hpp>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ctdx/corpus.hpp"
#include "ctdx/runconfig.hpp"

namespace ctdx::cli {

// Ties config-file keys to command-line flags: a file given via --config
// fills in whatever the command line left unset (flags win), and the fully
// resolved values are echoed back out so a run can be replayed from its own
// echo.
class FlagMerge {
public:
  FlagMerge(CLI::App& sub, std::string command) : sub_(&sub), command_(std::move(command)) {}

  void bind(const std::string& key, const std::string& flag, std::string& slot);
  void bind_int(const std::string& key, const std::string& flag, int& slot);
  void bind_u64(const std::string& key, const std::string& flag, std::uint64_t& slot);
  void bind_double(const std::string& key, const std::string& flag, double& slot);
  void bind_bool(const std::string& key, const std::string& flag, bool& slot);

  // Loads the file, rejects unknown keys, applies values to unset flags.
  void merge_file(const std::string& config_path);
  RunConfig resolved() const;

private:
  struct Item {
    std::string key, flag;
    std::function<void(const std::string&)> apply;
    std::function<std::string()> current;
  };
  CLI::App* sub_;
  std::string command_;
  std::vector<Item> items_;
};

// Explicit flag wins, then the CTDX_OUT_DIR environment variable; anything
// else is a usage error.
std::filesystem::path resolve_out_dir(const std::string& out_flag);

// Prints the resolved config to stdout and writes <out>/run-config.txt.
void echo_config(const RunConfig& cfg, const std::filesystem::path& out_dir);

// "lo:hi" or a single number meaning lo == hi.
IntRange parse_int_range(const std::string& text);
RealRange parse_real_range(const std::string& text);

void register_generate(CLI::App& app);
void register_train_cls(CLI::App& app);
void register_train_seg(CLI::App& app);
void register_eval(CLI::App& app);
void register_infer(CLI::App& app);
void register_explain(CLI::App& app);

}  // namespace ctdx::cli
