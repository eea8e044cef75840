#pragma once

#include "rescbm/discovery.hpp"
#include "rescbm/residual_trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace rescbm {

/// Everything a CLI run needs. Defaults < config file < command-line flags.
struct RunConfig {
  std::filesystem::path features;          // embedding container, one row per sample
  std::filesystem::path labels;            // sample_id,label_name CSV
  std::filesystem::path classes;           // class names, one per line
  std::filesystem::path base_bank;         // bank manifest
  std::filesystem::path candidate_bank;    // bank manifest
  std::filesystem::path class_embeddings;  // embedding container, one row per class
  std::filesystem::path output_dir = ".";

  double lambda = 1e-4;
  double l1_ratio = 0.5;
  std::size_t residual_count = 10;
  double alpha = 0.1;
  std::size_t top_m = 5;
  double learning_rate = 1e-3;
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  std::size_t patience = 0;
  double noise_scale = 0.01;
  double epsilon = 1e-8;
  std::size_t discovery_epochs = 50;
  double discovery_learning_rate = 1e-3;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

/// Keys accepted in config files and as `--key value` flags.
const std::vector<std::string>& run_config_keys();

/// Sets one key. `where` prefixes error messages (e.g. "run.cfg:12" or "--epochs").
/// Relative paths are resolved against `base_dir`.
void set_run_config_value(RunConfig& config, const std::string& key, const std::string& value,
                          const std::string& where, const std::filesystem::path& base_dir = {});

/// Parses a config file body. Errors name the source and line.
RunConfig parse_run_config(const std::string& text, const std::string& source_name,
                           const std::filesystem::path& base_dir = {}, RunConfig defaults = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig defaults = {});

/// Every key with its current value, paths as given.
std::map<std::string, std::string> run_config_values(const RunConfig& config);
std::string format_run_config(const RunConfig& config);

/// Throws ValidationError naming the first key that is required but unset or missing on disk.
void require_paths(const RunConfig& config, const std::vector<std::string>& keys);

TrainConfig train_config(const RunConfig& config);
DiscoveryConfig discovery_config(const RunConfig& config);

}  // namespace rescbm
