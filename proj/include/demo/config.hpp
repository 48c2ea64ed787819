// SPDX-License-Identifier: Apache-2.0
//
// INI-style configuration: "[section]" headers and "key = value" lines. Every
// key is addressed as "section.key" and listed by config_keys(); anything else
// is rejected before a command runs.
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "demo/data.hpp"
#include "demo/trainer.hpp"

namespace demo {

struct ExperimentConfig {
  TrainConfig train;
  SynthSpec synth;
  std::filesystem::path data_root = "data";
  std::filesystem::path output_dir = "demo_out";
  Index top_k = 10;
};

struct ConfigKey {
  std::string name;  // "section.key"
  std::string doc;
};

const std::vector<ConfigKey>& config_keys();

/// Sets one key; ConfigError for unknown keys or unparsable values.
void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const ExperimentConfig& config, const std::string& key);

/// Applies every key of an INI file in file order.
void load_config_file(ExperimentConfig& config, const std::filesystem::path& path);
/// Applies "section.key=value" strings in order.
void apply_overrides(ExperimentConfig& config, const std::vector<std::string>& overrides);

/// All keys with their current values.
std::map<std::string, std::string> to_key_values(const ExperimentConfig& config);
void from_key_values(ExperimentConfig& config, const std::map<std::string, std::string>& kv);
std::string to_ini(const ExperimentConfig& config);

/// Environment variable that relative output directories are resolved against.
inline constexpr const char* kOutputRootEnv = "DEMO_OUTPUT_ROOT";
std::filesystem::path resolve_output_dir(const std::filesystem::path& dir);

}  // namespace demo
