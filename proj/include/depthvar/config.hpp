// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: a sectioned key/value file ([model], [scheduler],
// [pipeline], [run], [ablate]) plus "section.key=value" overrides.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "depthvar/dynamic.hpp"
#include "depthvar/model.hpp"

namespace depthvar {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelSpec {
  std::uint64_t seed = 0;
  int layers = 32;
  int channels = 32;
  int codebook_size = 64;
  ScaleSchedule schedule = ScaleSchedule::default_schedule();
};

struct ExperimentConfig {
  ModelSpec model{};
  PipelineConfig pipeline{};
  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path out_dir = "out";
  std::string ablate_axis = "rotation";
  // Empty means the axis' built-in sweep.
  std::vector<std::string> ablate_values;
};

using ConfigEntries = std::map<std::string, std::string>;

/// Flattened "section.key" -> value pairs. Throws ConfigError naming the path
/// when the file is missing or malformed.
ConfigEntries read_config_entries(const std::filesystem::path& path);

/// Applies one "section.key=value" override.
void apply_override(ConfigEntries& entries, const std::string& assignment);

/// Builds a validated config; unknown keys and bad values throw ConfigError.
ExperimentConfig config_from_entries(const ConfigEntries& entries);

/// Reads `path` (defaults only when absent), applies overrides, validates.
ExperimentConfig load_config(const std::optional<std::filesystem::path>& path,
                             const std::vector<std::string>& overrides = {});

/// Canonical key/value form; config_from_entries(config_entries(c)) == c.
ConfigEntries config_entries(const ExperimentConfig& cfg);
std::string render_config(const ExperimentConfig& cfg);

std::vector<std::uint64_t> parse_seed_list(const std::string& text);
std::vector<std::pair<int, int>> parse_scale_list(const std::string& text);

}  // namespace depthvar
