// SPDX-License-Identifier: Apache-2.0
//
// Command-line harness. Exit codes: 0 success, 2 configuration error,
// 3 runtime error.

#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace depthvar {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitRuntimeError = 3;

struct CommandOptions {
  std::optional<std::filesystem::path> config;
  std::vector<std::string> overrides;  // --set section.key=value, in order
  std::optional<std::string> seeds;
  std::optional<std::filesystem::path> out;
  std::optional<std::string> axis;
  std::optional<std::string> values;
};

/// Per seed: out/seed_<s>/{report.json, metrics.csv, depth_<i>.pgm, final.pgm}.
int cmd_generate(const CommandOptions& opts, std::ostream& log, std::ostream& err);

/// out/ablate_<axis>.csv with columns
///   axis,value,seed,scale,compute_fraction,speedup,feature_ssim,feature_mse,code_ssim
/// One row per (value, seed, scale) and one "mean"/"all" row per value.
int cmd_ablate(const CommandOptions& opts, std::ostream& log, std::ostream& err);

/// out/probe_similarity.csv  seed,scale,layer,mean_similarity,min_similarity,max_similarity
/// out/probe_early_exit.csv  seed,exit_layer,feature_ssim,feature_mse
int cmd_probe(const CommandOptions& opts, std::ostream& log, std::ostream& err);

/// Axis names accepted by cmd_ablate and their default sweeps.
std::vector<std::string> ablation_axes();
std::vector<std::string> default_axis_values(const std::string& axis);

int run_cli(int argc, char** argv);

}  // namespace depthvar
