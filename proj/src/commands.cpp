// SPDX-License-Identifier: Apache-2.0

#include "depthvar/commands.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>

#include "depthvar/config.hpp"
#include "depthvar/dynamic.hpp"
#include "depthvar/model.hpp"
#include "depthvar/report.hpp"

namespace depthvar {

namespace {

const std::map<std::string, std::vector<std::string>>& axis_table() {
  static const std::map<std::string, std::vector<std::string>> table = {
      {"schedule_family", {"sigmoid", "linear_a", "linear_b"}},
      {"rotation", {"true", "false"}},
      {"mask_strategy", {"bit_reversal", "uniform"}},
      {"reference_metric", {"mae", "mse", "sub"}},
      {"layer_range", {"3-19", "8-8", "10-16", "26-28"}},
      {"reference_scale", {"3", "5", "7"}},
      {"blending", {"true", "false"}},
      {"baseline", {"depthvar", "hard_prune", "hard_prune_sobel"}},
  };
  return table;
}

void apply_axis_value(ConfigEntries& entries, const std::string& axis, const std::string& value) {
  if (axis == "schedule_family") entries["scheduler.family"] = value;
  else if (axis == "rotation") entries["scheduler.rotation"] = value;
  else if (axis == "mask_strategy") entries["pipeline.mask_strategy"] = value;
  else if (axis == "reference_metric") entries["scheduler.metric"] = value;
  else if (axis == "reference_scale") entries["scheduler.reference_scale"] = value;
  else if (axis == "blending") entries["pipeline.blending"] = value;
  else if (axis == "baseline") entries["pipeline.baseline"] = value;
  else if (axis == "layer_range") {
    const auto dash = value.find('-');
    if (dash == std::string::npos) throw ConfigError("layer range '" + value + "' must be BEGIN-END");
    entries["scheduler.layer_begin"] = value.substr(0, dash);
    entries["scheduler.layer_end"] = value.substr(dash + 1);
  } else {
    throw ConfigError("unknown ablation axis '" + axis + "'");
  }
}

ExperimentConfig resolve(const CommandOptions& opts) {
  std::vector<std::string> overrides = opts.overrides;
  if (opts.seeds) overrides.push_back("run.seeds=" + *opts.seeds);
  if (opts.out) overrides.push_back("run.out=" + opts.out->string());
  if (opts.axis) overrides.push_back("ablate.axis=" + *opts.axis);
  if (opts.values) overrides.push_back("ablate.values=" + *opts.values);
  return load_config(opts.config, overrides);
}

ToyVarModel build_model(const ExperimentConfig& cfg) {
  return init_model(cfg.model.seed, cfg.model.layers, cfg.model.channels, cfg.model.codebook_size);
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

template <typename Body>
int guarded(std::ostream& err, Body&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntimeError;
  }
}

}  // namespace

std::vector<std::string> ablation_axes() {
  std::vector<std::string> out;
  for (const auto& [name, values] : axis_table()) out.push_back(name);
  return out;
}

std::vector<std::string> default_axis_values(const std::string& axis) {
  const auto it = axis_table().find(axis);
  if (it == axis_table().end()) throw ConfigError("unknown ablation axis '" + axis + "'");
  return it->second;
}

int cmd_generate(const CommandOptions& opts, std::ostream& log, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig cfg = resolve(opts);
    const ToyVarModel model = build_model(cfg);
    std::filesystem::create_directories(cfg.out_dir);
    write_file(cfg.out_dir / "config.ini", render_config(cfg));
    for (std::uint64_t seed : cfg.seeds) {
      const RunReport report = run_pipeline(model, cfg.model.schedule, cfg.pipeline, seed);
      const auto dir = cfg.out_dir / fmt::format("seed_{}", seed);
      write_report_files(dir, report, cfg);
      log << fmt::format("seed {}: speedup {:.3f}x, final SSIM {:.4f}, final MSE {:.3e} -> {}\n",
                         seed, report.speedup, report.final_ssim, report.final_mse, dir.string());
    }
    return kExitOk;
  });
}

int cmd_ablate(const CommandOptions& opts, std::ostream& log, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig base = resolve(opts);
    const std::string& axis = base.ablate_axis;
    const std::vector<std::string> values =
        base.ablate_values.empty() ? default_axis_values(axis) : base.ablate_values;
    if (!axis_table().contains(axis)) throw ConfigError("unknown ablation axis '" + axis + "'");

    std::vector<ExperimentConfig> variants;
    for (const std::string& value : values) {
      ConfigEntries entries = config_entries(base);
      apply_axis_value(entries, axis, value);
      variants.push_back(config_from_entries(entries));
    }

    const ToyVarModel model = build_model(base);
    std::map<std::uint64_t, DenseRun> references;
    for (std::uint64_t seed : base.seeds) {
      references.emplace(seed, run_dense_pipeline(model, base.model.schedule, seed));
    }

    std::string csv = "axis,value,seed,scale,compute_fraction,speedup,feature_ssim,feature_mse,code_ssim\n";
    for (std::size_t v = 0; v < values.size(); ++v) {
      double sum_fraction = 0, sum_speedup = 0, sum_ssim = 0, sum_mse = 0, sum_code = 0;
      for (std::uint64_t seed : base.seeds) {
        const RunReport r = run_pipeline(model, base.model.schedule, variants[v].pipeline, seed,
                                         references.at(seed));
        for (const ScaleReport& s : r.scales) {
          csv += fmt::format("{},{},{},{},{},{},{},{},{}\n", axis, values[v], seed, s.index,
                             format_number(s.compute_fraction), format_number(r.speedup),
                             format_number(s.feature_ssim), format_number(s.feature_mse),
                             format_number(s.code_ssim));
        }
        sum_fraction += r.masked_cost / r.dense_cost;
        sum_speedup += r.speedup;
        sum_ssim += r.final_ssim;
        sum_mse += r.final_mse;
        sum_code += r.scales.back().code_ssim;
      }
      const double n = static_cast<double>(base.seeds.size());
      csv += fmt::format("{},{},mean,all,{},{},{},{},{}\n", axis, values[v],
                         format_number(sum_fraction / n), format_number(sum_speedup / n),
                         format_number(sum_ssim / n), format_number(sum_mse / n),
                         format_number(sum_code / n));
      log << fmt::format("{}={}: mean speedup {:.3f}x, mean final SSIM {:.4f}\n", axis, values[v],
                         sum_speedup / n, sum_ssim / n);
    }
    std::filesystem::create_directories(base.out_dir);
    write_file(base.out_dir / fmt::format("ablate_{}.csv", axis), csv);
    return kExitOk;
  });
}

int cmd_probe(const CommandOptions& opts, std::ostream& log, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig cfg = resolve(opts);
    const ToyVarModel model = build_model(cfg);
    const ScaleSchedule& schedule = cfg.model.schedule;

    std::string sim_csv = "seed,scale,layer,mean_similarity,min_similarity,max_similarity\n";
    std::string exit_csv = "seed,exit_layer,feature_ssim,feature_mse\n";
    for (std::uint64_t seed : cfg.seeds) {
      const DenseRun dense = run_dense_pipeline(model, schedule, seed, /*keep_states=*/true);
      for (int i = 0; i < schedule.count(); ++i) {
        const FeatureGrid sim = layer_similarity(dense.states[static_cast<std::size_t>(i)]);
        for (int l = 0; l < sim.channels(); ++l) {
          double sum = 0, lo = 1, hi = -1;
          for (int p = 0; p < sim.positions(); ++p) {
            const double v = sim.pixel(p)[l];
            sum += v;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
          }
          sim_csv += fmt::format("{},{},{},{},{},{}\n", seed, i, l + 1,
                                 format_number(sum / sim.positions()), format_number(lo),
                                 format_number(hi));
        }
      }
      const FeatureGrid& reference = dense.features.back();
      for (int e = 1; e <= model.num_layers; ++e) {
        const FeatureGrid f = run_early_exit_pipeline(model, schedule, seed, e);
        exit_csv += fmt::format("{},{},{},{}\n", seed, e, format_number(ssim(f, reference)),
                                format_number(mean_squared_error(f.data(), reference.data())));
      }
      log << fmt::format("seed {}: probed {} scales, {} exit layers\n", seed, schedule.count(),
                         model.num_layers);
    }
    std::filesystem::create_directories(cfg.out_dir);
    write_file(cfg.out_dir / "probe_similarity.csv", sim_csv);
    write_file(cfg.out_dir / "probe_early_exit.csv", exit_csv);
    return kExitOk;
  });
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Per-token dynamic-depth inference on a toy next-scale-prediction transformer"};
  app.require_subcommand(1);

  CommandOptions opts;
  std::string config_path;
  std::string seeds;
  std::string out;
  std::string axis;
  std::string values;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Config file (sectioned key = value)");
    sub->add_option("--seeds", seeds, "Comma-separated run seeds (run.seeds)");
    sub->add_option("--set", opts.overrides, "Override section.key=value (repeatable)")
        ->allow_extra_args(false);
    sub->add_option("--out", out, "Output directory (run.out)");
  };
  CLI::App* generate = app.add_subcommand("generate", "Run the pipeline per seed and write reports");
  CLI::App* ablate = app.add_subcommand("ablate", "Sweep one configuration axis");
  CLI::App* probe = app.add_subcommand("probe", "Layer-similarity and early-exit probes");
  for (CLI::App* sub : {generate, ablate, probe}) add_common(sub);
  ablate->add_option("--axis", axis, "Axis: schedule_family, rotation, mask_strategy, "
                                     "reference_metric, layer_range, reference_scale, blending, "
                                     "baseline (ablate.axis)");
  ablate->add_option("--values", values, "Comma-separated axis values (ablate.values)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfigError;
  }

  if (!config_path.empty()) opts.config = config_path;
  if (!seeds.empty()) opts.seeds = seeds;
  if (!out.empty()) opts.out = out;
  if (!axis.empty()) opts.axis = axis;
  if (!values.empty()) opts.values = values;

  if (generate->parsed()) return cmd_generate(opts, std::cout, std::cerr);
  if (ablate->parsed()) return cmd_ablate(opts, std::cout, std::cerr);
  return cmd_probe(opts, std::cout, std::cerr);
}

}  // namespace depthvar
