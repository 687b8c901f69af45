// SPDX-License-Identifier: Apache-2.0

#include "depthvar/report.hpp"

#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <stdexcept>

namespace depthvar {

namespace {

nlohmann::json number(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

std::string format_number(double v) {
  if (!std::isfinite(v)) return "nan";
  return fmt::format("{}", v);
}

nlohmann::json report_to_json(const RunReport& report, const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["seed"] = report.seed;
  j["dense_cost"] = number(report.dense_cost);
  j["masked_cost"] = number(report.masked_cost);
  j["speedup"] = number(report.speedup);
  j["final_ssim"] = number(report.final_ssim);
  j["final_mse"] = number(report.final_mse);
  j["num_layers"] = cfg.model.layers;

  nlohmann::json config = nlohmann::json::object();
  for (const auto& [key, value] : config_entries(cfg)) {
    if (key.starts_with("run.") || key.starts_with("ablate.")) continue;
    config[key] = value;
  }
  j["config"] = config;

  nlohmann::json scales = nlohmann::json::array();
  for (const ScaleReport& s : report.scales) {
    nlohmann::json row;
    row["scale"] = s.index;
    row["height"] = s.height;
    row["width"] = s.width;
    row["dynamic"] = s.dynamic;
    row["target"] = number(s.target);
    row["schedule_param"] = number(s.schedule_param);
    row["realized_integral"] = number(s.realized_integral);
    row["saturated"] = s.saturated;
    row["compute_fraction"] = number(s.compute_fraction);
    row["segment_fraction"] = number(s.segment_fraction);
    row["code_ssim"] = number(s.code_ssim);
    row["code_mse"] = number(s.code_mse);
    row["feature_ssim"] = number(s.feature_ssim);
    row["feature_mse"] = number(s.feature_mse);
    if (s.depth) {
      nlohmann::json depth = nlohmann::json::array();
      for (int m = 0; m < s.depth->height(); ++m) {
        nlohmann::json line = nlohmann::json::array();
        for (int n = 0; n < s.depth->width(); ++n) line.push_back(s.depth->at(m, n));
        depth.push_back(std::move(line));
      }
      row["depth"] = std::move(depth);
    }
    scales.push_back(std::move(row));
  }
  j["scales"] = std::move(scales);
  return j;
}

std::string report_to_csv(const RunReport& report) {
  std::string out = kMetricsCsvHeader;
  out += "\n";
  for (const ScaleReport& s : report.scales) {
    out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", s.index, s.height, s.width,
                       s.dynamic ? 1 : 0, format_number(s.target), format_number(s.schedule_param),
                       format_number(s.realized_integral), s.saturated ? 1 : 0,
                       format_number(s.compute_fraction), format_number(s.segment_fraction),
                       format_number(s.code_ssim), format_number(s.code_mse),
                       format_number(s.feature_ssim), format_number(s.feature_mse));
  }
  return out;
}

void write_report_files(const std::filesystem::path& dir, const RunReport& report,
                        const ExperimentConfig& cfg) {
  std::filesystem::create_directories(dir);
  write_text(dir / "report.json", report_to_json(report, cfg).dump(2) + "\n");
  write_text(dir / "metrics.csv", report_to_csv(report));
  for (const ScaleReport& s : report.scales) {
    if (!s.depth) continue;
    ScalarMap depth(s.depth->height(), s.depth->width());
    for (std::size_t p = 0; p < s.depth->size(); ++p) depth[p] = (*s.depth)[p];
    write_pgm(dir / fmt::format("depth_{}.pgm", s.index), depth);
  }
  write_pgm(dir / "final.pgm", channel_mean(report.final_feature));
}

}  // namespace depthvar
