// SPDX-License-Identifier: Apache-2.0
//
// RunReport serialization. metrics.csv columns, one row per scale:
//   scale,height,width,dynamic,target,schedule_param,realized_integral,
//   saturated,compute_fraction,segment_fraction,code_ssim,code_mse,
//   feature_ssim,feature_mse
// report.json mirrors those rows under "scales" (dynamic scales also carry
// their depth map) and adds the run totals and the resolved config.

#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "depthvar/config.hpp"
#include "depthvar/dynamic.hpp"

namespace depthvar {

inline constexpr const char* kMetricsCsvHeader =
    "scale,height,width,dynamic,target,schedule_param,realized_integral,saturated,"
    "compute_fraction,segment_fraction,code_ssim,code_mse,feature_ssim,feature_mse";

/// Shortest round-trip decimal form used in every CSV cell.
std::string format_number(double v);

nlohmann::json report_to_json(const RunReport& report, const ExperimentConfig& cfg);
std::string report_to_csv(const RunReport& report);

/// Writes report.json, metrics.csv, depth_<i>.pgm per dynamic scale and
/// final.pgm (channel mean of the final feature map) into `dir`.
void write_report_files(const std::filesystem::path& dir, const RunReport& report,
                        const ExperimentConfig& cfg);

}  // namespace depthvar
