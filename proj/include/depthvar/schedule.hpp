// SPDX-License-Identifier: Apache-2.0
//
// Adaptive depth score scheduling: previous-scale layer changes become a
// decision rank map, rank percentiles, and finally per-position depth scores
// through a budget-constrained, cyclically rotated schedule function.

#pragma once

#include <optional>
#include <string_view>

#include "depthvar/grid.hpp"
#include "depthvar/layer_cache.hpp"
#include "depthvar/mask.hpp"

namespace depthvar {

enum class ReferenceMetric { mae, mse, sub };

std::string_view to_string(ReferenceMetric m);
ReferenceMetric parse_reference_metric(std::string_view s);

enum class ScheduleKind { sigmoid, linear_a, linear_b };

std::string_view to_string(ScheduleKind k);
ScheduleKind parse_schedule_kind(std::string_view s);

/// G(x) on [0, 1]. `sharpness` is only read by the sigmoid.
///   sigmoid:   1 / (1 + exp(k (x - c)))   c free
///   linear_a:  1 - c x                    c >= 0
///   linear_b:  c (x - 1)                  c <= 0
struct ScheduleFamily {
  ScheduleKind kind = ScheduleKind::sigmoid;
  double sharpness = 12.0;
};

enum class BudgetMode {
  segment_integral,  // integral of the rotated schedule over [0, eta]
  full_integral,     // integral over [0, 1]
};

std::string_view to_string(BudgetMode m);
BudgetMode parse_budget_mode(std::string_view s);

struct SchedulerConfig {
  ReferenceMetric metric = ReferenceMetric::mae;
  // Inclusive block range feeding the decision rank map.
  int layer_begin = 3;
  int layer_end = 19;
  ScheduleFamily family{};
  double eta = 0.8;
  int reference_scale = 6;
  bool rotation_enabled = true;
  BudgetMode budget_mode = BudgetMode::segment_integral;
  // Skips the budget solve and uses this schedule parameter at every dynamic scale.
  std::optional<double> fixed_param;

  /// Throws std::invalid_argument when a field is out of range for `num_layers`.
  void validate(int num_layers) const;
};

struct DecisionRankArtifacts {
  ScalarMap base;
  ScalarMap percentiles;
};

struct BudgetSolution {
  double param = 0.0;
  // Integral actually achieved under the requested mode.
  double realized = 0.0;
  bool saturated = false;
};

ScalarMap reference_response(const FeatureGrid& delta, ReferenceMetric metric);

/// Sum of reference responses over the configured block range, resized to h x w.
ScalarMap base_decision_map(const LayerCache& cache, const SchedulerConfig& cfg, int height,
                            int width);

/// Fraction of positions holding a strictly greater value; ties share a rank.
ScalarMap percentile_ranks(const ScalarMap& base);

DecisionRankArtifacts decision_ranks(const LayerCache& cache, const SchedulerConfig& cfg,
                                     int height, int width);

double schedule_value(const ScheduleFamily& family, double param, double x);

/// Closed-form integral of G over [0, 1].
double schedule_area(const ScheduleFamily& family, double param);

/// Integral of the rotated schedule under `mode`: eta * A(c) or A(c).
double budget_integral(const ScheduleFamily& family, double param, double eta, BudgetMode mode);

/// Finds the schedule parameter whose budget integral equals `target`, by
/// bisection on the monotone area A(c). Saturates at the parameter bound when
/// the target is out of reach.
BudgetSolution solve_budget_param(const ScheduleFamily& family, double eta, double target,
                                  BudgetMode mode);

/// G(rho / eta) below the pivot, G((1 - rho) / (1 - eta)) above it.
double rotated_schedule(const ScheduleFamily& family, double param, double eta, double rho);

ScalarMap depth_scores(const ScalarMap& percentiles, const SchedulerConfig& cfg, double param);

/// floor(s * L) per position, clamped to [0, L].
DepthMap depth_map(const ScalarMap& scores, int num_layers);

}  // namespace depthvar
