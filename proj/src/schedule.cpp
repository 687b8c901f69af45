// SPDX-License-Identifier: Apache-2.0

#include "depthvar/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace depthvar {

namespace {

constexpr int kMaxBisectionSteps = 200;
constexpr double kSolveTolerance = 1e-9;
// Linear families: slope bound; A(c) at the bound is below 1e-12.
constexpr double kLinearParamBound = 1e12;
// Sigmoid: |k (x - c)| >= 40 saturates the logistic in double precision.
constexpr double kSigmoidSaturation = 40.0;

double softplus(double t) {
  return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

struct ParamRange {
  double lo;
  double hi;
};

ParamRange param_range(const ScheduleFamily& family) {
  switch (family.kind) {
    case ScheduleKind::sigmoid:
      return {-kSigmoidSaturation / family.sharpness, 1.0 + kSigmoidSaturation / family.sharpness};
    case ScheduleKind::linear_a:
      return {0.0, kLinearParamBound};
    case ScheduleKind::linear_b:
      return {-kLinearParamBound, 0.0};
  }
  throw std::logic_error("unhandled schedule kind");
}

void check_family(const ScheduleFamily& family) {
  if (family.kind == ScheduleKind::sigmoid && !(family.sharpness > 0.0)) {
    throw std::invalid_argument("sigmoid schedule needs a positive sharpness k");
  }
}

}  // namespace

std::string_view to_string(ReferenceMetric m) {
  switch (m) {
    case ReferenceMetric::mae: return "mae";
    case ReferenceMetric::mse: return "mse";
    case ReferenceMetric::sub: return "sub";
  }
  return "unknown";
}

ReferenceMetric parse_reference_metric(std::string_view s) {
  if (s == "mae" || s == "MAE") return ReferenceMetric::mae;
  if (s == "mse" || s == "MSE") return ReferenceMetric::mse;
  if (s == "sub" || s == "SUB") return ReferenceMetric::sub;
  throw std::invalid_argument("unknown reference metric '" + std::string(s) + "'");
}

std::string_view to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::sigmoid: return "sigmoid";
    case ScheduleKind::linear_a: return "linear_a";
    case ScheduleKind::linear_b: return "linear_b";
  }
  return "unknown";
}

ScheduleKind parse_schedule_kind(std::string_view s) {
  if (s == "sigmoid") return ScheduleKind::sigmoid;
  if (s == "linear_a" || s == "linear-a") return ScheduleKind::linear_a;
  if (s == "linear_b" || s == "linear-b") return ScheduleKind::linear_b;
  throw std::invalid_argument("unknown schedule family '" + std::string(s) + "'");
}

std::string_view to_string(BudgetMode m) {
  switch (m) {
    case BudgetMode::segment_integral: return "segment_integral";
    case BudgetMode::full_integral: return "full_integral";
  }
  return "unknown";
}

BudgetMode parse_budget_mode(std::string_view s) {
  if (s == "segment_integral") return BudgetMode::segment_integral;
  if (s == "full_integral") return BudgetMode::full_integral;
  throw std::invalid_argument("unknown budget mode '" + std::string(s) + "'");
}

void SchedulerConfig::validate(int num_layers) const {
  if (layer_begin < 0 || layer_end < layer_begin || layer_end >= num_layers) {
    throw std::invalid_argument("reference layer range [" + std::to_string(layer_begin) + ", " +
                                std::to_string(layer_end) + "] invalid for " +
                                std::to_string(num_layers) + " blocks");
  }
  if (!(eta > 0.0 && eta < 1.0)) throw std::invalid_argument("eta must lie in (0, 1)");
  if (reference_scale < 0) throw std::invalid_argument("reference scale must be non-negative");
  check_family(family);
}

// ---------------------------------------------------------------------------
// Decision ranks

ScalarMap reference_response(const FeatureGrid& delta, ReferenceMetric metric) {
  if (delta.channels() < 1) throw std::invalid_argument("reference_response: no channels");
  ScalarMap out(delta.height(), delta.width());
  const double inv_c = 1.0 / delta.channels();
  for (int p = 0; p < delta.positions(); ++p) {
    double acc = 0.0;
    for (double v : delta.pixel(p)) {
      switch (metric) {
        case ReferenceMetric::mae: acc += std::abs(v); break;
        case ReferenceMetric::mse: acc += v * v; break;
        case ReferenceMetric::sub: acc += v; break;
      }
    }
    out[static_cast<std::size_t>(p)] = acc * inv_c;
  }
  if (metric == ReferenceMetric::sub) {
    double mean = 0.0;
    for (double v : out.data()) mean += v;
    mean /= static_cast<double>(out.size());
    for (double& v : out.data()) v -= mean;
  }
  return out;
}

ScalarMap base_decision_map(const LayerCache& cache, const SchedulerConfig& cfg, int height,
                            int width) {
  if (cache.empty()) throw std::invalid_argument("base_decision_map: empty layer cache");
  if (cfg.layer_begin < 0 || cfg.layer_end < cfg.layer_begin ||
      cfg.layer_end >= cache.num_blocks()) {
    throw std::out_of_range("reference layer range [" + std::to_string(cfg.layer_begin) + ", " +
                            std::to_string(cfg.layer_end) + "] outside cache of " +
                            std::to_string(cache.num_blocks()) + " blocks");
  }
  ScalarMap sum(cache.height(), cache.width());
  for (int b = cfg.layer_begin; b <= cfg.layer_end; ++b) {
    const ScalarMap r = reference_response(cache.block_delta(b), cfg.metric);
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += r[i];
  }
  return bilinear_resize(sum, height, width);
}

ScalarMap percentile_ranks(const ScalarMap& base) {
  std::vector<double> sorted(base.data().begin(), base.data().end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  ScalarMap out(base.height(), base.width());
  for (std::size_t i = 0; i < base.size(); ++i) {
    const auto above = sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), base[i]);
    out[i] = static_cast<double>(above) / n;
  }
  return out;
}

DecisionRankArtifacts decision_ranks(const LayerCache& cache, const SchedulerConfig& cfg,
                                     int height, int width) {
  DecisionRankArtifacts art;
  art.base = base_decision_map(cache, cfg, height, width);
  art.percentiles = percentile_ranks(art.base);
  return art;
}

// ---------------------------------------------------------------------------
// Schedule functions

double schedule_value(const ScheduleFamily& family, double param, double x) {
  double g = 0.0;
  switch (family.kind) {
    case ScheduleKind::sigmoid: g = 1.0 / (1.0 + std::exp(family.sharpness * (x - param))); break;
    case ScheduleKind::linear_a: g = 1.0 - param * x; break;
    case ScheduleKind::linear_b: g = param * (x - 1.0); break;
  }
  return std::clamp(g, 0.0, 1.0);
}

double schedule_area(const ScheduleFamily& family, double param) {
  switch (family.kind) {
    case ScheduleKind::sigmoid: {
      const double k = family.sharpness;
      // x - softplus(k (x - c)) / k is an antiderivative of the logistic.
      return 1.0 - (softplus(k * (1.0 - param)) - softplus(-k * param)) / k;
    }
    case ScheduleKind::linear_a: {
      const double c = std::max(param, 0.0);
      return c <= 1.0 ? 1.0 - 0.5 * c : 0.5 / c;
    }
    case ScheduleKind::linear_b: {
      const double a = std::max(-param, 0.0);
      return a <= 1.0 ? 0.5 * a : 1.0 - 0.5 / a;
    }
  }
  throw std::logic_error("unhandled schedule kind");
}

double budget_integral(const ScheduleFamily& family, double param, double eta, BudgetMode mode) {
  const double area = schedule_area(family, param);
  return mode == BudgetMode::segment_integral ? eta * area : area;
}

BudgetSolution solve_budget_param(const ScheduleFamily& family, double eta, double target,
                                  BudgetMode mode) {
  check_family(family);
  if (!(target > 0.0)) throw std::invalid_argument("budget target must be positive");
  if (!(eta > 0.0 && eta < 1.0)) throw std::invalid_argument("eta must lie in (0, 1)");

  const double area_target = mode == BudgetMode::segment_integral ? target / eta : target;
  const ParamRange range = param_range(family);
  double lo = range.lo;
  double hi = range.hi;
  const double area_lo = schedule_area(family, lo);
  const double area_hi = schedule_area(family, hi);
  const bool increasing = area_hi > area_lo;
  const double area_min = std::min(area_lo, area_hi);
  const double area_max = std::max(area_lo, area_hi);

  auto saturate = [&](double param) {
    return BudgetSolution{param, budget_integral(family, param, eta, mode), true};
  };
  if (area_target >= area_max) return saturate(increasing ? hi : lo);
  if (area_target <= area_min) return saturate(increasing ? lo : hi);

  double mid = 0.5 * (lo + hi);
  for (int step = 0; step < kMaxBisectionSteps; ++step) {
    mid = 0.5 * (lo + hi);
    const double area = schedule_area(family, mid);
    if (std::abs(area - area_target) <= 1e-13 || mid == lo || mid == hi) break;
    if ((area < area_target) == increasing) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double realized = budget_integral(family, mid, eta, mode);
  if (std::abs(schedule_area(family, mid) - area_target) > kSolveTolerance) {
    throw std::runtime_error("budget solve did not converge within " +
                             std::to_string(kMaxBisectionSteps) + " bisection steps");
  }
  return {mid, realized, false};
}

double rotated_schedule(const ScheduleFamily& family, double param, double eta, double rho) {
  if (rho <= eta) return schedule_value(family, param, rho / eta);
  return schedule_value(family, param, (1.0 - rho) / (1.0 - eta));
}

ScalarMap depth_scores(const ScalarMap& percentiles, const SchedulerConfig& cfg, double param) {
  ScalarMap out(percentiles.height(), percentiles.width());
  for (std::size_t i = 0; i < percentiles.size(); ++i) {
    const double rho = percentiles[i];
    out[i] = cfg.rotation_enabled ? rotated_schedule(cfg.family, param, cfg.eta, rho)
                                  : schedule_value(cfg.family, param, rho);
  }
  return out;
}

DepthMap depth_map(const ScalarMap& scores, int num_layers) {
  if (num_layers < 0) throw std::invalid_argument("depth_map: negative layer count");
  DepthMap out(scores.height(), scores.width());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double d = std::floor(scores[i] * num_layers);
    out[i] = std::clamp(static_cast<int>(d), 0, num_layers);
  }
  return out;
}

}  // namespace depthvar
