// SPDX-License-Identifier: Apache-2.0

#include "depthvar/dynamic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace depthvar {

namespace {

void check_cache(const LayerCache& cache, int num_layers) {
  if (cache.empty()) throw std::invalid_argument("layer cache is empty");
  if (cache.num_blocks() != num_layers) {
    throw std::invalid_argument("layer cache holds " + std::to_string(cache.num_blocks()) +
                                " block deltas, model has " + std::to_string(num_layers));
  }
}

double cosine(std::span<const double> a, std::span<const double> b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t t = 0; t < a.size(); ++t) {
    dot += a[t] * b[t];
    na += a[t] * a[t];
    nb += b[t] * b[t];
  }
  const double denom = std::sqrt(na) * std::sqrt(nb);
  return denom > 0.0 ? dot / denom : 0.0;
}

// Gathered rows of the positions selected by `pick`, in raster order.
struct Gathered {
  std::vector<Position> positions;
  std::vector<int> flat;
  std::vector<double> rows;
};

template <typename Pick>
Gathered gather(const FeatureGrid& x, Pick&& pick) {
  Gathered g;
  for (int m = 0; m < x.height(); ++m) {
    for (int n = 0; n < x.width(); ++n) {
      const int p = m * x.width() + n;
      if (!pick(p)) continue;
      g.positions.push_back({m, n});
      g.flat.push_back(p);
      const auto px = x.pixel(p);
      g.rows.insert(g.rows.end(), px.begin(), px.end());
    }
  }
  return g;
}

void scatter(FeatureGrid& out, const std::vector<int>& flat, const std::vector<double>& rows) {
  const std::size_t cc = static_cast<std::size_t>(out.channels());
  for (std::size_t i = 0; i < flat.size(); ++i) {
    std::copy_n(rows.begin() + static_cast<std::ptrdiff_t>(i * cc), cc, out.pixel(flat[i]).begin());
  }
}

void add_proxy(FeatureGrid& out, const FeatureGrid& proxy, int p) {
  auto dst = out.pixel(p);
  const auto src = proxy.pixel(p);
  for (std::size_t t = 0; t < dst.size(); ++t) dst[t] += src[t];
}

}  // namespace

std::string_view to_string(Baseline b) {
  switch (b) {
    case Baseline::depthvar: return "depthvar";
    case Baseline::dense: return "dense";
    case Baseline::hard_prune: return "hard_prune";
    case Baseline::hard_prune_sobel: return "hard_prune_sobel";
  }
  return "unknown";
}

Baseline parse_baseline(std::string_view s) {
  if (s == "depthvar") return Baseline::depthvar;
  if (s == "dense") return Baseline::dense;
  if (s == "hard_prune") return Baseline::hard_prune;
  if (s == "hard_prune_sobel") return Baseline::hard_prune_sobel;
  throw std::invalid_argument("unknown baseline '" + std::string(s) + "'");
}

void PipelineConfig::validate(int num_layers, int num_scales) const {
  if (dynamic_start < 1) throw std::invalid_argument("dynamic_start must be at least 1");
  scheduler.validate(num_layers);
  if (scheduler.reference_scale >= num_scales) {
    throw std::invalid_argument("reference scale " + std::to_string(scheduler.reference_scale) +
                                " outside schedule of " + std::to_string(num_scales) + " scales");
  }
  if (!(restore_threshold >= -1.0 && restore_threshold <= 1.0)) {
    throw std::invalid_argument("restore threshold must lie in [-1, 1]");
  }
  if (restore_window < 1 || restore_window % 2 == 0) {
    throw std::invalid_argument("restore window must be odd and positive");
  }
}

// ---------------------------------------------------------------------------
// Single-scale execution

ScaleOutput masked_scale_inference(const ToyVarModel& model, const FeatureGrid& f_prev,
                                   const LayerMask& mask, const LayerCache& cache,
                                   const ScaleStep& step, const FeatureGrid& condition) {
  if (mask.layers() != model.num_layers || mask.height() != step.height ||
      mask.width() != step.width) {
    throw std::invalid_argument("layer mask shape does not match the model and scale");
  }
  check_cache(cache, model.num_layers);

  ScaleOutput out;
  out.states.reserve(static_cast<std::size_t>(model.num_layers) + 1);
  out.states.push_back(embed_input(model, f_prev, step, condition));
  for (int b = 0; b < model.num_layers; ++b) {
    const FeatureGrid& x = out.states.back();
    FeatureGrid next = x;
    const Gathered active = gather(x, [&](int p) { return mask.active(b, p); });
    if (!active.positions.empty()) {
      scatter(next, active.flat, layer_forward(model, b, active.rows, active.positions));
    }
    if (active.flat.size() < static_cast<std::size_t>(x.positions())) {
      const FeatureGrid proxy = bilinear_resize(cache.block_delta(b), step.height, step.width);
      for (int p = 0; p < x.positions(); ++p) {
        if (!mask.active(b, p)) add_proxy(next, proxy, p);
      }
    }
    out.states.push_back(std::move(next));
  }
  HeadOutput head = head_and_lookup(model, out.states.back());
  out.logits = std::move(head.logits);
  out.codes = std::move(head.codes);
  return out;
}

ScaleOutput hard_prune_scale_inference(const ToyVarModel& model, const FeatureGrid& f_prev,
                                       const BinaryMap& keep_mask, const LayerCache& cache,
                                       const ScaleStep& step, const FeatureGrid& condition) {
  if (keep_mask.height() != step.height || keep_mask.width() != step.width) {
    throw std::invalid_argument("keep mask shape does not match the scale");
  }
  check_cache(cache, model.num_layers);

  ScaleOutput out;
  out.states.reserve(static_cast<std::size_t>(model.num_layers) + 1);
  out.states.push_back(embed_input(model, f_prev, step, condition));
  Gathered kept = gather(out.states.front(), [&](int p) { return keep_mask[static_cast<std::size_t>(p)]; });
  for (int b = 0; b < model.num_layers; ++b) {
    FeatureGrid next = out.states.back();
    if (!kept.positions.empty()) {
      kept.rows = layer_forward(model, b, kept.rows, kept.positions);
      scatter(next, kept.flat, kept.rows);
    }
    if (kept.flat.size() < keep_mask.size()) {
      const FeatureGrid proxy = bilinear_resize(cache.block_delta(b), step.height, step.width);
      for (int p = 0; p < next.positions(); ++p) {
        if (!keep_mask[static_cast<std::size_t>(p)]) add_proxy(next, proxy, p);
      }
    }
    out.states.push_back(std::move(next));
  }
  HeadOutput head = head_and_lookup(model, out.states.back());
  out.logits = std::move(head.logits);
  out.codes = std::move(head.codes);
  return out;
}

FeatureGrid restore_fully_masked(const FeatureGrid& logits, const BinaryMap& depth0_mask,
                                 const FeatureGrid& f_prev_up, double threshold, int window) {
  if (window < 1 || window % 2 == 0) throw std::invalid_argument("restore window must be odd");
  const int h = logits.height();
  const int w = logits.width();
  if (depth0_mask.height() != h || depth0_mask.width() != w || f_prev_up.height() != h ||
      f_prev_up.width() != w) {
    throw std::invalid_argument("restore_fully_masked: spatial shapes differ");
  }
  const int radius = window / 2;
  FeatureGrid out = logits;
  for (int m = 0; m < h; ++m) {
    for (int n = 0; n < w; ++n) {
      if (!depth0_mask.at(m, n)) continue;
      double best = -std::numeric_limits<double>::infinity();
      int best_flat = -1;
      for (int mm = std::max(0, m - radius); mm <= std::min(h - 1, m + radius); ++mm) {
        for (int nn = std::max(0, n - radius); nn <= std::min(w - 1, n + radius); ++nn) {
          if (depth0_mask.at(mm, nn)) continue;
          const double s = cosine(f_prev_up.pixel(m, n), f_prev_up.pixel(mm, nn));
          if (s > best) {
            best = s;
            best_flat = mm * w + nn;
          }
        }
      }
      if (best_flat >= 0 && best > threshold) {
        const auto src = logits.pixel(best_flat);
        std::copy(src.begin(), src.end(), out.pixel(m, n).begin());
      }
    }
  }
  return out;
}

FeatureGrid blend_codes(const ScalarMap& scores, const FeatureGrid& codes) {
  if (scores.height() != codes.height() || scores.width() != codes.width()) {
    throw std::invalid_argument("blend_codes: score map and codes differ in shape");
  }
  FeatureGrid out = codes;
  for (int p = 0; p < out.positions(); ++p) {
    const double s = scores[static_cast<std::size_t>(p)];
    for (double& v : out.pixel(p)) v *= s;
  }
  return out;
}

FeatureGrid accumulate_feature(const FeatureGrid& f_prev, const FeatureGrid& z, int final_height,
                               int final_width) {
  if (f_prev.height() != final_height || f_prev.width() != final_width) {
    throw std::invalid_argument("accumulate_feature: f_prev is not at final resolution");
  }
  return f_prev + bilinear_resize(z, final_height, final_width);
}

BinaryMap top_fraction_mask(const ScalarMap& score, double fraction) {
  const std::size_t n = score.size();
  const auto keep = static_cast<std::size_t>(
      std::clamp(std::ceil(std::clamp(fraction, 0.0, 1.0) * static_cast<double>(n)), 0.0,
                 static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  BinaryMap out(score.height(), score.width());
  for (std::size_t i = 0; i < keep; ++i) out.set(order[i], true);
  return out;
}

// ---------------------------------------------------------------------------
// Multi-scale pipeline

double budget_target(const ScaleSchedule& schedule, int reference_scale, int scale_index) {
  const ScaleStep ref = schedule.step(reference_scale);
  const ScaleStep cur = schedule.step(scale_index);
  return std::min(1.0, static_cast<double>(ref.positions()) / cur.positions());
}

bool is_dynamic_scale(const PipelineConfig& cfg, int index) {
  return cfg.baseline != Baseline::dense && index > 0 && index >= cfg.dynamic_start &&
         index > cfg.scheduler.reference_scale;
}

DenseRun run_dense_pipeline(const ToyVarModel& model, const ScaleSchedule& schedule,
                            std::uint64_t seed, bool keep_states) {
  const FeatureGrid cond = condition_map(model, seed);
  const int hf = schedule.final_height();
  const int wf = schedule.final_width();
  FeatureGrid f(hf, wf, model.channels);
  DenseRun run;
  for (int i = 0; i < schedule.count(); ++i) {
    ScaleOutput out = full_scale_inference(model, f, schedule.step(i), cond);
    f = accumulate_feature(f, out.codes, hf, wf);
    run.features.push_back(f);
    run.codes.push_back(std::move(out.codes));
    if (keep_states) run.states.push_back(std::move(out.states));
  }
  return run;
}

FeatureGrid run_early_exit_pipeline(const ToyVarModel& model, const ScaleSchedule& schedule,
                                    std::uint64_t seed, int exit_layer) {
  const FeatureGrid cond = condition_map(model, seed);
  const int hf = schedule.final_height();
  const int wf = schedule.final_width();
  FeatureGrid f(hf, wf, model.channels);
  for (int i = 0; i < schedule.count(); ++i) {
    const HeadOutput out = early_exit_inference(model, f, schedule.step(i), exit_layer, cond);
    f = accumulate_feature(f, out.codes, hf, wf);
  }
  return f;
}

RunReport run_pipeline(const ToyVarModel& model, const ScaleSchedule& schedule,
                       const PipelineConfig& cfg, std::uint64_t seed) {
  return run_pipeline(model, schedule, cfg, seed, run_dense_pipeline(model, schedule, seed));
}

RunReport run_pipeline(const ToyVarModel& model, const ScaleSchedule& schedule,
                       const PipelineConfig& cfg, std::uint64_t seed, const DenseRun& reference) {
  cfg.validate(model.num_layers, schedule.count());
  if (static_cast<int>(reference.features.size()) != schedule.count()) {
    throw std::invalid_argument("dense reference does not cover the scale schedule");
  }
  const SchedulerConfig& sc = cfg.scheduler;
  const int num_layers = model.num_layers;
  const FeatureGrid cond = condition_map(model, seed);
  const int hf = schedule.final_height();
  const int wf = schedule.final_width();

  std::optional<ScalarMap> sobel_importance;
  if (cfg.baseline == Baseline::hard_prune_sobel) {
    sobel_importance = sobel_magnitude(channel_mean(reference.features.back()));
  }

  RunReport report;
  report.seed = seed;
  FeatureGrid f(hf, wf, model.channels);
  LayerCache cache;

  for (int i = 0; i < schedule.count(); ++i) {
    const ScaleStep step = schedule.step(i);
    ScaleReport sr;
    sr.index = i;
    sr.height = step.height;
    sr.width = step.width;
    sr.dynamic = is_dynamic_scale(cfg, i) && !cache.empty() && num_layers > 0;

    ScaleOutput out;
    FeatureGrid z;
    if (!sr.dynamic) {
      out = full_scale_inference(model, f, step, cond);
      z = out.codes;
    } else {
      sr.target = budget_target(schedule, sc.reference_scale, i);
      if (sc.fixed_param) {
        sr.schedule_param = *sc.fixed_param;
        sr.realized_integral = budget_integral(sc.family, sr.schedule_param, sc.eta, sc.budget_mode);
      } else {
        const BudgetSolution sol = solve_budget_param(sc.family, sc.eta, sr.target, sc.budget_mode);
        sr.schedule_param = sol.param;
        sr.realized_integral = sol.realized;
        sr.saturated = sol.saturated;
      }
      const DecisionRankArtifacts ranks = decision_ranks(cache, sc, step.height, step.width);
      const ScalarMap scores = depth_scores(ranks.percentiles, sc, sr.schedule_param);
      const FeatureGrid f_prev_up = bilinear_resize(f, step.height, step.width);

      DepthMap depth;
      if (cfg.baseline == Baseline::depthvar) {
        depth = depth_map(scores, num_layers);
        const LayerMask mask = build_layer_mask(depth, num_layers, cfg.mask_strategy);
        out = masked_scale_inference(model, f, mask, cache, step, cond);
        const FeatureGrid logits = restore_fully_masked(out.logits, depth.zero_depth(), f_prev_up,
                                                        cfg.restore_threshold, cfg.restore_window);
        out.codes = lookup_codes(model, logits);
        out.logits = logits;
        z = cfg.blending_enabled ? blend_codes(scores, out.codes) : out.codes;
      } else {
        const ScalarMap importance =
            cfg.baseline == Baseline::hard_prune
                ? ranks.base
                : bilinear_resize(*sobel_importance, step.height, step.width);
        const BinaryMap keep = top_fraction_mask(importance, sr.target);
        depth = DepthMap(step.height, step.width);
        for (std::size_t p = 0; p < keep.size(); ++p) depth[p] = keep[p] ? num_layers : 0;
        out = hard_prune_scale_inference(model, f, keep, cache, step, cond);
        const FeatureGrid logits = restore_fully_masked(out.logits, depth.zero_depth(), f_prev_up,
                                                        cfg.restore_threshold, cfg.restore_window);
        out.codes = lookup_codes(model, logits);
        out.logits = logits;
        z = out.codes;
      }
      sr.compute_fraction = depth.mean() / num_layers;
      double seg = 0.0;
      for (std::size_t p = 0; p < depth.size(); ++p) {
        if (ranks.percentiles[p] <= sc.eta) seg += static_cast<double>(depth[p]) / num_layers;
      }
      sr.segment_fraction = seg / static_cast<double>(depth.size());
      sr.depth = std::move(depth);
    }

    f = accumulate_feature(f, z, hf, wf);
    if (!f.all_finite()) {
      throw std::runtime_error("non-finite feature values after scale " + std::to_string(i));
    }
    cache = LayerCache::from_states(i, out.states);

    const FeatureGrid& ref_codes = reference.codes[static_cast<std::size_t>(i)];
    const FeatureGrid& ref_f = reference.features[static_cast<std::size_t>(i)];
    sr.code_ssim = ssim(z, ref_codes);
    sr.code_mse = mean_squared_error(z.data(), ref_codes.data());
    sr.feature_ssim = ssim(f, ref_f);
    sr.feature_mse = mean_squared_error(f.data(), ref_f.data());

    const double dense = static_cast<double>(step.positions()) * num_layers;
    report.dense_cost += dense;
    report.masked_cost += dense * sr.compute_fraction;
    report.scales.push_back(std::move(sr));
  }
  report.speedup = report.masked_cost > 0.0 ? report.dense_cost / report.masked_cost
                                            : (report.dense_cost > 0.0
                                                   ? std::numeric_limits<double>::infinity()
                                                   : 1.0);
  report.final_ssim = report.scales.back().feature_ssim;
  report.final_mse = report.scales.back().feature_mse;
  report.final_feature = std::move(f);
  return report;
}

}  // namespace depthvar
