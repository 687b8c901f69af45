// SPDX-License-Identifier: Apache-2.0
//
// Dynamic-depth executor: masked layer execution with cached-proxy
// restoration, fully-masked-token restoration, depth-based code blending and
// the multi-scale accumulation loop, plus the hard-pruning baseline.

#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "depthvar/grid.hpp"
#include "depthvar/layer_cache.hpp"
#include "depthvar/mask.hpp"
#include "depthvar/model.hpp"
#include "depthvar/schedule.hpp"

namespace depthvar {

enum class Baseline {
  depthvar,          // per-token dynamic depth
  dense,             // every scale at full depth
  hard_prune,        // keep the top-ranked tokens at full depth, drop the rest
  hard_prune_sobel,  // keep-masks from Sobel edges of the dense reference output
};

std::string_view to_string(Baseline b);
Baseline parse_baseline(std::string_view s);

struct PipelineConfig {
  // Scales below this index always run at full depth.
  int dynamic_start = 1;
  SchedulerConfig scheduler{};
  MaskStrategy mask_strategy = MaskStrategy::bit_reversal;
  bool blending_enabled = true;
  double restore_threshold = 0.9;
  int restore_window = 5;
  Baseline baseline = Baseline::depthvar;

  void validate(int num_layers, int num_scales) const;
};

/// Dense scale-by-scale outputs used as the fidelity reference.
struct DenseRun {
  std::vector<FeatureGrid> features;  // f_i at final resolution
  std::vector<FeatureGrid> codes;     // z_i at scale resolution
  std::vector<LayerStates> states;    // only filled when requested
};

struct ScaleReport {
  int index = 0;
  int height = 0;
  int width = 0;
  bool dynamic = false;
  double target = 1.0;
  double schedule_param = 0.0;
  double realized_integral = 1.0;
  bool saturated = false;
  double compute_fraction = 1.0;
  // (1 / hw) * sum over positions with rank percentile <= eta of D / L.
  double segment_fraction = 0.0;
  double code_ssim = 1.0;
  double code_mse = 0.0;
  double feature_ssim = 1.0;
  double feature_mse = 0.0;
  std::optional<DepthMap> depth;
};

struct RunReport {
  std::uint64_t seed = 0;
  std::vector<ScaleReport> scales;
  double dense_cost = 0.0;
  double masked_cost = 0.0;
  double speedup = 1.0;
  double final_ssim = 1.0;
  double final_mse = 0.0;
  FeatureGrid final_feature;
};

/// Runs every block; masked (layer, position) pairs take the previous state
/// plus the upsampled cached delta of that block instead of the block output.
/// Active tokens attend only to the other active tokens of the same layer.
ScaleOutput masked_scale_inference(const ToyVarModel& model, const FeatureGrid& f_prev,
                                   const LayerMask& mask, const LayerCache& cache,
                                   const ScaleStep& step, const FeatureGrid& condition = FeatureGrid{});

/// Copies logits into depth-zero positions from the most similar active
/// neighbour inside a window x window box, when the cosine similarity of the
/// previous-scale features exceeds `threshold`.
FeatureGrid restore_fully_masked(const FeatureGrid& logits, const BinaryMap& depth0_mask,
                                 const FeatureGrid& f_prev_up, double threshold, int window);

/// z = s * code per position.
FeatureGrid blend_codes(const ScalarMap& scores, const FeatureGrid& codes);

/// f_prev + up(z, h_final, w_final).
FeatureGrid accumulate_feature(const FeatureGrid& f_prev, const FeatureGrid& z, int final_height,
                               int final_width);

/// Kept tokens run all blocks densely among themselves; pruned tokens take the
/// pure proxy path.
ScaleOutput hard_prune_scale_inference(const ToyVarModel& model, const FeatureGrid& f_prev,
                                       const BinaryMap& keep_mask, const LayerCache& cache,
                                       const ScaleStep& step,
                                       const FeatureGrid& condition = FeatureGrid{});

/// Keeps the ceil(fraction * hw) highest-scoring positions; ties go to the
/// earlier raster position.
BinaryMap top_fraction_mask(const ScalarMap& score, double fraction);

/// Budget target min(1, h_R w_R / (h_i w_i)).
double budget_target(const ScaleSchedule& schedule, int reference_scale, int scale_index);

/// Whether scale `index` runs with dynamic depth under `cfg`.
bool is_dynamic_scale(const PipelineConfig& cfg, int index);

DenseRun run_dense_pipeline(const ToyVarModel& model, const ScaleSchedule& schedule,
                            std::uint64_t seed, bool keep_states = false);

/// Dense generation where every scale applies the head after `exit_layer` blocks.
FeatureGrid run_early_exit_pipeline(const ToyVarModel& model, const ScaleSchedule& schedule,
                                    std::uint64_t seed, int exit_layer);

RunReport run_pipeline(const ToyVarModel& model, const ScaleSchedule& schedule,
                       const PipelineConfig& cfg, std::uint64_t seed);
RunReport run_pipeline(const ToyVarModel& model, const ScaleSchedule& schedule,
                       const PipelineConfig& cfg, std::uint64_t seed, const DenseRun& reference);

}  // namespace depthvar
