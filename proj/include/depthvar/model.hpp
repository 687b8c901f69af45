// SPDX-License-Identifier: Apache-2.0
//
// Deterministic toy next-scale-prediction transformer. Each block is a
// pre-norm single-head attention layer with 2D rotary phases followed by a
// two-layer GELU feed-forward, both residual and scaled by 1/L. The head
// projects to V logits and a hard argmax selects a codebook vector.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "depthvar/grid.hpp"

namespace depthvar {

/// Row-major dense matrix; rows() is the input width when used as x * W.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  std::span<const double> row(int r) const {
    return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

/// out = x * W for a single row vector.
void multiply_row(std::span<const double> x, const Matrix& w, std::span<double> out);

struct BlockParams {
  std::vector<double> attn_norm_gain;
  std::vector<double> ffn_norm_gain;
  Matrix wq, wk, wv, wo;  // C x C
  Matrix w_up;            // C x hidden
  Matrix w_down;          // hidden x C

  friend bool operator==(const BlockParams&, const BlockParams&) = default;
};

struct ToyVarModel {
  std::uint64_t seed = 0;
  int num_layers = 0;
  int channels = 0;
  int codebook_size = 0;
  double residual_scale = 1.0;
  double rope_base = 10000.0;

  std::vector<BlockParams> blocks;
  Matrix embed;     // C x C, applied to the downsampled feature map
  Matrix head;      // C x V
  Matrix codebook;  // V x C

  /// Additive embedding identifying scale `index`, derived from the seed.
  std::vector<double> scale_embedding(int index) const;

  friend bool operator==(const ToyVarModel&, const ToyVarModel&) = default;
};

ToyVarModel init_model(std::uint64_t seed, int num_layers, int channels, int codebook_size);

inline constexpr int kConditionSize = 4;

/// Coarse kConditionSize x kConditionSize x C conditioning map standing in for
/// an encoded prompt; one per run seed. Resized to every scale and added to r^0.
FeatureGrid condition_map(const ToyVarModel& model, std::uint64_t prompt_seed);

struct Position {
  int m = 0;
  int n = 0;
  friend bool operator==(const Position&, const Position&) = default;
};

struct ScaleStep {
  int index = 0;
  int height = 1;
  int width = 1;
  int positions() const { return height * width; }
};

/// Coarse-to-fine token grid sizes; scale 0 is the 1x1 start token.
class ScaleSchedule {
 public:
  ScaleSchedule() = default;
  explicit ScaleSchedule(std::vector<std::pair<int, int>> sizes);

  static ScaleSchedule default_schedule();

  int count() const { return static_cast<int>(sizes_.size()); }
  ScaleStep step(int index) const;
  const ScaleStep& final_step() const { return steps_.back(); }
  int final_height() const { return steps_.back().height; }
  int final_width() const { return steps_.back().width; }
  const std::vector<std::pair<int, int>>& sizes() const { return sizes_; }

 private:
  std::vector<std::pair<int, int>> sizes_;
  std::vector<ScaleStep> steps_;
};

/// r^0 .. r^L of one scale.
using LayerStates = std::vector<FeatureGrid>;

struct ScaleOutput {
  LayerStates states;
  FeatureGrid logits;
  FeatureGrid codes;
};

struct HeadOutput {
  FeatureGrid logits;
  FeatureGrid codes;
};

/// Row-major positions of an h x w grid.
std::vector<Position> grid_positions(int height, int width);

/// r^0 = down(f_prev) * W_embed + scale embedding (+ resized condition map when non-empty).
FeatureGrid embed_input(const ToyVarModel& model, const FeatureGrid& f_prev, const ScaleStep& step,
                        const FeatureGrid& condition = FeatureGrid{});

/// One block over `rows` (one row of C values per entry of `positions`).
/// Only these rows form the attention context; rotary phases come from the
/// grid coordinates, not from the storage order.
std::vector<double> layer_forward(const ToyVarModel& model, int block, std::span<const double> rows,
                                  std::span<const Position> positions);

/// Grid form of layer_forward: tokens where `active` is set are gathered,
/// processed together and scattered back; the rest are copied unchanged.
FeatureGrid layer_forward(const ToyVarModel& model, int block, const FeatureGrid& x,
                          const BinaryMap& active);

HeadOutput head_and_lookup(const ToyVarModel& model, const FeatureGrid& hidden);

/// Codebook rows at the per-position argmax of `logits` (lowest index on ties).
FeatureGrid lookup_codes(const ToyVarModel& model, const FeatureGrid& logits);

ScaleOutput full_scale_inference(const ToyVarModel& model, const FeatureGrid& f_prev,
                                 const ScaleStep& step, const FeatureGrid& condition = FeatureGrid{});

/// Cosine similarity between consecutive states per token; channel l holds
/// cos(r^{l+1}, r^l). Zero-norm vectors give 0.
FeatureGrid layer_similarity(const LayerStates& states);

HeadOutput early_exit_inference(const ToyVarModel& model, const FeatureGrid& f_prev,
                                const ScaleStep& step, int exit_layer,
                                const FeatureGrid& condition = FeatureGrid{});

/// Golden-state blobs: "DVFX" magic, u32 height, width, channels, then
/// little-endian float32 values.
void write_state_fixture(const std::filesystem::path& path, const FeatureGrid& g);
FeatureGrid read_state_fixture(const std::filesystem::path& path);

}  // namespace depthvar
