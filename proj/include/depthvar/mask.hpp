// SPDX-License-Identifier: Apache-2.0
//
// Integer depth maps to layer-major binary masks.

#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "depthvar/grid.hpp"

namespace depthvar {

/// Per-position layer counts in [0, L].
class DepthMap {
 public:
  DepthMap() = default;
  DepthMap(int height, int width, int fill = 0);
  DepthMap(int height, int width, std::vector<int> depths);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return depths_.size(); }

  int at(int m, int n) const { return depths_[static_cast<std::size_t>(m) * width_ + n]; }
  int& at(int m, int n) { return depths_[static_cast<std::size_t>(m) * width_ + n]; }
  int operator[](std::size_t i) const { return depths_[i]; }
  int& operator[](std::size_t i) { return depths_[i]; }
  std::span<const int> data() const { return depths_; }

  double mean() const;
  /// Positions with depth zero.
  BinaryMap zero_depth() const;

  friend bool operator==(const DepthMap&, const DepthMap&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<int> depths_;
};

/// L x h x w activation bits stored layer-major so each layer slice is contiguous.
class LayerMask {
 public:
  LayerMask() = default;
  LayerMask(int layers, int height, int width, bool fill = false);

  int layers() const { return layers_; }
  int height() const { return height_; }
  int width() const { return width_; }
  int positions() const { return height_ * width_; }

  bool at(int layer, int m, int n) const { return bits_[index(layer, m, n)] != 0; }
  void set(int layer, int m, int n, bool v) { bits_[index(layer, m, n)] = v ? 1 : 0; }
  bool active(int layer, int flat) const {
    return bits_[static_cast<std::size_t>(layer) * positions() + flat] != 0;
  }

  BinaryMap layer_slice(int layer) const;
  std::size_t active_count() const;
  std::size_t active_count(int layer) const;

  friend bool operator==(const LayerMask&, const LayerMask&) = default;

 private:
  std::size_t index(int layer, int m, int n) const {
    return (static_cast<std::size_t>(layer) * height_ + m) * width_ + n;
  }

  int layers_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> bits_;
};

enum class MaskStrategy { bit_reversal, uniform };

std::string_view to_string(MaskStrategy s);
MaskStrategy parse_mask_strategy(std::string_view s);

/// k-bit reversal of x. Requires 0 <= x < 2^k.
std::uint32_t bit_reverse(std::uint32_t x, int k);

/// Bit-reversal order over ceil(log2 L) bits with indices >= L dropped.
/// A bijection onto {0..L-1} that keeps every prefix spread over the stack.
std::vector<int> layer_permutation(int num_layers);

/// First `depth` entries of layer_permutation(num_layers).
std::vector<int> active_layer_set(int depth, int num_layers);

/// floor(j * L / d) for j = 0..d-1.
std::vector<int> uniform_layer_set(int depth, int num_layers);

LayerMask build_layer_mask(const DepthMap& depths, int num_layers,
                           MaskStrategy strategy = MaskStrategy::bit_reversal);

/// Active (layer, position) pairs over L * h * w.
double compute_fraction(const LayerMask& mask);

/// Number of active positions per layer.
std::vector<std::size_t> layer_activation_counts(const LayerMask& mask);

}  // namespace depthvar
