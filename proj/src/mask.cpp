// SPDX-License-Identifier: Apache-2.0

#include "depthvar/mask.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

namespace depthvar {

DepthMap::DepthMap(int height, int width, int fill) : height_(height), width_(width) {
  if (height < 1 || width < 1) throw std::invalid_argument("DepthMap dimensions must be positive");
  depths_.assign(static_cast<std::size_t>(height) * width, fill);
}

DepthMap::DepthMap(int height, int width, std::vector<int> depths)
    : height_(height), width_(width), depths_(std::move(depths)) {
  if (height < 1 || width < 1) throw std::invalid_argument("DepthMap dimensions must be positive");
  if (depths_.size() != static_cast<std::size_t>(height) * width) {
    throw std::invalid_argument("DepthMap data length does not match shape");
  }
}

double DepthMap::mean() const {
  if (depths_.empty()) return 0.0;
  const long long total = std::accumulate(depths_.begin(), depths_.end(), 0LL);
  return static_cast<double>(total) / static_cast<double>(depths_.size());
}

BinaryMap DepthMap::zero_depth() const {
  BinaryMap out(height_, width_);
  for (std::size_t i = 0; i < depths_.size(); ++i) out.set(i, depths_[i] == 0);
  return out;
}

LayerMask::LayerMask(int layers, int height, int width, bool fill)
    : layers_(layers), height_(height), width_(width) {
  if (layers < 0 || height < 1 || width < 1) throw std::invalid_argument("invalid LayerMask shape");
  bits_.assign(static_cast<std::size_t>(layers) * height * width, fill ? 1 : 0);
}

BinaryMap LayerMask::layer_slice(int layer) const {
  if (layer < 0 || layer >= layers_) throw std::out_of_range("layer index out of range");
  BinaryMap out(height_, width_);
  for (int p = 0; p < positions(); ++p) out.set(static_cast<std::size_t>(p), active(layer, p));
  return out;
}

std::size_t LayerMask::active_count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

std::size_t LayerMask::active_count(int layer) const {
  const auto begin = bits_.begin() + static_cast<std::ptrdiff_t>(layer) * positions();
  return static_cast<std::size_t>(std::count(begin, begin + positions(), std::uint8_t{1}));
}

std::string_view to_string(MaskStrategy s) {
  switch (s) {
    case MaskStrategy::bit_reversal: return "bit_reversal";
    case MaskStrategy::uniform: return "uniform";
  }
  return "unknown";
}

MaskStrategy parse_mask_strategy(std::string_view s) {
  if (s == "bit_reversal") return MaskStrategy::bit_reversal;
  if (s == "uniform") return MaskStrategy::uniform;
  throw std::invalid_argument("unknown mask strategy '" + std::string(s) + "'");
}

std::uint32_t bit_reverse(std::uint32_t x, int k) {
  if (k < 0 || k > 31) throw std::invalid_argument("bit_reverse: k must be in [0, 31]");
  if (x >= (std::uint32_t{1} << k)) {
    throw std::out_of_range("bit_reverse: " + std::to_string(x) + " does not fit in " +
                            std::to_string(k) + " bits");
  }
  std::uint32_t r = 0;
  for (int j = 0; j < k; ++j) {
    r = (r << 1) | ((x >> j) & 1U);
  }
  return r;
}

std::vector<int> layer_permutation(int num_layers) {
  if (num_layers < 1) throw std::invalid_argument("layer_permutation: need at least one layer");
  int k = 0;
  while ((1 << k) < num_layers) ++k;
  std::vector<int> order;
  order.reserve(static_cast<std::size_t>(num_layers));
  for (std::uint32_t x = 0; x < (std::uint32_t{1} << k); ++x) {
    const auto r = static_cast<int>(bit_reverse(x, k));
    if (r < num_layers) order.push_back(r);
  }
  return order;
}

std::vector<int> active_layer_set(int depth, int num_layers) {
  if (depth < 0 || depth > num_layers) {
    throw std::out_of_range("active_layer_set: depth " + std::to_string(depth) +
                            " outside [0, " + std::to_string(num_layers) + "]");
  }
  std::vector<int> order = layer_permutation(num_layers);
  order.resize(static_cast<std::size_t>(depth));
  return order;
}

std::vector<int> uniform_layer_set(int depth, int num_layers) {
  if (depth < 0 || depth > num_layers) {
    throw std::out_of_range("uniform_layer_set: depth " + std::to_string(depth) +
                            " outside [0, " + std::to_string(num_layers) + "]");
  }
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(depth));
  for (int j = 0; j < depth; ++j) {
    out.push_back(static_cast<int>(static_cast<long long>(j) * num_layers / depth));
  }
  return out;
}

LayerMask build_layer_mask(const DepthMap& depths, int num_layers, MaskStrategy strategy) {
  LayerMask mask(num_layers, depths.height(), depths.width());
  if (num_layers == 0) return mask;
  // Every position with depth d shares the same layer set, so build each once.
  std::vector<std::vector<int>> sets(static_cast<std::size_t>(num_layers) + 1);
  for (int d = 0; d <= num_layers; ++d) {
    sets[d] = strategy == MaskStrategy::bit_reversal ? active_layer_set(d, num_layers)
                                                     : uniform_layer_set(d, num_layers);
  }
  for (int m = 0; m < depths.height(); ++m) {
    for (int n = 0; n < depths.width(); ++n) {
      const int d = depths.at(m, n);
      if (d < 0 || d > num_layers) {
        throw std::out_of_range("build_layer_mask: depth " + std::to_string(d) + " outside [0, " +
                                std::to_string(num_layers) + "]");
      }
      for (int layer : sets[d]) mask.set(layer, m, n, true);
    }
  }
  return mask;
}

double compute_fraction(const LayerMask& mask) {
  const std::size_t total = static_cast<std::size_t>(mask.layers()) * mask.positions();
  if (total == 0) return 0.0;
  return static_cast<double>(mask.active_count()) / static_cast<double>(total);
}

std::vector<std::size_t> layer_activation_counts(const LayerMask& mask) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(mask.layers()));
  for (int l = 0; l < mask.layers(); ++l) counts[l] = mask.active_count(l);
  return counts;
}

}  // namespace depthvar
