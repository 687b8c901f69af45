// SPDX-License-Identifier: Apache-2.0

#include "depthvar/layer_cache.hpp"

#include <stdexcept>
#include <string>

namespace depthvar {

LayerCache LayerCache::from_states(int scale_index, std::span<const FeatureGrid> states) {
  if (states.empty()) throw std::invalid_argument("LayerCache needs at least the embedded state");
  LayerCache cache;
  cache.scale_index_ = scale_index;
  cache.embedding_ = states.front();
  cache.block_deltas_.reserve(states.size() - 1);
  for (std::size_t l = 1; l < states.size(); ++l) {
    cache.block_deltas_.push_back(states[l] - states[l - 1]);
  }
  return cache;
}

const FeatureGrid& LayerCache::block_delta(int block) const {
  if (block < 0 || block >= num_blocks()) {
    throw std::out_of_range("layer cache has no delta for block " + std::to_string(block) +
                            " (holds " + std::to_string(num_blocks()) + ")");
  }
  return block_deltas_[static_cast<std::size_t>(block)];
}

FeatureGrid LayerCache::reconstruct() const {
  FeatureGrid out = embedding_;
  for (const FeatureGrid& d : block_deltas_) out += d;
  return out;
}

}  // namespace depthvar
