// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "depthvar/grid.hpp"

namespace depthvar {

/// Per-block residual changes of one scale, kept as the proxy source for the
/// next scale. Block b contributes r^{b+1} - r^b; the embedded input r^0 is
/// stored alongside so the stack telescopes back to r^L.
class LayerCache {
 public:
  LayerCache() = default;

  /// `states` holds r^0 .. r^L of one scale.
  static LayerCache from_states(int scale_index, std::span<const FeatureGrid> states);

  int scale_index() const { return scale_index_; }
  int num_blocks() const { return static_cast<int>(block_deltas_.size()); }
  int height() const { return embedding_.height(); }
  int width() const { return embedding_.width(); }
  bool empty() const { return embedding_.empty(); }

  const FeatureGrid& embedding() const { return embedding_; }
  /// r^{b+1} - r^b for block b in [0, L).
  const FeatureGrid& block_delta(int block) const;

  /// r^0 + sum_b delta_b.
  FeatureGrid reconstruct() const;

 private:
  int scale_index_ = -1;
  FeatureGrid embedding_;
  std::vector<FeatureGrid> block_deltas_;
};

}  // namespace depthvar
