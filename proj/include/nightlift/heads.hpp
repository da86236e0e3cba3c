#pragma once

#include <cstdint>
#include <vector>

namespace nightlift {

// Dense single-anchor detector head maps on a grid_h x grid_w anchor grid.
// objectness holds raw logits (one per cell); box_delta holds the four
// regression channels as channel-major planes: box_delta[c*HW + cell],
// c in {dx, dy, dw, dh}.
struct HeadOutputs {
  int grid_h = 0;
  int grid_w = 0;
  std::vector<double> objectness;
  std::vector<double> box_delta;

  std::size_t cells() const {
    return static_cast<std::size_t>(grid_h) * static_cast<std::size_t>(grid_w);
  }
  bool same_grid(const HeadOutputs& other) const {
    return grid_h == other.grid_h && grid_w == other.grid_w;
  }
};

// Ground-truth assignment on the same grid. labels: 1 = positive anchor,
// 0 = negative, -1 = ignored (in the ambiguous IoU band). box_delta holds
// regression targets, meaningful only where labels == 1.
struct AnchorTargets {
  int grid_h = 0;
  int grid_w = 0;
  std::vector<std::int8_t> labels;
  std::vector<double> box_delta;

  std::size_t cells() const {
    return static_cast<std::size_t>(grid_h) * static_cast<std::size_t>(grid_w);
  }
  std::size_t positives() const;
};

}  // namespace nightlift
