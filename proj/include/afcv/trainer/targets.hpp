#pragma once

#include <map>
#include <vector>

#include "afcv/avdata/types.hpp"
#include "afcv/crossover/crossover.hpp"
#include "afcv/trainer/losses.hpp"

namespace afcv::trainer {

/// Per-location training targets of one frame on the stride grid.
struct LocationTargets {
  Tensor cls;                     // [K, Hf, Wf] one-hot at positive cells
  std::vector<BoxTarget> boxes;   // one per positive cell
  std::map<int, std::vector<crossover::GridPoint>> positives;  // instance id -> its positive cells, anchor first
  int num_positive() const { return static_cast<int>(boxes.size()); }
};

/// A cell is positive for an instance when the pixel at its center lies in the
/// instance's visible mask; a cell claimed by several instances goes to the one
/// with the smallest box. Anchor cells that are free, or whose instance would
/// otherwise own nothing, are assigned to their instance.
LocationTargets build_targets(const std::vector<avdata::InstanceAnnotation>& instances, int num_classes,
                              int grid_height, int grid_width, int stride);

}  // namespace afcv::trainer
