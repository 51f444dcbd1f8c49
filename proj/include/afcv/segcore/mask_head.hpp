#pragma once

#include <vector>

#include "afcv/core/autograd.hpp"

namespace afcv::segcore {

using ag::Var;

/// Channel widths of the dynamic mask head, input first: {C_m + 2, 8, 8, 1}.
/// Every layer is a 1x1 convolution; ReLU follows all but the last.
struct MaskHeadLayout {
  std::vector<int> channels;

  static MaskHeadLayout for_mask_channels(int mask_channels, int hidden = 8);
  int input_channels() const { return channels.front(); }
  int num_layers() const { return static_cast<int>(channels.size()) - 1; }
  /// Length of the flat filter vector: per layer out*in weights then out biases.
  int num_params() const;
};

/// Relative-offset map [2, H, W] for anchor (x, y): channel 0 = (col - x) / W,
/// channel 1 = (row - y) / H.
Tensor make_coordinate_map(int x, int y, int height, int width);

/// Applies the dynamic 1x1-conv MLP whose weights are unpacked from `filters`
/// to every pixel of `input` [C_in, H, W]. Returns pre-sigmoid logits [1, H, W].
/// Differentiable in both the input map and the filter vector.
Var mask_head(const Var& input, const Var& filters, const MaskHeadLayout& layout);

}  // namespace afcv::segcore
