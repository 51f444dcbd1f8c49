#pragma once

#include <vector>

#include "afcv/core/autograd.hpp"

namespace afcv::ops {

using ag::Var;

// Elementwise, equal shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, Scalar s);
Var add_scalar(const Var& a, Scalar s);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var exp(const Var& a);
Var square(const Var& a);
/// sqrt(a + eps)
Var sqrt(const Var& a, Scalar eps = 0.0);

/// Scalar reductions; results have shape [1].
Var sum(const Var& a);
Var mean(const Var& a);
/// Sum of a list of scalars.
Var add_n(const std::vector<Var>& terms);

Var reshape(const Var& a, Shape shape);

/// Concatenation of rank-3 maps along the channel axis.
Var concat_channels(const std::vector<Var>& parts);
/// [C] -> [C, H, W] by repetition over every location.
Var tile_spatial(const Var& v, int height, int width);
/// [C, H, W] -> [C]
Var global_avg_pool(const Var& x);
/// [C, H, W] -> [C] feature vector at one location.
Var gather_location(const Var& x, int y, int x_pos);
/// v / sqrt(|v|^2 + eps)
Var l2_normalize(const Var& v, Scalar eps = 1e-12);

/// Bilinear resampling of a [C, H, W] map with half-pixel centers.
Var upsample_bilinear(const Var& x, int out_height, int out_width);

struct Conv2dSpec {
  int stride = 1;
  int pad_h = 0;
  int pad_w = 0;
};

/// x: [C, H, W], weight: [O, C, kh, kw], bias: [O] or empty.
Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dSpec spec);

}  // namespace afcv::ops
