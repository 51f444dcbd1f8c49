#pragma once

#include <algorithm>
#include <vector>

#include "afcv/segcore/mask_head.hpp"

namespace afcv::testing {

// The dynamic head evaluated one pixel at a time with plain loops.
inline Tensor per_pixel_mlp(const Tensor& input, const Tensor& theta, const segcore::MaskHeadLayout& layout) {
  const int h = input.dim(1), w = input.dim(2);
  Tensor out({1, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      std::vector<double> v(layout.channels[0]);
      for (int c = 0; c < layout.channels[0]; ++c) v[c] = input.at(c, y, x);
      std::size_t off = 0;
      for (int l = 0; l < layout.num_layers(); ++l) {
        const int cin = layout.channels[l], cout = layout.channels[l + 1];
        std::vector<double> next(cout);
        for (int o = 0; o < cout; ++o) {
          double acc = theta[off + static_cast<std::size_t>(cout) * cin + o];
          for (int i = 0; i < cin; ++i) acc += theta[off + static_cast<std::size_t>(o) * cin + i] * v[i];
          next[o] = l + 1 < layout.num_layers() ? std::max(acc, 0.0) : acc;
        }
        off += static_cast<std::size_t>(cout) * cin + cout;
        v = std::move(next);
      }
      out.at(0, y, x) = v[0];
    }
  return out;
}

}  // namespace afcv::testing
