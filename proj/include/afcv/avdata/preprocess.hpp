#pragma once

#include "afcv/avdata/types.hpp"

namespace afcv::avdata {

struct Size2 {
  int height = 0;
  int width = 0;
  bool operator==(const Size2&) const = default;
};

/// Output size for shortest-edge resizing: shorter side -> target, aspect kept,
/// longer side capped at max_size (max_size <= 0 disables the cap).
Size2 shortest_edge_size(int height, int width, int target, int max_size);

/// Bilinear resize of a [3, H, W] frame.
Frame resize_frame(const Frame& frame, Size2 size);
/// Nearest-neighbour resize; output stays binary.
BinaryMask resize_mask(const BinaryMask& mask, Size2 size);

Frame resize_shortest_edge(const Frame& frame, int target, int max_size);

/// Resizes every frame and annotation of a clip (bboxes recomputed).
VideoClip resize_clip_shortest_edge(const VideoClip& clip, int target, int max_size);

}  // namespace afcv::avdata
