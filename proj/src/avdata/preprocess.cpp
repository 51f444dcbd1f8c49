#include "afcv/avdata/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "afcv/core/error.hpp"

namespace afcv::avdata {

Size2 shortest_edge_size(int height, int width, int target, int max_size) {
  if (target <= 0) throw DataError("resize target must be positive");
  if (height <= 0 || width <= 0) throw DataError("cannot resize an empty frame");
  double scale = static_cast<double>(target) / std::min(height, width);
  const int longer = std::max(height, width);
  if (max_size > 0 && longer * scale > max_size) scale = static_cast<double>(max_size) / longer;
  return {static_cast<int>(std::lround(height * scale)), static_cast<int>(std::lround(width * scale))};
}

Frame resize_frame(const Frame& frame, Size2 size) {
  const int c = frame.dim(0);
  const int h = frame.dim(1);
  const int w = frame.dim(2);
  if (size.height == h && size.width == w) return frame;
  Frame out({c, size.height, size.width});
  const double sy = static_cast<double>(h) / size.height;
  const double sx = static_cast<double>(w) / size.width;
  for (int oy = 0; oy < size.height; ++oy) {
    const double fy = std::max(0.0, (oy + 0.5) * sy - 0.5);
    const int y0 = std::min(static_cast<int>(fy), h - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (int ox = 0; ox < size.width; ++ox) {
      const double fx = std::max(0.0, (ox + 0.5) * sx - 0.5);
      const int x0 = std::min(static_cast<int>(fx), w - 1);
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      for (int k = 0; k < c; ++k) {
        const double top = frame.at(k, y0, x0) * (1 - wx) + frame.at(k, y0, x1) * wx;
        const double bot = frame.at(k, y1, x0) * (1 - wx) + frame.at(k, y1, x1) * wx;
        out.at(k, oy, ox) = top * (1 - wy) + bot * wy;
      }
    }
  }
  return out;
}

BinaryMask resize_mask(const BinaryMask& mask, Size2 size) {
  if (size.height == mask.height && size.width == mask.width) return mask;
  BinaryMask out(size.height, size.width);
  for (int oy = 0; oy < size.height; ++oy) {
    const int y = std::min(mask.height - 1, static_cast<int>((oy + 0.5) * mask.height / size.height));
    for (int ox = 0; ox < size.width; ++ox) {
      const int x = std::min(mask.width - 1, static_cast<int>((ox + 0.5) * mask.width / size.width));
      out.at(oy, ox) = mask.at(y, x);
    }
  }
  return out;
}

Frame resize_shortest_edge(const Frame& frame, int target, int max_size) {
  return resize_frame(frame, shortest_edge_size(frame.dim(1), frame.dim(2), target, max_size));
}

VideoClip resize_clip_shortest_edge(const VideoClip& clip, int target, int max_size) {
  if (clip.frames.empty()) return clip;
  const Size2 size = shortest_edge_size(clip.height(), clip.width(), target, max_size);
  VideoClip out = clip;
  for (auto& f : out.frames) f = resize_frame(f, size);
  for (auto& anns : out.annotations) {
    std::vector<InstanceAnnotation> kept;
    for (auto& a : anns) {
      a.mask = resize_mask(a.mask, size);
      if (a.mask.area() == 0) continue;  // vanished under downscaling
      a.bbox = tight_bbox(a.mask);
      kept.push_back(std::move(a));
    }
    anns = std::move(kept);
  }
  return out;
}

}  // namespace afcv::avdata
