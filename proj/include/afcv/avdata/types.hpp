#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "afcv/core/tensor.hpp"

namespace afcv::avdata {

/// RGB frame stored channel-first, [3, H, W], values in [0, 1].
using Frame = Tensor;

struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;  // row-major, 0 or 1

  BinaryMask() = default;
  BinaryMask(int h, int w) : height(h), width(w), bits(static_cast<std::size_t>(h) * w, 0) {}

  std::uint8_t& at(int y, int x) { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::size_t area() const;
  bool operator==(const BinaryMask&) const = default;
};

/// Inclusive pixel bounds.
struct BBox {
  int x_min = 0;
  int y_min = 0;
  int x_max = -1;
  int y_max = -1;
  bool operator==(const BBox&) const = default;
};

/// Tight bounding box of the foreground; x_max < x_min for an empty mask.
BBox tight_bbox(const BinaryMask& mask);

struct InstanceAnnotation {
  int instance_id = 0;
  int class_id = 0;
  BinaryMask mask;
  BBox bbox;
  bool operator==(const InstanceAnnotation&) const = default;
};

struct AudioTrack {
  int sample_rate = 0;
  std::vector<std::vector<double>> channels;  // each in [-1, 1]

  int num_channels() const { return static_cast<int>(channels.size()); }
  std::size_t num_samples() const { return channels.empty() ? 0 : channels[0].size(); }
  double duration_seconds() const;
};

struct VideoClip {
  std::string clip_id;
  std::vector<Frame> frames;
  double fps = 0.0;
  std::vector<std::vector<InstanceAnnotation>> annotations;  // one list per frame
  AudioTrack audio;

  int num_frames() const { return static_cast<int>(frames.size()); }
  int height() const { return frames.empty() ? 0 : frames[0].dim(1); }
  int width() const { return frames.empty() ? 0 : frames[0].dim(2); }
};

/// Throws DataError naming the violated invariant.
void validate_clip(const VideoClip& clip);

}  // namespace afcv::avdata
