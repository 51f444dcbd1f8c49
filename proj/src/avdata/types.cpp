#include "afcv/avdata/types.hpp"

#include <cmath>
#include <map>
#include <string>

#include "afcv/core/error.hpp"

namespace afcv::avdata {

std::size_t BinaryMask::area() const {
  std::size_t n = 0;
  for (auto b : bits) n += b;
  return n;
}

BBox tight_bbox(const BinaryMask& mask) {
  BBox box{mask.width, mask.height, -1, -1};
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.at(y, x)) continue;
      box.x_min = std::min(box.x_min, x);
      box.y_min = std::min(box.y_min, y);
      box.x_max = std::max(box.x_max, x);
      box.y_max = std::max(box.y_max, y);
    }
  }
  if (box.x_max < 0) return BBox{};
  return box;
}

double AudioTrack::duration_seconds() const {
  return sample_rate > 0 ? static_cast<double>(num_samples()) / sample_rate : 0.0;
}

void validate_clip(const VideoClip& clip) {
  const std::string who = "clip '" + clip.clip_id + "': ";
  if (clip.fps <= 0) throw DataError(who + "fps must be positive");
  if (clip.annotations.size() != clip.frames.size()) {
    throw DataError(who + "annotation list count differs from frame count");
  }
  std::map<int, int> class_of;
  for (int f = 0; f < clip.num_frames(); ++f) {
    const auto& frame = clip.frames[f];
    if (frame.rank() != 3 || frame.dim(0) != 3 || frame.dim(1) != clip.height() ||
        frame.dim(2) != clip.width()) {
      throw DataError(who + "frame " + std::to_string(f) + " has shape " +
                      shape_str(frame.shape()));
    }
    for (const auto& ann : clip.annotations[f]) {
      if (ann.mask.height != clip.height() || ann.mask.width != clip.width()) {
        throw DataError(who + "mask size mismatch at frame " + std::to_string(f));
      }
      if (ann.mask.area() == 0) {
        throw DataError(who + "empty mask for instance " + std::to_string(ann.instance_id));
      }
      if (!(tight_bbox(ann.mask) == ann.bbox)) {
        throw DataError(who + "bbox is not the tight box of its mask, instance " +
                        std::to_string(ann.instance_id));
      }
      auto [it, fresh] = class_of.emplace(ann.instance_id, ann.class_id);
      if (!fresh && it->second != ann.class_id) {
        throw DataError(who + "instance " + std::to_string(ann.instance_id) +
                        " changes class across frames");
      }
    }
  }
  const auto& audio = clip.audio;
  for (const auto& ch : audio.channels) {
    if (ch.size() != audio.num_samples()) throw DataError(who + "audio channels differ in length");
  }
  if (audio.sample_rate <= 0) throw DataError(who + "audio sample rate must be positive");
  const double expected = clip.num_frames() / clip.fps * audio.sample_rate;
  if (std::abs(static_cast<double>(audio.num_samples()) - expected) > 1.0) {
    throw DataError(who + "audio has " + std::to_string(audio.num_samples()) +
                    " samples, video implies " + std::to_string(expected));
  }
}

}  // namespace afcv::avdata
