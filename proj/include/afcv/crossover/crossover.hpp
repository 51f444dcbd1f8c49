#pragma once

#include <optional>
#include <vector>

#include "afcv/avdata/types.hpp"
#include "afcv/core/rng.hpp"
#include "afcv/segcore/model.hpp"

namespace afcv::crossover {

using ag::Var;
using segcore::AfcvModel;
using segcore::FrameFeatures;

struct GridPoint {
  int x = 0;
  int y = 0;
  bool operator==(const GridPoint&) const = default;
};

/// Foreground pixel nearest the mask centroid (row-major first on ties),
/// mapped to the stride grid.
GridPoint instance_anchor(const avdata::BinaryMask& mask, int stride = segcore::ModelConfig::kStride);

struct Correspondence {
  int instance_id = 0;
  GridPoint at_t;        // (x, y) in frame t
  GridPoint at_t_delta;  // (x', y') in frame t + delta
};

struct FramePair {
  int t = 0;
  int delta = 0;
  std::vector<Correspondence> correspondences;

  int t_delta() const { return t + delta; }
};

/// Correspondences for instances visible in both frames, from ground truth.
FramePair make_frame_pair(const avdata::VideoClip& clip, int t, int delta);

/// Uniform t and delta in [1, delta_max] (clipped to the clip). If the draw has
/// no shared instance, one of the pairs that does is drawn instead; nullopt
/// means no pair in the clip shares an instance (skip the clip).
std::optional<FramePair> sample_frame_pair(const avdata::VideoClip& clip, Rng& rng, int delta_max = 5);

enum class MaskOrigin { within_frame, crossover };

struct InstanceMask {
  Var logits;  // [1, Hm, Wm] at mask-feature resolution
  MaskOrigin origin = MaskOrigin::within_frame;
  int filter_frame = 0;   // frame whose dynamic filters were used
  int feature_frame = 0;  // frame whose F~ was convolved
  GridPoint location;     // anchor of F~ in the feature frame
  int instance_id = 0;
};

/// Per correspondence: M(t) then M(t+delta).
std::vector<InstanceMask> within_frame_masks(const AfcvModel& model, const FramePair& pair,
                                             const FrameFeatures& at_t, const FrameFeatures& at_t_delta);

/// Per correspondence: M*(t+delta) (filters of t at (x, y) on F~(t+delta) at
/// (x', y')) then M*(t) (filters of t+delta at (x', y') on F~(t) at (x, y)).
std::vector<InstanceMask> crossover_masks(const AfcvModel& model, const FramePair& pair,
                                          const FrameFeatures& at_t, const FrameFeatures& at_t_delta);

/// sigmoid(bilinear upsample of logits to the frame size), shape [1, H, W].
Var mask_probabilities(const Var& logits, int height, int width);

inline constexpr double kDiceEpsilon = 1e-6;

/// 1 - (2 sum(a b) + eps) / (sum(a^2) + sum(b^2) + eps). Differentiable in both arguments.
Var dice_loss(const Var& prediction, const Var& target, double eps = kDiceEpsilon);
double dice_loss_value(const Tensor& prediction, const Tensor& target, double eps = kDiceEpsilon);

Tensor mask_to_tensor(const avdata::BinaryMask& mask);

struct LossCounters {
  int empty_pairs = 0;
};

/// Mean dice over correspondences and the masks M(t), M(t+d), M*(t), M*(t+d),
/// each against the ground truth of its feature frame. With
/// `include_crossover` false only the two within-frame masks contribute.
Var crossover_loss(const AfcvModel& model, const avdata::VideoClip& clip, const FramePair& pair,
                   const FrameFeatures& at_t, const FrameFeatures& at_t_delta, bool include_crossover = true,
                   LossCounters* counters = nullptr);

}  // namespace afcv::crossover
