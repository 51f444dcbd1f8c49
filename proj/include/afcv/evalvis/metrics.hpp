#pragma once

#include <map>
#include <optional>
#include <vector>

#include "afcv/avdata/types.hpp"

namespace afcv::evalvis {

using avdata::BinaryMask;

struct InstanceTrack {
  int track_id = 0;
  int class_id = 0;
  double score = 0.0;
  std::vector<std::optional<BinaryMask>> masks;  // one slot per video frame

  int num_frames() const { return static_cast<int>(masks.size()); }
};

/// Ground-truth tracks of a clip, one per instance id.
std::vector<InstanceTrack> ground_truth_tracks(const avdata::VideoClip& clip);

/// sum_f |P_f & G_f| / sum_f |P_f | G_f|; absent masks are empty, 0/0 -> 0.
double video_iou(const InstanceTrack& pred, const InstanceTrack& gt);

/// Tracks predicted for, and annotated in, one video.
struct VideoTracks {
  std::vector<InstanceTrack> predictions;
  std::vector<InstanceTrack> ground_truth;
};

struct ClassResult {
  int class_id = 0;
  std::optional<double> ap;  // nullopt: no ground truth and no predictions
  std::map<double, double> ap_per_threshold;
  std::optional<double> ar;  // nullopt: no ground truth
  int num_gt = 0;
  int num_pred = 0;
};

struct EvalResult {
  double ap = 0.0;
  std::map<double, double> ap_per_threshold;
  double ar = 0.0;
  std::vector<ClassResult> per_class;
  bool all_empty = false;
};

struct ApOptions {
  std::vector<double> thresholds;  // each in (0, 1]
  int max_tracks_per_video = 10;   // K for AR
  int num_classes = 0;

  static std::vector<double> default_thresholds();  // 0.50:0.05:0.95
};

/// 101-point interpolated precision-recall area of one ranked detection list.
double interpolated_ap(const std::vector<std::pair<double, bool>>& scored_hits, int num_gt);

/// Video AP and AR: per class and threshold, score-ordered greedy matching of
/// predictions to ground truth by video IoU, then means over classes and thresholds.
EvalResult compute_ap(const std::vector<VideoTracks>& videos, const ApOptions& options);

}  // namespace afcv::evalvis
