#pragma once

#include <vector>

#include "afcv/evalvis/metrics.hpp"

namespace afcv::evalvis {

struct TrackDetection {
  int frame = 0;
  int class_id = 0;
  double score = 0.0;
  std::vector<double> embedding;
  BinaryMask mask;
};

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

/// Greedy online association. Frames are visited in order and detections in
/// descending score; each joins the same-class track (not yet extended in this
/// frame) whose latest embedding is most similar, if that similarity exceeds
/// `threshold`, and otherwise opens a new track. Track score = mean detection score.
std::vector<InstanceTrack> build_tracks(const std::vector<std::vector<TrackDetection>>& per_frame, double threshold);

}  // namespace afcv::evalvis
