#include "afcv/evalvis/tracking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace afcv::evalvis {

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0.0;
  return dot / std::sqrt(na * nb);
}

std::vector<InstanceTrack> build_tracks(const std::vector<std::vector<TrackDetection>>& per_frame, double threshold) {
  struct Open {
    InstanceTrack track;
    std::vector<double> last_embedding;
    double score_sum = 0;
    int hits = 0;
    int last_frame = -1;
  };
  const int num_frames = static_cast<int>(per_frame.size());
  std::vector<Open> tracks;
  for (int f = 0; f < num_frames; ++f) {
    std::vector<const TrackDetection*> dets;
    for (const auto& d : per_frame[f]) dets.push_back(&d);
    std::stable_sort(dets.begin(), dets.end(),
                     [](const TrackDetection* a, const TrackDetection* b) { return a->score > b->score; });
    for (const auto* det : dets) {
      int best = -1;
      double best_sim = threshold;
      for (std::size_t i = 0; i < tracks.size(); ++i) {
        const auto& t = tracks[i];
        if (t.track.class_id != det->class_id || t.last_frame == f) continue;
        const double sim = cosine_similarity(t.last_embedding, det->embedding);
        if (sim > best_sim) {
          best_sim = sim;
          best = static_cast<int>(i);
        }
      }
      if (best < 0) {
        Open fresh;
        fresh.track.track_id = static_cast<int>(tracks.size());
        fresh.track.class_id = det->class_id;
        fresh.track.masks.resize(num_frames);
        tracks.push_back(std::move(fresh));
        best = static_cast<int>(tracks.size()) - 1;
      }
      auto& t = tracks[best];
      t.track.masks[f] = det->mask;
      t.last_embedding = det->embedding;
      t.score_sum += det->score;
      ++t.hits;
      t.last_frame = f;
    }
  }
  std::vector<InstanceTrack> out;
  out.reserve(tracks.size());
  for (auto& t : tracks) {
    t.track.score = t.score_sum / t.hits;
    out.push_back(std::move(t.track));
  }
  return out;
}

}  // namespace afcv::evalvis
