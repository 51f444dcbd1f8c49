#include "afcv/evalvis/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "afcv/core/error.hpp"

namespace afcv::evalvis {

std::vector<InstanceTrack> ground_truth_tracks(const avdata::VideoClip& clip) {
  std::map<int, InstanceTrack> by_id;
  for (int f = 0; f < clip.num_frames(); ++f) {
    for (const auto& a : clip.annotations[f]) {
      auto& track = by_id[a.instance_id];
      if (track.masks.empty()) {
        track.track_id = a.instance_id;
        track.class_id = a.class_id;
        track.score = 1.0;
        track.masks.resize(clip.num_frames());
      }
      track.masks[f] = a.mask;
    }
  }
  std::vector<InstanceTrack> out;
  for (auto& [id, t] : by_id) out.push_back(std::move(t));
  return out;
}

double video_iou(const InstanceTrack& pred, const InstanceTrack& gt) {
  if (pred.num_frames() != gt.num_frames()) {
    throw ShapeError("video_iou: tracks span " + std::to_string(pred.num_frames()) + " and " +
                     std::to_string(gt.num_frames()) + " frames");
  }
  std::size_t inter = 0, uni = 0;
  for (int f = 0; f < pred.num_frames(); ++f) {
    const auto& p = pred.masks[f];
    const auto& g = gt.masks[f];
    if (p && g) {
      if (p->height != g->height || p->width != g->width) {
        throw ShapeError("video_iou: mask grids differ at frame " + std::to_string(f));
      }
      for (std::size_t i = 0; i < p->bits.size(); ++i) {
        inter += p->bits[i] & g->bits[i];
        uni += p->bits[i] | g->bits[i];
      }
    } else if (p) {
      uni += p->area();
    } else if (g) {
      uni += g->area();
    }
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<double> ApOptions::default_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back((50 + 5 * i) / 100.0);
  return t;
}

double interpolated_ap(const std::vector<std::pair<double, bool>>& scored_hits, int num_gt) {
  if (num_gt <= 0) return 0.0;
  std::vector<std::size_t> order(scored_hits.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scored_hits[a].first > scored_hits[b].first; });
  std::vector<double> precision, recall;
  int tp = 0, fp = 0;
  for (std::size_t i : order) {
    if (scored_hits[i].second) ++tp; else ++fp;
    precision.push_back(static_cast<double>(tp) / (tp + fp));
    recall.push_back(static_cast<double>(tp) / num_gt);
  }
  for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i) {
    precision[i] = std::max(precision[i], precision[i + 1]);
  }
  double total = 0;
  for (int k = 0; k <= 100; ++k) {
    const double r = k / 100.0;
    auto it = std::lower_bound(recall.begin(), recall.end(), r - 1e-12);
    if (it != recall.end()) total += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return total / 101.0;
}

namespace {

struct ClassThresholdStats {
  std::vector<std::pair<double, bool>> hits;
  int num_gt = 0;
  int matched_top_k = 0;
};

ClassThresholdStats match_class(const std::vector<VideoTracks>& videos, int class_id, double threshold, int top_k) {
  ClassThresholdStats stats;
  for (const auto& video : videos) {
    std::vector<const InstanceTrack*> preds, gts;
    for (const auto& p : video.predictions) if (p.class_id == class_id) preds.push_back(&p);
    for (const auto& g : video.ground_truth) if (g.class_id == class_id) gts.push_back(&g);
    std::stable_sort(preds.begin(), preds.end(),
                     [](const InstanceTrack* a, const InstanceTrack* b) { return a->score > b->score; });
    stats.num_gt += static_cast<int>(gts.size());
    std::vector<bool> taken(gts.size(), false);
    for (std::size_t rank = 0; rank < preds.size(); ++rank) {
      int best = -1;
      double best_iou = threshold;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (taken[g]) continue;
        const double iou = video_iou(*preds[rank], *gts[g]);
        if (iou >= best_iou) {
          best_iou = iou;
          best = static_cast<int>(g);
        }
      }
      if (best >= 0) {
        taken[best] = true;
        if (static_cast<int>(rank) < top_k) ++stats.matched_top_k;
      }
      stats.hits.emplace_back(preds[rank]->score, best >= 0);
    }
  }
  return stats;
}

}  // namespace

EvalResult compute_ap(const std::vector<VideoTracks>& videos, const ApOptions& options) {
  if (options.thresholds.empty()) throw DataError("compute_ap needs at least one IoU threshold");
  for (double t : options.thresholds) {
    if (!(t > 0.0 && t <= 1.0)) throw DataError("IoU thresholds must lie in (0, 1]");
  }
  int num_classes = options.num_classes;
  for (const auto& v : videos) {
    for (const auto& t : v.predictions) num_classes = std::max(num_classes, t.class_id + 1);
    for (const auto& t : v.ground_truth) num_classes = std::max(num_classes, t.class_id + 1);
  }

  EvalResult result;
  std::map<double, std::vector<double>> ap_by_threshold;
  std::vector<double> recalls;
  for (int c = 0; c < num_classes; ++c) {
    ClassResult cr;
    cr.class_id = c;
    std::vector<double> class_recalls;
    for (double thr : options.thresholds) {
      const auto stats = match_class(videos, c, thr, options.max_tracks_per_video);
      cr.num_gt = stats.num_gt;
      cr.num_pred = static_cast<int>(stats.hits.size());
      if (stats.num_gt == 0 && stats.hits.empty()) continue;
      const double ap = interpolated_ap(stats.hits, stats.num_gt);
      cr.ap_per_threshold[thr] = ap;
      ap_by_threshold[thr].push_back(ap);
      if (stats.num_gt > 0) class_recalls.push_back(static_cast<double>(stats.matched_top_k) / stats.num_gt);
    }
    if (!cr.ap_per_threshold.empty()) {
      double s = 0;
      for (const auto& [t, v] : cr.ap_per_threshold) s += v;
      cr.ap = s / static_cast<double>(cr.ap_per_threshold.size());
    }
    if (!class_recalls.empty()) {
      cr.ar = std::accumulate(class_recalls.begin(), class_recalls.end(), 0.0) / static_cast<double>(class_recalls.size());
      recalls.insert(recalls.end(), class_recalls.begin(), class_recalls.end());
    }
    result.per_class.push_back(std::move(cr));
  }

  if (ap_by_threshold.empty()) {
    result.all_empty = true;
    for (double thr : options.thresholds) result.ap_per_threshold[thr] = 0.0;
    return result;
  }
  double total = 0;
  for (double thr : options.thresholds) {
    const auto& aps = ap_by_threshold[thr];
    const double mean = std::accumulate(aps.begin(), aps.end(), 0.0) / static_cast<double>(aps.size());
    result.ap_per_threshold[thr] = mean;
    total += mean;
  }
  result.ap = total / static_cast<double>(options.thresholds.size());
  if (!recalls.empty()) {
    result.ar = std::accumulate(recalls.begin(), recalls.end(), 0.0) / static_cast<double>(recalls.size());
  }
  return result;
}

}  // namespace afcv::evalvis
