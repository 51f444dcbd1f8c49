#include "afcv/evalvis/inference.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "afcv/avdata/preprocess.hpp"
#include "afcv/core/error.hpp"
#include "afcv/core/ops.hpp"
#include "afcv/crossover/crossover.hpp"

namespace afcv::evalvis {

namespace {

using ag::Var;

constexpr int kStride = segcore::ModelConfig::kStride;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Candidate {
  int x, y;
  int class_id;
  double score;
  double box[4];  // x1, y1, x2, y2 in pixels
};

double box_iou(const double* a, const double* b) {
  const double iw = std::max(0.0, std::min(a[2], b[2]) - std::max(a[0], b[0]));
  const double ih = std::max(0.0, std::min(a[3], b[3]) - std::max(a[1], b[1]));
  const double inter = iw * ih;
  const double uni = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

}  // namespace

ClipInputs prepare_clip_inputs(const avdata::VideoClip& clip, const InputConfig& input, int audio_columns,
                               bool audio_enabled) {
  ClipInputs out;
  out.clip = avdata::resize_clip_shortest_edge(clip, input.min_size, input.max_size);
  if (audio_enabled) {
    for (const auto& slice : audiofe::clip_audio_slices(clip, input.spectrogram)) {
      out.audio.push_back(audiofe::slice_to_fixed(slice, audio_columns));
    }
  }
  return out;
}

segcore::FrameFeatures run_frame(const segcore::AfcvModel& model, const ClipInputs& inputs, int frame) {
  static const Tensor kNoAudio;
  return model.forward(inputs.clip.frames.at(frame), inputs.audio.empty() ? kNoAudio : inputs.audio.at(frame));
}

std::vector<TrackDetection> detect_frame(const segcore::AfcvModel& model, const segcore::FrameFeatures& features,
                                         int frame, int height, int width, const InferenceConfig& cfg) {
  ag::NoGradGuard no_grad;
  const auto& cls = features.cls_logits.value();
  const auto& ctr = features.centerness.value();
  const auto& box = features.box.value();
  const int k = cls.dim(0);
  const int gh = cls.dim(1);
  const int gw = cls.dim(2);

  std::vector<Candidate> cands;
  for (int y = 0; y < gh; ++y) {
    for (int x = 0; x < gw; ++x) {
      int best = 0;
      for (int c = 1; c < k; ++c) {
        if (cls.at(c, y, x) > cls.at(best, y, x)) best = c;
      }
      const double score = std::sqrt(sigmoid(cls.at(best, y, x)) * sigmoid(ctr.at(0, y, x)));
      if (score < cfg.score_threshold) continue;
      const double cx = x * kStride + kStride / 2.0;
      const double cy = y * kStride + kStride / 2.0;
      cands.push_back({x, y, best, score,
                       {cx - box.at(0, y, x) * kStride, cy - box.at(1, y, x) * kStride,
                        cx + box.at(2, y, x) * kStride, cy + box.at(3, y, x) * kStride}});
    }
  }
  std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) { return a.score > b.score; });

  std::vector<Candidate> kept;
  for (const auto& c : cands) {
    if (static_cast<int>(kept.size()) >= cfg.max_detections) break;
    const bool suppressed = std::any_of(kept.begin(), kept.end(),
                                        [&](const Candidate& k2) { return box_iou(c.box, k2.box) > cfg.nms_iou; });
    if (!suppressed) kept.push_back(c);
  }

  std::vector<TrackDetection> out;
  for (const auto& c : kept) {
    const Var logits = model.instance_mask_logits(features, model.filters_at(features, c.x, c.y), c.x, c.y);
    const Var probs = crossover::mask_probabilities(logits, height, width);
    TrackDetection det;
    det.frame = frame;
    det.class_id = c.class_id;
    det.score = c.score;
    det.mask = avdata::BinaryMask(height, width);
    for (std::size_t i = 0; i < det.mask.bits.size(); ++i) det.mask.bits[i] = probs.value()[i] >= cfg.mask_threshold;
    if (det.mask.area() == 0) continue;
    const auto& emb = features.embedding.value();
    det.embedding.resize(emb.dim(0));
    for (int d = 0; d < emb.dim(0); ++d) det.embedding[d] = emb.at(d, c.y, c.x);
    out.push_back(std::move(det));
  }
  return out;
}

std::vector<InstanceTrack> infer_tracks(const segcore::AfcvModel& model, const ClipInputs& inputs,
                                        const InferenceConfig& cfg) {
  ag::NoGradGuard no_grad;
  std::vector<std::vector<TrackDetection>> per_frame;
  for (int f = 0; f < inputs.clip.num_frames(); ++f) {
    const auto features = run_frame(model, inputs, f);
    per_frame.push_back(detect_frame(model, features, f, inputs.clip.height(), inputs.clip.width(), cfg));
  }
  return build_tracks(per_frame, cfg.track_similarity);
}

ModelReport evaluate_model(const segcore::AfcvModel& model, const std::vector<ClipInputs>& clips,
                           const InferenceConfig& cfg, const ApOptions& ap_options,
                           const std::vector<int>& lookalike_classes) {
  ag::NoGradGuard no_grad;
  ModelReport report;
  std::vector<VideoTracks> videos;
  int lookalike_correct = 0;
  double dice_sum = 0;
  int dice_count = 0;

  for (const auto& inputs : clips) {
    const auto& clip = inputs.clip;
    std::vector<std::vector<TrackDetection>> per_frame;
    std::map<int, std::vector<double>> class_prob_sum;
    std::map<int, int> class_of;
    for (int f = 0; f < clip.num_frames(); ++f) {
      const auto features = run_frame(model, inputs, f);
      per_frame.push_back(detect_frame(model, features, f, clip.height(), clip.width(), cfg));
      const auto& cls = features.cls_logits.value();
      for (const auto& ann : clip.annotations[f]) {
        const auto anchor = crossover::instance_anchor(ann.mask);
        const Var logits = model.instance_mask_logits(features, model.filters_at(features, anchor.x, anchor.y),
                                                      anchor.x, anchor.y);
        const Var probs = crossover::mask_probabilities(logits, clip.height(), clip.width());
        dice_sum += 1.0 - crossover::dice_loss_value(probs.value(), crossover::mask_to_tensor(ann.mask));
        ++dice_count;
        if (std::find(lookalike_classes.begin(), lookalike_classes.end(), ann.class_id) == lookalike_classes.end()) {
          continue;
        }
        auto& sums = class_prob_sum[ann.instance_id];
        sums.resize(cls.dim(0), 0.0);
        for (int c = 0; c < cls.dim(0); ++c) sums[c] += sigmoid(cls.at(c, anchor.y, anchor.x));
        class_of[ann.instance_id] = ann.class_id;
      }
    }
    for (const auto& [id, sums] : class_prob_sum) {
      const int predicted = static_cast<int>(std::max_element(sums.begin(), sums.end()) - sums.begin());
      lookalike_correct += predicted == class_of[id];
      ++report.lookalike_instances;
    }
    videos.push_back({build_tracks(per_frame, cfg.track_similarity), ground_truth_tracks(clip)});
  }

  report.vis = compute_ap(videos, ap_options);
  ApOptions at50 = ap_options;
  at50.thresholds = {0.5};
  report.ap50 = compute_ap(videos, at50).ap;
  report.lookalike_accuracy =
      report.lookalike_instances ? static_cast<double>(lookalike_correct) / report.lookalike_instances : 0.0;
  report.mask_dice = dice_count ? dice_sum / dice_count : 0.0;
  return report;
}

}  // namespace afcv::evalvis
