#pragma once

#include <vector>

#include "afcv/audiofe/audiofe.hpp"
#include "afcv/avdata/types.hpp"
#include "afcv/evalvis/metrics.hpp"
#include "afcv/evalvis/tracking.hpp"
#include "afcv/segcore/model.hpp"

namespace afcv::evalvis {

struct InputConfig {
  int min_size = 64;  // shortest-edge target
  int max_size = 1000;
  audiofe::SpectrogramParams spectrogram;
};

/// A clip resized for the network plus one fixed-width audio slice per frame.
/// `audio` is empty when audio is disabled.
struct ClipInputs {
  avdata::VideoClip clip;
  std::vector<Tensor> audio;
};

ClipInputs prepare_clip_inputs(const avdata::VideoClip& clip, const InputConfig& input, int audio_columns,
                               bool audio_enabled);

struct InferenceConfig {
  double score_threshold = 0.3;
  double nms_iou = 0.5;
  int max_detections = 10;
  double mask_threshold = 0.5;
  double track_similarity = 0.5;
};

segcore::FrameFeatures run_frame(const segcore::AfcvModel& model, const ClipInputs& inputs, int frame);

/// Candidate locations scored sqrt(p_class * p_centerness), class-agnostic box
/// NMS, then one dynamic-filter mask per survivor.
std::vector<TrackDetection> detect_frame(const segcore::AfcvModel& model, const segcore::FrameFeatures& features,
                                         int frame, int height, int width, const InferenceConfig& cfg);

std::vector<InstanceTrack> infer_tracks(const segcore::AfcvModel& model, const ClipInputs& inputs,
                                        const InferenceConfig& cfg);

struct ModelReport {
  EvalResult vis;
  double ap50 = 0.0;
  /// Per-instance accuracy on the look-alike classes (class probabilities at
  /// the ground-truth anchor averaged over frames, then argmax).
  double lookalike_accuracy = 0.0;
  int lookalike_instances = 0;
  /// Mean within-frame dice coefficient of masks decoded at ground-truth anchors.
  double mask_dice = 0.0;
};

ModelReport evaluate_model(const segcore::AfcvModel& model, const std::vector<ClipInputs>& clips,
                           const InferenceConfig& cfg, const ApOptions& ap_options,
                           const std::vector<int>& lookalike_classes);

}  // namespace afcv::evalvis
