#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "afcv/core/autograd.hpp"
#include "afcv/core/ops.hpp"
#include "afcv/core/rng.hpp"
#include "afcv/segcore/mask_head.hpp"

namespace afcv::segcore {

enum class FusionPoint {
  backbone,  // fused map feeds every branch
  heads,     // mask branch sees the visual map, detection towers the fused one
};

std::string to_string(FusionPoint p);
FusionPoint fusion_point_from_string(const std::string& s);

struct ModelConfig {
  int num_classes = 3;
  int visual_channels = 64;  // C_v
  int audio_channels = 32;   // C_a
  int audio_hidden = 64;
  int audio_bins = 513;      // F of the spectrogram slices
  int audio_columns = 8;     // fixed slice width fed to the encoder
  double audio_db_floor = -80.0;
  int tower_channels = 64;
  int mask_channels = 8;     // C_m
  int mask_head_hidden = 8;
  int embed_dim = 16;
  FusionPoint fusion = FusionPoint::backbone;

  static constexpr int kStride = 8;

  MaskHeadLayout mask_head_layout() const {
    return MaskHeadLayout::for_mask_channels(mask_channels, mask_head_hidden);
  }
  bool operator==(const ModelConfig&) const = default;
};

/// Per-frame network outputs on the stride-8 grid.
struct FrameFeatures {
  Var fused;          // [C_v, Hf, Wf]
  Var mask_features;  // F_mask [C_m, Hf, Wf]
  Var cls_logits;     // [K, Hf, Wf]
  Var box;            // [4, Hf, Wf] (l, t, r, b) in stride units, > 0
  Var centerness;     // [1, Hf, Wf] logits
  Var embedding;      // [D_e, Hf, Wf] unnormalized
  Var filters;        // [P, Hf, Wf] dynamic filter vectors

  int grid_height() const { return cls_logits.value().dim(1); }
  int grid_width() const { return cls_logits.value().dim(2); }
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(Var weight, Var bias, ops::Conv2dSpec spec) : weight_(std::move(weight)), bias_(std::move(bias)), spec_(spec) {}
  Var operator()(const Var& x) const { return ops::conv2d(x, weight_, bias_, spec_); }
  const Var& weight() const { return weight_; }
  const Var& bias() const { return bias_; }

 private:
  Var weight_;
  Var bias_;
  ops::Conv2dSpec spec_;
};

struct NamedParameter {
  std::string name;
  Var var;
};

/// Audio-fused conditional-convolution segmentation network.
class AfcvModel {
 public:
  AfcvModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  /// [3, H, W] frame -> [C_v, H/8, W/8]. H and W must be divisible by 8.
  Var visual_backbone(const Var& frame) const;
  /// [F, T_a] slice -> [C_a] vector.
  Var audio_encoder(const Var& slice) const;
  /// Tile the audio vector, concatenate on channels and reduce with a 1x1 conv.
  Var fuse(const Var& visual, const Var& audio) const;
  /// Detection/embedding/filter heads plus the mask branch.
  FrameFeatures heads(const Var& fused, const Var& visual) const;

  /// Full forward pass. An empty `audio_slice` means audio is disabled and a
  /// zero audio vector is fused instead.
  FrameFeatures forward(const Tensor& frame, const Tensor& audio_slice) const;

  /// F~ = concat(F_mask, O_{x,y}) followed by the dynamic mask head.
  Var instance_mask_logits(const FrameFeatures& feature_frame, const Var& filters, int x, int y) const;
  Var filters_at(const FrameFeatures& f, int x, int y) const { return ops::gather_location(f.filters, y, x); }

  std::vector<NamedParameter>& parameters() { return params_; }
  const std::vector<NamedParameter>& parameters() const { return params_; }
  std::size_t parameter_count() const;
  /// Parameters belonging to a named group: "audio", "fusion", "controller", "embedding", ...
  std::vector<NamedParameter> parameter_group(const std::string& prefix) const;

  Conv2d& fusion_conv() { return fuse_; }

 private:
  Conv2d make_conv(Rng& rng, const std::string& name, int in, int out, int kh, int kw, ops::Conv2dSpec spec,
                   double weight_std, double bias_init = 0.0);

  ModelConfig config_;
  std::vector<NamedParameter> params_;
  std::vector<Conv2d> backbone_;
  std::vector<Conv2d> audio_;
  Conv2d fuse_;
  Conv2d cls_tower_, box_tower_, mask_tower_;
  Conv2d cls_out_, box_out_, ctr_out_, embed_out_, controller_, mask_out_;
};

/// FNV-1a over every parameter value, in registration order.
std::uint64_t parameter_hash(const AfcvModel& model);

}  // namespace afcv::segcore
