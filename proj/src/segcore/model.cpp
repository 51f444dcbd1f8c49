#include "afcv/segcore/model.hpp"

#include <cmath>
#include <cstring>

#include "afcv/core/error.hpp"

namespace afcv::segcore {

namespace {

constexpr double kClassPrior = 0.01;
constexpr double kControllerStd = 0.01;

ops::Conv2dSpec same(int k, int stride = 1) { return {stride, k / 2, k / 2}; }

}  // namespace

std::string to_string(FusionPoint p) { return p == FusionPoint::backbone ? "backbone" : "heads"; }

FusionPoint fusion_point_from_string(const std::string& s) {
  if (s == "backbone") return FusionPoint::backbone;
  if (s == "heads") return FusionPoint::heads;
  throw ConfigError("unknown fusion point '" + s + "' (expected backbone|heads)");
}

Conv2d AfcvModel::make_conv(Rng& rng, const std::string& name, int in, int out, int kh, int kw,
                            ops::Conv2dSpec spec, double weight_std, double bias_init) {
  Tensor w({out, in, kh, kw});
  for (auto& v : w.values()) v = rng.normal(0.0, weight_std);
  auto weight = ag::parameter(std::move(w));
  auto bias = ag::parameter(Tensor({out}, bias_init));
  params_.push_back({name + ".weight", weight});
  params_.push_back({name + ".bias", bias});
  return Conv2d(weight, bias, spec);
}

AfcvModel::AfcvModel(ModelConfig config, std::uint64_t seed) : config_(config) {
  const auto& c = config_;
  if (c.num_classes < 1 || c.visual_channels < 1 || c.audio_channels < 1 || c.mask_channels < 1 ||
      c.embed_dim < 1 || c.audio_bins < 1 || c.audio_columns < 1) {
    throw ConfigError("model dimensions must be positive");
  }
  Rng rng(mix_seed(seed, 0xA5CE));
  auto he = [](int fan_in) { return std::sqrt(2.0 / fan_in); };

  const int widths[] = {3, 16, 32, 64, c.visual_channels};
  const int strides[] = {2, 2, 2, 1};
  for (int s = 0; s < 4; ++s) {
    backbone_.push_back(make_conv(rng, "backbone.stage" + std::to_string(s + 1), widths[s], widths[s + 1], 3, 3,
                                  same(3, strides[s]), he(widths[s] * 9)));
  }
  // Frequency bins are channels, time is the width of a 1-row map.
  audio_.push_back(make_conv(rng, "audio.conv1", c.audio_bins, c.audio_hidden, 1, 3, {1, 0, 1},
                             he(c.audio_bins * 3)));
  audio_.push_back(make_conv(rng, "audio.conv2", c.audio_hidden, c.audio_channels, 1, 3, {1, 0, 1},
                             he(c.audio_hidden * 3)));
  fuse_ = make_conv(rng, "fusion.conv", c.visual_channels + c.audio_channels, c.visual_channels, 1, 1, {},
                    std::sqrt(1.0 / (c.visual_channels + c.audio_channels)));

  const int t = c.tower_channels;
  cls_tower_ = make_conv(rng, "cls_tower.conv", c.visual_channels, t, 3, 3, same(3), he(c.visual_channels * 9));
  box_tower_ = make_conv(rng, "box_tower.conv", c.visual_channels, t, 3, 3, same(3), he(c.visual_channels * 9));
  mask_tower_ = make_conv(rng, "mask_branch.conv", c.visual_channels, t, 3, 3, same(3), he(c.visual_channels * 9));
  cls_out_ = make_conv(rng, "cls_out", t, c.num_classes, 3, 3, same(3), 0.01,
                       -std::log((1.0 - kClassPrior) / kClassPrior));
  embed_out_ = make_conv(rng, "embedding.out", t, c.embed_dim, 3, 3, same(3), 0.01);
  box_out_ = make_conv(rng, "box_out", t, 4, 3, 3, same(3), 0.01);
  ctr_out_ = make_conv(rng, "centerness_out", t, 1, 3, 3, same(3), 0.01);
  controller_ = make_conv(rng, "controller", t, c.mask_head_layout().num_params(), 3, 3, same(3), kControllerStd);
  mask_out_ = make_conv(rng, "mask_branch.out", t, c.mask_channels, 1, 1, {}, he(t));
}

Var AfcvModel::visual_backbone(const Var& frame) const {
  const auto& v = frame.value();
  if (v.rank() != 3 || v.dim(0) != 3) throw ShapeError("backbone expects a [3, H, W] frame, got " + shape_str(v.shape()));
  if (v.dim(1) % ModelConfig::kStride != 0 || v.dim(2) % ModelConfig::kStride != 0) {
    throw ShapeError("frame " + std::to_string(v.dim(1)) + "x" + std::to_string(v.dim(2)) +
                     " is not divisible by the backbone stride " + std::to_string(ModelConfig::kStride));
  }
  Var x = ops::scale(ops::add_scalar(frame, -0.5), 4.0);
  for (const auto& conv : backbone_) x = ops::relu(conv(x));
  return x;
}

Var AfcvModel::audio_encoder(const Var& slice) const {
  const auto& v = slice.value();
  if (v.rank() != 2 || v.dim(0) != config_.audio_bins || v.dim(1) != config_.audio_columns) {
    throw ShapeError("audio encoder expects [" + std::to_string(config_.audio_bins) + ", " +
                     std::to_string(config_.audio_columns) + "], got " + shape_str(v.shape()));
  }
  const double floor = config_.audio_db_floor;
  Var x = ops::scale(ops::add_scalar(slice, -floor), 1.0 / -floor);
  x = ops::reshape(x, {config_.audio_bins, 1, config_.audio_columns});
  for (const auto& conv : audio_) x = ops::relu(conv(x));
  return ops::global_avg_pool(x);
}

Var AfcvModel::fuse(const Var& visual, const Var& audio) const {
  const auto& vv = visual.value();
  if (vv.rank() != 3 || vv.dim(0) != config_.visual_channels) {
    throw ShapeError("fuse: visual map " + shape_str(vv.shape()) + " but C_v = " +
                     std::to_string(config_.visual_channels));
  }
  if (audio.value().rank() != 1 || audio.value().dim(0) != config_.audio_channels) {
    throw ShapeError("fuse: audio vector " + shape_str(audio.shape()) + " but C_a = " +
                     std::to_string(config_.audio_channels));
  }
  Var tiled = ops::tile_spatial(audio, vv.dim(1), vv.dim(2));
  return fuse_(ops::concat_channels({visual, tiled}));
}

FrameFeatures AfcvModel::heads(const Var& fused, const Var& visual) const {
  FrameFeatures f;
  f.fused = fused;
  const Var cls_t = ops::relu(cls_tower_(fused));
  const Var box_t = ops::relu(box_tower_(fused));
  f.cls_logits = cls_out_(cls_t);
  f.embedding = embed_out_(cls_t);
  f.box = ops::exp(box_out_(box_t));
  f.centerness = ctr_out_(box_t);
  f.filters = controller_(box_t);
  const Var& mask_in = config_.fusion == FusionPoint::backbone ? fused : visual;
  f.mask_features = mask_out_(ops::relu(mask_tower_(mask_in)));
  return f;
}

FrameFeatures AfcvModel::forward(const Tensor& frame, const Tensor& audio_slice) const {
  const Var visual = visual_backbone(ag::constant(frame));
  const Var audio = audio_slice.empty() ? ag::constant(Tensor({config_.audio_channels}, 0.0))
                                        : audio_encoder(ag::constant(audio_slice));
  return heads(fuse(visual, audio), visual);
}

Var AfcvModel::instance_mask_logits(const FrameFeatures& feature_frame, const Var& filters, int x, int y) const {
  const int h = feature_frame.mask_features.value().dim(1);
  const int w = feature_frame.mask_features.value().dim(2);
  const Var coords = ag::constant(make_coordinate_map(x, y, h, w));
  const Var input = ops::concat_channels({feature_frame.mask_features, coords});
  return mask_head(input, filters, config_.mask_head_layout());
}

std::size_t AfcvModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.var.value().size();
  return n;
}

std::vector<NamedParameter> AfcvModel::parameter_group(const std::string& prefix) const {
  std::vector<NamedParameter> out;
  for (const auto& p : params_) {
    if (p.name.rfind(prefix, 0) == 0) out.push_back(p);
  }
  return out;
}

std::uint64_t parameter_hash(const AfcvModel& model) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : model.parameters()) {
    for (double v : p.var.value().values()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof v);
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

}  // namespace afcv::segcore
