#include "afcv/crossover/crossover.hpp"

#include <cmath>
#include <limits>

#include "afcv/core/error.hpp"
#include "afcv/core/ops.hpp"

namespace afcv::crossover {

namespace {

const avdata::InstanceAnnotation* find_instance(const avdata::VideoClip& clip, int frame, int instance_id) {
  for (const auto& a : clip.annotations.at(frame)) {
    if (a.instance_id == instance_id) return &a;
  }
  return nullptr;
}

}  // namespace

GridPoint instance_anchor(const avdata::BinaryMask& mask, int stride) {
  double sx = 0, sy = 0;
  std::size_t n = 0;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (mask.at(y, x)) {
        sx += x;
        sy += y;
        ++n;
      }
    }
  }
  if (n == 0) throw DataError("anchor of an empty mask");
  const double cx = sx / n;
  const double cy = sy / n;
  double best = std::numeric_limits<double>::infinity();
  int bx = 0, by = 0;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.at(y, x)) continue;
      const double d = (x - cx) * (x - cx) + (y - cy) * (y - cy);
      if (d < best) {
        best = d;
        bx = x;
        by = y;
      }
    }
  }
  return {bx / stride, by / stride};
}

FramePair make_frame_pair(const avdata::VideoClip& clip, int t, int delta) {
  if (t < 0 || delta < 0 || t + delta >= clip.num_frames()) {
    throw DataError("frame pair (" + std::to_string(t) + ", +" + std::to_string(delta) + ") outside clip of " +
                    std::to_string(clip.num_frames()) + " frames");
  }
  FramePair pair{t, delta, {}};
  for (const auto& a : clip.annotations[t]) {
    const auto* b = find_instance(clip, t + delta, a.instance_id);
    if (!b) continue;
    pair.correspondences.push_back({a.instance_id, instance_anchor(a.mask), instance_anchor(b->mask)});
  }
  return pair;
}

std::optional<FramePair> sample_frame_pair(const avdata::VideoClip& clip, Rng& rng, int delta_max) {
  const int n = clip.num_frames();
  if (n < 2 || delta_max < 1) return std::nullopt;
  const int t = rng.uniform_int(0, n - 2);
  const int delta = rng.uniform_int(1, std::min(delta_max, n - 1 - t));
  FramePair pair = make_frame_pair(clip, t, delta);
  if (!pair.correspondences.empty()) return pair;

  std::vector<FramePair> usable;
  for (int a = 0; a + 1 < n; ++a) {
    for (int d = 1; d <= std::min(delta_max, n - 1 - a); ++d) {
      FramePair p = make_frame_pair(clip, a, d);
      if (!p.correspondences.empty()) usable.push_back(std::move(p));
    }
  }
  if (usable.empty()) return std::nullopt;
  return usable[rng.uniform_int(0, static_cast<int>(usable.size()) - 1)];
}

std::vector<InstanceMask> within_frame_masks(const AfcvModel& model, const FramePair& pair,
                                             const FrameFeatures& at_t, const FrameFeatures& at_t_delta) {
  std::vector<InstanceMask> out;
  out.reserve(pair.correspondences.size() * 2);
  for (const auto& c : pair.correspondences) {
    const Var theta_t = model.filters_at(at_t, c.at_t.x, c.at_t.y);
    const Var theta_td = model.filters_at(at_t_delta, c.at_t_delta.x, c.at_t_delta.y);
    out.push_back({model.instance_mask_logits(at_t, theta_t, c.at_t.x, c.at_t.y), MaskOrigin::within_frame,
                   pair.t, pair.t, c.at_t, c.instance_id});
    out.push_back({model.instance_mask_logits(at_t_delta, theta_td, c.at_t_delta.x, c.at_t_delta.y),
                   MaskOrigin::within_frame, pair.t_delta(), pair.t_delta(), c.at_t_delta, c.instance_id});
  }
  return out;
}

std::vector<InstanceMask> crossover_masks(const AfcvModel& model, const FramePair& pair,
                                          const FrameFeatures& at_t, const FrameFeatures& at_t_delta) {
  std::vector<InstanceMask> out;
  out.reserve(pair.correspondences.size() * 2);
  for (const auto& c : pair.correspondences) {
    const Var theta_t = model.filters_at(at_t, c.at_t.x, c.at_t.y);
    const Var theta_td = model.filters_at(at_t_delta, c.at_t_delta.x, c.at_t_delta.y);
    out.push_back({model.instance_mask_logits(at_t_delta, theta_t, c.at_t_delta.x, c.at_t_delta.y),
                   MaskOrigin::crossover, pair.t, pair.t_delta(), c.at_t_delta, c.instance_id});
    out.push_back({model.instance_mask_logits(at_t, theta_td, c.at_t.x, c.at_t.y), MaskOrigin::crossover,
                   pair.t_delta(), pair.t, c.at_t, c.instance_id});
  }
  return out;
}

Var mask_probabilities(const Var& logits, int height, int width) {
  return ops::sigmoid(ops::upsample_bilinear(logits, height, width));
}

Var dice_loss(const Var& prediction, const Var& target, double eps) {
  if (prediction.shape() != target.shape()) {
    throw ShapeError("dice_loss: shape mismatch " + shape_str(prediction.shape()) + " vs " +
                     shape_str(target.shape()));
  }
  const auto& a = prediction.value();
  const auto& b = target.value();
  double inter = 0, sa = 0, sb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a[i] * b[i];
    sa += a[i] * a[i];
    sb += b[i] * b[i];
  }
  // eps on both sides makes two empty masks a perfect match.
  const double numer = 2.0 * inter + eps;
  const double denom = sa + sb + eps;
  const double loss = 1.0 - numer / denom;
  return ag::make_result(Tensor({1}, loss), {prediction, target}, [numer, denom](ag::Node& self) {
    const double g = self.grad[0];
    for (std::size_t k = 0; k < 2; ++k) {
      ag::Node* mine = self.inputs[k].get();
      ag::Node* other = self.inputs[1 - k].get();
      if (!mine->requires_grad) continue;
      auto& grad = mine->grad_buffer();
      for (std::size_t i = 0; i < grad.size(); ++i) {
        grad[i] += g * (-2.0 * other->value[i] / denom + 2.0 * numer * mine->value[i] / (denom * denom));
      }
    }
  });
}

double dice_loss_value(const Tensor& prediction, const Tensor& target, double eps) {
  ag::NoGradGuard guard;
  return dice_loss(ag::constant(prediction), ag::constant(target), eps).item();
}

Tensor mask_to_tensor(const avdata::BinaryMask& mask) {
  Tensor t({1, mask.height, mask.width});
  for (std::size_t i = 0; i < mask.bits.size(); ++i) t[i] = mask.bits[i];
  return t;
}

Var crossover_loss(const AfcvModel& model, const avdata::VideoClip& clip, const FramePair& pair,
                   const FrameFeatures& at_t, const FrameFeatures& at_t_delta, bool include_crossover,
                   LossCounters* counters) {
  if (pair.correspondences.empty()) {
    if (counters) ++counters->empty_pairs;
    return ag::constant(Tensor({1}, 0.0));
  }
  auto masks = within_frame_masks(model, pair, at_t, at_t_delta);
  if (include_crossover) {
    auto cross = crossover_masks(model, pair, at_t, at_t_delta);
    masks.insert(masks.end(), cross.begin(), cross.end());
  }
  std::vector<Var> terms;
  terms.reserve(masks.size());
  for (const auto& m : masks) {
    const auto* gt = find_instance(clip, m.feature_frame, m.instance_id);
    if (!gt) throw DataError("correspondence refers to an instance absent from its frame");
    const Var probs = mask_probabilities(m.logits, clip.height(), clip.width());
    terms.push_back(dice_loss(probs, ag::constant(mask_to_tensor(gt->mask))));
  }
  return ops::scale(ops::add_n(terms), 1.0 / static_cast<double>(terms.size()));
}

}  // namespace afcv::crossover
