#pragma once

#include <vector>

#include "afcv/core/autograd.hpp"

namespace afcv::trainer {

using ag::Var;

/// Sigmoid focal loss summed over every location and class, divided by
/// `normalizer`. `targets` holds 0/1 labels with the shape of `logits`.
Var focal_loss(const Var& logits, const Tensor& targets, double alpha, double gamma, double normalizer);

/// Box distances (left, top, right, bottom) from a grid cell center, in stride units.
struct BoxTarget {
  int x = 0;
  int y = 0;
  double ltrb[4] = {0, 0, 0, 0};
};

/// Mean of 1 - IoU between predicted and target ltrb boxes at the target cells.
/// `box` is [4, H, W] with positive entries. Zero when `targets` is empty.
Var iou_loss(const Var& box, const std::vector<BoxTarget>& targets);

/// sqrt(min(l, r) / max(l, r) * min(t, b) / max(t, b))
double centerness_target(const double* ltrb);

/// Mean binary cross-entropy of centerness logits [1, H, W] against
/// centerness_target at the target cells. Zero when `targets` is empty.
Var centerness_loss(const Var& logits, const std::vector<BoxTarget>& targets);

struct EmbeddingSample {
  int instance_id = 0;
  Var embedding;  // [D], L2-normalized
};

/// Pull: mean squared distance over pairs sharing an instance id. Push: mean of
/// max(0, margin - distance)^2 over pairs with different ids. Returns pull + push.
Var embedding_loss(const std::vector<EmbeddingSample>& samples, double margin);

}  // namespace afcv::trainer
