#include "afcv/trainer/losses.hpp"

#include <algorithm>
#include <cmath>

#include "afcv/core/error.hpp"
#include "afcv/core/ops.hpp"

namespace afcv::trainer {

namespace {

// log(sigmoid(x)) and log(1 - sigmoid(x)) without overflow.
double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }
double log_one_minus_sigmoid(double x) { return log_sigmoid(-x); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void require_cells(const Var& map, const std::vector<BoxTarget>& targets, int channels, const char* op) {
  const auto& v = map.value();
  if (v.rank() != 3 || v.dim(0) != channels) {
    throw ShapeError(std::string(op) + ": expected [" + std::to_string(channels) + ", H, W], got " +
                     shape_str(v.shape()));
  }
  for (const auto& t : targets) {
    if (t.x < 0 || t.y < 0 || t.x >= v.dim(2) || t.y >= v.dim(1)) {
      throw ShapeError(std::string(op) + ": target cell outside the grid");
    }
  }
}

}  // namespace

Var focal_loss(const Var& logits, const Tensor& targets, double alpha, double gamma, double normalizer) {
  if (logits.shape() != targets.shape()) {
    throw ShapeError("focal_loss: logits " + shape_str(logits.shape()) + " vs targets " + shape_str(targets.shape()));
  }
  if (!(normalizer > 0)) throw DataError("focal_loss: normalizer must be positive");
  const auto& x = logits.value();
  double total = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double p = sigmoid(x[i]);
    total += targets[i] > 0.5 ? -alpha * std::pow(1 - p, gamma) * log_sigmoid(x[i])
                              : -(1 - alpha) * std::pow(p, gamma) * log_one_minus_sigmoid(x[i]);
  }
  return ag::make_result(Tensor({1}, total / normalizer), {logits},
                         [targets, alpha, gamma, normalizer](ag::Node& self) {
                           auto* in = self.inputs[0].get();
                           auto& g = in->grad_buffer();
                           const double scale = self.grad[0] / normalizer;
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             const double z = in->value[i];
                             const double p = sigmoid(z);
                             double d;
                             if (targets[i] > 0.5) {
                               d = alpha * std::pow(1 - p, gamma) * (gamma * p * log_sigmoid(z) + p - 1);
                             } else {
                               d = (1 - alpha) * std::pow(p, gamma) * (p - gamma * (1 - p) * log_one_minus_sigmoid(z));
                             }
                             g[i] += scale * d;
                           }
                         });
}

Var iou_loss(const Var& box, const std::vector<BoxTarget>& targets) {
  require_cells(box, targets, 4, "iou_loss");
  if (targets.empty()) return ag::constant(Tensor({1}, 0.0));
  const auto& v = box.value();
  const int h = v.dim(1);
  const int w = v.dim(2);
  auto pred = [&](const Tensor& t, const BoxTarget& c, int k) { return t[(static_cast<std::size_t>(k) * h + c.y) * w + c.x]; };
  double total = 0;
  for (const auto& c : targets) {
    const double l = pred(v, c, 0), t = pred(v, c, 1), r = pred(v, c, 2), b = pred(v, c, 3);
    const double* g = c.ltrb;
    const double wi = std::min(l, g[0]) + std::min(r, g[2]);
    const double hi = std::min(t, g[1]) + std::min(b, g[3]);
    const double inter = wi * hi;
    const double uni = (l + r) * (t + b) + (g[0] + g[2]) * (g[1] + g[3]) - inter;
    total += 1.0 - inter / uni;
  }
  const double n = static_cast<double>(targets.size());
  return ag::make_result(Tensor({1}, total / n), {box}, [targets, h, w, n](ag::Node& self) {
    auto* in = self.inputs[0].get();
    auto& grad = in->grad_buffer();
    const auto& v = in->value;
    for (const auto& c : targets) {
      std::size_t idx[4];
      double p[4];
      for (int k = 0; k < 4; ++k) {
        idx[k] = (static_cast<std::size_t>(k) * h + c.y) * w + c.x;
        p[k] = v[idx[k]];
      }
      const double* g = c.ltrb;
      const double wi = std::min(p[0], g[0]) + std::min(p[2], g[2]);
      const double hi = std::min(p[1], g[1]) + std::min(p[3], g[3]);
      const double inter = wi * hi;
      const double uni = (p[0] + p[2]) * (p[1] + p[3]) + (g[0] + g[2]) * (g[1] + g[3]) - inter;
      for (int k = 0; k < 4; ++k) {
        // horizontal sides (l, r) scale the width, vertical ones the height
        const bool horizontal = k % 2 == 0;
        const double d_inter = (p[k] < g[k] ? 1.0 : 0.0) * (horizontal ? hi : wi);
        const double d_area = horizontal ? p[1] + p[3] : p[0] + p[2];
        const double d_uni = d_area - d_inter;
        const double d_iou = (d_inter * uni - inter * d_uni) / (uni * uni);
        grad[idx[k]] += -self.grad[0] * d_iou / n;
      }
    }
  });
}

double centerness_target(const double* ltrb) {
  const double lr = std::min(ltrb[0], ltrb[2]) / std::max(ltrb[0], ltrb[2]);
  const double tb = std::min(ltrb[1], ltrb[3]) / std::max(ltrb[1], ltrb[3]);
  return std::sqrt(lr * tb);
}

Var centerness_loss(const Var& logits, const std::vector<BoxTarget>& targets) {
  require_cells(logits, targets, 1, "centerness_loss");
  if (targets.empty()) return ag::constant(Tensor({1}, 0.0));
  const auto& v = logits.value();
  const int w = v.dim(2);
  double total = 0;
  for (const auto& c : targets) {
    const double z = v[static_cast<std::size_t>(c.y) * w + c.x];
    const double y = centerness_target(c.ltrb);
    total += -(y * log_sigmoid(z) + (1 - y) * log_one_minus_sigmoid(z));
  }
  const double n = static_cast<double>(targets.size());
  return ag::make_result(Tensor({1}, total / n), {logits}, [targets, w, n](ag::Node& self) {
    auto* in = self.inputs[0].get();
    auto& grad = in->grad_buffer();
    for (const auto& c : targets) {
      const std::size_t i = static_cast<std::size_t>(c.y) * w + c.x;
      grad[i] += self.grad[0] * (sigmoid(in->value[i]) - centerness_target(c.ltrb)) / n;
    }
  });
}

Var embedding_loss(const std::vector<EmbeddingSample>& samples, double margin) {
  std::vector<Var> pull, push;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t j = i + 1; j < samples.size(); ++j) {
      const Var sq = ops::sum(ops::square(ops::sub(samples[i].embedding, samples[j].embedding)));
      if (samples[i].instance_id == samples[j].instance_id) {
        pull.push_back(sq);
      } else {
        const Var dist = ops::sqrt(sq, 1e-12);
        push.push_back(ops::square(ops::relu(ops::add_scalar(ops::scale(dist, -1.0), margin))));
      }
    }
  }
  std::vector<Var> terms;
  if (!pull.empty()) terms.push_back(ops::scale(ops::add_n(pull), 1.0 / pull.size()));
  if (!push.empty()) terms.push_back(ops::scale(ops::add_n(push), 1.0 / push.size()));
  if (terms.empty()) return ag::constant(Tensor({1}, 0.0));
  return ops::add_n(terms);
}

}  // namespace afcv::trainer
