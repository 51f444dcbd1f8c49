#include "afcv/trainer/optimizer.hpp"

#include <cmath>

#include "afcv/core/error.hpp"

namespace afcv::trainer {

Optimizer::Optimizer(const TrainConfig& cfg, std::vector<segcore::NamedParameter> params)
    : cfg_(cfg), params_(std::move(params)) {
  for (const auto& p : params_) {
    second_.emplace_back(p.var.shape(), 0.0);
    if (cfg_.optimizer == OptimizerKind::adam) first_.emplace_back(p.var.shape(), 0.0);
  }
}

void Optimizer::zero_grad() {
  for (auto& p : params_) p.var.mutable_grad().fill(0.0);
}

double Optimizer::step(double lr) {
  double sq = 0;
  for (auto& p : params_) {
    for (double g : p.var.mutable_grad().values()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw DataError("non-finite gradient norm");
  const double clip = cfg_.grad_clip > 0 && norm > cfg_.grad_clip ? cfg_.grad_clip / norm : 1.0;
  ++steps_;
  const double eps = cfg_.optimizer_eps;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& value = params_[k].var.mutable_value();
    auto& grad = params_[k].var.mutable_grad();
    auto& v = second_[k];
    if (cfg_.optimizer == OptimizerKind::rmsprop) {
      const double a = cfg_.rmsprop_alpha;
      for (std::size_t i = 0; i < value.size(); ++i) {
        const double g = grad[i] * clip;
        v[i] = a * v[i] + (1 - a) * g * g;
        value[i] -= lr * g / (std::sqrt(v[i]) + eps);
      }
    } else {
      auto& m = first_[k];
      const double b1 = cfg_.adam_beta1, b2 = cfg_.adam_beta2;
      const double c1 = 1 - std::pow(b1, static_cast<double>(steps_));
      const double c2 = 1 - std::pow(b2, static_cast<double>(steps_));
      for (std::size_t i = 0; i < value.size(); ++i) {
        const double g = grad[i] * clip;
        m[i] = b1 * m[i] + (1 - b1) * g;
        v[i] = b2 * v[i] + (1 - b2) * g * g;
        value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
      }
    }
    grad.fill(0.0);
  }
  return norm;
}

std::map<std::string, Tensor> Optimizer::state() const {
  std::map<std::string, Tensor> out;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    out["second/" + params_[k].name] = second_[k];
    if (!first_.empty()) out["first/" + params_[k].name] = first_[k];
  }
  return out;
}

void Optimizer::load_state(const std::map<std::string, Tensor>& state, long long steps) {
  auto fetch = [&](const std::string& key, Tensor& dst) {
    auto it = state.find(key);
    if (it == state.end()) throw IoError("optimizer state lacks '" + key + "'");
    if (it->second.shape() != dst.shape()) throw IoError("optimizer state '" + key + "' has the wrong shape");
    dst = it->second;
  };
  for (std::size_t k = 0; k < params_.size(); ++k) {
    fetch("second/" + params_[k].name, second_[k]);
    if (!first_.empty()) fetch("first/" + params_[k].name, first_[k]);
  }
  steps_ = steps;
}

}  // namespace afcv::trainer
