#pragma once

#include <map>
#include <string>
#include <vector>

#include "afcv/segcore/model.hpp"
#include "afcv/trainer/config.hpp"

namespace afcv::trainer {

/// RMSprop (no momentum) or Adam over a fixed parameter list, with optional
/// global-norm gradient clipping.
class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, std::vector<segcore::NamedParameter> params);

  /// Clips, applies one update at `lr` and zeroes the gradients. Returns the
  /// gradient norm before clipping.
  double step(double lr);
  void zero_grad();

  long long steps_taken() const { return steps_; }
  /// Slot tensors keyed "<slot>/<parameter name>".
  std::map<std::string, Tensor> state() const;
  void load_state(const std::map<std::string, Tensor>& state, long long steps);

 private:
  TrainConfig cfg_;
  std::vector<segcore::NamedParameter> params_;
  std::vector<Tensor> first_, second_;
  long long steps_ = 0;
};

}  // namespace afcv::trainer
