#pragma once

#include "afcv/trainer/config.hpp"

namespace afcv::trainer {

/// Warmup multi-step learning rate. For iteration < warmup_iters the rate ramps
/// linearly from warmup_factor * base_lr to base_lr; after that it is base_lr
/// times gamma for every milestone epoch already reached.
double lr_at(int iteration, int iters_per_epoch, const TrainConfig& cfg);

}  // namespace afcv::trainer
