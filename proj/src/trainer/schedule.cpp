#include "afcv/trainer/schedule.hpp"

#include <cmath>

#include "afcv/core/error.hpp"

namespace afcv::trainer {

double lr_at(int iteration, int iters_per_epoch, const TrainConfig& cfg) {
  if (iteration < 0) throw ConfigError("lr_at: iteration must be >= 0");
  if (iters_per_epoch < 1) throw ConfigError("lr_at: iters_per_epoch must be >= 1");
  const int epoch = iteration / iters_per_epoch;
  int passed = 0;
  for (int m : cfg.lr_milestones) passed += epoch >= m;
  const double decayed = cfg.base_lr * std::pow(cfg.lr_gamma, passed);
  if (iteration >= cfg.warmup_iters) return decayed;
  const double alpha = static_cast<double>(iteration) / cfg.warmup_iters;
  return decayed * (cfg.warmup_factor * (1.0 - alpha) + alpha);
}

}  // namespace afcv::trainer
