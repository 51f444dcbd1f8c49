#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "afcv/crossover/crossover.hpp"
#include "afcv/evalvis/inference.hpp"
#include "afcv/segcore/model.hpp"
#include "afcv/trainer/config.hpp"
#include "afcv/trainer/optimizer.hpp"

namespace afcv::trainer {

struct LossComponents {
  double cls = 0;
  double loc = 0;
  double mask = 0;
  double crossover = 0;
  double embed = 0;
  bool operator==(const LossComponents&) const = default;
};

double weighted_total(const LossComponents& c, const LossWeights& w);

struct LossReport {
  long long iteration = 0;
  int epoch = 0;
  LossComponents components;
  double total = 0;  // weighted_total(components, weights)
  double lr = 0;
  bool operator==(const LossReport&) const = default;
};

/// One JSON object per line.
std::string to_log_line(const LossReport& r);
/// Throws DataError on a malformed line.
LossReport parse_log_line(const std::string& line);

struct TrainSample {
  const evalvis::ClipInputs* inputs = nullptr;
  crossover::FramePair pair;
};

/// Owns the optimizer for one model and applies single training steps.
class Trainer {
 public:
  Trainer(const ExperimentConfig& cfg, segcore::AfcvModel& model);

  /// Forward both frames of every pair, compute the five loss components
  /// (averaged over the batch), back-propagate and update once at
  /// lr_at(iteration). Throws DataError naming the first non-finite component.
  LossReport train_step(const std::vector<TrainSample>& batch, Rng& rng, long long iteration, int iters_per_epoch);

  /// Loss components of one pair without touching gradients or parameters.
  LossComponents evaluate_pair(const TrainSample& sample, Rng& rng) const;

  Optimizer& optimizer() { return optimizer_; }
  segcore::AfcvModel& model() { return model_; }

 private:
  std::vector<ag::Var> pair_losses(const TrainSample& sample, Rng& rng) const;

  ExperimentConfig cfg_;
  segcore::AfcvModel& model_;
  Optimizer optimizer_;
};

inline constexpr const char* kInitCheckpoint = "init.ckpt";
inline constexpr const char* kLastCheckpoint = "last.ckpt";
inline constexpr const char* kLossLog = "loss_log.jsonl";

int iters_per_epoch(int num_clips, const TrainConfig& cfg);

struct FitOptions {
  bool resume = false;
  std::function<void(const LossReport&)> on_step;
};

struct FitResult {
  std::filesystem::path checkpoint;
  std::filesystem::path loss_log;
  long long iterations = 0;
  int skipped_pairs = 0;  // clips without a frame pair sharing an instance
};

/// Trains a freshly seeded model (or resumes `out_dir/last.ckpt`) for
/// cfg.train.epochs epochs. Writes init.ckpt, last.ckpt after every epoch and
/// an append-only loss log. Resuming requires an identical config apart from
/// train.epochs.
FitResult fit(const std::vector<evalvis::ClipInputs>& dataset, const ExperimentConfig& cfg,
              const std::filesystem::path& out_dir, const FitOptions& options = {});

/// Model described by a checkpoint's config, with its parameters loaded.
segcore::AfcvModel load_model(const std::filesystem::path& checkpoint, ExperimentConfig* cfg_out = nullptr);

}  // namespace afcv::trainer
