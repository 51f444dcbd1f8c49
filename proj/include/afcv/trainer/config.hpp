#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "afcv/avdata/synthetic.hpp"
#include "afcv/evalvis/inference.hpp"
#include "afcv/evalvis/metrics.hpp"
#include "afcv/segcore/model.hpp"

namespace afcv::trainer {

/// Flat dotted-key view of a configuration, e.g. "train.base_lr" -> "0.005".
using ConfigMap = std::map<std::string, std::string>;

/// Parses `key = value` lines; `#` starts a comment, blank lines are ignored.
/// Throws ConfigError with the line number on malformed input.
ConfigMap parse_config_text(const std::string& text);
ConfigMap load_config_file(const std::filesystem::path& path);
/// "key=value" as given on the command line.
std::pair<std::string, std::string> parse_assignment(const std::string& text);

struct LossWeights {
  double cls = 1.0;
  double loc = 1.0;
  double mask = 1.0;
  double crossover = 1.0;
  double embed = 1.0;
  bool operator==(const LossWeights&) const = default;
};

enum class OptimizerKind { rmsprop, adam };
std::string to_string(OptimizerKind k);

struct TrainConfig {
  double base_lr = 0.005;
  int epochs = 12;
  std::vector<int> lr_milestones{9, 11};
  double lr_gamma = 0.1;
  int warmup_iters = 500;
  double warmup_factor = 0.001;
  int batch_clips = 2;
  int pairs_per_clip = 1;  // frame pairs drawn from each clip per epoch
  LossWeights loss_weights;
  bool crossover_enabled = true;
  bool audio_enabled = true;
  std::uint64_t seed = 0;

  OptimizerKind optimizer = OptimizerKind::rmsprop;
  double rmsprop_alpha = 0.99;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double optimizer_eps = 1e-8;
  double grad_clip = 10.0;  // global L2 norm, 0 disables

  int delta_max = 5;
  int mask_locations = 4;  // positive cells per instance and frame given a mask loss
  double embed_margin = 1.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct ExperimentConfig {
  avdata::SyntheticSceneConfig data = avdata::SyntheticSceneConfig::lookalike_default();
  double val_fraction = 0.2;
  segcore::ModelConfig model;
  evalvis::InputConfig input;
  evalvis::InferenceConfig inference;
  evalvis::ApOptions eval{evalvis::ApOptions::default_thresholds()};
  TrainConfig train;

  /// Keeps derived model dimensions in step with the data and audio settings.
  void sync_derived();
  void validate() const;
};

/// Every key with its current value.
ConfigMap to_config_map(const ExperimentConfig& cfg);
/// Applies the given keys on top of `cfg`. Unknown keys and unparsable values
/// throw ConfigError.
void apply_config(ExperimentConfig& cfg, const ConfigMap& values);
/// Resolved config as `key = value` lines, loadable by parse_config_text.
std::string format_config(const ConfigMap& map);
/// Keys whose values differ between the two maps.
std::vector<std::string> config_diff(const ConfigMap& a, const ConfigMap& b);

}  // namespace afcv::trainer
