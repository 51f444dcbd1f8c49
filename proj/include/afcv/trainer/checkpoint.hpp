#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "afcv/segcore/model.hpp"
#include "afcv/trainer/config.hpp"

namespace afcv::trainer {

// Binary layout: "AFCK", u32 version, u64 header length, JSON header (config,
// progress counters, tensor names and shapes), then the tensors as float64 in
// header order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ConfigMap config;
  int epochs_done = 0;
  long long iteration = 0;
  long long optimizer_steps = 0;
  std::map<std::string, Tensor> parameters;
  std::map<std::string, Tensor> optimizer_state;
};

/// Writes to a temporary sibling then renames over `path`.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws IoError on a missing file, bad magic, unknown version or truncation.
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint snapshot(const segcore::AfcvModel& model);
/// Copies parameters into `model`; names and shapes must match exactly.
void restore_parameters(segcore::AfcvModel& model, const Checkpoint& ckpt);

}  // namespace afcv::trainer
