#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "afcv/trainer/trainer.hpp"

namespace afcv::cli {

struct LossCurve {
  std::string name;
  std::vector<trainer::LossReport> records;
  int skipped_lines = 0;  // malformed lines left out
};

/// Reads a loss log, skipping (and counting) malformed lines.
LossCurve read_loss_log(const std::filesystem::path& path, const std::string& name);

/// One panel per series (total and each component) with a polyline per curve
/// and a legend naming every curve. Throws DataError if a curve is empty.
std::string render_loss_svg(const std::vector<LossCurve>& curves);

}  // namespace afcv::cli
