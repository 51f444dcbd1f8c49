#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "afcv/evalvis/inference.hpp"
#include "afcv/trainer/config.hpp"

namespace afcv::cli {

namespace fs = std::filesystem;

/// Runs one command line (without the program name). Returns the exit code:
/// 0 success, 1 usage or configuration error, 2 runtime failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Defaults, then the optional config file, then `--set` assignments in order.
trainer::ExperimentConfig resolve_config(const std::optional<fs::path>& config_file,
                                         const std::vector<std::string>& assignments);

/// Takes the scene description from the dataset manifest.
void adopt_dataset(trainer::ExperimentConfig& cfg, const fs::path& dataset_root);

/// Loads and prepares one split for the network under `cfg`.
std::vector<evalvis::ClipInputs> load_inputs(const fs::path& dataset_root, const std::string& split,
                                             const trainer::ExperimentConfig& cfg);

struct EvalSummary {
  evalvis::ModelReport report;
  std::vector<std::string> class_names;
};

EvalSummary evaluate_checkpoint(const fs::path& checkpoint, const fs::path& dataset_root, const std::string& split,
                                const std::vector<std::string>& assignments = {});
std::string format_eval_table(const EvalSummary& s);
std::string format_eval_records(const EvalSummary& s);

struct AblationRow {
  std::string name;
  std::string toggled;  // config key flipped relative to the full run, empty for it
  bool ok = false;
  std::string error;
  evalvis::ModelReport report;
  std::uint64_t init_hash = 0;
  long long iterations = 0;
  std::vector<std::string> config_diff;  // keys differing from the full run
};

struct AblationReport {
  std::vector<AblationRow> rows;
  bool same_initial_weights = false;
  bool diffs_only_toggled = false;
  bool ok() const;
};

/// Trains and evaluates the full model, --no-crossover and --no-audio from the
/// same seed; writes report.md, report.jsonl and loss_curves.svg under
/// `out_dir`. Failed sub-runs become rows with their error.
AblationReport run_ablation(const fs::path& dataset_root, const fs::path& out_dir,
                            const trainer::ExperimentConfig& base, std::ostream& log);
std::string format_ablation_table(const AblationReport& r);

}  // namespace afcv::cli
