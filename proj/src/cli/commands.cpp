#include "afcv/cli/commands.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "afcv/avdata/io.hpp"
#include "afcv/audiofe/audiofe.hpp"
#include "afcv/cli/plot.hpp"
#include "afcv/core/error.hpp"
#include "afcv/trainer/checkpoint.hpp"
#include "afcv/trainer/trainer.hpp"

namespace afcv::cli {

using nlohmann::json;
using trainer::ExperimentConfig;

namespace {

std::string fixed(double v, int digits = 3) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!(out << text)) throw IoError("cannot write " + path.string());
}

bool nonempty_dir(const fs::path& p) { return fs::is_directory(p) && !fs::is_empty(p); }

void print_config(std::ostream& out, const ExperimentConfig& cfg) {
  out << "# resolved config\n" << trainer::format_config(trainer::to_config_map(cfg)) << std::flush;
}

}  // namespace

ExperimentConfig resolve_config(const std::optional<fs::path>& config_file, const std::vector<std::string>& assignments) {
  ExperimentConfig cfg;
  if (config_file) trainer::apply_config(cfg, trainer::load_config_file(*config_file));
  for (const auto& a : assignments) {
    const auto [k, v] = trainer::parse_assignment(a);
    trainer::apply_config(cfg, {{k, v}});
  }
  cfg.sync_derived();
  return cfg;
}

void adopt_dataset(ExperimentConfig& cfg, const fs::path& dataset_root) {
  const auto manifest = avdata::read_manifest(dataset_root);
  cfg.data = manifest.scene;
  cfg.sync_derived();
}

std::vector<evalvis::ClipInputs> load_inputs(const fs::path& dataset_root, const std::string& split,
                                             const ExperimentConfig& cfg) {
  std::vector<evalvis::ClipInputs> out;
  for (const auto& clip : avdata::load_split(dataset_root, split)) {
    out.push_back(evalvis::prepare_clip_inputs(clip, cfg.input, cfg.model.audio_columns, cfg.train.audio_enabled));
  }
  return out;
}

EvalSummary evaluate_checkpoint(const fs::path& checkpoint, const fs::path& dataset_root, const std::string& split,
                                const std::vector<std::string>& assignments) {
  ExperimentConfig cfg;
  auto model = trainer::load_model(checkpoint, &cfg);
  for (const auto& a : assignments) {
    const auto [k, v] = trainer::parse_assignment(a);
    trainer::apply_config(cfg, {{k, v}});
  }
  if (!(cfg.model == model.config())) throw ConfigError("overrides may not change the model architecture");
  const auto manifest = avdata::read_manifest(dataset_root);
  if (manifest.scene.num_classes() != cfg.model.num_classes) {
    throw DataError("dataset has " + std::to_string(manifest.scene.num_classes()) + " classes, checkpoint " +
                    std::to_string(cfg.model.num_classes));
  }
  const auto inputs = load_inputs(dataset_root, split, cfg);
  if (inputs.empty()) throw DataError("split '" + split + "' of " + dataset_root.string() + " has no clips");
  EvalSummary s;
  s.class_names = manifest.class_names;
  s.report = evalvis::evaluate_model(model, inputs, cfg.inference, cfg.eval, avdata::lookalike_classes(cfg.data));
  return s;
}

std::string format_eval_table(const EvalSummary& s) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %7s %7s %6s %6s\n", "class", "AP", "AR", "gt", "pred");
  out << line;
  for (const auto& c : s.report.vis.per_class) {
    const std::string name = c.class_id < static_cast<int>(s.class_names.size()) ? s.class_names[c.class_id]
                                                                                 : std::to_string(c.class_id);
    std::snprintf(line, sizeof line, "%-16s %7s %7s %6d %6d\n", name.c_str(), c.ap ? fixed(*c.ap).c_str() : "-",
                  c.ar ? fixed(*c.ar).c_str() : "-", c.num_gt, c.num_pred);
    out << line;
  }
  const auto& r = s.report;
  out << "AP " << fixed(r.vis.ap) << "  AP50 " << fixed(r.ap50) << "  AR " << fixed(r.vis.ar) << "  lookalike_acc "
      << fixed(r.lookalike_accuracy) << " (" << r.lookalike_instances << " instances)  mask_dice "
      << fixed(r.mask_dice) << "\n";
  if (r.vis.all_empty) out << "warning: no ground truth and no predictions\n";
  return out.str();
}

std::string format_eval_records(const EvalSummary& s) {
  std::string out;
  for (const auto& c : s.report.vis.per_class) {
    json j = {{"type", "class"}, {"class_id", c.class_id}, {"num_gt", c.num_gt}, {"num_pred", c.num_pred}};
    if (c.class_id < static_cast<int>(s.class_names.size())) j["class"] = s.class_names[c.class_id];
    j["ap"] = c.ap ? json(*c.ap) : json(nullptr);
    j["ar"] = c.ar ? json(*c.ar) : json(nullptr);
    out += j.dump() + "\n";
  }
  const auto& r = s.report;
  json per_threshold = json::object();
  for (const auto& [t, v] : r.vis.ap_per_threshold) per_threshold[fixed(t, 2)] = v;
  json overall = {{"type", "overall"},
                  {"ap", r.vis.ap},
                  {"ap50", r.ap50},
                  {"ar", r.vis.ar},
                  {"ap_per_threshold", per_threshold},
                  {"lookalike_accuracy", r.lookalike_accuracy},
                  {"lookalike_instances", r.lookalike_instances},
                  {"mask_dice", r.mask_dice},
                  {"all_empty", r.vis.all_empty}};
  out += overall.dump() + "\n";
  return out;
}

bool AblationReport::ok() const {
  if (rows.size() != 3 || !same_initial_weights || !diffs_only_toggled) return false;
  for (const auto& r : rows) {
    if (!r.ok) return false;
  }
  return true;
}

AblationReport run_ablation(const fs::path& dataset_root, const fs::path& out_dir, const ExperimentConfig& base,
                            std::ostream& log) {
  struct Variant {
    std::string name, key;
  };
  const Variant variants[3] = {{"full", ""}, {"no-crossover", "crossover.enabled"}, {"no-audio", "audio.enabled"}};
  ExperimentConfig full = base;
  full.train.crossover_enabled = true;
  full.train.audio_enabled = true;
  adopt_dataset(full, dataset_root);
  const auto full_map = trainer::to_config_map(full);

  AblationReport report;
  std::vector<LossCurve> curves;
  for (const auto& v : variants) {
    AblationRow row;
    row.name = v.name;
    row.toggled = v.key;
    ExperimentConfig cfg = full;
    if (v.key == "crossover.enabled") cfg.train.crossover_enabled = false;
    if (v.key == "audio.enabled") cfg.train.audio_enabled = false;
    row.config_diff = trainer::config_diff(full_map, trainer::to_config_map(cfg));
    const fs::path run_dir = out_dir / v.name;
    log << "[" << v.name << "] training in " << run_dir.string() << std::endl;
    try {
      write_text(run_dir / "config.txt", trainer::format_config(trainer::to_config_map(cfg)));
      const auto train = load_inputs(dataset_root, "train", cfg);
      const auto val = load_inputs(dataset_root, "val", cfg);
      if (train.empty() || val.empty()) throw DataError("ablation needs nonempty train and val splits");
      const auto result = trainer::fit(train, cfg, run_dir);
      row.iterations = result.iterations;
      segcore::AfcvModel init(cfg.model, cfg.train.seed);
      trainer::restore_parameters(init, trainer::load_checkpoint(run_dir / trainer::kInitCheckpoint));
      row.init_hash = segcore::parameter_hash(init);
      const auto model = trainer::load_model(result.checkpoint);
      row.report = evalvis::evaluate_model(model, val, cfg.inference, cfg.eval, avdata::lookalike_classes(cfg.data));
      curves.push_back(read_loss_log(result.loss_log, v.name));
      row.ok = true;
      log << "[" << v.name << "] AP " << fixed(row.report.vis.ap) << " AP50 " << fixed(row.report.ap50) << std::endl;
    } catch (const std::exception& e) {
      row.error = e.what();
      log << "[" << v.name << "] failed: " << e.what() << std::endl;
    }
    report.rows.push_back(std::move(row));
  }

  report.same_initial_weights = true;
  report.diffs_only_toggled = true;
  for (const auto& r : report.rows) {
    if (!r.ok || r.init_hash != report.rows[0].init_hash) report.same_initial_weights = false;
    const std::vector<std::string> expected = r.toggled.empty() ? std::vector<std::string>{}
                                                                : std::vector<std::string>{r.toggled};
    if (r.config_diff != expected) report.diffs_only_toggled = false;
  }

  fs::create_directories(out_dir);
  write_text(out_dir / "report.md", format_ablation_table(report));
  std::string records;
  for (const auto& r : report.rows) {
    json j = {{"run", r.name},         {"toggled", r.toggled},  {"ok", r.ok},
              {"iterations", r.iterations}, {"init_hash", r.init_hash}, {"config_diff", r.config_diff}};
    if (r.ok) {
      j["ap"] = r.report.vis.ap;
      j["ap50"] = r.report.ap50;
      j["ar"] = r.report.vis.ar;
      j["lookalike_accuracy"] = r.report.lookalike_accuracy;
      j["mask_dice"] = r.report.mask_dice;
    } else {
      j["error"] = r.error;
    }
    records += j.dump() + "\n";
  }
  write_text(out_dir / "report.jsonl", records);
  if (!curves.empty()) write_text(out_dir / "loss_curves.svg", render_loss_svg(curves));
  return report;
}

std::string format_ablation_table(const AblationReport& r) {
  std::ostringstream out;
  out << "| run | toggled | AP | AP50 | AR | lookalike acc | mask dice | iterations | status |\n";
  out << "|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& row : r.rows) {
    out << "| " << row.name << " | " << (row.toggled.empty() ? "-" : row.toggled + "=false") << " | ";
    if (row.ok) {
      const auto& m = row.report;
      out << fixed(m.vis.ap) << " | " << fixed(m.ap50) << " | " << fixed(m.vis.ar) << " | "
          << fixed(m.lookalike_accuracy) << " | " << fixed(m.mask_dice) << " | " << row.iterations << " | ok |\n";
    } else {
      out << "- | - | - | - | - | " << row.iterations << " | failed: " << row.error << " |\n";
    }
  }
  out << "\nsame initial weights: " << (r.same_initial_weights ? "yes" : "no") << "\n";
  out << "runs differ only in the toggled flag: " << (r.diffs_only_toggled ? "yes" : "no") << "\n";
  return out.str();
}

namespace {

struct Common {
  std::optional<fs::path> config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.sets, "override a config key (key=value), repeatable");
  cmd->add_option("--seed", c.seed, "random seed");
}

int cmd_generate(const Common& c, const fs::path& out_dir, int clips, bool force, std::ostream& out,
                 std::ostream& err) {
  auto cfg = resolve_config(c.config, c.sets);
  if (c.seed) cfg.data.seed = *c.seed;
  cfg.validate();
  print_config(out, cfg);
  if (clips < 0) throw ConfigError("--clips must be >= 0");
  if (nonempty_dir(out_dir)) {
    if (!force) {
      err << "error: " << out_dir.string() << " exists and is not empty (use --force to overwrite)\n";
      return 2;
    }
    fs::remove_all(out_dir);
  }
  if (clips == 0) err << "warning: --clips 0 writes an empty dataset\n";
  const int val = static_cast<int>(clips * cfg.val_fraction);
  const auto manifest = avdata::write_synthetic_dataset(out_dir, cfg.data, clips - val, val);

  std::vector<int> counts(cfg.data.num_classes(), 0);
  for (int i = 0; i < clips; ++i) {
    const auto clip = avdata::generate_clip(cfg.data, i);
    std::set<int> seen;
    for (const auto& frame : clip.annotations) {
      for (const auto& a : frame) {
        if (seen.insert(a.instance_id).second) ++counts[a.class_id];
      }
    }
  }
  out << "wrote " << manifest.clips.size() << " clips (" << clips - val << " train, " << val << " val) to "
      << out_dir.string() << "\n";
  for (int k = 0; k < cfg.data.num_classes(); ++k) {
    out << "  " << cfg.data.classes[k].name << ": " << counts[k] << " instances\n";
  }
  return 0;
}

int cmd_preprocess(const Common& c, const fs::path& dataset, std::ostream& out, std::ostream& err) {
  auto cfg = resolve_config(c.config, c.sets);
  adopt_dataset(cfg, dataset);
  cfg.validate();
  print_config(out, cfg);
  const auto manifest = avdata::read_manifest(dataset);
  int done = 0, failed = 0;
  for (const auto& entry : manifest.clips) {
    const auto dir = avdata::clip_dir(dataset, entry);
    try {
      const auto clip = avdata::load_clip(dir);
      audiofe::write_slices(dir / audiofe::kSliceFile, audiofe::clip_audio_slices(clip, cfg.input.spectrogram));
      ++done;
    } catch (const Error& e) {
      err << "warning: skipping " << entry.clip_id << ": " << e.what() << "\n";
      ++failed;
    }
  }
  out << "wrote " << audiofe::kSliceFile << " for " << done << " clips";
  if (failed) out << " (" << failed << " skipped)";
  out << "\n";
  return 0;
}

int cmd_train(const Common& c, const fs::path& dataset, const fs::path& out_dir, bool resume, bool force,
              bool no_crossover, bool no_audio, std::ostream& out, std::ostream& err) {
  auto cfg = resolve_config(c.config, c.sets);
  if (c.seed) cfg.train.seed = *c.seed;
  if (no_crossover) cfg.train.crossover_enabled = false;
  if (no_audio) cfg.train.audio_enabled = false;
  adopt_dataset(cfg, dataset);
  cfg.validate();
  print_config(out, cfg);
  if (!resume && fs::exists(out_dir / trainer::kLastCheckpoint)) {
    if (!force) {
      err << "error: " << out_dir.string() << " already holds a run (use --resume or --force)\n";
      return 2;
    }
    for (const char* f : {trainer::kLastCheckpoint, trainer::kInitCheckpoint, trainer::kLossLog}) {
      fs::remove(out_dir / f);
    }
  }
  const auto data = load_inputs(dataset, "train", cfg);
  if (data.empty()) throw DataError("train split of " + dataset.string() + " has no clips");
  write_text(out_dir / "config.txt", trainer::format_config(trainer::to_config_map(cfg)));
  const int per_epoch = trainer::iters_per_epoch(static_cast<int>(data.size()), cfg.train);
  trainer::FitOptions opts;
  opts.resume = resume;
  opts.on_step = [&](const trainer::LossReport& r) {
    if ((r.iteration + 1) % per_epoch == 0) {
      out << "epoch " << r.epoch + 1 << "/" << cfg.train.epochs << " iter " << r.iteration + 1 << " lr " << r.lr
          << " total " << fixed(r.total, 4) << "\n"
          << std::flush;
    }
  };
  const auto result = trainer::fit(data, cfg, out_dir, opts);
  out << "checkpoint " << result.checkpoint.string() << "\nloss log " << result.loss_log.string() << "\n";
  return 0;
}

int cmd_eval(const Common& c, const fs::path& checkpoint, const fs::path& dataset, const std::string& split,
             const std::string& format, const std::optional<fs::path>& out_file, std::ostream& out) {
  if (c.config) throw ConfigError("eval takes its config from the checkpoint; use --set for inference.* keys");
  ExperimentConfig cfg;
  trainer::load_model(checkpoint, &cfg);
  for (const auto& a : c.sets) {
    const auto [k, v] = trainer::parse_assignment(a);
    trainer::apply_config(cfg, {{k, v}});
  }
  print_config(out, cfg);
  const auto summary = evaluate_checkpoint(checkpoint, dataset, split, c.sets);
  const std::string text = format == "records" ? format_eval_records(summary) : format_eval_table(summary);
  if (out_file) write_text(*out_file, text);
  out << text;
  return 0;
}

int cmd_ablate(const Common& c, const fs::path& dataset, const fs::path& out_dir, bool force, std::ostream& out,
               std::ostream& err) {
  auto cfg = resolve_config(c.config, c.sets);
  if (c.seed) cfg.train.seed = *c.seed;
  adopt_dataset(cfg, dataset);
  cfg.validate();
  print_config(out, cfg);
  if (nonempty_dir(out_dir)) {
    if (!force) {
      err << "error: " << out_dir.string() << " exists and is not empty (use --force to overwrite)\n";
      return 2;
    }
    fs::remove_all(out_dir);
  }
  const auto report = run_ablation(dataset, out_dir, cfg, out);
  out << format_ablation_table(report);
  return report.ok() ? 0 : 2;
}

int cmd_plot(const std::vector<std::string>& logs, const fs::path& out_file, std::ostream& out, std::ostream& err) {
  std::vector<LossCurve> curves;
  for (const auto& spec : logs) {
    // name=path names the run; otherwise the log's directory names it
    std::string name, path = spec;
    if (const auto eq = spec.find('='); eq != std::string::npos) {
      name = spec.substr(0, eq);
      path = spec.substr(eq + 1);
    } else {
      const fs::path p(spec);
      name = p.has_parent_path() ? p.parent_path().filename().string() : p.stem().string();
      if (name.empty()) name = p.stem().string();
    }
    auto curve = read_loss_log(path, name);
    if (curve.skipped_lines > 0) {
      err << "warning: skipped " << curve.skipped_lines << " malformed lines in " << path << "\n";
    }
    curves.push_back(std::move(curve));
  }
  const std::string svg = render_loss_svg(curves);
  write_text(out_file, svg);
  out << "wrote " << out_file.string() << " (" << curves.size() << " run" << (curves.size() == 1 ? "" : "s") << ")\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Audio-fused crossover video instance segmentation toolkit", "afcv"};
  app.require_subcommand(1);

  Common common;
  fs::path out_dir, dataset, checkpoint, plot_out;
  int clips = 20;
  bool force = false, resume = false, no_crossover = false, no_audio = false;
  std::string split = "val", format = "table";
  std::optional<fs::path> eval_out;
  std::vector<std::string> logs;

  auto* gen = app.add_subcommand("generate", "write a synthetic audio-visual dataset");
  add_common(gen, common);
  gen->add_option("--out", out_dir, "dataset directory")->required();
  gen->add_option("--clips", clips, "number of clips (train and val together)");
  gen->add_flag("--force", force, "overwrite a nonempty output directory");

  auto* pre = app.add_subcommand("preprocess-audio", "write per-frame spectrogram slices next to each clip");
  add_common(pre, common);
  pre->add_option("--dataset", dataset, "dataset directory")->required()->check(CLI::ExistingDirectory);

  auto* train = app.add_subcommand("train", "train a model");
  add_common(train, common);
  train->add_option("--dataset", dataset, "dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", out_dir, "run directory")->required();
  train->add_flag("--resume", resume, "continue from <out>/last.ckpt");
  train->add_flag("--force", force, "discard an existing run in <out>");
  train->add_flag("--no-crossover", no_crossover, "disable the crossover loss");
  train->add_flag("--no-audio", no_audio, "fuse zero audio vectors");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(ev, common);
  ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("--dataset", dataset, "dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--split", split, "split to evaluate");
  ev->add_option("--format", format, "table or records")->check(CLI::IsMember({"table", "records"}));
  ev->add_option("--out", eval_out, "also write the results to this file");

  auto* abl = app.add_subcommand("ablate", "full vs --no-crossover vs --no-audio from one seed");
  add_common(abl, common);
  abl->add_option("--dataset", dataset, "dataset directory")->required()->check(CLI::ExistingDirectory);
  abl->add_option("--out", out_dir, "report directory")->required();
  abl->add_flag("--force", force, "overwrite a nonempty output directory");

  auto* plot = app.add_subcommand("plot", "render loss curves to SVG");
  plot->add_option("--log", logs, "loss log, optionally name=path; repeat to overlay runs")->required();
  plot->add_option("--out", plot_out, "output .svg")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_generate(common, out_dir, clips, force, out, err);
    if (*pre) return cmd_preprocess(common, dataset, out, err);
    if (*train) return cmd_train(common, dataset, out_dir, resume, force, no_crossover, no_audio, out, err);
    if (*ev) return cmd_eval(common, checkpoint, dataset, split, format, eval_out, out);
    if (*abl) return cmd_ablate(common, dataset, out_dir, force, out, err);
    if (*plot) return cmd_plot(logs, plot_out, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace afcv::cli
