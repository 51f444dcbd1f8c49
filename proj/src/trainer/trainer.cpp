#include "afcv/trainer/trainer.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "afcv/core/error.hpp"
#include "afcv/core/ops.hpp"
#include "afcv/trainer/checkpoint.hpp"
#include "afcv/trainer/losses.hpp"
#include "afcv/trainer/schedule.hpp"
#include "afcv/trainer/targets.hpp"

namespace afcv::trainer {

namespace fs = std::filesystem;
using ag::Var;
using nlohmann::json;

namespace {

constexpr const char* kComponentNames[5] = {"cls", "loc", "mask", "crossover", "embed"};

Var mean_of(const std::vector<Var>& terms) {
  if (terms.empty()) return ag::constant(Tensor({1}, 0.0));
  return ops::scale(ops::add_n(terms), 1.0 / static_cast<double>(terms.size()));
}

const avdata::InstanceAnnotation* find_instance(const avdata::VideoClip& clip, int frame, int id) {
  for (const auto& a : clip.annotations.at(frame)) {
    if (a.instance_id == id) return &a;
  }
  return nullptr;
}

}  // namespace

double weighted_total(const LossComponents& c, const LossWeights& w) {
  return w.cls * c.cls + w.loc * c.loc + w.mask * c.mask + w.crossover * c.crossover + w.embed * c.embed;
}

std::string to_log_line(const LossReport& r) {
  json j = {{"iteration", r.iteration},
            {"epoch", r.epoch},
            {"lr", r.lr},
            {"cls", r.components.cls},
            {"loc", r.components.loc},
            {"mask", r.components.mask},
            {"crossover", r.components.crossover},
            {"embed", r.components.embed},
            {"total", r.total}};
  return j.dump();
}

LossReport parse_log_line(const std::string& line) {
  try {
    const json j = json::parse(line);
    LossReport r;
    r.iteration = j.at("iteration").get<long long>();
    r.epoch = j.at("epoch").get<int>();
    r.lr = j.at("lr").get<double>();
    r.components.cls = j.at("cls").get<double>();
    r.components.loc = j.at("loc").get<double>();
    r.components.mask = j.at("mask").get<double>();
    r.components.crossover = j.at("crossover").get<double>();
    r.components.embed = j.at("embed").get<double>();
    r.total = j.at("total").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed loss record: ") + e.what());
  }
}

Trainer::Trainer(const ExperimentConfig& cfg, segcore::AfcvModel& model)
    : cfg_(cfg), model_(model), optimizer_(cfg.train, model.parameters()) {
  cfg_.train.validate();
}

std::vector<Var> Trainer::pair_losses(const TrainSample& sample, Rng& rng) const {
  const auto& inputs = *sample.inputs;
  const auto& clip = inputs.clip;
  const auto& tc = cfg_.train;
  const int frames[2] = {sample.pair.t, sample.pair.t_delta()};
  const auto at_t = evalvis::run_frame(model_, inputs, frames[0]);
  const auto at_td = evalvis::run_frame(model_, inputs, frames[1]);
  const segcore::FrameFeatures* feats[2] = {&at_t, &at_td};
  const int k = model_.config().num_classes;
  const int stride = segcore::ModelConfig::kStride;

  std::vector<Var> cls, loc, mask;
  std::vector<EmbeddingSample> embeds;
  for (int s = 0; s < 2; ++s) {
    const auto& f = *feats[s];
    const int frame = frames[s];
    const auto targets = build_targets(clip.annotations.at(frame), k, f.grid_height(), f.grid_width(), stride);
    cls.push_back(focal_loss(f.cls_logits, targets.cls, tc.focal_alpha, tc.focal_gamma,
                             std::max(1, targets.num_positive())));
    loc.push_back(ops::add(iou_loss(f.box, targets.boxes), centerness_loss(f.centerness, targets.boxes)));

    for (const auto& [id, cells] : targets.positives) {
      const auto* gt = find_instance(clip, frame, id);
      const Var gt_mask = ag::constant(crossover::mask_to_tensor(gt->mask));
      // First cell (the anchor when owned) plus a random subset of the rest.
      std::vector<crossover::GridPoint> chosen(cells.begin(), cells.end());
      for (std::size_t i = 1; i < chosen.size(); ++i) {
        std::swap(chosen[i], chosen[rng.uniform_int(static_cast<int>(i), static_cast<int>(chosen.size()) - 1)]);
      }
      chosen.resize(std::min<std::size_t>(chosen.size(), tc.mask_locations));
      for (const auto& c : chosen) {
        const Var logits = model_.instance_mask_logits(f, model_.filters_at(f, c.x, c.y), c.x, c.y);
        mask.push_back(
            crossover::dice_loss(crossover::mask_probabilities(logits, clip.height(), clip.width()), gt_mask));
      }
    }
    for (const auto& a : clip.annotations.at(frame)) {
      const auto anchor = crossover::instance_anchor(a.mask, stride);
      embeds.push_back({a.instance_id, ops::l2_normalize(ops::gather_location(f.embedding, anchor.y, anchor.x))});
    }
  }

  Var cross = ag::constant(Tensor({1}, 0.0));
  if (tc.crossover_enabled) cross = crossover::crossover_loss(model_, clip, sample.pair, at_t, at_td, true);
  return {mean_of(cls), mean_of(loc), mean_of(mask), cross, embedding_loss(embeds, tc.embed_margin)};
}

LossComponents Trainer::evaluate_pair(const TrainSample& sample, Rng& rng) const {
  ag::NoGradGuard no_grad;
  const auto parts = pair_losses(sample, rng);
  return {parts[0].item(), parts[1].item(), parts[2].item(), parts[3].item(), parts[4].item()};
}

LossReport Trainer::train_step(const std::vector<TrainSample>& batch, Rng& rng, long long iteration,
                               int iters_per_epoch) {
  if (batch.empty()) throw DataError("train_step needs a nonempty batch");
  std::vector<Var> per_component[5];
  for (const auto& sample : batch) {
    const auto parts = pair_losses(sample, rng);
    for (int c = 0; c < 5; ++c) per_component[c].push_back(parts[c]);
  }
  Var means[5];
  double values[5];
  for (int c = 0; c < 5; ++c) {
    means[c] = mean_of(per_component[c]);
    values[c] = means[c].item();
    if (!std::isfinite(values[c])) {
      throw DataError(std::string("non-finite ") + kComponentNames[c] + " loss at iteration " +
                      std::to_string(iteration));
    }
  }
  const auto& w = cfg_.train.loss_weights;
  const double weights[5] = {w.cls, w.loc, w.mask, w.crossover, w.embed};
  std::vector<Var> weighted;
  for (int c = 0; c < 5; ++c) weighted.push_back(ops::scale(means[c], weights[c]));
  ag::backward(ops::add_n(weighted));

  LossReport r;
  r.iteration = iteration;
  r.epoch = static_cast<int>(iteration / iters_per_epoch);
  r.components = {values[0], values[1], values[2], values[3], values[4]};
  r.total = weighted_total(r.components, w);
  r.lr = lr_at(static_cast<int>(iteration), iters_per_epoch, cfg_.train);
  try {
    optimizer_.step(r.lr);
  } catch (const DataError& e) {
    throw DataError(std::string(e.what()) + " at iteration " + std::to_string(iteration));
  }
  return r;
}

int iters_per_epoch(int num_clips, const TrainConfig& cfg) {
  const int pairs = num_clips * cfg.pairs_per_clip;
  return std::max(1, (pairs + cfg.batch_clips - 1) / cfg.batch_clips);
}

namespace {

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    for (const auto& l : lines) out << l << '\n';
  }
  fs::rename(tmp, path);
}

// Records strictly before `iteration`, used to drop steps past the checkpoint.
std::vector<std::string> log_prefix(const fs::path& path, long long iteration) {
  std::vector<std::string> kept;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (parse_log_line(line).iteration < iteration) kept.push_back(line);
  }
  return kept;
}

}  // namespace

FitResult fit(const std::vector<evalvis::ClipInputs>& dataset, const ExperimentConfig& cfg, const fs::path& out_dir,
              const FitOptions& options) {
  if (dataset.empty()) throw DataError("fit needs a nonempty dataset");
  cfg.validate();
  fs::create_directories(out_dir);
  const auto cfg_map = to_config_map(cfg);
  FitResult result;
  result.checkpoint = out_dir / kLastCheckpoint;
  result.loss_log = out_dir / kLossLog;

  segcore::AfcvModel model(cfg.model, cfg.train.seed);
  Trainer trainer(cfg, model);
  int start_epoch = 0;
  long long iteration = 0;

  if (options.resume) {
    const auto ckpt = load_checkpoint(result.checkpoint);
    auto saved = ckpt.config;
    auto wanted = cfg_map;
    saved.erase("train.epochs");
    wanted.erase("train.epochs");
    if (const auto diff = config_diff(saved, wanted); !diff.empty()) {
      std::string keys;
      for (const auto& k : diff) keys += (keys.empty() ? "" : ", ") + k;
      throw ConfigError("cannot resume " + result.checkpoint.string() + ": config differs in " + keys);
    }
    restore_parameters(model, ckpt);
    trainer.optimizer().load_state(ckpt.optimizer_state, ckpt.optimizer_steps);
    start_epoch = ckpt.epochs_done;
    iteration = ckpt.iteration;
    write_lines(result.loss_log, log_prefix(result.loss_log, iteration));
    spdlog::info("resuming from epoch {} (iteration {})", start_epoch, iteration);
  } else {
    auto init = snapshot(model);
    init.config = cfg_map;
    save_checkpoint(out_dir / kInitCheckpoint, init);
    write_lines(result.loss_log, {});
    if (cfg.train.epochs == 0) {
      save_checkpoint(result.checkpoint, init);
      return result;
    }
  }

  const int n = static_cast<int>(dataset.size());
  const int per_epoch = iters_per_epoch(n, cfg.train);
  std::ofstream log(result.loss_log, std::ios::app);
  if (!log) throw IoError("cannot append to " + result.loss_log.string());

  for (int epoch = start_epoch; epoch < cfg.train.epochs; ++epoch) {
    Rng rng(mix_seed(cfg.train.seed, 1000003ULL + static_cast<std::uint64_t>(epoch)));
    std::vector<int> order;
    for (int r = 0; r < cfg.train.pairs_per_clip; ++r) {
      for (int i = 0; i < n; ++i) order.push_back(i);
    }
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);

    for (int step = 0; step < per_epoch; ++step) {
      std::vector<TrainSample> batch;
      const int begin = step * cfg.train.batch_clips;
      const int end = std::min<int>(begin + cfg.train.batch_clips, static_cast<int>(order.size()));
      for (int b = begin; b < end; ++b) {
        const auto& inputs = dataset[order[b]];
        auto pair = crossover::sample_frame_pair(inputs.clip, rng, cfg.train.delta_max);
        if (!pair) {
          ++result.skipped_pairs;
          continue;
        }
        batch.push_back({&inputs, *pair});
      }
      if (!batch.empty()) {
        const auto report = trainer.train_step(batch, rng, iteration, per_epoch);
        log << to_log_line(report) << '\n';
        if (options.on_step) options.on_step(report);
      }
      ++iteration;
    }
    log.flush();
    Checkpoint ckpt = snapshot(model);
    ckpt.config = cfg_map;
    ckpt.epochs_done = epoch + 1;
    ckpt.iteration = iteration;
    ckpt.optimizer_steps = trainer.optimizer().steps_taken();
    ckpt.optimizer_state = trainer.optimizer().state();
    save_checkpoint(result.checkpoint, ckpt);
    spdlog::debug("epoch {} done ({} iterations)", epoch + 1, iteration);
  }
  if (result.skipped_pairs > 0) {
    spdlog::warn("{} clip draws had no frame pair sharing an instance and were skipped", result.skipped_pairs);
  }
  result.iterations = iteration;
  return result;
}

segcore::AfcvModel load_model(const fs::path& checkpoint, ExperimentConfig* cfg_out) {
  const auto ckpt = load_checkpoint(checkpoint);
  ExperimentConfig cfg;
  apply_config(cfg, ckpt.config);
  segcore::AfcvModel model(cfg.model, cfg.train.seed);
  restore_parameters(model, ckpt);
  if (cfg_out) *cfg_out = cfg;
  return model;
}

}  // namespace afcv::trainer
