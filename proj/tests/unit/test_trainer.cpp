#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "afcv/avdata/synthetic.hpp"
#include "afcv/core/error.hpp"
#include "afcv/core/ops.hpp"
#include "afcv/trainer/checkpoint.hpp"
#include "afcv/trainer/config.hpp"
#include "afcv/trainer/losses.hpp"
#include "afcv/trainer/optimizer.hpp"
#include "afcv/trainer/schedule.hpp"
#include "afcv/trainer/targets.hpp"
#include "afcv/trainer/trainer.hpp"
#include "gradcheck.hpp"

using namespace afcv;
using namespace afcv::trainer;
using afcv::testing::gradcheck;
using afcv::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("afcv_trainer_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig small_experiment() {
  ExperimentConfig cfg;
  cfg.data.frames_per_clip = 4;
  cfg.train.epochs = 2;
  cfg.train.lr_milestones = {1};
  cfg.train.warmup_iters = 2;
  cfg.train.seed = 3;
  cfg.sync_derived();
  return cfg;
}

std::vector<evalvis::ClipInputs> small_dataset(const ExperimentConfig& cfg, int clips) {
  std::vector<evalvis::ClipInputs> out;
  for (int i = 0; i < clips; ++i) {
    out.push_back(evalvis::prepare_clip_inputs(avdata::generate_clip(cfg.data, i), cfg.input,
                                               cfg.model.audio_columns, cfg.train.audio_enabled));
  }
  return out;
}

avdata::InstanceAnnotation square(int id, int cls, int x0, int y0, int x1, int y1, int size = 32) {
  avdata::InstanceAnnotation a;
  a.instance_id = id;
  a.class_id = cls;
  a.mask = avdata::BinaryMask(size, size);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) a.mask.at(y, x) = 1;
  a.bbox = avdata::tight_bbox(a.mask);
  return a;
}

}  // namespace

TEST(Schedule, MilestonesAndWarmup) {
  TrainConfig cfg;
  const int ipe = 100;
  EXPECT_DOUBLE_EQ(lr_at(500, ipe, cfg), 0.005);
  EXPECT_DOUBLE_EQ(lr_at(899, ipe, cfg), 0.005);
  EXPECT_NEAR(lr_at(900, ipe, cfg), 0.0005, 1e-15);
  EXPECT_NEAR(lr_at(1100, ipe, cfg), 0.00005, 1e-15);
  EXPECT_NEAR(lr_at(0, ipe, cfg), 5e-6, 1e-18);
  EXPECT_NEAR(lr_at(250, ipe, cfg), 0.005 * (0.001 * 0.5 + 0.5), 1e-15);
  double prev = lr_at(cfg.warmup_iters, ipe, cfg);
  for (int it = cfg.warmup_iters; it < 1300; ++it) {
    const double lr = lr_at(it, ipe, cfg);
    EXPECT_LE(lr, prev);
    if (it % ipe != 0) EXPECT_EQ(lr, prev);
    prev = lr;
  }
  cfg.warmup_iters = 0;
  EXPECT_DOUBLE_EQ(lr_at(0, ipe, cfg), 0.005);
}

TEST(Losses, FocalMatchesFormulaAndGradient) {
  Rng rng(1);
  const auto logits = random_tensor({3, 4, 5}, rng, -3, 3);
  Tensor targets({3, 4, 5});
  for (auto& t : targets.values()) t = rng.uniform() < 0.2;
  double want = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double p = sigmoid(logits[i]);
    want += targets[i] > 0 ? -0.25 * std::pow(1 - p, 2) * std::log(p) : -0.75 * std::pow(p, 2) * std::log(1 - p);
  }
  EXPECT_NEAR(focal_loss(ag::constant(logits), targets, 0.25, 2.0, 7.0).item(), want / 7.0, 1e-12);
  const auto r = gradcheck([&](const auto& p) { return focal_loss(p[0], targets, 0.25, 2.0, 7.0); }, {logits});
  EXPECT_LT(r.max_rel_error, 1e-5) << r.where;
}

TEST(Losses, IouMatchesFormulaAndGradient) {
  Rng rng(2);
  const auto box = random_tensor({4, 3, 3}, rng, 0.5, 3.0);
  std::vector<BoxTarget> targets;
  for (int i = 0; i < 4; ++i) {
    BoxTarget t;
    t.x = rng.uniform_int(0, 2);
    t.y = rng.uniform_int(0, 2);
    for (double& v : t.ltrb) v = rng.uniform(0.5, 3.0);
    targets.push_back(t);
  }
  double want = 0;
  for (const auto& t : targets) {
    double p[4];
    for (int k = 0; k < 4; ++k) p[k] = box.at(k, t.y, t.x);
    // Both boxes share the cell center as origin.
    const double ix = std::min(p[0], t.ltrb[0]) + std::min(p[2], t.ltrb[2]);
    const double iy = std::min(p[1], t.ltrb[1]) + std::min(p[3], t.ltrb[3]);
    const double a = (p[0] + p[2]) * (p[1] + p[3]), b = (t.ltrb[0] + t.ltrb[2]) * (t.ltrb[1] + t.ltrb[3]);
    want += 1 - ix * iy / (a + b - ix * iy);
  }
  EXPECT_NEAR(iou_loss(ag::constant(box), targets).item(), want / targets.size(), 1e-12);
  const auto r = gradcheck([&](const auto& p) { return iou_loss(p[0], targets); }, {box});
  EXPECT_LT(r.max_rel_error, 1e-5) << r.where;
  EXPECT_EQ(iou_loss(ag::constant(box), {}).item(), 0.0);
  BoxTarget same;
  for (int k = 0; k < 4; ++k) same.ltrb[k] = box.at(k, 0, 0);
  EXPECT_NEAR(iou_loss(ag::constant(box), {same}).item(), 0.0, 1e-12);
}

TEST(Losses, CenternessTargetAndGradient) {
  const double centered[4] = {2, 3, 2, 3};
  EXPECT_DOUBLE_EQ(centerness_target(centered), 1.0);
  const double off[4] = {1, 1, 3, 4};
  EXPECT_NEAR(centerness_target(off), std::sqrt(1.0 / 3 * 1.0 / 4), 1e-15);
  Rng rng(3);
  const auto logits = random_tensor({1, 3, 3}, rng);
  std::vector<BoxTarget> targets(2);
  targets[1].x = 2;
  targets[1].y = 1;
  for (auto& t : targets)
    for (double& v : t.ltrb) v = rng.uniform(0.5, 3);
  const auto r = gradcheck([&](const auto& p) { return centerness_loss(p[0], targets); }, {logits});
  EXPECT_LT(r.max_rel_error, 1e-5) << r.where;
}

TEST(Losses, EmbeddingPullPush) {
  auto e = [](std::vector<Scalar> v) {
    const int n = static_cast<int>(v.size());
    return ag::constant(Tensor({n}, std::move(v)));
  };
  // Same id at distance 0.6 (pull 0.36); other id at distance 0.5 from both (push (1-0.5)^2 each).
  const std::vector<EmbeddingSample> s{{1, e({0, 0})}, {1, e({0.6, 0})}, {2, e({0.3, 0.4})}};
  EXPECT_NEAR(embedding_loss(s, 1.0).item(), 0.36 + 0.25, 1e-9);
  EXPECT_EQ(embedding_loss({}, 1.0).item(), 0.0);
  const std::vector<EmbeddingSample> far{{1, e({0, 0})}, {2, e({3, 0})}};
  EXPECT_EQ(embedding_loss(far, 1.0).item(), 0.0);
  Rng rng(4);
  const auto a = random_tensor({4}, rng), b = random_tensor({4}, rng, 0, 0.2), c = random_tensor({4}, rng, 0, 0.2);
  const auto r = gradcheck(
      [](const auto& p) { return embedding_loss({{1, p[0]}, {1, p[1]}, {2, p[2]}}, 1.0); }, {a, b, c});
  EXPECT_LT(r.max_rel_error, 1e-5) << r.where;
}

TEST(Targets, CellsInsideMaskArePositive) {
  const auto inst = square(7, 1, 8, 8, 23, 15);
  const auto t = build_targets({inst}, 3, 4, 4, 8);
  // Cell centers are at 4, 12, 20, 28: inside for x in {12, 20} and y = 12.
  EXPECT_EQ(t.num_positive(), 2);
  EXPECT_EQ(t.cls.at(1, 1, 1), 1.0);
  EXPECT_EQ(t.cls.at(1, 1, 2), 1.0);
  double total = 0;
  for (double v : t.cls.values()) total += v;
  EXPECT_EQ(total, 2.0);
  ASSERT_EQ(t.positives.at(7).size(), 2u);
  EXPECT_EQ(t.positives.at(7).front(), crossover::instance_anchor(inst.mask, 8));
  for (const auto& b : t.boxes) {
    const double cx = b.x * 8 + 4, cy = b.y * 8 + 4;
    EXPECT_DOUBLE_EQ(b.ltrb[0] * 8, cx - 8);
    EXPECT_DOUBLE_EQ(b.ltrb[1] * 8, cy - 8);
    EXPECT_DOUBLE_EQ(b.ltrb[2] * 8, 24 - cx);
    EXPECT_DOUBLE_EQ(b.ltrb[3] * 8, 16 - cy);
  }
}

TEST(Targets, SmallerBoxWinsAndTinyInstancesKeepAnAnchor) {
  const auto big = square(1, 0, 0, 0, 31, 31);
  const auto small = square(2, 2, 10, 10, 21, 21);
  const auto t = build_targets({big, small}, 3, 4, 4, 8);
  EXPECT_EQ(t.cls.at(2, 1, 1), 1.0);
  EXPECT_EQ(t.cls.at(0, 1, 1), 0.0);
  EXPECT_EQ(t.cls.at(0, 0, 0), 1.0);
  const auto tiny = square(3, 1, 1, 1, 2, 2);
  const auto u = build_targets({tiny}, 3, 4, 4, 8);
  EXPECT_EQ(u.num_positive(), 1);
  EXPECT_EQ(u.cls.at(1, 0, 0), 1.0);
  EXPECT_THROW(build_targets({square(4, 5, 0, 0, 3, 3)}, 3, 4, 4, 8), DataError);
}

TEST(Config, ParseErrorsAndRoundTrip) {
  EXPECT_THROW(parse_config_text("train.epochs 3"), ConfigError);
  EXPECT_THROW(parse_config_text("a = 1\na = 2"), ConfigError);
  const auto m = parse_config_text("# comment\n train.epochs = 3 \n\nloss.mask=2.5\n");
  EXPECT_EQ(m.at("train.epochs"), "3");
  EXPECT_EQ(m.at("loss.mask"), "2.5");
  EXPECT_THROW(parse_assignment("novalue"), ConfigError);

  ExperimentConfig cfg;
  apply_config(cfg, m);
  EXPECT_EQ(cfg.train.epochs, 3);
  EXPECT_EQ(cfg.train.loss_weights.mask, 2.5);
  EXPECT_THROW(apply_config(cfg, {{"train.nonsense", "1"}}), ConfigError);
  EXPECT_THROW(apply_config(cfg, {{"train.epochs", "three"}}), ConfigError);

  cfg.train.lr_milestones = {1};
  cfg.model.fusion = segcore::FusionPoint::heads;
  const auto map = to_config_map(cfg);
  ExperimentConfig back;
  apply_config(back, parse_config_text(format_config(map)));
  EXPECT_EQ(to_config_map(back), map);
  EXPECT_TRUE(config_diff(map, to_config_map(back)).empty());
  EXPECT_EQ(config_diff(map, to_config_map(ExperimentConfig{})).size(), 4u);
}

TEST(Config, Validation) {
  ExperimentConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  auto bad = cfg;
  bad.train.lr_milestones = {11, 9};
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.train.lr_milestones = {12};
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.train.loss_weights.embed = -1;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.input.min_size = 60;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.eval.thresholds = {};
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Checkpoint, RoundTripAndCorruption) {
  const auto dir = scratch("ckpt");
  fs::create_directories(dir);
  segcore::AfcvModel model(ExperimentConfig{}.model, 5);
  auto ck = snapshot(model);
  ck.config = to_config_map(ExperimentConfig{});
  ck.epochs_done = 2;
  ck.iteration = 17;
  ck.optimizer_state["second/x"] = Tensor({2, 2}, 0.25);
  save_checkpoint(dir / "a.ckpt", ck);
  EXPECT_FALSE(fs::exists(dir / "a.ckpt.tmp"));
  const auto back = load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(back.config, ck.config);
  EXPECT_EQ(back.epochs_done, 2);
  EXPECT_EQ(back.iteration, 17);
  EXPECT_EQ(back.parameters, ck.parameters);
  EXPECT_EQ(back.optimizer_state, ck.optimizer_state);

  segcore::AfcvModel other(ExperimentConfig{}.model, 6);
  restore_parameters(other, back);
  EXPECT_EQ(segcore::parameter_hash(other), segcore::parameter_hash(model));
  auto wrong = back;
  wrong.parameters.begin()->second = Tensor({1}, 0.0);
  EXPECT_THROW(restore_parameters(other, wrong), ConfigError);

  auto bytes = slurp(dir / "a.ckpt");
  std::ofstream(dir / "magic.ckpt", std::ios::binary) << "XXXX" + bytes.substr(4);
  EXPECT_THROW(load_checkpoint(dir / "magic.ckpt"), IoError);
  auto versioned = bytes;
  versioned[4] = 9;
  std::ofstream(dir / "version.ckpt", std::ios::binary) << versioned;
  EXPECT_THROW(load_checkpoint(dir / "version.ckpt"), IoError);
  std::ofstream(dir / "short.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() - 10);
  EXPECT_THROW(load_checkpoint(dir / "short.ckpt"), IoError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), IoError);
  fs::remove_all(dir);
}

TEST(Optimizer, RmspropFirstStepAndClipping) {
  TrainConfig cfg;
  cfg.grad_clip = 0;
  auto p = ag::parameter(Tensor({2}, std::vector<Scalar>{1.0, -2.0}));
  Optimizer opt(cfg, {{"p", p}});
  ag::backward(ops::sum(ops::square(p)));  // grad = 2p
  EXPECT_NEAR(opt.step(0.1), std::sqrt(4.0 + 16.0), 1e-12);
  // v = 0.01 g^2, so the update is lr * g / (0.1 |g|) = lr * 10 * sign(g).
  EXPECT_NEAR(p.value()[0], 1.0 - 1.0, 1e-6);
  EXPECT_NEAR(p.value()[1], -2.0 + 1.0, 1e-6);
  EXPECT_EQ(p.grad()[0], 0.0);
  EXPECT_EQ(opt.steps_taken(), 1);
  EXPECT_EQ(opt.state().count("second/p"), 1u);

  cfg.grad_clip = 1.0;
  cfg.optimizer = OptimizerKind::adam;
  auto q = ag::parameter(Tensor({1}, 3.0));
  Optimizer adam(cfg, {{"q", q}});
  ag::backward(ops::sum(ops::square(q)));
  EXPECT_NEAR(adam.step(0.01), 6.0, 1e-12);
  EXPECT_NEAR(q.value()[0], 3.0 - 0.01, 1e-6);  // bias-corrected Adam moves by lr on step 1
  EXPECT_EQ(adam.state().size(), 2u);
  q.mutable_grad()[0] = std::nan("");
  EXPECT_THROW(adam.step(0.01), DataError);
}

TEST(TrainStep, ReportIsConsistentAndGradientsReachEveryBranch) {
  auto cfg = small_experiment();
  const auto data = small_dataset(cfg, 2);
  segcore::AfcvModel model(cfg.model, 1);
  Trainer trainer(cfg, model);
  Rng rng(2);
  std::vector<TrainSample> batch;
  for (const auto& d : data) batch.push_back({&d, *crossover::sample_frame_pair(d.clip, rng)});
  std::map<std::string, Tensor> before;
  for (const auto& p : model.parameters()) before[p.name] = p.var.value();
  const auto report = trainer.train_step(batch, rng, 0, 1);
  EXPECT_DOUBLE_EQ(report.total, weighted_total(report.components, cfg.train.loss_weights));
  for (double v : {report.components.cls, report.components.loc, report.components.mask, report.components.crossover,
                   report.components.embed}) {
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_GE(v, 0.0);
  }
  EXPECT_GT(report.components.crossover, 0.0);
  EXPECT_DOUBLE_EQ(report.lr, lr_at(0, 1, cfg.train));
  // RMSprop moves a parameter exactly when its gradient is nonzero.
  for (const std::string group : {"audio", "fusion", "controller", "embedding"}) {
    bool moved = false;
    for (const auto& p : model.parameter_group(group)) moved |= !(p.var.value() == before.at(p.name));
    EXPECT_TRUE(moved) << group;
  }
}

TEST(TrainStep, AblationSwitches) {
  auto cfg = small_experiment();
  cfg.train.crossover_enabled = false;
  cfg.train.audio_enabled = false;
  const auto data = small_dataset(cfg, 2);
  EXPECT_TRUE(data[0].audio.empty());
  segcore::AfcvModel model(cfg.model, 1);
  Trainer trainer(cfg, model);
  Rng rng(2);
  for (int it = 0; it < 3; ++it) {
    std::vector<TrainSample> batch;
    for (const auto& d : data) batch.push_back({&d, *crossover::sample_frame_pair(d.clip, rng)});
    const auto r = trainer.train_step(batch, rng, it, 1);
    EXPECT_EQ(r.components.crossover, 0.0);
    EXPECT_TRUE(std::isfinite(r.total));
  }
}

TEST(TrainStep, NonFiniteValuesAbortWithDiagnostics) {
  auto cfg = small_experiment();
  auto data = small_dataset(cfg, 1);
  Rng rng(1);
  const TrainSample sample{&data[0], crossover::make_frame_pair(data[0].clip, 0, 1)};
  auto expect_error = [&](Trainer& trainer, const std::string& needle) {
    try {
      trainer.train_step({sample}, rng, 4, 1);
      FAIL() << "expected DataError";
    } catch (const DataError& e) {
      const std::string msg = e.what();
      EXPECT_NE(msg.find(needle), std::string::npos) << msg;
      EXPECT_NE(msg.find("iteration 4"), std::string::npos) << msg;
    }
  };
  {
    segcore::AfcvModel model(cfg.model, 1);
    auto bias = model.parameter_group("cls_out");
    ASSERT_FALSE(bias.empty());
    for (auto& p : bias) p.var.mutable_value().fill(std::nan(""));
    Trainer trainer(cfg, model);
    expect_error(trainer, "non-finite cls loss");
  }
  {
    for (int f = 0; f < 2; ++f)
      for (auto& v : data[0].clip.frames[f].values()) v = std::nan("");
    segcore::AfcvModel model(cfg.model, 1);
    Trainer trainer(cfg, model);
    expect_error(trainer, "non-finite");
  }
}

TEST(LossLog, LineRoundTrip) {
  LossReport r{12, 1, {0.5, 0.25, 0.125, 0.0625, 1.0 / 3}, 1.2, 0.005};
  EXPECT_EQ(parse_log_line(to_log_line(r)), r);
  EXPECT_THROW(parse_log_line("{not json"), DataError);
  EXPECT_THROW(parse_log_line("{\"iteration\": 1}"), DataError);
}

TEST(Fit, ZeroEpochsWritesInitialWeightsAndEmptyLog) {
  auto cfg = small_experiment();
  cfg.train.epochs = 0;
  cfg.train.lr_milestones = {};
  const auto dir = scratch("zero");
  const auto res = fit(small_dataset(cfg, 1), cfg, dir);
  EXPECT_EQ(res.iterations, 0);
  EXPECT_TRUE(fs::exists(res.checkpoint));
  EXPECT_EQ(fs::file_size(res.loss_log), 0u);
  segcore::AfcvModel fresh(cfg.model, cfg.train.seed);
  EXPECT_EQ(segcore::parameter_hash(load_model(res.checkpoint)), segcore::parameter_hash(fresh));
  EXPECT_THROW(fit({}, cfg, scratch("empty")), DataError);
  fs::remove_all(dir);
}

TEST(Fit, DeterministicAndResumable) {
  const auto cfg = small_experiment();
  const auto data = small_dataset(cfg, 3);
  const auto a = scratch("a"), b = scratch("b"), c = scratch("c");
  const auto ra = fit(data, cfg, a);
  fit(data, cfg, b);
  EXPECT_EQ(ra.iterations, 2 * iters_per_epoch(3, cfg.train));
  EXPECT_EQ(slurp(a / kLossLog), slurp(b / kLossLog));
  EXPECT_FALSE(slurp(a / kLossLog).empty());

  auto first = cfg;
  first.train.epochs = 1;
  first.train.lr_milestones = {};
  auto resumed_cfg = cfg;
  resumed_cfg.train.lr_milestones = {};
  auto straight = scratch("straight");
  fit(data, resumed_cfg, straight);
  fit(data, first, c);
  const auto rc = fit(data, resumed_cfg, c, {.resume = true});
  EXPECT_EQ(slurp(c / kLossLog), slurp(straight / kLossLog));
  const auto x = load_checkpoint(rc.checkpoint), y = load_checkpoint(straight / kLastCheckpoint);
  EXPECT_EQ(x.parameters, y.parameters);
  EXPECT_EQ(x.optimizer_state, y.optimizer_state);
  EXPECT_EQ(x.epochs_done, 2);

  auto changed = resumed_cfg;
  changed.train.base_lr = 0.001;
  EXPECT_THROW(fit(data, changed, c, {.resume = true}), ConfigError);
  for (const auto& d : {a, b, c, straight}) fs::remove_all(d);
}
