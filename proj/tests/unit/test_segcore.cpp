#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "afcv/core/error.hpp"
#include "afcv/core/ops.hpp"
#include "afcv/crossover/crossover.hpp"
#include "afcv/segcore/mask_head.hpp"
#include "afcv/segcore/model.hpp"
#include "gradcheck.hpp"
#include "mask_oracle.hpp"

using namespace afcv;
using namespace afcv::segcore;
using afcv::testing::gradcheck;
using afcv::testing::per_pixel_mlp;
using afcv::testing::random_tensor;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.audio_bins = 33;
  return c;
}

}  // namespace

TEST(CoordinateMap, Examples) {
  const auto m = make_coordinate_map(0, 0, 4, 4);
  EXPECT_DOUBLE_EQ(m.at(0, 3, 3), 0.75);
  EXPECT_DOUBLE_EQ(m.at(1, 3, 3), 0.75);
  EXPECT_DOUBLE_EQ(m.at(0, 0, 0), 0.0);
  const auto c = make_coordinate_map(2, 3, 5, 6);
  EXPECT_DOUBLE_EQ(c.at(0, 3, 2), 0.0);
  EXPECT_DOUBLE_EQ(c.at(1, 3, 2), 0.0);
  EXPECT_DOUBLE_EQ(c.at(0, 0, 5), 3.0 / 6);
  EXPECT_DOUBLE_EQ(c.at(1, 0, 5), -3.0 / 5);
  EXPECT_THROW(make_coordinate_map(4, 0, 4, 4), DataError);
  EXPECT_THROW(make_coordinate_map(0, -1, 4, 4), DataError);
}

TEST(CoordinateMap, AnchorZeroRangeAndAntisymmetry) {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const int h = rng.uniform_int(1, 20), w = rng.uniform_int(1, 20);
    const int x = rng.uniform_int(0, w - 1), y = rng.uniform_int(0, h - 1);
    const auto m = make_coordinate_map(x, y, h, w);
    EXPECT_EQ(m.at(0, y, x), 0.0);
    EXPECT_EQ(m.at(1, y, x), 0.0);
    for (double v : m.values()) {
      EXPECT_GT(v, -1.0);
      EXPECT_LT(v, 1.0);
    }
  }
  const auto m = make_coordinate_map(3, 3, 7, 7);
  for (int dy = -3; dy <= 3; ++dy)
    for (int dx = -3; dx <= 3; ++dx)
      for (int c = 0; c < 2; ++c) EXPECT_DOUBLE_EQ(m.at(c, 3 + dy, 3 + dx), -m.at(c, 3 - dy, 3 - dx));
}

TEST(MaskHead, ParameterCount) {
  const auto layout = MaskHeadLayout::for_mask_channels(8);
  EXPECT_EQ(layout.num_params(), (10 * 8 + 8) + (8 * 8 + 8) + (8 * 1 + 1));
  EXPECT_EQ(layout.num_params(), 169);
  EXPECT_EQ(small_config().mask_head_layout().num_params(), 169);
}

TEST(MaskHead, ZeroFiltersGiveZeroLogits) {
  const auto layout = MaskHeadLayout::for_mask_channels(8);
  Rng rng(2);
  const auto out = mask_head(ag::constant(random_tensor({10, 5, 6}, rng)), ag::constant(Tensor({169}, 0.0)), layout);
  for (double v : out.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(MaskHead, MatchesPerPixelOracle) {
  const auto layout = MaskHeadLayout::for_mask_channels(8);
  Rng rng(3);
  for (int trial = 0; trial < 12; ++trial) {
    const auto in = random_tensor({10, rng.uniform_int(1, 9), rng.uniform_int(1, 9)}, rng);
    const auto theta = random_tensor({169}, rng);
    const auto got = mask_head(ag::constant(in), ag::constant(theta), layout).value();
    const auto want = per_pixel_mlp(in, theta, layout);
    ASSERT_EQ(got.shape(), want.shape());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-5);
  }
}

TEST(MaskHead, ErrorsReportExpectedLength) {
  const auto layout = MaskHeadLayout::for_mask_channels(8);
  try {
    mask_head(ag::constant(Tensor({10, 2, 2})), ag::constant(Tensor({168})), layout);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("168"), std::string::npos);
    EXPECT_NE(msg.find("169"), std::string::npos);
  }
  EXPECT_THROW(mask_head(ag::constant(Tensor({9, 2, 2})), ag::constant(Tensor({169})), layout), ShapeError);
}

TEST(MaskHead, DiceGradientMatchesFiniteDifferences) {
  const auto layout = MaskHeadLayout::for_mask_channels(8);
  Rng rng(4);
  const auto features = random_tensor({8, 16, 16}, rng);
  const auto theta = random_tensor({169}, rng, -0.5, 0.5);
  Tensor target({1, 16, 16});
  for (auto& v : target.values()) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
  const Tensor coords = make_coordinate_map(5, 9, 16, 16);
  auto loss = [&](const std::vector<ag::Var>& p) {
    const auto input = ops::concat_channels({p[0], ag::constant(coords)});
    return crossover::dice_loss(ops::sigmoid(mask_head(input, p[1], layout)), ag::constant(target));
  };
  const auto r = gradcheck(loss, {features, theta});
  EXPECT_LT(r.max_rel_error, 1e-3) << r.where;
}

TEST(Model, BackboneShapesAndErrors) {
  AfcvModel model(small_config(), 1);
  const auto v = model.visual_backbone(ag::constant(Tensor({3, 64, 64}, 0.5))).value();
  EXPECT_EQ(v.shape(), (Shape{64, 8, 8}));
  EXPECT_THROW(model.visual_backbone(ag::constant(Tensor({3, 60, 64}))), ShapeError);
  EXPECT_THROW(model.visual_backbone(ag::constant(Tensor({1, 64, 64}))), ShapeError);
  try {
    model.visual_backbone(ag::constant(Tensor({3, 64, 60})));
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find('8'), std::string::npos);
  }
  const auto again = model.visual_backbone(ag::constant(Tensor({3, 64, 64}, 0.5))).value();
  EXPECT_EQ(v, again);
  const auto zero = model.visual_backbone(ag::constant(Tensor({3, 64, 64}, 0.0))).value();
  const auto one = model.visual_backbone(ag::constant(Tensor({3, 64, 64}, 1.0))).value();
  EXPECT_NE(zero, one);
}

TEST(Model, AudioEncoderContract) {
  const auto cfg = small_config();
  AfcvModel model(cfg, 2);
  const Tensor silence({cfg.audio_bins, cfg.audio_columns}, cfg.audio_db_floor);
  const auto a = model.audio_encoder(ag::constant(silence)).value();
  const auto b = model.audio_encoder(ag::constant(silence)).value();
  EXPECT_EQ(a.shape(), (Shape{cfg.audio_channels}));
  EXPECT_EQ(a, b);
  Rng rng(5);
  const auto r = model.audio_encoder(ag::constant(random_tensor({cfg.audio_bins, cfg.audio_columns}, rng, -80, 0)));
  EXPECT_EQ(r.value().dim(0), cfg.audio_channels);
  EXPECT_THROW(model.audio_encoder(ag::constant(Tensor({cfg.audio_bins + 1, cfg.audio_columns}))), ShapeError);
}

TEST(Model, FusionDependsOnAudioThroughItsWeightsOnly) {
  const auto cfg = small_config();
  AfcvModel model(cfg, 3);
  Rng rng(6);
  const auto visual = ag::constant(random_tensor({cfg.visual_channels, 8, 8}, rng));
  const auto a1 = ag::constant(random_tensor({cfg.audio_channels}, rng));
  const auto a2 = ag::constant(random_tensor({cfg.audio_channels}, rng));
  const auto f1 = model.fuse(visual, a1).value();
  const auto f2 = model.fuse(visual, a2).value();
  EXPECT_EQ(f1.shape(), visual.value().shape());
  double linf = 0;
  for (std::size_t i = 0; i < f1.size(); ++i) linf = std::max(linf, std::abs(f1[i] - f2[i]));
  EXPECT_GT(linf, 0.0);

  ag::Var w = model.fusion_conv().weight();
  auto& wm = w.mutable_value();
  const int in = cfg.visual_channels + cfg.audio_channels;
  for (int o = 0; o < cfg.visual_channels; ++o)
    for (int i = cfg.visual_channels; i < in; ++i) wm[static_cast<std::size_t>(o) * in + i] = 0.0;
  EXPECT_EQ(model.fuse(visual, a1).value(), model.fuse(visual, a2).value());
  EXPECT_THROW(model.fuse(visual, ag::constant(Tensor({cfg.audio_channels + 1}))), ShapeError);
  EXPECT_THROW(model.fuse(ag::constant(Tensor({3, 8, 8})), a1), ShapeError);
}

TEST(Model, HeadsShareGridAndBoxesArePositive) {
  for (auto point : {FusionPoint::backbone, FusionPoint::heads}) {
    auto cfg = small_config();
    cfg.fusion = point;
    AfcvModel model(cfg, 4);
    Rng rng(7);
    const auto f = model.forward(random_tensor({3, 64, 96}, rng, 0, 1),
                                 random_tensor({cfg.audio_bins, cfg.audio_columns}, rng, -80, 0));
    for (const auto* v : {&f.fused, &f.mask_features, &f.cls_logits, &f.box, &f.centerness, &f.embedding, &f.filters}) {
      EXPECT_EQ(v->value().dim(1), 8);
      EXPECT_EQ(v->value().dim(2), 12);
    }
    EXPECT_EQ(f.cls_logits.value().dim(0), cfg.num_classes);
    EXPECT_EQ(f.box.value().dim(0), 4);
    EXPECT_EQ(f.embedding.value().dim(0), 16);
    EXPECT_EQ(f.filters.value().dim(0), 169);
    EXPECT_EQ(f.mask_features.value().dim(0), cfg.mask_channels);
    for (double v : f.box.value().values()) EXPECT_GT(v, 0.0);
    const auto logits = model.instance_mask_logits(f, model.filters_at(f, 3, 2), 3, 2);
    EXPECT_EQ(logits.value().shape(), (Shape{1, 8, 12}));
  }
  EXPECT_EQ(fusion_point_from_string("heads"), FusionPoint::heads);
  EXPECT_THROW(fusion_point_from_string("late"), ConfigError);
}

TEST(Model, SeedDeterminesParameters) {
  AfcvModel a(small_config(), 9), b(small_config(), 9), c(small_config(), 10);
  EXPECT_EQ(parameter_hash(a), parameter_hash(b));
  EXPECT_NE(parameter_hash(a), parameter_hash(c));
  EXPECT_FALSE(a.parameter_group("audio").empty());
  EXPECT_FALSE(a.parameter_group("fusion").empty());
  EXPECT_FALSE(a.parameter_group("controller").empty());
  std::size_t n = 0;
  for (const auto& p : a.parameters()) n += p.var.value().size();
  EXPECT_EQ(n, a.parameter_count());
}
