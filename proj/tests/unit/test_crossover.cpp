#include <gtest/gtest.h>

#include <set>

#include "afcv/avdata/synthetic.hpp"
#include "afcv/core/error.hpp"
#include "afcv/core/ops.hpp"
#include "afcv/crossover/crossover.hpp"
#include "gradcheck.hpp"
#include "mask_oracle.hpp"

using namespace afcv;
using namespace afcv::crossover;
using afcv::testing::gradcheck;
using afcv::testing::per_pixel_mlp;
using afcv::testing::random_tensor;

namespace {

segcore::ModelConfig small_config() {
  segcore::ModelConfig c;
  c.audio_bins = 33;
  return c;
}

avdata::VideoClip make_clip(int frames, int index = 0, int shapes = 2) {
  auto cfg = avdata::SyntheticSceneConfig::lookalike_default();
  cfg.frames_per_clip = frames;
  cfg.shapes_per_clip = shapes;
  return avdata::generate_clip(cfg, index);
}

Var vec(std::vector<Scalar> v) {
  const int n = static_cast<int>(v.size());
  return ag::constant(Tensor({n}, std::move(v)));
}

// Mask of `filters_from` at `from` applied to F~ of `features` anchored at `at`.
Tensor oracle_mask(const segcore::AfcvModel& model, const FrameFeatures& filters_from, GridPoint from,
                   const FrameFeatures& features, GridPoint at) {
  const auto& fm = features.mask_features.value();
  const int c = fm.dim(0), h = fm.dim(1), w = fm.dim(2);
  const Tensor coords = segcore::make_coordinate_map(at.x, at.y, h, w);
  Tensor input({c + 2, h, w});
  for (int ch = 0; ch < c + 2; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) input.at(ch, y, x) = ch < c ? fm.at(ch, y, x) : coords.at(ch - c, y, x);
  const auto& f = filters_from.filters.value();
  Tensor theta({f.dim(0)});
  for (int k = 0; k < f.dim(0); ++k) theta[k] = f.at(k, from.y, from.x);
  return per_pixel_mlp(input, theta, model.config().mask_head_layout());
}

void expect_near(const Tensor& a, const Tensor& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol);
}

}  // namespace

TEST(Dice, Examples) {
  EXPECT_NEAR(dice_loss(vec({1, 1, 0, 0}), vec({1, 0, 1, 0})).item(), 0.5, 1e-6);
  EXPECT_NEAR(dice_loss(vec({1, 1, 0, 0}), vec({0, 0, 1, 1})).item(), 1.0, 1e-6);
  EXPECT_NEAR(dice_loss(vec({0.3, 0.9, 0.2}), vec({0.3, 0.9, 0.2})).item(), 0.0, 1e-5);
  EXPECT_EQ(dice_loss(vec({0, 0}), vec({0, 0})).item(), 0.0);
  EXPECT_THROW(dice_loss(vec({1, 0}), vec({1, 0, 0})), ShapeError);
}

TEST(Dice, RangeSymmetryAndSelfOverlap) {
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    const auto a = random_tensor({1, 8, 8}, rng, 0, 1);
    const auto b = random_tensor({1, 8, 8}, rng, 0, 1);
    const double ab = dice_loss_value(a, b);
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
    EXPECT_NEAR(ab, dice_loss_value(b, a), 1e-15);
    EXPECT_NEAR(dice_loss_value(a, a), 0.0, 1e-5);
  }
}

TEST(Dice, GradientMatchesFiniteDifferences) {
  Rng rng(2);
  const auto a = random_tensor({1, 8, 8}, rng, 0, 1);
  const auto b = random_tensor({1, 8, 8}, rng, 0, 1);
  const auto r = gradcheck([](const auto& p) { return dice_loss(p[0], p[1]); }, {a, b});
  EXPECT_LT(r.max_rel_error, 1e-3) << r.where;
}

TEST(Anchor, NearestForegroundPixelToCentroid) {
  avdata::BinaryMask m(16, 16);
  for (int y = 2; y <= 4; ++y)
    for (int x = 9; x <= 11; ++x) m.at(y, x) = 1;
  EXPECT_EQ(instance_anchor(m, 1), (GridPoint{10, 3}));
  EXPECT_EQ(instance_anchor(m, 8), (GridPoint{1, 0}));
  // A ring: the centroid is background, so the nearest foreground pixel wins.
  avdata::BinaryMask ring(9, 9);
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 9; ++x) ring.at(y, x) = (y == 0 || y == 8 || x == 0 || x == 8) ? 1 : 0;
  const auto p = instance_anchor(ring, 1);
  EXPECT_EQ(ring.at(p.y, p.x), 1);
  EXPECT_EQ(p, (GridPoint{4, 0}));
  EXPECT_THROW(instance_anchor(avdata::BinaryMask(4, 4)), DataError);
}

TEST(PairSampling, TwoFrameClipHasOnePair) {
  const auto clip = make_clip(2);
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    const auto p = sample_frame_pair(clip, rng);
    ASSERT_TRUE(p.has_value());
    EXPECT_EQ(p->t, 0);
    EXPECT_EQ(p->delta, 1);
  }
}

TEST(PairSampling, DeltaClippedToClip) {
  const auto clip = make_clip(3);
  Rng rng(4);
  std::set<int> deltas;
  for (int i = 0; i < 200; ++i) {
    const auto p = sample_frame_pair(clip, rng, 5);
    ASSERT_TRUE(p.has_value());
    EXPECT_GE(p->delta, 1);
    EXPECT_LT(p->t_delta(), 3);
    deltas.insert(p->delta);
  }
  EXPECT_EQ(deltas, (std::set<int>{1, 2}));
}

TEST(PairSampling, ExcludesInstancesMissingFromEitherFrame) {
  auto clip = make_clip(3);
  ASSERT_EQ(clip.annotations[1].size(), 2u);
  const int dropped = clip.annotations[1][1].instance_id;
  clip.annotations[1].pop_back();
  const auto pair = make_frame_pair(clip, 0, 1);
  ASSERT_EQ(pair.correspondences.size(), 1u);
  EXPECT_NE(pair.correspondences[0].instance_id, dropped);
  for (const auto& c : pair.correspondences) {
    EXPECT_EQ(c.at_t, instance_anchor(clip.annotations[0][0].mask));
  }
  EXPECT_THROW(make_frame_pair(clip, 2, 1), DataError);
}

TEST(PairSampling, NoSharedInstanceMeansSkip) {
  const auto empty = make_clip(4, 0, 0);
  Rng rng(5);
  EXPECT_FALSE(sample_frame_pair(empty, rng).has_value());
  EXPECT_FALSE(sample_frame_pair(make_clip(1), rng).has_value());
}

class CrossoverModel : public ::testing::Test {
 protected:
  CrossoverModel() : model(small_config(), 11), clip(make_clip(4, 2)) {
    Rng rng(6);
    for (const auto& frame : clip.frames)
      features.push_back(model.forward(frame, random_tensor({33, 8}, rng, -80, 0)));
  }
  segcore::AfcvModel model;
  avdata::VideoClip clip;
  std::vector<FrameFeatures> features;
};

TEST_F(CrossoverModel, OutputCountsAndProvenance) {
  const auto pair = make_frame_pair(clip, 0, 2);
  ASSERT_FALSE(pair.correspondences.empty());
  const auto within = within_frame_masks(model, pair, features[0], features[2]);
  const auto cross = crossover_masks(model, pair, features[0], features[2]);
  EXPECT_EQ(within.size(), 2 * pair.correspondences.size());
  EXPECT_EQ(cross.size(), 2 * pair.correspondences.size());
  EXPECT_EQ(cross[0].filter_frame, 0);
  EXPECT_EQ(cross[0].feature_frame, 2);
  EXPECT_EQ(cross[1].filter_frame, 2);
  EXPECT_EQ(cross[1].feature_frame, 0);
  EXPECT_EQ(cross[0].origin, MaskOrigin::crossover);
  EXPECT_EQ(within[0].origin, MaskOrigin::within_frame);
  EXPECT_NE(within[0].logits.value(), within[1].logits.value());
}

TEST_F(CrossoverModel, MasksMatchBruteForceComposition) {
  const auto pair = make_frame_pair(clip, 1, 2);
  const auto& a = features[1];
  const auto& b = features[3];
  const auto within = within_frame_masks(model, pair, a, b);
  const auto cross = crossover_masks(model, pair, a, b);
  for (std::size_t i = 0; i < pair.correspondences.size(); ++i) {
    const auto& c = pair.correspondences[i];
    expect_near(within[2 * i].logits.value(), oracle_mask(model, a, c.at_t, a, c.at_t), 1e-9);
    expect_near(within[2 * i + 1].logits.value(), oracle_mask(model, b, c.at_t_delta, b, c.at_t_delta), 1e-9);
    expect_near(cross[2 * i].logits.value(), oracle_mask(model, a, c.at_t, b, c.at_t_delta), 1e-9);
    expect_near(cross[2 * i + 1].logits.value(), oracle_mask(model, b, c.at_t_delta, a, c.at_t), 1e-9);
  }
}

TEST_F(CrossoverModel, ZeroDeltaDegeneratesToWithinFrame) {
  const auto pair = make_frame_pair(clip, 1, 0);
  ASSERT_FALSE(pair.correspondences.empty());
  const auto within = within_frame_masks(model, pair, features[1], features[1]);
  const auto cross = crossover_masks(model, pair, features[1], features[1]);
  for (std::size_t i = 0; i < within.size(); ++i) EXPECT_EQ(cross[i].logits.value(), within[i].logits.value());
  const double with = crossover_loss(model, clip, pair, features[1], features[1], true).item();
  const double without = crossover_loss(model, clip, pair, features[1], features[1], false).item();
  EXPECT_NEAR(with, without, 1e-12);
}

TEST_F(CrossoverModel, SwappingFramesSwapsCrossoverOutputs) {
  const auto pair = make_frame_pair(clip, 0, 3);
  FramePair swapped{3, -3, {}};
  for (const auto& c : pair.correspondences) swapped.correspondences.push_back({c.instance_id, c.at_t_delta, c.at_t});
  const auto fwd = crossover_masks(model, pair, features[0], features[3]);
  const auto rev = crossover_masks(model, swapped, features[3], features[0]);
  ASSERT_EQ(fwd.size(), rev.size());
  for (std::size_t i = 0; i < fwd.size(); i += 2) {
    EXPECT_EQ(fwd[i].logits.value(), rev[i + 1].logits.value());
    EXPECT_EQ(fwd[i + 1].logits.value(), rev[i].logits.value());
  }
}

TEST_F(CrossoverModel, LossIsMeanOfPerMaskDice) {
  const auto pair = make_frame_pair(clip, 0, 1);
  auto masks = within_frame_masks(model, pair, features[0], features[1]);
  const double within_only = crossover_loss(model, clip, pair, features[0], features[1], false).item();
  const auto cross = crossover_masks(model, pair, features[0], features[1]);
  masks.insert(masks.end(), cross.begin(), cross.end());
  auto gt = [&](const InstanceMask& m) {
    for (const auto& a : clip.annotations[m.feature_frame])
      if (a.instance_id == m.instance_id) return mask_to_tensor(a.mask);
    throw std::runtime_error("missing instance");
  };
  double sum = 0, sum_within = 0;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const auto probs = mask_probabilities(masks[i].logits, clip.height(), clip.width()).value();
    const double d = dice_loss_value(probs, gt(masks[i]));
    sum += d;
    if (i < 2 * pair.correspondences.size()) sum_within += d;
  }
  const double full = crossover_loss(model, clip, pair, features[0], features[1], true).item();
  EXPECT_NEAR(full, sum / masks.size(), 1e-12);
  EXPECT_NEAR(within_only, sum_within / (2 * pair.correspondences.size()), 1e-12);
}

TEST_F(CrossoverModel, EmptyPairCountsAndReturnsZero) {
  LossCounters counters;
  FramePair none{0, 1, {}};
  EXPECT_EQ(crossover_loss(model, clip, none, features[0], features[1], true, &counters).item(), 0.0);
  EXPECT_EQ(counters.empty_pairs, 1);
}

TEST(Dice, PerfectPredictionOfGroundTruthIsZero) {
  const auto clip = make_clip(2);
  for (const auto& a : clip.annotations[0]) {
    const auto t = mask_to_tensor(a.mask);
    EXPECT_NEAR(dice_loss_value(t, t), 0.0, 1e-6);
  }
}
