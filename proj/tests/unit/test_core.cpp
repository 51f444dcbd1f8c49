#include <gtest/gtest.h>

#include <cmath>

#include "afcv/core/error.hpp"
#include "afcv/core/ops.hpp"
#include "afcv/core/rng.hpp"
#include "gradcheck.hpp"

using namespace afcv;
using afcv::testing::gradcheck;
using afcv::testing::random_tensor;

namespace {

// Direct loop convolution used as the reference for the im2col path.
Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, ops::Conv2dSpec s) {
  const int c = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int oh = (h + 2 * s.pad_h - kh) / s.stride + 1;
  const int ow = (wd + 2 * s.pad_w - kw) / s.stride + 1;
  Tensor out({o, oh, ow});
  for (int oc = 0; oc < o; ++oc)
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) {
        double acc = b.empty() ? 0.0 : b[oc];
        for (int ic = 0; ic < c; ++ic)
          for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j) {
              const int iy = y * s.stride - s.pad_h + i;
              const int ix = xx * s.stride - s.pad_w + j;
              if (iy < 0 || ix < 0 || iy >= h || ix >= wd) continue;
              acc += x.at(ic, iy, ix) * w[((static_cast<std::size_t>(oc) * c + ic) * kh + i) * kw + j];
            }
        out.at(oc, y, xx) = acc;
      }
  return out;
}

}  // namespace

TEST(Tensor, ShapeAndIndexing) {
  Tensor t({2, 3, 4}, 1.5);
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  t.at(1, 2, 3) = 7;
  EXPECT_EQ(t[23], 7);
  EXPECT_THROW(t.reshaped({5, 5}), ShapeError);
  EXPECT_EQ(t.reshaped({24}).dim(0), 24);
  EXPECT_THROW(Tensor({2, 2}, std::vector<Scalar>{1, 2, 3}), ShapeError);
}

TEST(Rng, MixSeedSeparatesStreams) {
  EXPECT_NE(mix_seed(1, 0), mix_seed(1, 1));
  EXPECT_NE(mix_seed(0, 1), mix_seed(1, 0));
  Rng a(5), b(5);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.next(), b.next());
  Rng r(3);
  for (int i = 0; i < 1000; ++i) {
    const int v = r.uniform_int(-2, 2);
    EXPECT_GE(v, -2);
    EXPECT_LE(v, 2);
  }
}

TEST(Autograd, SharedNodeAccumulatesBothPaths) {
  auto x = ag::parameter(Tensor({1}, 3.0));
  auto y = ops::mul(x, x);  // x used twice
  ag::backward(ops::add(y, x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
}

TEST(Autograd, NoGradGuardDropsGraph) {
  auto x = ag::parameter(Tensor({2}, 1.0));
  ag::Var y;
  {
    ag::NoGradGuard guard;
    y = ops::sum(ops::square(x));
  }
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(ag::grad_enabled());
}

TEST(Autograd, BackwardNeedsScalarRoot) {
  auto x = ag::parameter(Tensor({3}, 1.0));
  EXPECT_THROW(ag::backward(ops::square(x)), ShapeError);
}

TEST(Ops, ElementwiseGradients) {
  Rng rng(1);
  const auto in = random_tensor({2, 3, 3}, rng);
  auto g = [](auto fn) { return [fn](const std::vector<ag::Var>& v) { return ops::sum(fn(v[0])); }; };
  EXPECT_LT(gradcheck(g([](const ag::Var& a) { return ops::sigmoid(a); }), {in}).max_rel_error, 1e-6);
  EXPECT_LT(gradcheck(g([](const ag::Var& a) { return ops::exp(a); }), {in}).max_rel_error, 1e-6);
  EXPECT_LT(gradcheck(g([](const ag::Var& a) { return ops::square(a); }), {in}).max_rel_error, 1e-6);
  EXPECT_LT(gradcheck(g([](const ag::Var& a) { return ops::sqrt(ops::square(a), 0.1); }), {in}).max_rel_error, 1e-6);
  EXPECT_LT(gradcheck(g([](const ag::Var& a) { return ops::l2_normalize(ops::mul(a, a)); }), {in}).max_rel_error,
            1e-6);
  EXPECT_LT(gradcheck(g([](const ag::Var& a) { return ops::global_avg_pool(ops::square(a)); }), {in}).max_rel_error,
            1e-6);
}

TEST(Ops, StructuralGradients) {
  Rng rng(2);
  const auto a = random_tensor({2, 3, 4}, rng);
  const auto b = random_tensor({1, 3, 4}, rng);
  const auto v = random_tensor({3}, rng);
  const auto w = random_tensor({3, 3, 4}, rng);
  auto weighted = [w](const ag::Var& x) { return ops::sum(ops::mul(x, ag::constant(w))); };
  EXPECT_LT(gradcheck([&](const auto& p) { return weighted(ops::concat_channels({p[0], p[1]})); }, {a, b}).max_rel_error,
            1e-6);
  EXPECT_LT(gradcheck([&](const auto& p) { return weighted(ops::tile_spatial(p[0], 3, 4)); }, {v}).max_rel_error, 1e-6);
  EXPECT_LT(gradcheck([&](const auto& p) { return ops::sum(ops::square(ops::gather_location(p[0], 2, 1))); }, {a})
                .max_rel_error,
            1e-6);
  EXPECT_LT(gradcheck([&](const auto& p) { return ops::sum(ops::square(ops::upsample_bilinear(p[0], 9, 7))); }, {a})
                .max_rel_error,
            1e-6);
}

TEST(Ops, UpsampleIdentityAndConstant) {
  Rng rng(3);
  const auto a = random_tensor({2, 4, 5}, rng);
  EXPECT_EQ(ops::upsample_bilinear(ag::constant(a), 4, 5).value(), a);
  const auto up = ops::upsample_bilinear(ag::constant(Tensor({1, 3, 3}, 2.5)), 12, 12).value();
  for (double v : up.values()) EXPECT_DOUBLE_EQ(v, 2.5);
}

TEST(Ops, ConvMatchesDirectLoops) {
  Rng rng(4);
  const ops::Conv2dSpec specs[] = {{1, 1, 1}, {2, 1, 1}, {1, 0, 0}, {2, 0, 1}};
  for (const auto& s : specs) {
    for (int k : {1, 3}) {
      const auto x = random_tensor({3, 9, 8}, rng);
      const auto w = random_tensor({4, 3, k, k}, rng);
      const auto b = random_tensor({4}, rng);
      const auto got = ops::conv2d(ag::constant(x), ag::constant(w), ag::constant(b), s).value();
      const auto want = naive_conv(x, w, b, s);
      ASSERT_EQ(got.shape(), want.shape());
      for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
    }
  }
}

TEST(Ops, ConvGradients) {
  Rng rng(5);
  const auto x = random_tensor({2, 5, 6}, rng);
  const auto w = random_tensor({3, 2, 3, 3}, rng);
  const auto b = random_tensor({3}, rng);
  for (const ops::Conv2dSpec s : {ops::Conv2dSpec{1, 1, 1}, ops::Conv2dSpec{2, 1, 1}, ops::Conv2dSpec{1, 0, 1}}) {
    auto f = [s](const std::vector<ag::Var>& p) { return ops::sum(ops::square(ops::conv2d(p[0], p[1], p[2], s))); };
    EXPECT_LT(gradcheck(f, {x, w, b}).max_rel_error, 1e-6);
  }
  const auto w1 = random_tensor({3, 2, 1, 1}, rng);
  auto pointwise = [](const std::vector<ag::Var>& p) { return ops::sum(ops::square(ops::conv2d(p[0], p[1], p[2], {}))); };
  EXPECT_LT(gradcheck(pointwise, {x, w1, b}).max_rel_error, 1e-6);
}

TEST(Ops, ShapeErrors) {
  auto a = ag::constant(Tensor({2, 3}, 1.0));
  auto b = ag::constant(Tensor({3, 2}, 1.0));
  EXPECT_THROW(ops::add(a, b), ShapeError);
  EXPECT_THROW(ops::global_avg_pool(a), ShapeError);
  auto x = ag::constant(Tensor({2, 4, 4}, 1.0));
  EXPECT_THROW(ops::gather_location(x, 4, 0), ShapeError);
  EXPECT_THROW(ops::conv2d(x, ag::constant(Tensor({1, 3, 3, 3})), ag::Var(), {}), ShapeError);
  EXPECT_THROW(ops::upsample_bilinear(x, 0, 3), ShapeError);
}
