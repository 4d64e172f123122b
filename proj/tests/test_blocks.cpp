#include <gtest/gtest.h>

#include <cmath>

#include "posterpp/blocks.hpp"
#include "posterpp/gradcheck_suite.hpp"
#include "posterpp/params.hpp"
#include "test_util.hpp"

using namespace posterpp;
using posterpp::testing::randn;
using posterpp::testing::to_vec;

namespace {

void zero(Tensor& t) {
  for (double& v : t.mutable_values()) v = 0.0;
}

/// Block with random weights except a zero output projection and a zero
/// final MLP layer.
BlockParams zero_out_block(Rng& rng, std::size_t D, std::size_t I, std::size_t M, bool windowed, double rate) {
  BlockParams b = gradcheck::random_block(rng, D, I, M, windowed, rate);
  zero(b.attention.w_o);
  zero(b.mlp.fc2_w);
  zero(b.mlp.fc2_b);
  return b;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

const gradcheck::Case& find_case(const std::string& name) {
  static const auto all = gradcheck::cases();
  for (const auto& c : all)
    if (c.name == name) return c;
  throw std::runtime_error("no gradcheck case " + name);
}

}  // namespace

TEST(TransformerBlock, ZeroOutputProjectionsGiveIdentity) {
  Rng rng(1);
  Context ctx;
  const auto b = zero_out_block(rng, 8, 2, 0, false, 0.3);
  const Tensor x = randn(rng, {5, 8});
  Rng dp(9);
  EXPECT_EQ(to_vec(transformer_block(ctx, x, b, Mode::train, dp)), to_vec(x));
  EXPECT_EQ(to_vec(transformer_block(ctx, x, b, Mode::eval, dp)), to_vec(x));
}

TEST(TransformerBlock, RateZeroTrainEqualsEval) {
  Rng rng(2);
  Context ctx;
  const auto b = gradcheck::random_block(rng, 8, 2, 0, false, 0.0);
  const Tensor x = randn(rng, {6, 8});
  Rng a(1), c(2);
  EXPECT_EQ(to_vec(transformer_block(ctx, x, b, Mode::train, a)), to_vec(transformer_block(ctx, x, b, Mode::eval, c)));
}

TEST(TransformerBlock, EvalIgnoresRng) {
  Rng rng(3);
  Context ctx;
  const auto b = gradcheck::random_block(rng, 8, 2, 0, false, 0.5);
  const Tensor x = randn(rng, {6, 8});
  Rng a(1), c(12345);
  EXPECT_EQ(to_vec(transformer_block(ctx, x, b, Mode::eval, a)), to_vec(transformer_block(ctx, x, b, Mode::eval, c)));
  EXPECT_EQ(a.next_u64(), Rng(1).next_u64());
}

TEST(TransformerBlock, ShapeMismatchThrows) {
  Rng rng(4);
  Context ctx;
  const auto b = gradcheck::random_block(rng, 8, 2, 0, false, 0.0);
  EXPECT_THROW(transformer_block(ctx, randn(rng, {6, 4}), b, Mode::eval, rng), ShapeError);
}

TEST(TransformerBlock, GradientCheck) {
  const auto r = find_case("transformer_block").run(1e-5);
  EXPECT_LE(r.max_rel_err, 1e-4);
}

TEST(CrossFusionV2, ZeroOutputProjectionsGiveIdentity) {
  Rng rng(5);
  Context ctx;
  const auto b = zero_out_block(rng, 8, 2, 4, true, 0.2);
  const Tensor img = randn(rng, {16, 8});
  const Tensor out = cross_fusion_v2(ctx, img, randn(rng, {8, 4, 4}), b, WindowLayout::for_tokens(16, 4),
                                     Mode::train, rng);
  EXPECT_EQ(to_vec(out), to_vec(img));
}

TEST(CrossFusionV2, FullWindowMatchesV1LandmarkToImageHalf) {
  Rng rng(6);
  Context ctx;
  const std::size_t D = 8, N = 16;
  auto b = gradcheck::random_block(rng, D, 2, N, true, 0.0);
  b.attention.bias_table = Tensor::zeros({2, N, N});
  const Tensor img = randn(rng, {N, D});
  const Tensor lm_map = randn(rng, {D, 4, 4});
  const Tensor v2 = cross_fusion_v2(ctx, img, lm_map, b, WindowLayout::for_tokens(N, N), Mode::eval, rng);

  auto vb = b;
  vb.attention.bias_table.reset();
  const Tensor lm_tokens = downsample_landmark(ctx, lm_map, 4, 4);
  const auto [img_out, lm_out] = cross_fusion_v1(ctx, img, lm_tokens, vb, vb, Mode::eval, rng, {true, false});
  EXPECT_LE(max_abs_diff(v2, img_out), 1e-10);
  EXPECT_EQ(to_vec(lm_out), to_vec(lm_tokens));
}

TEST(CrossFusionV2, OutputShape) {
  Rng rng(7);
  Context ctx;
  const auto b = gradcheck::random_block(rng, 8, 2, 4, true, 0.0);
  const Tensor out =
      cross_fusion_v2(ctx, randn(rng, {16, 8}), randn(rng, {8, 4, 4}), b, WindowLayout::for_tokens(16, 4), Mode::eval, rng);
  EXPECT_EQ(out.shape(), (Shape{16, 8}));
}

TEST(CrossFusionV2, ChannelMismatchThrows) {
  Rng rng(8);
  Context ctx;
  const auto b = gradcheck::random_block(rng, 8, 2, 4, true, 0.0);
  EXPECT_THROW(cross_fusion_v2(ctx, randn(rng, {16, 8}), randn(rng, {4, 4, 4}), b, WindowLayout::for_tokens(16, 4),
                               Mode::eval, rng),
               ShapeError);
}

TEST(CrossFusionV2, GradientCheck) {
  const auto r = find_case("cross_fusion_v2").run(1e-5);
  EXPECT_LE(r.max_rel_err, 1e-4);
}

TEST(CrossFusionV1, ZeroProjectionsLeaveStreamsUnchanged) {
  Rng rng(9);
  Context ctx;
  const auto bi = zero_out_block(rng, 8, 2, 0, false, 0.0);
  const auto bl = zero_out_block(rng, 8, 2, 0, false, 0.0);
  const Tensor img = randn(rng, {6, 8}), lm = randn(rng, {6, 8});
  const auto [a, b] = cross_fusion_v1(ctx, img, lm, bi, bl, Mode::eval, rng);
  EXPECT_EQ(to_vec(a), to_vec(img));
  EXPECT_EQ(to_vec(b), to_vec(lm));
}

TEST(CrossFusionV1, SymmetricInputsWithTiedParams) {
  Rng rng(10);
  Context ctx;
  const auto p = gradcheck::random_block(rng, 8, 2, 0, false, 0.0);
  const Tensor x = randn(rng, {6, 8});
  const auto [a, b] = cross_fusion_v1(ctx, x, x, p, p, Mode::eval, rng);
  EXPECT_EQ(to_vec(a), to_vec(b));
  EXPECT_EQ(to_vec(a), to_vec(transformer_block(ctx, x, p, Mode::eval, rng)));
}

TEST(CrossFusionV1, DisabledHalfPassesThrough) {
  Rng rng(11);
  Context ctx;
  const auto bi = gradcheck::random_block(rng, 8, 2, 0, false, 0.0);
  const auto bl = gradcheck::random_block(rng, 8, 2, 0, false, 0.0);
  const Tensor img = randn(rng, {6, 8}), lm = randn(rng, {6, 8});
  const auto full = cross_fusion_v1(ctx, img, lm, bi, bl, Mode::eval, rng);
  const auto no_i2l = cross_fusion_v1(ctx, img, lm, bi, bl, Mode::eval, rng, {true, false});
  const auto no_l2i = cross_fusion_v1(ctx, img, lm, bi, bl, Mode::eval, rng, {false, true});
  EXPECT_EQ(to_vec(no_i2l.first), to_vec(full.first));
  EXPECT_EQ(to_vec(no_i2l.second), to_vec(lm));
  EXPECT_EQ(to_vec(no_l2i.first), to_vec(img));
  EXPECT_EQ(to_vec(no_l2i.second), to_vec(full.second));
}

TEST(CrossFusionV1, ShapeMismatchThrows) {
  Rng rng(12);
  Context ctx;
  const auto b = gradcheck::random_block(rng, 8, 2, 0, false, 0.0);
  EXPECT_THROW(cross_fusion_v1(ctx, randn(rng, {6, 8}), randn(rng, {5, 8}), b, b, Mode::eval, rng), ShapeError);
}

TEST(CrossFusionV1, GradientCheck) {
  const auto r = find_case("cross_fusion_v1").run(1e-5);
  EXPECT_LE(r.max_rel_err, 1e-4);
}

TEST(DropPath, RateZeroIsIdentity) {
  Rng rng(13);
  Context ctx;
  const Tensor x = randn(rng, {4, 3});
  Rng a(5);
  EXPECT_TRUE(drop_path(ctx, x, 0.0, Mode::train, a).same_node(x));
  EXPECT_TRUE(drop_path(ctx, x, 0.0, Mode::eval, a).same_node(x));
  EXPECT_EQ(a.next_u64(), Rng(5).next_u64());
}

TEST(DropPath, EvalIgnoresRng) {
  Rng rng(14);
  Context ctx;
  const Tensor x = randn(rng, {4, 3});
  Rng a(1), b(2);
  EXPECT_EQ(to_vec(drop_path(ctx, x, 0.5, Mode::eval, a)), to_vec(drop_path(ctx, x, 0.5, Mode::eval, b)));
}

TEST(DropPath, WholeBranchMasking) {
  Rng rng(15);
  Context ctx;
  const Tensor x = randn(rng, {4, 3});
  for (int i = 0; i < 50; ++i) {
    const Tensor y = drop_path(ctx, x, 0.25, Mode::train, rng);
    const bool dropped = y[0] == 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) EXPECT_EQ(y[j], dropped ? 0.0 : x[j] * (1.0 / 0.75));
  }
}

TEST(DropPath, MonteCarloUnbiased) {
  Rng rng(16);
  Context ctx;
  const Tensor x = randn(rng, {3, 4});
  double mean_in = 0.0;
  for (double v : x.values()) mean_in += v;
  mean_in /= static_cast<double>(x.size());

  constexpr int draws = 10000;
  constexpr double rate = 0.5;
  double s = 0.0;
  for (int i = 0; i < draws; ++i) {
    const Tensor y = drop_path(ctx, x, rate, Mode::train, rng);
    double m = 0.0;
    for (double v : y.values()) m += v;
    s += m / static_cast<double>(y.size());
  }
  const double est = s / draws;
  // per-draw output mean is mean_in * B / (1 - rate), B ~ Bernoulli(1 - rate)
  const double sigma = std::abs(mean_in) * std::sqrt(rate / (1.0 - rate)) / std::sqrt(static_cast<double>(draws));
  EXPECT_LE(std::abs(est - mean_in), 3.0 * sigma);
}
