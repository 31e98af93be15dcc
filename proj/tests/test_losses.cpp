#include <gtest/gtest.h>

#include <cmath>

#include "mega/losses.hpp"
#include "mega/optim.hpp"
#include "mega/train.hpp"
#include "oracle_helpers.hpp"

using namespace mega;
using oracle::Rng;

namespace {

Image random_image(Rng& rng, int w, int h, double lo = 0.0, double hi = 1.0) {
  Image img(w, h);
  for (auto& v : img.data) v = rng.uniform(lo, hi);
  return img;
}

}  // namespace

TEST(L1Loss, IdenticalImagesGiveZero) {
  Rng rng(1);
  const Image a = random_image(rng, 8, 6);
  EXPECT_EQ(l1_loss(a, a), 0.0);
}

TEST(L1Loss, ZeroVersusOne) {
  const Image a = Image::constant(5, 4, {0, 0, 0});
  const Image b = Image::constant(5, 4, {1, 1, 1});
  EXPECT_DOUBLE_EQ(l1_loss(a, b), 1.0);
}

TEST(L1Loss, MatchesScalarLoop) {
  Rng rng(2);
  const Image a = random_image(rng, 9, 7);
  const Image b = random_image(rng, 9, 7);
  double acc = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) acc += std::abs(a.data[i] - b.data[i]);
  EXPECT_NEAR(l1_loss(a, b), acc / a.data.size(), 1e-15);
}

TEST(L1Loss, DimensionMismatchThrows) {
  EXPECT_THROW(l1_loss(Image(4, 4), Image(5, 4)), ConfigError);
}

TEST(SsimLoss, IdenticalImagesGiveZero) {
  Rng rng(3);
  const Image a = random_image(rng, 16, 16);
  EXPECT_NEAR(ssim_loss(a, a), 0.0, 1e-12);
}

TEST(SsimLoss, ConstantImagesClosedForm) {
  const Image a = Image::constant(16, 16, {0, 0, 0});
  const Image b = Image::constant(16, 16, {1, 1, 1});
  const double c1 = 0.01 * 0.01;
  // mu1=0, mu2=1, all variances zero: SSIM = C1 / (1 + C1).
  EXPECT_NEAR(ssim(a, b, 1.0), c1 / (1.0 + c1), 1e-12);
  EXPECT_NEAR(ssim_loss(a, b), 1.0, 1e-3);
}

TEST(SsimLoss, TooSmallImageThrows) {
  EXPECT_THROW(ssim_loss(Image(10, 16), Image(10, 16)), ConfigError);
}

TEST(SsimLoss, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  Image a = random_image(rng, 14, 13, 0.2, 0.8);
  const Image b = random_image(rng, 14, 13, 0.2, 0.8);
  Image d_a(a.width, a.height);
  ssim_loss_backward(a, b, 1.0, d_a);
  const double h = 1e-5;
  for (size_t i = 0; i < a.data.size(); i += 17) {
    const double saved = a.data[i];
    a.data[i] = saved + h;
    const double up = ssim_loss(a, b);
    a.data[i] = saved - h;
    const double down = ssim_loss(a, b);
    a.data[i] = saved;
    EXPECT_LT(oracle::rel_err(d_a.data[i], (up - down) / (2 * h)), 1e-4) << "pixel " << i;
  }
}

TEST(OpacityEntropy, AllOnesGiveZero) {
  EXPECT_EQ(opacity_entropy_loss(Eigen::VectorXd::Ones(10)), 0.0);
}

TEST(OpacityEntropy, MaximumAtInverseE) {
  Eigen::VectorXd o(1);
  o[0] = std::exp(-1.0);
  EXPECT_NEAR(opacity_entropy_loss(o), std::exp(-1.0), 1e-12);
}

TEST(OpacityEntropy, MatchesScalarLoopAndFiniteDifferences) {
  Rng rng(5);
  Eigen::VectorXd o(40);
  for (int i = 0; i < 40; ++i) o[i] = rng.uniform(0.01, 0.999);
  double acc = 0.0;
  for (int i = 0; i < 40; ++i) acc += -o[i] * std::log(o[i]);
  EXPECT_NEAR(opacity_entropy_loss(o), acc / 40.0, 1e-14);

  const Eigen::VectorXd g = opacity_entropy_grad(o);
  const double h = 1e-6;
  for (int i = 0; i < 40; i += 5) {
    Eigen::VectorXd up = o, dn = o;
    up[i] += h;
    dn[i] -= h;
    const double numeric = (opacity_entropy_loss(up) - opacity_entropy_loss(dn)) / (2 * h);
    EXPECT_LT(oracle::rel_err(g[i], numeric), 1e-6);
  }
}

TEST(OpacityEntropy, EmptyVectorThrows) {
  EXPECT_THROW(opacity_entropy_loss(Eigen::VectorXd{}), InvalidParameter);
}

// Loss is increasing in o below 1/e and decreasing above (gradient sign).
TEST(OpacityEntropy, GradientSignSwitchesAtInverseE) {
  for (double o = 0.02; o < 1.0; o += 0.02) {
    Eigen::VectorXd v(1);
    v[0] = o;
    const double g = opacity_entropy_grad(v)[0];
    if (o < std::exp(-1.0) - 1e-9)
      EXPECT_GT(g, 0.0) << o;
    else if (o > std::exp(-1.0) + 1e-9)
      EXPECT_LT(g, 0.0) << o;
  }
}

TEST(TotalLoss, ReducesToComponents) {
  Rng rng(6);
  const Image a = random_image(rng, 16, 16);
  const Image b = random_image(rng, 16, 16);
  Eigen::VectorXd o(5);
  for (int i = 0; i < 5; ++i) o[i] = rng.uniform(0.05, 0.95);

  const LossBreakdown pure_l1 = total_loss(a, b, o, 0.0, 0.0);
  EXPECT_DOUBLE_EQ(pure_l1.total, l1_loss(a, b));

  const LossBreakdown pure_ssim = total_loss(a, b, o, 1.0, 0.0);
  EXPECT_DOUBLE_EQ(pure_ssim.total, ssim_loss(a, b));

  const LossBreakdown mixed = total_loss(a, b, o, 0.2, 5e-4);
  const double expect =
      0.8 * l1_loss(a, b) + 0.2 * ssim_loss(a, b) + 5e-4 * opacity_entropy_loss(o);
  EXPECT_NEAR(mixed.total, expect, 1e-14);
}

TEST(Adam, ZeroGradientFromFreshStateLeavesParamsUnchanged) {
  Eigen::VectorXd p(3);
  p << 1.0, -2.0, 0.5;
  const Eigen::VectorXd orig = p;
  Eigen::VectorXd g = Eigen::VectorXd::Zero(3);
  AdamState st = AdamState::sized(3);
  adam_step(p.data(), g.data(), 3, st, 0.1);
  EXPECT_EQ(p, orig);
}

TEST(Adam, MomentsDecayUnderZeroGradient) {
  Eigen::VectorXd p = Eigen::VectorXd::Zero(1);
  AdamState st = AdamState::sized(1);
  st.m[0] = 1.0;
  st.v[0] = 4.0;
  Eigen::VectorXd g = Eigen::VectorXd::Zero(1);
  adam_step(p.data(), g.data(), 1, st, 0.1);
  EXPECT_DOUBLE_EQ(st.m[0], 0.9);
  EXPECT_DOUBLE_EQ(st.v[0], 4.0 * 0.999);
}

TEST(Adam, SingleStepHandComputed) {
  const double g0 = 0.37, lr = 0.05, eps = 1e-15;
  Eigen::VectorXd p(1);
  p << 2.0;
  Eigen::VectorXd g(1);
  g << g0;
  AdamState st = AdamState::sized(1);
  adam_step(p.data(), g.data(), 1, st, lr, {0.9, 0.999, eps});
  // After one step the bias-corrected moments equal g and g^2.
  const double expect = 2.0 - lr * g0 / (std::sqrt(g0 * g0) + eps);
  EXPECT_NEAR(p[0], expect, 1e-15);
}

TEST(Adam, ConvergesOnQuadratic) {
  Eigen::VectorXd p(1);
  p << 5.0;
  AdamState st = AdamState::sized(1);
  for (int i = 0; i < 100; ++i) {
    Eigen::VectorXd g(1);
    g << (p[0] - 3.0);
    adam_step(p.data(), g.data(), 1, st, 0.1);
  }
  EXPECT_LT(std::abs(p[0] - 3.0), 0.5);
  EXPECT_LT(std::abs(p[0] - 3.0), std::abs(5.0 - 3.0));
}

TEST(Adam, StateSizeMismatchThrows) {
  Eigen::VectorXd p(2), g(2);
  AdamState st = AdamState::sized(3);
  EXPECT_THROW(adam_step(p.data(), g.data(), 2, st, 0.1), ConfigError);
}

TEST(LrSchedule, DeformationEndpoints) {
  TrainConfig cfg;
  cfg.iterations = 3000;
  EXPECT_DOUBLE_EQ(lr_schedule(ParamGroup::DeformMlp, 0, cfg), 8e-4);
  EXPECT_NEAR(lr_schedule(ParamGroup::DeformMlp, 3000, cfg), 1.6e-6, 1e-18);
}

TEST(LrSchedule, ColorWarmupAndMilestones) {
  TrainConfig cfg;
  cfg.iterations = 30000;
  EXPECT_DOUBLE_EQ(lr_schedule(ParamGroup::ColorMlp, 50, cfg), 0.005);
  EXPECT_DOUBLE_EQ(lr_schedule(ParamGroup::ColorMlp, 100, cfg), 0.01);
  EXPECT_DOUBLE_EQ(lr_schedule(ParamGroup::ColorMlp, 4999, cfg), 0.01);
  EXPECT_DOUBLE_EQ(lr_schedule(ParamGroup::ColorMlp, 5000, cfg), 0.01 / 3.0);
  EXPECT_DOUBLE_EQ(lr_schedule(ParamGroup::ColorMlp, 15000, cfg), 0.01 / 9.0);
  EXPECT_DOUBLE_EQ(lr_schedule(ParamGroup::ColorMlp, 25000, cfg), 0.01 / 27.0);
}

TEST(LrSchedule, PositionDecaysExponentially) {
  TrainConfig cfg;
  cfg.iterations = 1000;
  cfg.spatial_lr_scale = 2.0;
  EXPECT_DOUBLE_EQ(lr_schedule(ParamGroup::Position, 0, cfg), 2.0 * 1.6e-4);
  EXPECT_NEAR(lr_schedule(ParamGroup::Position, 1000, cfg), 2.0 * 1.6e-6, 1e-18);
  const double mid = lr_schedule(ParamGroup::Position, 500, cfg);
  EXPECT_NEAR(mid, 2.0 * std::sqrt(1.6e-4 * 1.6e-6), 1e-12);
}

TEST(RemapAdamRows, CopiesAndZeroes) {
  AdamState st = AdamState::sized(6);  // 3 rows x 2 cols, column-major
  Eigen::Map<Eigen::MatrixXd>(st.m.data(), 3, 2) << 1, 4, 2, 5, 3, 6;
  Eigen::Map<Eigen::MatrixXd>(st.v.data(), 3, 2).setConstant(9.0);
  st.step = 7;
  const AdamState out = remap_adam_rows(st, {2, -1, 0, 1}, 3, 2);
  EXPECT_EQ(out.step, 7);
  Eigen::Map<const Eigen::MatrixXd> m(out.m.data(), 4, 2);
  EXPECT_EQ(m(0, 0), 3.0);
  EXPECT_EQ(m(0, 1), 6.0);
  EXPECT_EQ(m(1, 0), 0.0);
  EXPECT_EQ(m(2, 0), 1.0);
  EXPECT_EQ(m(3, 1), 5.0);
}
