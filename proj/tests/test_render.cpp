#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>

#include "fd_harness.hpp"
#include "mega/render.hpp"
#include "oracle_helpers.hpp"
#include "render_oracle.hpp"

using namespace mega;
using oracle::Rng;

namespace {

Camera basic_cam(int size, double t = 0.5) {
  Camera cam;
  cam.fx = cam.fy = 100.0;
  cam.cx = cam.cy = 50.0;
  cam.width = cam.height = size;
  cam.time = t;
  return cam;
}

Sliced3D isotropic_slice(const Eigen::Vector3d& mu, double sigma) {
  Sliced3D s;
  s.mu3_t = mu;
  s.sigma3 = sigma * sigma * Eigen::Matrix3d::Identity();
  s.temporal_opacity = 1.0;
  return s;
}

}  // namespace

TEST(Project, PinholeCenter) {
  const Camera cam = basic_cam(100);
  const auto splat = project(isotropic_slice({0, 0, 1}, 0.05), {1, 1, 1}, 0.5, cam);
  ASSERT_TRUE(splat.has_value());
  EXPECT_NEAR(splat->mean2[0], 50.0, 1e-12);
  EXPECT_NEAR(splat->mean2[1], 50.0, 1e-12);
  EXPECT_NEAR(splat->depth, 1.0, 1e-12);
}

TEST(Project, IsotropicCovarianceOnAxis) {
  const Camera cam = basic_cam(100);
  const double sigma = 0.02, z = 2.0;
  const auto splat = project(isotropic_slice({0, 0, z}, sigma), {1, 1, 1}, 0.5, cam);
  ASSERT_TRUE(splat.has_value());
  const double expect = std::pow(cam.fx * sigma / z, 2.0);
  EXPECT_NEAR(splat->cov2(0, 0), expect + 0.3, 1e-9);
  EXPECT_NEAR(splat->cov2(1, 1), expect + 0.3, 1e-9);
  EXPECT_NEAR(splat->cov2(0, 1), 0.0, 1e-9);

  // Cross-check the analytic Jacobian against a numerical one.
  auto project_pt = [&](const Eigen::Vector3d& w) {
    const Eigen::Vector3d c = cam.rot * w + cam.trans;
    return Eigen::Vector2d(cam.fx * c[0] / c[2] + cam.cx, cam.fy * c[1] / c[2] + cam.cy);
  };
  const Eigen::Vector3d mu(0.3, -0.2, z);
  const auto splat2 = project(isotropic_slice(mu, sigma), {1, 1, 1}, 0.5, cam);
  ASSERT_TRUE(splat2.has_value());
  Eigen::Matrix<double, 2, 3> jac_num;
  const double h = 1e-6;
  for (int k = 0; k < 3; ++k) {
    Eigen::Vector3d up = mu, dn = mu;
    up[k] += h;
    dn[k] -= h;
    jac_num.col(k) = (project_pt(up) - project_pt(dn)) / (2.0 * h);
  }
  const Eigen::Matrix2d expect2 =
      jac_num * (sigma * sigma * Eigen::Matrix3d::Identity()) * jac_num.transpose() +
      0.3 * Eigen::Matrix2d::Identity();
  EXPECT_LT((splat2->cov2 - expect2).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Project, BehindCameraCulled) {
  const Camera cam = basic_cam(100);
  EXPECT_FALSE(project(isotropic_slice({0, 0, -1}, 0.05), {1, 1, 1}, 0.5, cam).has_value());
}

TEST(Project, OffscreenCulled) {
  const Camera cam = basic_cam(100);
  EXPECT_FALSE(project(isotropic_slice({50, 0, 1}, 0.01), {1, 1, 1}, 0.5, cam).has_value());
}

TEST(Rasterize, EmptyCloudGivesBackground) {
  RenderOptions opts;
  opts.background = {0.25, 0.5, 0.75};
  const Image img = rasterize(GaussianCloud{}, nullptr, nullptr, basic_cam(32), opts);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      for (int c = 0; c < 3; ++c) EXPECT_EQ(img.at(x, y, c), opts.background[c]);
}

TEST(Rasterize, SingleOpaqueSplatCenterPixel) {
  GaussianCloud cloud = GaussianCloud::sized(1);
  cloud.mu4.row(0) << 0, 0, 2, 0.5;  // on axis at depth 2
  const double sigma_world = 0.4;    // ~20 px on screen: flat around the center
  cloud.s4.row(0) << std::log(sigma_world), std::log(sigma_world), std::log(sigma_world),
      std::log(0.5);
  cloud.o_logit[0] = 20.0;      // effectively opaque
  cloud.c_dc.row(0).setZero();  // DC-only gray 0.5
  const Camera cam = basic_cam(100);
  const Image img = rasterize(cloud, nullptr, nullptr, cam);
  // Alpha clamps at 0.99, color 0.5, black background.
  EXPECT_NEAR(img.at(50, 50, 0), 0.5 * 0.99, 1e-3);
  EXPECT_NEAR(img.at(50, 50, 1), 0.5 * 0.99, 1e-3);
}

namespace {

GaussianCloud random_scene(Rng& rng, int n, double t) {
  GaussianCloud cloud = GaussianCloud::sized(n);
  for (int i = 0; i < n; ++i) {
    cloud.mu4(i, 0) = rng.uniform(-1.2, 1.2);
    cloud.mu4(i, 1) = rng.uniform(-1.2, 1.2);
    cloud.mu4(i, 2) = rng.uniform(-0.8, 0.8);
    cloud.mu4(i, 3) = rng.uniform(0.0, 1.0);
    for (int k = 0; k < 4; ++k) {
      cloud.q_l(i, k) = rng.normal();
      cloud.q_r(i, k) = rng.normal();
      cloud.s4(i, k) = std::log(0.25) + rng.uniform(-0.8, 0.8);
    }
    for (int k = 0; k < 3; ++k) cloud.c_dc(i, k) = rng.normal();
    cloud.o_logit[i] = rng.uniform(-2.0, 2.0);
  }
  return cloud;
}

Camera scene_cam(int size, double t) {
  return Camera::look_at({0.4, -0.3, -4.0}, {0, 0, 0}, {0, 1, 0}, size * 0.9, size, size, t);
}

}  // namespace

TEST(Rasterize, MatchesNaiveCompositorOnRandomScenes) {
  Rng rng(2024);
  for (int trial = 0; trial < 8; ++trial) {
    const double t = rng.uniform(0.2, 0.8);
    const int n = 20 + static_cast<int>(rng.uniform(0, 180));
    const GaussianCloud cloud = random_scene(rng, n, t);
    const Camera cam = scene_cam(48, t);
    RenderOptions opts;
    opts.background = {0.1, 0.1, 0.2};
    RenderCache cache;
    const Image tiled = rasterize(cloud, nullptr, nullptr, cam, opts, &cache);
    const auto naive = oracle::naive_composite(cache);
    ASSERT_EQ(tiled.data.size(), naive.image.data.size());
    double max_diff = 0.0;
    for (size_t i = 0; i < tiled.data.size(); ++i)
      max_diff = std::max(max_diff, std::abs(tiled.data[i] - naive.image.data[i]));
    EXPECT_LT(max_diff, 1e-6) << "trial " << trial;
    EXPECT_LT(naive.max_budget_error, 1e-6);  // transmittance bookkeeping
  }
}

TEST(Rasterize, DeterministicAcrossWorkerCounts) {
  Rng rng(77);
  const double t = 0.4;
  const GaussianCloud cloud = random_scene(rng, 120, t);
  const Camera cam = scene_cam(64, t);
  const ColorPredictor cp = ColorPredictor::make(5, 16);
  const DeformPredictor dp = DeformPredictor::make(6, 16, 4, 4, 6);

  Image weights(64, 64);
  for (auto& v : weights.data) v = rng.uniform(-1, 1);

  std::vector<Image> images;
  std::vector<RenderGrads> grads;
  for (int workers : {1, 2, 4}) {
    ThreadPool::instance().set_workers(workers);
    RenderCache cache;
    images.push_back(rasterize(cloud, &dp, &cp, cam, {}, &cache));
    grads.push_back(rasterize_backward(cloud, &dp, &cp, weights, cache));
  }
  ThreadPool::instance().set_workers(2);
  for (size_t i = 1; i < images.size(); ++i) {
    EXPECT_EQ(images[0].data, images[i].data);
    EXPECT_EQ(Eigen::MatrixX4d(grads[0].mu4), Eigen::MatrixX4d(grads[i].mu4));
    EXPECT_EQ(Eigen::MatrixX4d(grads[0].s4), Eigen::MatrixX4d(grads[i].s4));
    EXPECT_EQ(Eigen::MatrixX3d(grads[0].c_dc), Eigen::MatrixX3d(grads[i].c_dc));
    EXPECT_EQ(Eigen::VectorXd(grads[0].o_logit), Eigen::VectorXd(grads[i].o_logit));
    for (size_t li = 0; li < grads[0].color->d_weight.size(); ++li)
      EXPECT_EQ(Eigen::MatrixXd(grads[0].color->d_weight[li]),
                Eigen::MatrixXd(grads[i].color->d_weight[li]));
    for (size_t li = 0; li < grads[0].deform->trunk.d_weight.size(); ++li)
      EXPECT_EQ(Eigen::MatrixXd(grads[0].deform->trunk.d_weight[li]),
                Eigen::MatrixXd(grads[i].deform->trunk.d_weight[li]));
  }
}

TEST(Rasterize, IdentityAtInitialization) {
  Rng rng(99);
  const double t = 0.6;
  const GaussianCloud cloud = random_scene(rng, 100, t);
  const Camera cam = scene_cam(48, t);
  // Fresh predictors have zeroed heads.
  const ColorPredictor cp = ColorPredictor::make(11);
  const DeformPredictor dp = DeformPredictor::make(12);
  const Image with = rasterize(cloud, &dp, &cp, cam);
  const Image without = rasterize(cloud, nullptr, nullptr, cam);
  EXPECT_EQ(with.data, without.data);
}

TEST(RasterizeBackward, ZeroUpstreamGivesZeroGrads) {
  Rng rng(13);
  const double t = 0.5;
  const GaussianCloud cloud = random_scene(rng, 30, t);
  const Camera cam = scene_cam(32, t);
  RenderCache cache;
  rasterize(cloud, nullptr, nullptr, cam, {}, &cache);
  const RenderGrads g = rasterize_backward(cloud, nullptr, nullptr, Image(32, 32), cache);
  EXPECT_EQ(g.mu4.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.s4.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.q_l.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.c_dc.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.o_logit.cwiseAbs().maxCoeff(), 0.0);
}

TEST(RasterizeBackward, MissingCacheThrows) {
  RenderCache cache;
  EXPECT_THROW(rasterize_backward(GaussianCloud{}, nullptr, nullptr, Image(8, 8), cache),
               StateError);
}

TEST(RasterizeBackward, SingleGaussianFiniteDifferences) {
  oracle::FdScene s = oracle::make_fd_scene(1, 24, 0.5, false, false, 4242);
  oracle::FdReport rep = oracle::run_fd_check(s);
  EXPECT_LT(rep.max_rel_err, 1e-3) << rep.worst_name << " analytic " << rep.worst_analytic
                                   << " numeric " << rep.worst_numeric;
  EXPECT_GT(rep.checked, 0);
}

TEST(RasterizeBackward, MultiGaussianFiniteDifferences) {
  oracle::FdScene s = oracle::make_fd_scene(8, 24, 0.5, false, false, 555);
  oracle::FdReport rep = oracle::run_fd_check(s);
  EXPECT_LT(rep.max_rel_err, 1e-3) << rep.worst_name << " analytic " << rep.worst_analytic
                                   << " numeric " << rep.worst_numeric;
}

// Full pipeline: deformation, AC color, and a temporally filtered Gaussian.
TEST(RasterizeBackward, FullPipelineFiniteDifferences) {
  oracle::FdScene s = oracle::make_fd_scene(6, 24, 0.5, true, true, 808, /*add_filtered=*/true);
  oracle::FdReport rep = oracle::run_fd_check(s);
  EXPECT_LT(rep.max_rel_err, 1e-3) << rep.worst_name << " analytic " << rep.worst_analytic
                                   << " numeric " << rep.worst_numeric;

  // The filtered Gaussian receives exactly zero gradient.
  RenderCache cache;
  rasterize(s.cloud, s.deform_ptr(), s.color_ptr(), s.cam, s.opts, &cache);
  const RenderGrads g =
      rasterize_backward(s.cloud, s.deform_ptr(), s.color_ptr(), s.weights, cache);
  const int last = s.cloud.count() - 1;
  EXPECT_EQ(g.mu4.row(last).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.c_dc.row(last).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.o_logit[last], 0.0);
}

TEST(RasterizeBackward, TemporalOpacityGradientSignFlipsAroundCenter) {
  auto grad_mu_t = [](double mu_t) {
    GaussianCloud cloud = GaussianCloud::sized(1);
    cloud.mu4.row(0) << 0, 0, 2, mu_t;
    cloud.s4.row(0) << std::log(0.3), std::log(0.3), std::log(0.3), std::log(0.4);
    cloud.o_logit[0] = 0.0;
    const Camera cam = basic_cam(32, 0.5);
    RenderCache cache;
    rasterize(cloud, nullptr, nullptr, cam, {}, &cache);
    Image ones(32, 32);
    for (auto& v : ones.data) v = 1.0;
    return rasterize_backward(cloud, nullptr, nullptr, ones, cache).mu4(0, 3);
  };
  // Moving mu_t toward the camera time brightens the image.
  EXPECT_GT(grad_mu_t(0.3), 0.0);
  EXPECT_LT(grad_mu_t(0.7), 0.0);
  EXPECT_NEAR(grad_mu_t(0.5), 0.0, 1e-12);
}

TEST(ParticipationRatio, HugeTemporalScaleAlwaysParticipates) {
  GaussianCloud cloud = GaussianCloud::sized(10);
  for (int i = 0; i < 10; ++i) {
    cloud.mu4(i, 3) = 0.1 * i;
    cloud.s4(i, 3) = std::log(50.0);
  }
  const auto ratios = participation_ratio(cloud, {0.0, 0.25, 0.5, 0.75, 1.0}, 0.05);
  for (double r : ratios) EXPECT_EQ(r, 1.0);
}

TEST(ParticipationRatio, NarrowGaussianPeaksAtItsCenter) {
  GaussianCloud cloud = GaussianCloud::sized(1);
  cloud.mu4(0, 3) = 0.5;
  cloud.s4(0, 3) = std::log(0.05);
  const auto ratios = participation_ratio(cloud, {0.0, 0.5, 1.0}, 0.05);
  EXPECT_EQ(ratios[0], 0.0);
  EXPECT_EQ(ratios[1], 1.0);
  EXPECT_EQ(ratios[2], 0.0);
}

TEST(ParticipationRatio, MatchesBruteForce) {
  Rng rng(21);
  const GaussianCloud cloud = random_scene(rng, 60, 0.5);
  const std::vector<double> times = {0.1, 0.35, 0.62, 0.9};
  const auto ratios = participation_ratio(cloud, times, 0.05);
  for (size_t ti = 0; ti < times.size(); ++ti) {
    int pass = 0;
    for (int i = 0; i < cloud.count(); ++i)
      if (slice(cloud.get(i), times[ti]).temporal_opacity > 0.05) ++pass;
    EXPECT_NEAR(ratios[ti], static_cast<double>(pass) / cloud.count(), 1e-15);
  }
}

TEST(ParticipationRatio, EmptyCloudThrows) {
  EXPECT_THROW(participation_ratio(GaussianCloud{}, {0.5}, 0.05), InvalidParameter);
}
