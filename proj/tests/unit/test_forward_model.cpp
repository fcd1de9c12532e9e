#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "gsvr/forward_model.hpp"

using namespace gsvr;

TEST(BuildPsf, FwhmToSigma) {
  const PsfModel p = build_psf(0.5, 3.0);
  EXPECT_NEAR(p.sigma.z(), 1.27398, 1e-5);
  EXPECT_NEAR(p.sigma.x(), 0.25480, 1e-5);
  EXPECT_DOUBLE_EQ(p.sigma.x(), p.sigma.y());
  const PsfModel iso = build_psf(2.0, 2.4);
  EXPECT_DOUBLE_EQ(iso.sigma.x(), iso.sigma.z());
  EXPECT_THROW(build_psf(0.0, 3.0), InvalidParameter);
  EXPECT_THROW(build_psf(0.5, -1.0), InvalidParameter);
}

TEST(ConvolveCovariance, HandExamples) {
  const Sym3 sj{0.25, 0, 0, 0.25, 0, 0.25};
  PsfModel zero;
  const Sym3 same = convolve_covariance(sj, Mat3::Identity(), zero);
  EXPECT_EQ(same.full(), sj.full());

  PsfModel p;
  p.sigma = Vec3(0.5, 0.5, 1.5);
  const Mat3 expected = Vec3(0.5, 0.5, 2.5).asDiagonal();
  EXPECT_LT((convolve_covariance(sj, Mat3::Identity(), p).full() - expected).norm(), 1e-15);

  p.sigma = Vec3(1.0, 2.0, 3.0);  // diag(1, 4, 9)
  const Mat3 rx = quat_to_rotation(quat_from_axis_angle(Vec3::UnitX(), M_PI / 2));
  const Mat3 contribution = convolve_covariance(Sym3{}, rx, p).full();
  EXPECT_LT((contribution - Mat3(Vec3(1.0, 9.0, 4.0).asDiagonal())).norm(), 1e-12);
}

TEST(ConvolveCovariance, TraceAdditivityAndIsotropy) {
  std::mt19937_64 rng(11);
  const GaussianField f = gsvr::testing::random_field(5, rng);
  PsfModel p = build_psf(0.7, 2.5);
  PsfModel iso;
  iso.sigma = Vec3::Constant(0.9);
  for (int t = 0; t < 20; ++t) {
    const Mat3 r = gsvr::testing::random_rotation(rng);
    const Sym3 sj = f.covariance(t % 5);
    const Sym3 obs = convolve_covariance(sj, r, p);
    EXPECT_NEAR(obs.trace() - sj.trace(), p.covariance().trace(), 1e-12);
    EXPECT_LT((convolve_covariance(sj, r, iso).full() - convolve_covariance(sj, Mat3::Identity(), iso).full()).norm(),
              1e-12);
  }
}

TEST(RenderObserved, SingleGaussianAtMeanAndLinearScale) {
  GaussianField f(1);
  f.set_mean(0, Vec3(0.5, -0.2, 1.0));
  f.set_log_scale(0, Vec3(0.1, -0.3, 0.2));
  f.set_quaternion(0, identity_quat());
  f.intensities[0] = 0.8;
  const std::vector<Vec3> pts = {f.mean(0)};
  const std::vector<Mat3> rots = {Mat3::Identity()};
  const PsfModel p = build_psf(0.5, 3.0);
  const std::vector<double> one = {1.0}, two = {2.0};
  const auto v1 = render_observed(pts, rots, f, p, dense_neighbors(1, 1), one);
  EXPECT_DOUBLE_EQ(v1[0], 0.8 / (1.0 + kMixtureDelta));

  std::mt19937_64 rng(12);
  const GaussianField g = gsvr::testing::random_field(15, rng);
  std::vector<Vec3> many;
  std::vector<Mat3> rmany;
  std::uniform_real_distribution<double> u(-2, 2);
  for (int i = 0; i < 10; ++i) {
    many.emplace_back(u(rng), u(rng), u(rng));
    rmany.push_back(gsvr::testing::random_rotation(rng));
  }
  const std::vector<double> s1(10, 1.0), s2(10, 2.0);
  const auto a = render_observed(many, rmany, g, p, dense_neighbors(10, 15), s1);
  const auto b = render_observed(many, rmany, g, p, dense_neighbors(10, 15), s2);
  for (int i = 0; i < 10; ++i) EXPECT_DOUBLE_EQ(b[i], 2.0 * a[i]);
}

TEST(McOracle, SingleSampleEqualsFieldAtThatSample) {
  std::mt19937_64 rng(13);
  const GaussianField f = gsvr::testing::random_field(12, rng);
  const PsfModel p = build_psf(0.6, 2.0);
  const Vec3 x(0.3, 0.1, -0.4);
  const Mat3 r = gsvr::testing::random_rotation(rng);
  const auto samples = mc_oracle_samples(x, r, p, 1, 99);
  ASSERT_EQ(samples.size(), 1u);
  const double expected = evaluate_field(samples, f, dense_neighbors(1, f.count()))[0];
  EXPECT_DOUBLE_EQ(mc_oracle_render(x, r, f, p, 1, 99), expected);
}

TEST(McOracle, ReproducibleAndStratified) {
  const PsfModel p = build_psf(0.5, 3.0);
  const auto a = mc_oracle_samples(Vec3::Zero(), Mat3::Identity(), p, 64, 5);
  const auto b = mc_oracle_samples(Vec3::Zero(), Mat3::Identity(), p, 64, 5);
  EXPECT_EQ(a, b);
  // Latin hypercube: every axis has exactly one sample per equal-probability stratum.
  for (int axis = 0; axis < 3; ++axis) {
    std::vector<int> hits(64, 0);
    for (const Vec3& s : a) {
      const double u = 0.5 * (1.0 + std::erf(s[axis] / (std::sqrt(2.0) * p.sigma[axis])));
      ++hits[std::min(63, static_cast<int>(u * 64))];
    }
    for (int h : hits) EXPECT_EQ(h, 1);
  }
  EXPECT_THROW(mc_oracle_samples(Vec3::Zero(), Mat3::Identity(), p, 0, 1), InvalidParameter);
}

TEST(McOracle, WideGaussianAgreesWithAnalytic) {
  GaussianField f(1);
  f.set_mean(0, Vec3::Zero());
  f.set_log_scale(0, Vec3::Constant(std::log(30.0)));
  f.set_quaternion(0, identity_quat());
  f.intensities[0] = 0.6;
  const PsfModel p = build_psf(0.5, 3.0);
  const Vec3 x(1.0, -2.0, 0.5);
  const std::vector<Vec3> pts = {x};
  const std::vector<Mat3> rots = {Mat3::Identity()};
  const std::vector<double> one = {1.0};
  const double analytic = render_observed(pts, rots, f, p, dense_neighbors(1, 1), one)[0];
  const double mc = mc_oracle_render(x, Mat3::Identity(), f, p, 256, 3);
  EXPECT_LT(std::abs(mc - analytic) / analytic, 1e-3);
}

namespace {

double mean_relative_gap(double extent, double scale, double thickness, int samples) {
  std::mt19937_64 rng(14);
  const GaussianField f = gsvr::testing::random_field(50, rng, extent, scale);
  const PsfModel p = build_psf(0.5, thickness);
  std::uniform_real_distribution<double> u(-0.8 * extent, 0.8 * extent);
  double total = 0.0;
  const int n = 16;
  for (int i = 0; i < n; ++i) {
    const Vec3 x(u(rng), u(rng), u(rng));
    const Mat3 r = gsvr::testing::random_rotation(rng);
    const std::vector<Vec3> pts = {x};
    const std::vector<Mat3> rots = {r};
    const std::vector<double> one = {1.0};
    const double analytic = render_observed(pts, rots, f, p, dense_neighbors(1, f.count()), one)[0];
    const double mc = mc_oracle_render(x, r, f, p, samples, 100 + i);
    total += std::abs(analytic - mc) / std::max(std::abs(mc), 1e-3);
  }
  return total / n;
}

}  // namespace

TEST(McOracle, AgreesWithRenderForWidePrimitives) {
  EXPECT_LT(mean_relative_gap(3.0, 2.5, 1.5, 4096), 1e-2);
}

TEST(McOracle, GapShrinksAsPrimitivesWidenRelativeToPsf) {
  const double narrow = mean_relative_gap(3.0, 1.0, 3.0, 2048);
  const double medium = mean_relative_gap(3.0, 1.6, 3.0, 2048);
  const double wide = mean_relative_gap(3.0, 2.5, 3.0, 2048);
  EXPECT_GT(narrow, medium);
  EXPECT_GT(medium, wide);
}
