#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>

#include "fixtures.hpp"
#include "gsvr/init.hpp"

using namespace gsvr;

namespace {

SliceStack flat_stack(int nx, int ny, int n_slices, float value) {
  SliceStack s;
  s.nx = nx;
  s.ny = ny;
  s.n_slices = n_slices;
  s.inplane_spacing = 0.5;
  s.thickness = 3.0;
  s.affine = Vec4(0.5, 0.5, 3.0, 1.0).asDiagonal();
  s.data.assign(s.size(), value);
  s.mask.assign(s.size(), 1);
  return s;
}

}  // namespace

TEST(GradientMagnitude, ConstantSliceIsZero) {
  const SliceStack s = flat_stack(6, 5, 2, 0.4f);
  for (float g : gradient_magnitude(s)) EXPECT_EQ(g, 0.0f);
}

TEST(GradientMagnitude, StepEdgeGivesHalfHeight) {
  SliceStack s = flat_stack(8, 6, 1, 0.0f);
  const float h = 0.8f;
  for (int j = 0; j < s.ny; ++j) {
    for (int i = 4; i < s.nx; ++i) s.data[s.index(i, j, 0)] = h;
  }
  const auto g = gradient_magnitude(s);
  for (int j = 0; j < s.ny; ++j) {
    EXPECT_FLOAT_EQ(g[s.index(3, j, 0)], h / 2);
    EXPECT_FLOAT_EQ(g[s.index(4, j, 0)], h / 2);
    EXPECT_EQ(g[s.index(1, j, 0)], 0.0f);
    EXPECT_EQ(g[s.index(6, j, 0)], 0.0f);
  }
}

TEST(GradientMagnitude, IndependentOfAffineAndZeroOutsideMask) {
  std::mt19937_64 rng(41);
  SliceStack a = gsvr::testing::random_stack(6, 6, 2, rng);
  SliceStack b = a;
  b.affine = Vec4(0.5, 0.5, 3.0, 1.0).asDiagonal();
  EXPECT_EQ(gradient_magnitude(a), gradient_magnitude(b));
  a.mask[7] = 0;
  EXPECT_EQ(gradient_magnitude(a)[7], 0.0f);
}

TEST(SampleInit, UniformMixPassesChiSquare) {
  const SliceStack s = flat_stack(10, 10, 1, 0.5f);
  InitConfig cfg;
  cfg.n_gaussians = 100000;
  cfg.lambda_init = 1.0;
  cfg.seed = 42;
  const InitSamples out = sample_init_positions({s}, cfg);
  std::vector<double> counts(100, 0.0);
  for (const PixelRef& r : out.sources) counts[static_cast<std::size_t>(r.i + 10 * r.j)] += 1.0;
  const double expected = 1000.0;
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  const boost::math::chi_squared dist(99);
  EXPECT_LT(chi2, boost::math::quantile(dist, 0.99));
}

TEST(SampleInit, SingleEdgePixelTakesAllDraws) {
  // Only one masked pixel sees a nonzero central difference.
  SliceStack s = flat_stack(5, 5, 1, 0.0f);
  s.data[s.index(4, 4, 0)] = 1.0f;
  s.mask.assign(s.size(), 0);
  s.mask[s.index(3, 4, 0)] = 1;  // neighbor of the bright pixel
  s.mask[s.index(0, 0, 0)] = 1;
  s.mask[s.index(1, 1, 0)] = 1;
  InitConfig cfg;
  cfg.n_gaussians = 500;
  cfg.lambda_init = 0.0;
  const InitSamples out = sample_init_positions({s}, cfg);
  EXPECT_FALSE(out.uniform_fallback);
  for (const PixelRef& r : out.sources) {
    EXPECT_EQ(r.i, 3);
    EXPECT_EQ(r.j, 4);
  }
}

TEST(SampleInit, ZeroGradientFallsBackToUniform) {
  const SliceStack s = flat_stack(4, 4, 1, 0.3f);
  InitConfig cfg;
  cfg.n_gaussians = 50;
  const InitSamples out = sample_init_positions({s}, cfg);
  EXPECT_TRUE(out.uniform_fallback);
  EXPECT_EQ(out.positions.size(), 50u);
}

TEST(SampleInit, JitterStaysInsidePixelFootprint) {
  std::mt19937_64 rng(43);
  const SliceStack s = gsvr::testing::random_stack(6, 6, 3, rng);
  InitConfig cfg;
  cfg.n_gaussians = 2000;
  const InitSamples out = sample_init_positions({s}, cfg);
  const Mat4 inv = s.affine.inverse();
  for (std::size_t n = 0; n < out.positions.size(); ++n) {
    const Vec3& x = out.positions[n];
    const Vec4 idx = inv * Vec4(x.x(), x.y(), x.z(), 1.0);
    EXPECT_LE(std::abs(idx.x() - out.sources[n].i), 0.5 + 1e-9);
    EXPECT_LE(std::abs(idx.y() - out.sources[n].j), 0.5 + 1e-9);
    EXPECT_LE(std::abs(idx.z() - out.sources[n].slice), 0.5 + 1e-9);
  }
  cfg.jitter = false;
  const InitSamples exact = sample_init_positions({s}, cfg);
  for (std::size_t n = 0; n < 20; ++n) {
    const PixelRef& r = exact.sources[n];
    EXPECT_LT((exact.positions[n] - lift_pixel(s, r.slice, Vec2(r.i, r.j))).norm(), 1e-12);
  }
}

TEST(InitField, IntensitiesScalesAndDeterminism) {
  SliceStack s = flat_stack(6, 6, 2, 0.7f);
  s.data[s.index(2, 2, 1)] = 0.9f;  // some gradient so the gradient path is used
  InitConfig cfg;
  cfg.n_gaussians = 300;
  cfg.seed = 9;
  s.mask.assign(s.size(), 0);
  for (int i = 0; i < 6; ++i) s.mask[s.index(i, 0, 0)] = 1;  // all masked pixels hold 0.7
  s.data[s.index(1, 0, 0)] = 0.7f;
  s.data[s.index(2, 1, 0)] = 0.2f;  // unmasked neighbor creates gradient
  const InitSamples a = sample_init_positions({s}, cfg);
  const GaussianField f = init_field(a, {s}, cfg);
  for (double c : f.intensities) EXPECT_FLOAT_EQ(static_cast<float>(c), 0.7f);
  for (double l : f.log_scales) EXPECT_NEAR(std::exp(l), 1.6, 1e-12);
  for (std::size_t j = 0; j < f.count(); ++j) EXPECT_EQ(f.quaternion(j), identity_quat());

  const GaussianField g = init_field(sample_init_positions({s}, cfg), {s}, cfg);
  EXPECT_EQ(f.means, g.means);
  EXPECT_EQ(f.intensities, g.intensities);
}

TEST(InitConfig, Validation) {
  InitConfig cfg;
  cfg.n_gaussians = 0;
  EXPECT_THROW(cfg.validate(), InvalidParameter);
  cfg.n_gaussians = 10;
  cfg.lambda_init = 1.5;
  EXPECT_THROW(cfg.validate(), InvalidParameter);
  cfg.lambda_init = 0.0;
  cfg.initial_scale = 0.0;
  EXPECT_THROW(cfg.validate(), InvalidParameter);
}
