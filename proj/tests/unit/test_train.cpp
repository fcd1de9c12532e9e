#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "fixtures.hpp"
#include "gsvr/objective.hpp"
#include "gsvr/train.hpp"

using namespace gsvr;

namespace {

struct Problem {
  std::vector<SliceStack> stacks;
  TrainingData data;
  GaussianField field;
  SliceStates states;
  NeighborTable neighbors;
};

// Observations replaced by the field's own predictions.
Problem perfect_problem(std::uint64_t seed, std::size_t n = 10) {
  std::mt19937_64 rng(seed);
  Problem p;
  p.stacks.push_back(gsvr::testing::random_stack(4, 4, 2, rng));
  p.data = make_training_data(p.stacks, {build_psf(0.6, 1.5)});
  p.field = gsvr::testing::random_field(n, rng);
  p.states = init_states(p.stacks);
  p.neighbors = refresh_neighbors(p.data, p.field, p.states, n);
  std::vector<std::vector<double>> pred;
  ObjectiveOptions opt;
  opt.predictions = &pred;
  compute_loss(p.data, p.neighbors, p.field, p.states, LossConfig{}, opt);
  for (auto& s : p.data.slices) s.observed = pred[s.slice];
  return p;
}

void set_all_scales(GaussianField& f, double s) {
  for (double& l : f.log_scales) l = std::log(s);
}

}  // namespace

TEST(ComputeLoss, PerfectPredictionAtTargetScaleIsZero) {
  Problem p = perfect_problem(51);
  set_all_scales(p.field, 1.6);
  // Scales changed, so refresh the observations once more.
  std::vector<std::vector<double>> pred;
  ObjectiveOptions opt;
  opt.predictions = &pred;
  compute_loss(p.data, p.neighbors, p.field, p.states, LossConfig{}, opt);
  for (auto& s : p.data.slices) s.observed = pred[s.slice];
  const LossTerms t = compute_loss(p.data, p.neighbors, p.field, p.states, LossConfig{});
  EXPECT_EQ(t.total(), 0.0);
  EXPECT_EQ(t.points, 32u);
}

TEST(ComputeLoss, SingleResidual) {
  Problem p = perfect_problem(52);
  p.data.slices[1].observed.clear();
  p.data.slices[1].lifted.clear();
  p.data.slices[0].observed.resize(1);
  p.data.slices[0].lifted.resize(1);
  p.neighbors = refresh_neighbors(p.data, p.field, p.states, 10);
  p.data.slices[0].observed[0] += 0.25;
  LossConfig cfg;
  cfg.lambda_reg = 0.0;
  EXPECT_NEAR(compute_loss(p.data, p.neighbors, p.field, p.states, cfg).total(), 0.25, 1e-15);
}

TEST(ComputeLoss, RegularizerHandExample) {
  GaussianField f(1);
  f.set_mean(0, Vec3::Zero());
  f.set_log_scale(0, Vec3(std::log(1.6), std::log(1.6), std::log(2.6)));
  f.set_quaternion(0, identity_quat());
  const TrainingData empty;
  const NeighborTable nt;
  const SliceStates none;
  LossConfig cfg;  // lambda_reg 2.5e-3, s_target 1.6
  const LossTerms t = compute_loss(empty, nt, f, none, cfg);
  EXPECT_NEAR(t.reg, 2.5e-3, 1e-15);
  EXPECT_EQ(t.data, 0.0);
}

TEST(Backward, ZeroResidualWithoutRegularizerGivesZeroGradients) {
  Problem p = perfect_problem(53);
  LossConfig cfg;
  cfg.lambda_reg = 0.0;
  Gradients g;
  backward(p.data, p.neighbors, p.field, p.states, cfg, g);
  for (const auto* v : {&g.means, &g.log_scales, &g.quaternions, &g.intensities, &g.rotations,
                        &g.translations, &g.log_sigma, &g.eta}) {
    for (double x : *v) EXPECT_EQ(x, 0.0);
  }
}

TEST(Backward, TranslationGradientIsNegatedSumOfMeanGradients) {
  std::mt19937_64 rng(54);
  std::vector<SliceStack> stacks = {gsvr::testing::random_stack(5, 4, 3, rng)};
  const TrainingData data = make_training_data(stacks, {build_psf(0.6, 1.5)});
  const GaussianField f = gsvr::testing::random_field(20, rng);
  const SliceStates st = gsvr::testing::random_states(3, rng);
  const NeighborTable nt = refresh_neighbors(data, f, st, 10);
  LossConfig cfg;
  cfg.lambda_reg = 0.0;
  for (std::size_t s = 0; s < 3; ++s) {
    ObjectiveOptions opt;
    opt.slice_begin = s;
    opt.slice_end = s + 1;
    Gradients g;
    backward(data, nt, f, st, cfg, g, opt);
    Vec3 sum = Vec3::Zero();
    for (std::size_t j = 0; j < f.count(); ++j) sum += Vec3(g.means[3 * j], g.means[3 * j + 1], g.means[3 * j + 2]);
    const Vec3 gt(g.translations[3 * s], g.translations[3 * s + 1], g.translations[3 * s + 2]);
    EXPECT_GT(gt.norm(), 0.0);
    EXPECT_LT((gt + sum).norm(), 1e-10 * std::max(1.0, gt.norm()));
  }
}

TEST(Backward, PrimitiveOutsideEveryTopKGetsNoDataGradient) {
  std::mt19937_64 rng(55);
  std::vector<SliceStack> stacks = {gsvr::testing::random_stack(4, 4, 2, rng)};
  const TrainingData data = make_training_data(stacks, {build_psf(0.6, 1.5)});
  GaussianField f = gsvr::testing::random_field(12, rng);
  f.set_mean(11, Vec3(100, 100, 100));
  const SliceStates st = init_states(stacks);
  const NeighborTable nt = refresh_neighbors(data, f, st, 5);
  LossConfig cfg;
  cfg.lambda_reg = 0.0;
  Gradients g;
  backward(data, nt, f, st, cfg, g);
  for (int a = 0; a < 3; ++a) EXPECT_EQ(g.means[33 + a], 0.0);
  for (int a = 0; a < 3; ++a) EXPECT_EQ(g.log_scales[33 + a], 0.0);
  for (int a = 0; a < 4; ++a) EXPECT_EQ(g.quaternions[44 + a], 0.0);
  EXPECT_EQ(g.intensities[11], 0.0);
  double touched = 0.0;
  for (double v : g.intensities) touched += std::abs(v);
  EXPECT_GT(touched, 0.0);
}

TEST(AdamW, FirstStepHandExample) {
  std::vector<double> theta = {0.5};
  const std::vector<double> g = {1.0};
  AdamMoments m(1);
  AdamWConfig cfg;
  adamw_update(theta, g, m, 0.1, cfg);
  // m_hat = 1, v_hat = 1: step = lr / (1 + eps)
  EXPECT_NEAR(theta[0], 0.5 - 0.1 / (1.0 + cfg.eps), 1e-15);
  EXPECT_EQ(m.step, 1);
}

TEST(AdamW, ZeroGradientAndWeightDecay) {
  std::vector<double> theta = {0.5, -2.0};
  const std::vector<double> zero = {0.0, 0.0};
  AdamMoments m(2);
  AdamWConfig cfg;
  adamw_update(theta, zero, m, 0.1, cfg);
  EXPECT_EQ(theta, (std::vector<double>{0.5, -2.0}));
  cfg.weight_decay = 0.01;
  AdamMoments m2(2);
  adamw_update(theta, zero, m2, 0.1, cfg);
  EXPECT_NEAR(theta[0], 0.5 - 0.1 * 0.01 * 0.5, 1e-15);
  EXPECT_NEAR(theta[1], -2.0 + 0.1 * 0.01 * 2.0, 1e-15);
}

TEST(AdamW, SecondStepMatchesRecurrence) {
  std::vector<double> theta = {1.0};
  AdamMoments m(1);
  AdamWConfig cfg;
  adamw_update(theta, std::vector<double>{2.0}, m, 0.01, cfg);
  adamw_update(theta, std::vector<double>{-1.0}, m, 0.01, cfg);
  const double m1 = 0.1 * 2.0, v1 = 0.001 * 4.0;
  const double m2 = 0.9 * m1 + 0.1 * -1.0, v2 = 0.999 * v1 + 0.001 * 1.0;
  const double step1 = 0.01 * (m1 / 0.1) / (std::sqrt(v1 / 0.001) + cfg.eps);
  const double step2 = 0.01 * (m2 / (1 - 0.81)) / (std::sqrt(v2 / (1 - 0.999 * 0.999)) + cfg.eps);
  EXPECT_NEAR(theta[0], 1.0 - step1 - step2, 1e-14);
}

TEST(Schedule, StepDecay) {
  EXPECT_EQ(lr_at(0, 0.025), 0.025);
  EXPECT_EQ(lr_at(199, 0.025), 0.025);
  EXPECT_EQ(lr_at(200, 0.025), 0.0125);
  EXPECT_EQ(lr_at(400, 0.025), 0.025 / 4);
  EXPECT_THROW(lr_at(-1, 0.1), InvalidParameter);
}

TEST(Regularizer, PullsScalesToTarget) {
  std::mt19937_64 rng(56);
  GaussianField f = gsvr::testing::random_field(4, rng, 2.0, 1.0);
  const TrainingData empty;
  SliceStates none;
  TrainState ts(f.count(), 0);
  OptimConfig oc;
  LossConfig cfg;
  cfg.lambda_reg = 1.0;
  for (int epoch = 0; epoch < 2400; ++epoch) {
    Gradients g;
    backward(empty, ts.neighbors, f, none, cfg, g);
    adamw_step(ts, f, none, g, oc, epoch, false);
  }
  for (double l : f.log_scales) EXPECT_NEAR(std::exp(l), cfg.s_target, 1e-3);
}

TEST(Fit, SingleGaussianReproducesItsOwnRendering) {
  GaussianField gt(1);
  gt.set_mean(0, Vec3(0.2, -0.1, 0.3));
  gt.set_log_scale(0, Vec3::Constant(std::log(1.5)));
  gt.set_quaternion(0, identity_quat());
  gt.intensities[0] = 0.5;
  SliceStack stack = gsvr::testing::centered_stack(4, 4, 1, 0.5, 1.0);
  gsvr::testing::render_into(stack, gt);

  FitConfig cfg;
  cfg.init.n_gaussians = 1;
  cfg.optim.epochs = 200;
  cfg.optim.optimize_motion = false;
  cfg.optim.top_k = 1;
  const FitResult r = fit({stack}, cfg);
  double best = 1e9;
  for (const auto& h : r.history) best = std::min(best, h.loss_data);
  EXPECT_LT(best, 1e-6);
}

TEST(Fit, LossWindowsAreNonIncreasingWithoutNoise) {
  std::mt19937_64 rng(57);
  const GaussianField gt = gsvr::testing::random_field(6, rng, 2.0, 1.2);
  std::vector<SliceStack> stacks = {
      gsvr::testing::centered_stack(12, 12, 4, 0.5, 1.5),
      gsvr::testing::centered_stack(12, 12, 4, 0.5, 1.5,
                                    quat_to_rotation(quat_from_axis_angle(Vec3::UnitX(), M_PI / 2)))};
  for (SliceStack& s : stacks) gsvr::testing::render_into(s, gt);

  FitConfig cfg;
  cfg.init.n_gaussians = 60;
  cfg.init.initial_scale = 1.0;
  cfg.optim.epochs = 300;
  cfg.optim.optimize_motion = false;
  cfg.optim.top_k = 16;
  const FitResult r = fit(stacks, cfg);
  ASSERT_EQ(r.history.size(), 300u);
  double previous = 1e300;
  for (int w = 0; w < 6; ++w) {
    double mean = 0.0;
    for (int e = 50 * w; e < 50 * (w + 1); ++e) mean += r.history[static_cast<std::size_t>(e)].loss_total / 50.0;
    EXPECT_LE(mean, previous) << "window " << w;
    previous = mean;
  }
  EXPECT_LT(r.history.back().loss_data, 0.2 * r.history.front().loss_data);
}

TEST(Fit, HistoryHasOneRowPerEpochWithIncreasingClock) {
  std::mt19937_64 rng(58);
  const std::vector<SliceStack> stacks = {gsvr::testing::random_stack(6, 6, 3, rng)};
  FitConfig cfg;
  cfg.init.n_gaussians = 20;
  cfg.optim.epochs = 25;
  cfg.optim.top_k = 8;
  cfg.optim.coarse_stages.clear();
  std::vector<int> seen;
  const FitResult r = fit(stacks, cfg, {}, [&](const HistoryRecord& h) { seen.push_back(h.epoch); });
  ASSERT_EQ(r.history.size(), 25u);
  for (std::size_t e = 0; e < r.history.size(); ++e) {
    EXPECT_EQ(r.history[e].epoch, static_cast<int>(e));
    if (e > 0) EXPECT_GE(r.history[e].wall_seconds, r.history[e - 1].wall_seconds);
  }
  EXPECT_EQ(seen.size(), 25u);
  // Slice 0 anchors the gauge.
  EXPECT_EQ(r.states.get(0).rotation, identity_quat());
  EXPECT_EQ(r.states.get(0).translation, Vec3::Zero());
}

TEST(OptimConfig, Validation) {
  OptimConfig oc;
  oc.epochs = 0;
  EXPECT_THROW(oc.validate(), InvalidParameter);
  oc.epochs = 5;
  oc.lr.means = 0.0;
  EXPECT_THROW(oc.validate(), InvalidParameter);
  oc.lr.means = 0.1;
  oc.lr.motion_rotation = 0.0;  // frozen group is allowed
  EXPECT_NO_THROW(oc.validate());
  oc.coarse_stages.push_back({0, 2.0, 1.0, 10, 0.0, 0.1});
  EXPECT_THROW(oc.validate(), InvalidParameter);
}

TEST(ScoreField, RequiresMask) {
  std::mt19937_64 rng(60);
  const GaussianField f = gsvr::testing::random_field(5, rng);
  VolumeGrid g = VolumeGrid::centered(8, 0.5);
  EXPECT_THROW(score_field(f, g, 3), InvalidParameter);
}
