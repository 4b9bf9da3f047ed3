#include "rmnerf/joint_optimizer.h"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include <gtest/gtest.h>

#include "rmnerf/toy_benchmark.h"

namespace rmnerf {
namespace {

ToyBenchmark Tiny(std::uint64_t seed = 1) {
  ToyBenchmarkSpec spec;
  spec.rig.num_cameras = 4;
  spec.rig.base_size = 8;
  spec.num_heldout = 1;
  spec.seed = seed;
  return BuildToyBenchmark(DefaultScene(), spec);
}

TrainConfig TinyConfig() {
  TrainConfig cfg;
  cfg.hidden = 8;
  cfg.latent = 4;
  cfg.L_octaves = 3;
  cfg.dir_octaves = 1;
  cfg.batch_rays = 8;
  cfg.num_samples = 6;
  cfg.epochs = 10;
  return cfg.Resolved();
}

RefinerParams TinyRefiner() {
  RefinerConfig rc;
  rc.rounds = 2;
  rc.hidden = 4;
  return RefinerParams::Random(rc, 3, 0.2);
}

TEST(LambdaScheduleTest, DefaultsFromEpochCount) {
  TrainConfig cfg;
  cfg.epochs = 100;
  const TrainConfig r = cfg.Resolved();
  EXPECT_EQ(r.warmup_epochs, 20);
  EXPECT_DOUBLE_EQ(r.decay_k, std::numbers::ln2 / 10.0);
  EXPECT_EQ(LambdaSchedule(0, r), 1.0);
  EXPECT_EQ(LambdaSchedule(19, r), 1.0);
  EXPECT_DOUBLE_EQ(LambdaSchedule(20, r), 1.0);
  EXPECT_NEAR(LambdaSchedule(25, r), std::exp(-0.5 * std::numbers::ln2), 1e-15);
  // Half-life of ten epochs reaches the 0.5 floor at epoch 30.
  EXPECT_NEAR(LambdaSchedule(30, r), 0.5, 1e-15);
  EXPECT_EQ(LambdaSchedule(99, r), 0.5);
}

TEST(LambdaScheduleTest, MonotoneAndBounded) {
  TrainConfig cfg;
  cfg.epochs = 237;
  cfg.lambda_floor = 0.3;
  const TrainConfig r = cfg.Resolved();
  double prev = 1.0;
  for (int e = 0; e < r.epochs; ++e) {
    const double l = LambdaSchedule(e, r);
    EXPECT_LE(l, prev);
    EXPECT_GE(l, 0.3);
    EXPECT_LE(l, 1.0);
    prev = l;
  }
  EXPECT_THROW(LambdaSchedule(-1, r), std::invalid_argument);
  cfg.fixed_lambda = 0.5;
  EXPECT_EQ(LambdaSchedule(0, cfg.Resolved()), 0.5);
}

TEST(LambdaScheduleTest, RejectsBadConfigs) {
  TrainConfig cfg;
  cfg.lambda_floor = 1.0;
  EXPECT_THROW(cfg.Resolved(), std::invalid_argument);
  cfg = {};
  cfg.fixed_lambda = 1.5;
  EXPECT_THROW(cfg.Resolved(), std::invalid_argument);
  cfg = {};
  cfg.epochs = 0;
  EXPECT_THROW(cfg.Resolved(), std::invalid_argument);
  cfg = {};
  cfg.dir_octaves = 7;
  EXPECT_THROW(cfg.Resolved(), std::invalid_argument);
}

TEST(AnnealProgressTest, LinearAfterWarmup) {
  TrainConfig cfg;
  cfg.epochs = 101;
  cfg.warmup_epochs = 20;
  const TrainConfig r = cfg.Resolved();
  EXPECT_EQ(AnnealProgress(0, r), 0.0);
  EXPECT_EQ(AnnealProgress(19, r), 0.0);
  EXPECT_EQ(AnnealProgress(20, r), 0.0);
  EXPECT_DOUBLE_EQ(AnnealProgress(60, r), 3.0);
  EXPECT_DOUBLE_EQ(AnnealProgress(100, r), 6.0);
}

TEST(SampleBatchTest, DeterministicAndMatchesImages) {
  const ToyBenchmark b = Tiny();
  const RayBatch a = SampleBatch(b.problem, 20, 5, 3);
  const RayBatch c = SampleBatch(b.problem, 20, 5, 3);
  const RayBatch d = SampleBatch(b.problem, 20, 5, 4);
  ASSERT_EQ(a.pixel.size(), 20u);
  EXPECT_EQ(a.target, c.target);
  EXPECT_NE(a.target, d.target);
  for (std::size_t r = 0; r < a.pixel.size(); ++r) {
    const TrainView& v = b.problem.views[a.view[r]];
    const int x = static_cast<int>(std::floor(a.pixel[r].x()));
    const int y = static_cast<int>(std::floor(a.pixel[r].y()));
    EXPECT_EQ(a.target.col(r), v.image.Pixel(x, y));
  }
}

TEST(CombinedLossTest, LambdaBlendsTheTerms) {
  const ToyBenchmark b = Tiny();
  const TrainConfig cfg = TinyConfig();
  const JointState s = InitJointState(b.problem, cfg, TinyRefiner());
  const RayBatch batch = SampleBatch(b.problem, cfg.batch_rays, 1, 0);
  const LossValue one = CombinedLoss(s, batch, b.problem, cfg, 1.0, 2.0);
  const LossValue zero = CombinedLoss(s, batch, b.problem, cfg, 0.0, 2.0);
  const LossValue mid = CombinedLoss(s, batch, b.problem, cfg, 0.3, 2.0);
  EXPECT_DOUBLE_EQ(one.total, one.mra);
  EXPECT_DOUBLE_EQ(zero.total, zero.rgb);
  EXPECT_NEAR(mid.total, 0.3 * mid.mra + 0.7 * mid.rgb, 1e-12);
  EXPECT_GT(mid.rgb, 0.0);
}

TEST(CombinedLossTest, GradientMatchesFiniteDifferences) {
  const ToyBenchmark b = Tiny();
  const TrainConfig cfg = TinyConfig();
  JointState s = InitJointState(b.problem, cfg, TinyRefiner());
  const RayBatch batch = SampleBatch(b.problem, 4, 2, 0);
  const double lambda = 0.6, t = 1.7;
  JointGradients g;
  CombinedLossAndGradient(s, batch, b.problem, cfg, lambda, t, &g);
  const auto loss = [&] { return CombinedLoss(s, batch, b.problem, cfg, lambda, t).total; };
  const double h = 1e-6;
  double worst = 0.0;
  const auto check = [&](double& x, double analytic) {
    const double orig = x;
    x = orig + h;
    const double up = loss();
    x = orig - h;
    const double dn = loss();
    x = orig;
    const double fd = (up - dn) / (2 * h);
    worst = std::max(worst, std::abs(fd - analytic) / std::max(1e-3, std::abs(fd)));
  };
  for (std::size_t k = 0; k < s.params.field.params().size(); ++k) {
    auto& m = s.params.field.params()[k];
    for (Eigen::Index i = 0; i < m.size(); i += 7) check(m(i), g.field[k](i));
  }
  for (std::size_t k = 0; k < s.params.refiner.weights.size(); ++k) {
    auto& m = s.params.refiner.weights[k];
    for (Eigen::Index i = 0; i < m.size(); i += 5) check(m(i), g.refiner[k](i));
  }
  for (Eigen::Index i = 0; i < s.params.centers.size(); ++i) check(s.params.centers(i), g.centers(i));
  for (int i = 0; i < 3; ++i) check(s.params.anchor_omega(i), g.anchor_omega(i));
  EXPECT_LT(worst, 1e-4);
}

TEST(CombinedLossTest, LambdaOneIgnoresTheField) {
  const ToyBenchmark b = Tiny();
  const TrainConfig cfg = TinyConfig();
  const JointState s = InitJointState(b.problem, cfg, TinyRefiner());
  const RayBatch batch = SampleBatch(b.problem, 6, 4, 0);
  JointGradients g;
  CombinedLossAndGradient(s, batch, b.problem, cfg, 1.0, 2.0, &g);
  for (const auto& m : g.field) EXPECT_EQ(m.cwiseAbs().maxCoeff(), 0.0);
  double refiner_norm = 0.0;
  for (const auto& m : g.refiner) refiner_norm += m.squaredNorm();
  EXPECT_GT(refiner_norm, 0.0);
  // L_mra does not see the centers.
  EXPECT_EQ(g.centers.cwiseAbs().maxCoeff(), 0.0);
}

TEST(CombinedLossTest, LambdaZeroReachesTheRefinerThroughPoses) {
  const ToyBenchmark b = Tiny();
  const TrainConfig cfg = TinyConfig();
  const JointState s = InitJointState(b.problem, cfg, TinyRefiner());
  const RayBatch batch = SampleBatch(b.problem, 6, 4, 0);
  JointGradients g;
  const LossValue v = CombinedLossAndGradient(s, batch, b.problem, cfg, 0.0, 2.0, &g);
  EXPECT_EQ(v.total, v.rgb);
  double refiner_norm = 0.0;
  for (const auto& m : g.refiner) refiner_norm += m.squaredNorm();
  EXPECT_GT(refiner_norm, 0.0);
  // With poses frozen nothing reaches the refiner at all.
  TrainConfig frozen = cfg;
  frozen.freeze_poses = true;
  JointGradients gf;
  CombinedLossAndGradient(s, batch, b.problem, frozen, 0.0, 2.0, &gf);
  for (const auto& m : gf.refiner) EXPECT_EQ(m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(), 0.0);
}

TEST(CombinedLossTest, ConstructedFixedPointHasZeroLoss) {
  // Noise-free poses and graph, an opaque constant-color field, and images of
  // that color.
  ToyBenchmarkSpec spec;
  spec.rig.num_cameras = 4;
  spec.rig.base_size = 8;
  spec.num_heldout = 1;
  spec.pose_sigma = 0.0;
  spec.edge_sigma = 0.0;
  spec.seed = 6;
  ToyBenchmark b = BuildToyBenchmark(DefaultScene(), spec);
  const Eigen::Vector3d color(0.2, 0.5, 0.7);
  for (TrainView& v : b.problem.views) {
    for (int y = 0; y < v.image.height(); ++y) {
      for (int x = 0; x < v.image.width(); ++x) v.image.SetPixel(x, y, color);
    }
  }
  const TrainConfig cfg = TinyConfig();
  JointState s = InitJointState(b.problem, cfg, RefinerParams::Zeros({}));
  auto& w = s.params.field.params();
  for (auto& m : w) m.setZero();
  w[5](0) = 400.0;  // density logit
  w[7] = (color.array() / (1.0 - color.array())).log().matrix();
  const RayBatch batch = SampleBatch(b.problem, 16, 2, 0);
  const LossValue v = CombinedLoss(s, batch, b.problem, cfg, 0.5, 3.0);
  EXPECT_LT(v.rgb, 1e-6);
  EXPECT_LT(v.mra, 1e-6);
}

TEST(TrainJointTest, ZeroNoiseDoesNoHarm) {
  ToyBenchmarkSpec spec;
  spec.rig.num_cameras = 4;
  spec.rig.base_size = 8;
  spec.num_heldout = 1;
  spec.pose_sigma = 0.0;
  spec.edge_sigma = 0.0;
  spec.seed = 8;
  const ToyBenchmark b = BuildToyBenchmark(DefaultScene(), spec);
  TrainConfig cfg = TinyConfig();
  cfg.epochs = 30;
  cfg = cfg.Resolved();
  const JointState s = TrainJoint(b.problem, cfg, RefinerParams::Zeros({}));
  const auto truth = PoseRotations(*b.problem.ground_truth);
  const double before = ComputePoseErrors(PoseRotations(b.problem.initial_poses), truth).mean;
  const double after = ComputePoseErrors(EstimatedRotations(s, b.problem, cfg), truth).mean;
  EXPECT_LT(before, 1e-12);
  EXPECT_LE(after, before + 1e-3);
}

TEST(InitJointStateTest, AnchorRecoversInitialRotations) {
  const ToyBenchmark b = Tiny(2);
  const TrainConfig cfg = TinyConfig();
  const JointState s = InitJointState(b.problem, cfg, RefinerParams::Zeros({}));
  const auto est = EstimatedRotations(s, b.problem, cfg);
  const auto init = PoseRotations(b.problem.initial_poses);
  ASSERT_EQ(est.size(), init.size());
  // Refiner output comes from relative measurements, so it only matches the
  // initial poses up to measurement noise.
  for (std::size_t k = 0; k < est.size(); ++k) EXPECT_LT(GeodesicAngle(est[k], init[k]), 0.5);
  const auto poses = EstimatedPoses(s, b.problem, cfg);
  for (std::size_t k = 0; k < poses.size(); ++k) {
    EXPECT_LT((poses[k].Center() - b.problem.initial_poses[k].Center()).norm(), 1e-12);
  }
}

TEST(TrainJointTest, ShortRunIsFiniteAndDeterministic) {
  const ToyBenchmark b = Tiny();
  const TrainConfig cfg = TinyConfig();
  int calls = 0;
  const JointState a = TrainJoint(b.problem, cfg, TinyRefiner(), [&](const EpochMetrics&) { ++calls; });
  EXPECT_EQ(calls, cfg.epochs);
  ASSERT_EQ(a.history.size(), static_cast<std::size_t>(cfg.epochs));
  EXPECT_EQ(a.history.front().lambda, 1.0);
  for (const EpochMetrics& m : a.history) {
    EXPECT_TRUE(std::isfinite(m.l_rgb));
    EXPECT_TRUE(std::isfinite(m.mean_rot_err_rad));
  }
  const JointState c = TrainJoint(b.problem, cfg, TinyRefiner());
  EXPECT_EQ(MetricsCsv(a.history), MetricsCsv(c.history));
  EXPECT_EQ(MetricsCsv(a.history).substr(0, 52),
            "epoch,lambda,anneal_t,L_rgb,L_mra,mean_rot_err_rad,p");
}

TEST(TrainJointTest, FrozenPosesStayPut) {
  const ToyBenchmark b = Tiny();
  TrainConfig cfg = TinyConfig();
  cfg.freeze_poses = true;
  const JointState s = TrainJoint(b.problem, cfg, TinyRefiner());
  const auto est = EstimatedRotations(s, b.problem, cfg);
  const auto init = PoseRotations(b.problem.initial_poses);
  for (std::size_t k = 0; k < est.size(); ++k) EXPECT_LT(GeodesicAngle(est[k], init[k]), 1e-12);
}

TEST(PoseErrorTest, MeanAndMedian) {
  const std::vector<UnitQuaternion> truth = {UnitQuaternion::Identity(), ExpMap(AxisAngle(0, 0, 0.5)),
                                             ExpMap(AxisAngle(0.2, 0, 0))};
  std::vector<UnitQuaternion> est = truth;
  est[1] = ExpMap(AxisAngle(0, 0, 0.6));
  est[2] = ExpMap(AxisAngle(0.5, 0, 0));
  const PoseErrorReport r = ComputePoseErrors(est, truth);
  EXPECT_NEAR(r.per_camera[1], 0.1, 1e-12);
  EXPECT_NEAR(r.per_camera[2], 0.3, 1e-12);
  EXPECT_NEAR(r.mean, 0.4 / 3, 1e-12);
  EXPECT_NEAR(r.median, 0.1, 1e-12);
}

}  // namespace
}  // namespace rmnerf
