#include "rmnerf/toy_benchmark.h"

#include <filesystem>
#include <set>
#include <stdexcept>

#include <gtest/gtest.h>

#include "rmnerf/motion_averaging.h"

namespace rmnerf {
namespace {

ToyBenchmarkSpec Spec() {
  ToyBenchmarkSpec spec;
  spec.rig.num_cameras = 8;
  spec.rig.base_size = 8;
  spec.num_heldout = 2;
  spec.seed = 4;
  return spec;
}

TEST(ToyBenchmarkTest, SplitsCameras) {
  const ToyBenchmark b = BuildToyBenchmark(DefaultScene(), Spec());
  EXPECT_EQ(b.rig.num_cameras(), 10);
  EXPECT_EQ(b.train_cameras.size(), 8u);
  EXPECT_EQ(b.heldout_cameras, (std::vector<int>{4, 9}));
  std::set<int> all(b.train_cameras.begin(), b.train_cameras.end());
  all.insert(b.heldout_cameras.begin(), b.heldout_cameras.end());
  EXPECT_EQ(all.size(), 10u);
  EXPECT_EQ(b.problem.initial_poses.size(), 8u);
  EXPECT_EQ(b.problem.views.size(), 16u);
  EXPECT_EQ(b.heldout_images.size(), 4u);
  EXPECT_EQ(b.heldout_poses.size(), 4u);
  EXPECT_NO_THROW(b.problem.Validate());
}

TEST(ToyBenchmarkTest, PerturbationKeepsCentersAndMatchesSigma) {
  const ToyBenchmark b = BuildToyBenchmark(DefaultScene(), Spec());
  ASSERT_TRUE(b.problem.ground_truth.has_value());
  const auto& gt = *b.problem.ground_truth;
  for (std::size_t k = 0; k < gt.size(); ++k) {
    EXPECT_LT((gt[k].Center() - b.problem.initial_poses[k].Center()).norm(), 1e-12);
    EXPECT_GT(GeodesicAngle(gt[k].rotation, b.problem.initial_poses[k].rotation), 0.0);
  }
  const auto truth = PoseRotations(gt);
  // Edge noise is small, so the spanning tree beats the perturbed poses.
  EXPECT_LT(MeanAngularError(SpanningTreeInit(b.problem.graph), truth),
            MeanAngularError(PoseRotations(b.problem.initial_poses), truth));
}

TEST(ToyBenchmarkTest, GraphHasRingAndIsDeterministic) {
  const ToyBenchmark a = BuildToyBenchmark(DefaultScene(), Spec());
  const ToyBenchmark c = BuildToyBenchmark(DefaultScene(), Spec());
  EXPECT_EQ(ViewGraphToJson(a.problem.graph), ViewGraphToJson(c.problem.graph));
  EXPECT_EQ(a.problem.views[3].image.data(), c.problem.views[3].image.data());
  std::set<std::pair<int, int>> pairs;
  for (const Edge& e : a.problem.graph.edges()) pairs.insert({std::min(e.i, e.j), std::max(e.i, e.j)});
  for (int k = 0; k + 1 < 8; ++k) EXPECT_TRUE(pairs.count({k, k + 1})) << k;
  EXPECT_GE(pairs.size(), 8u);
}

TEST(ToyBenchmarkTest, RejectsBadSpecs) {
  ToyBenchmarkSpec s = Spec();
  s.num_heldout = 0;
  EXPECT_THROW(BuildToyBenchmark(DefaultScene(), s), std::invalid_argument);
  s = Spec();
  s.pose_sigma = -1;
  EXPECT_THROW(BuildToyBenchmark(DefaultScene(), s), std::invalid_argument);
  s = Spec();
  s.edge_probability = 1.5;
  EXPECT_THROW(BuildToyBenchmark(DefaultScene(), s), std::invalid_argument);
}

TEST(AlignToEstimateTest, UndoesAGlobalRotation) {
  const ToyBenchmark b = BuildToyBenchmark(DefaultScene(), Spec());
  const auto truth = PoseRotations(*b.problem.ground_truth);
  const UnitQuaternion a = ExpMap(AxisAngle(0.2, -0.4, 0.3));
  std::vector<UnitQuaternion> est;
  for (const UnitQuaternion& q : truth) est.push_back(q * a);
  const auto aligned = AlignToEstimate(b.heldout_poses, est, truth);
  const RotationMatrix am = QuatToMatrix(a);
  for (std::size_t k = 0; k < aligned.size(); ++k) {
    const CameraPose& p = b.heldout_poses[k];
    EXPECT_LT(GeodesicAngle(aligned[k].rotation, p.rotation * am), 1e-9);
    EXPECT_LT((aligned[k].Center() - am.matrix().transpose() * p.Center()).norm(), 1e-9);
    // The camera sees the rotated world exactly as before.
    const Vec3 x(0.3, -0.2, 0.1);
    EXPECT_LT((aligned[k].ToCamera(am.matrix().transpose() * x) - p.ToCamera(x)).norm(), 1e-9);
  }
  EXPECT_THROW(AlignToEstimate(b.heldout_poses, est, {truth[0]}), std::invalid_argument);
}

TEST(ToyBenchmarkIoTest, SaveLoadRoundTrip) {
  const ToyBenchmark b = BuildToyBenchmark(DefaultScene(), Spec());
  const auto dir = std::filesystem::temp_directory_path() / "rmnerf_toy_io";
  std::filesystem::remove_all(dir);
  SaveToyBenchmark(b, Spec(), dir.string(), {{"note", "x"}});
  EXPECT_TRUE(std::filesystem::exists(dir / "images" / "train_c0_s2.png"));
  const ToyBenchmark c = LoadToyBenchmark(dir.string());
  EXPECT_EQ(c.train_cameras, b.train_cameras);
  EXPECT_EQ(c.heldout_cameras, b.heldout_cameras);
  ASSERT_EQ(c.problem.views.size(), b.problem.views.size());
  for (std::size_t k = 0; k < b.problem.views.size(); ++k) {
    EXPECT_EQ(c.problem.views[k].scale, b.problem.views[k].scale);
    EXPECT_EQ(c.problem.views[k].intrinsics.width, b.problem.views[k].intrinsics.width);
    EXPECT_GT(Psnr(c.problem.views[k].image, b.problem.views[k].image), 90.0);
  }
  for (std::size_t k = 0; k < b.problem.initial_poses.size(); ++k) {
    EXPECT_LT(GeodesicAngle(c.problem.initial_poses[k].rotation, b.problem.initial_poses[k].rotation),
              1e-12);
  }
  EXPECT_EQ(c.heldout_images.size(), b.heldout_images.size());
  EXPECT_EQ(ViewGraphToJson(c.problem.graph), ViewGraphToJson(b.problem.graph));
  std::filesystem::remove(dir / "graph.json");
  EXPECT_THROW(LoadToyBenchmark(dir.string()), std::runtime_error);
  std::filesystem::remove_all(dir);
  EXPECT_THROW(LoadToyBenchmark(dir.string()), std::runtime_error);
}

}  // namespace
}  // namespace rmnerf
