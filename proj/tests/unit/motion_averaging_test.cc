#include "rmnerf/motion_averaging.h"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include <gtest/gtest.h>

#include "rmnerf/random.h"

namespace rmnerf {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

ViewGraph Noisy(int n, double p, std::uint64_t seed, double sigma, double outliers) {
  NoiseSpec ns;
  ns.rotation_sigma = sigma;
  ns.outlier_fraction = outliers;
  ns.seed = seed + 1000;
  return PerturbEdges(GenerateSyntheticGraph(n, p, seed), ns);
}

TEST(RobustLossTest, KnownValues) {
  EXPECT_DOUBLE_EQ(RobustLoss::L2().Rho(0.3), 0.045);
  const RobustLoss h = RobustLoss::Huber(0.1);
  EXPECT_DOUBLE_EQ(h.Rho(0.05), 0.00125);
  EXPECT_DOUBLE_EQ(h.Rho(0.3), 0.1 * (0.3 - 0.05));
  const RobustLoss gm = RobustLoss::GemanMcClure(0.2);
  EXPECT_DOUBLE_EQ(gm.Rho(0.2), 0.04 * 0.04 / (2 * 0.08));
  EXPECT_NEAR(gm.Rho(1e6), 0.02, 1e-9);
}

TEST(RobustLossTest, AgreeNearZeroAndWeightsAreDerivatives) {
  for (const RobustLoss& l : {RobustLoss::L2(), RobustLoss::Huber(0.1), RobustLoss::GemanMcClure(0.3)}) {
    EXPECT_NEAR(l.Rho(1e-4), 0.5e-8, 1e-14) << l.Name();
    EXPECT_TRUE(std::isfinite(l.Weight(0.0)));
    EXPECT_NEAR(l.Weight(0.0), 1.0, 1e-12);
    for (double t : {0.01, 0.08, 0.12, 0.5, 2.0}) {
      const double h = 1e-6;
      const double deriv = (l.Rho(t + h) - l.Rho(t - h)) / (2 * h);
      EXPECT_NEAR(l.Weight(t) * t, deriv, 1e-7) << l.Name() << " " << t;
    }
  }
}

TEST(RobustLossTest, HuberIsContinuousAtDelta) {
  const RobustLoss h = RobustLoss::Huber(0.25);
  EXPECT_NEAR(h.Rho(0.25 - 1e-12), h.Rho(0.25 + 1e-12), 1e-12);
}

TEST(RobustLossTest, ParseAndReject) {
  EXPECT_EQ(ParseRobustLoss("l2").kind, LossKind::kL2);
  const RobustLoss h = ParseRobustLoss("huber:0.1");
  EXPECT_EQ(h.kind, LossKind::kHuber);
  EXPECT_DOUBLE_EQ(h.scale, 0.1);
  EXPECT_EQ(ParseRobustLoss("gm:0.5").kind, LossKind::kGemanMcClure);
  EXPECT_EQ(ParseRobustLoss(h.Name()).scale, 0.1);
  EXPECT_THROW(ParseRobustLoss("cauchy:1"), std::invalid_argument);
  EXPECT_THROW(ParseRobustLoss("huber:-1"), std::invalid_argument);
  EXPECT_THROW(ParseRobustLoss("huber:x"), std::invalid_argument);
  EXPECT_THROW(RobustLoss::GemanMcClure(0.0), std::invalid_argument);
}

TEST(IrlsTest, NoiselessGraphIsExact) {
  const ViewGraph g = GenerateSyntheticGraph(15, 0.4, 3);
  const IrlsResult r = IrlsRotationAverage(g, RobustLoss::L2());
  EXPECT_TRUE(r.converged);
  EXPECT_LT(MeanAngularError(r.rotations, g.GaugedGroundTruth()), 1e-9);
  EXPECT_EQ(r.rotations[0], UnitQuaternion::Identity());
}

TEST(IrlsTest, ObjectiveNeverIncreases) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ViewGraph g = Noisy(20, 0.3, seed, 3 * kDeg, 0.2);
    for (const RobustLoss& loss : {RobustLoss::L2(), RobustLoss::Huber(0.1), RobustLoss::GemanMcClure(0.2)}) {
      const IrlsResult r = IrlsRotationAverage(g, loss);
      ASSERT_GE(r.objective.size(), 1u);
      for (std::size_t k = 1; k < r.objective.size(); ++k) {
        EXPECT_LE(r.objective[k], r.objective[k - 1] * (1 + 1e-12));
      }
      EXPECT_NEAR(r.objective.back(), RotationAveragingObjective(g, r.rotations, loss),
                  1e-9 * (1 + r.objective.back()));
    }
  }
}

TEST(IrlsTest, ImprovesOnSpanningTreeUnderNoise) {
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ViewGraph g = Noisy(20, 0.4, seed, 5 * kDeg, 0.0);
    const auto gt = g.GaugedGroundTruth();
    const double tree = MeanAngularError(SpanningTreeInit(g), gt);
    const double irls = MeanAngularError(IrlsRotationAverage(g, RobustLoss::L2()).rotations, gt);
    if (irls < tree) ++wins;
  }
  EXPECT_GE(wins, 9);
}

TEST(IrlsTest, RobustLossResistsOutliers) {
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ViewGraph g = Noisy(20, 0.4, seed, 2 * kDeg, 0.2);
    const auto gt = g.GaugedGroundTruth();
    const double l2 = MeanAngularError(IrlsRotationAverage(g, RobustLoss::L2()).rotations, gt);
    const double hub = MeanAngularError(IrlsRotationAverage(g, RobustLoss::Huber(0.1)).rotations, gt);
    if (hub < l2) ++wins;
  }
  EXPECT_GE(wins, 8);
}

TEST(IrlsTest, StartsFromGivenInitAndIsDeterministic) {
  const ViewGraph g = Noisy(12, 0.5, 4, 2 * kDeg, 0.0);
  const auto gt = g.GaugedGroundTruth();
  const IrlsResult a = IrlsRotationAverage(g, RobustLoss::L2());
  const IrlsResult b = IrlsRotationAverage(g, RobustLoss::L2());
  EXPECT_EQ(a.rotations, b.rotations);
  IrlsOptions one;
  one.max_iters = 0;
  const IrlsResult c = IrlsRotationAverage(g, RobustLoss::L2(), one, &gt);
  for (std::size_t v = 0; v < gt.size(); ++v) EXPECT_LT(QuatDistance(c.rotations[v], gt[v]), 1e-14);
  EXPECT_EQ(c.iterations, 0);
  EXPECT_FALSE(c.converged);
}

TEST(TranslationSolveTest, RecoversExactTranslations) {
  const ViewGraph g = GenerateSyntheticGraph(8, 0.6, 2);
  std::vector<RotationMatrix> rots;
  for (const UnitQuaternion& q : g.GaugedGroundTruth()) rots.push_back(QuatToMatrix(q));
  std::vector<Vec3> t(8, Vec3::Zero());
  const CounterRng rng(5, 0);
  for (int v = 1; v < 8; ++v) t[v] = Vec3(rng.Normal(3 * v), rng.Normal(3 * v + 1), rng.Normal(3 * v + 2));
  std::vector<TranslationEdge> edges;
  for (const Edge& e : g.edges()) {
    const Mat3 rij = rots[e.j].matrix() * rots[e.i].matrix().transpose();
    edges.push_back({e.i, e.j, t[e.j] - rij * t[e.i]});
  }
  const std::vector<Vec3> sol = TranslationSolve(rots, edges);
  for (int v = 0; v < 8; ++v) EXPECT_LT((sol[v] - t[v]).norm(), 1e-10);
}

TEST(TranslationSolveTest, RankDeficientThrows) {
  std::vector<RotationMatrix> rots(3);
  const std::vector<TranslationEdge> edges = {{0, 1, Vec3::Ones()}};
  EXPECT_THROW(TranslationSolve(rots, edges), std::runtime_error);
}

TEST(GaugeTest, ErrorsIgnoreGlobalRotation) {
  const ViewGraph g = GenerateSyntheticGraph(10, 0.5, 8);
  const auto gt = g.GaugedGroundTruth();
  const UnitQuaternion a = ExpMap(AxisAngle(0.3, -1.2, 0.7));
  std::vector<UnitQuaternion> moved;
  for (const UnitQuaternion& q : gt) moved.push_back(q * a);
  for (double e : GaugeAlignedErrors(moved, gt)) EXPECT_LT(e, 1e-7);
  EXPECT_THROW(GaugeAlignedErrors(moved, {gt[0]}), std::invalid_argument);
}

}  // namespace
}  // namespace rmnerf
