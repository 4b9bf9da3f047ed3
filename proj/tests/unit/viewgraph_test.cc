#include "rmnerf/viewgraph.h"

#include <cmath>
#include <filesystem>
#include <random>
#include <stdexcept>

#include <gtest/gtest.h>

namespace rmnerf {
namespace {

std::vector<Vertex> Vertices(int n) {
  std::vector<Vertex> v(n);
  for (int k = 0; k < n; ++k) v[k].id = k;
  return v;
}

Edge MakeEdge(int i, int j, const UnitQuaternion& q = {}) {
  Edge e;
  e.i = i;
  e.j = j;
  e.measured = q;
  return e;
}

// Monte Carlo mean of min(|v|, 2 pi - |v|) for v ~ N(0, sigma^2 I), drawn from
// the standard library generator.
double SimulatedMeanAngle(double sigma, int n) {
  std::mt19937_64 gen(12345);
  std::normal_distribution<double> normal(0.0, sigma);
  double s = 0.0;
  for (int k = 0; k < n; ++k) {
    const double a = std::sqrt(std::pow(normal(gen), 2) + std::pow(normal(gen), 2) +
                               std::pow(normal(gen), 2));
    s += std::min(a, 2.0 * M_PI - a);
  }
  return s / n;
}

TEST(ViewGraphTest, ValidatesStructure) {
  EXPECT_THROW(ViewGraph(Vertices(2), {MakeEdge(0, 0)}), std::invalid_argument);
  EXPECT_THROW(ViewGraph(Vertices(2), {MakeEdge(0, 1), MakeEdge(0, 1)}), std::invalid_argument);
  EXPECT_THROW(ViewGraph(Vertices(3), {MakeEdge(0, 1)}), std::invalid_argument);
  std::vector<Vertex> gap = Vertices(2);
  gap[1].id = 5;
  EXPECT_THROW(ViewGraph(gap, {MakeEdge(0, 5)}), std::invalid_argument);
  EXPECT_NO_THROW(ViewGraph(Vertices(2), {MakeEdge(0, 1), MakeEdge(1, 0)}));
}

TEST(ViewGraphTest, CanonicalOrder) {
  std::vector<Vertex> v = Vertices(3);
  std::swap(v[0], v[2]);
  const ViewGraph g(v, {MakeEdge(2, 1), MakeEdge(0, 2), MakeEdge(0, 1)});
  EXPECT_EQ(g.vertices()[0].id, 0);
  EXPECT_EQ(g.edges()[0].i, 0);
  EXPECT_EQ(g.edges()[0].j, 1);
  EXPECT_EQ(g.edges()[2].i, 2);
}

TEST(SyntheticGraphTest, TriangleIsExactlyConsistent) {
  const ViewGraph g = GenerateSyntheticGraph(3, 1.0, 4);
  ASSERT_EQ(g.num_edges(), 3);
  for (const Edge& e : g.edges()) {
    const UnitQuaternion expected =
        RelativeRotation(*g.vertices()[e.i].ground_truth, *g.vertices()[e.j].ground_truth);
    EXPECT_EQ(e.measured, expected);
  }
  EXPECT_THROW(GenerateSyntheticGraph(2, 1.0, 0), std::invalid_argument);
}

TEST(SyntheticGraphTest, Deterministic) {
  EXPECT_EQ(ViewGraphToJson(GenerateSyntheticGraph(12, 0.4, 99)),
            ViewGraphToJson(GenerateSyntheticGraph(12, 0.4, 99)));
  EXPECT_NE(ViewGraphToJson(GenerateSyntheticGraph(12, 0.4, 99)),
            ViewGraphToJson(GenerateSyntheticGraph(12, 0.4, 100)));
}

TEST(SyntheticGraphTest, ConnectedOverManySeeds) {
  for (int seed = 0; seed < 100; ++seed) {
    EXPECT_TRUE(GenerateSyntheticGraph(20, 0.3, seed).IsConnected()) << seed;
  }
  // Sparse enough that the patching path is exercised.
  for (int seed = 0; seed < 20; ++seed) {
    EXPECT_TRUE(GenerateSyntheticGraph(10, 0.05, seed).IsConnected()) << seed;
  }
}

TEST(SyntheticGraphTest, ThreeCyclesCompose) {
  const ViewGraph g = GenerateSyntheticGraph(10, 1.0, 8);
  for (int i = 0; i < 10; ++i)
    for (int j = i + 1; j < 10; ++j)
      for (int k = j + 1; k < 10; ++k) EXPECT_LT(CycleError(g, i, j, k), 1e-7);
}

TEST(PerturbEdgesTest, ZeroNoiseIsBitIdentical) {
  const ViewGraph g = GenerateSyntheticGraph(15, 0.5, 2);
  NoiseSpec spec;
  spec.seed = 3;
  const ViewGraph p = PerturbEdges(g, spec);
  for (int e = 0; e < g.num_edges(); ++e) {
    EXPECT_EQ(p.edges()[e].measured, g.edges()[e].measured);
  }
}

TEST(PerturbEdgesTest, NoiseMatchesSamplingOracle) {
  const ViewGraph g = GenerateSyntheticGraph(40, 1.0, 6);
  NoiseSpec spec;
  spec.rotation_sigma = 0.1;
  spec.seed = 11;
  const ViewGraph p = PerturbEdges(g, spec);
  double sum = 0.0;
  for (int e = 0; e < g.num_edges(); ++e) {
    sum += GeodesicAngle(g.edges()[e].measured, p.edges()[e].measured);
  }
  const double mean = sum / g.num_edges();
  const double oracle = SimulatedMeanAngle(0.1, 1000000);
  EXPECT_NEAR(mean, oracle, 0.05 * oracle);
}

TEST(PerturbEdgesTest, ExactOutlierCount) {
  std::vector<Edge> edges;
  for (int i = 0; i < 15 && edges.size() < 100; ++i)
    for (int j = i + 1; j < 15 && edges.size() < 100; ++j) edges.push_back(MakeEdge(i, j));
  const ViewGraph g(Vertices(15), edges);
  ASSERT_EQ(g.num_edges(), 100);
  NoiseSpec spec;
  spec.outlier_fraction = 0.2;
  spec.seed = 5;
  const ViewGraph p = PerturbEdges(g, spec);
  int flagged = 0;
  for (const Edge& e : p.edges()) flagged += e.outlier.value_or(false) ? 1 : 0;
  EXPECT_EQ(flagged, 20);
}

TEST(PerturbEdgesTest, RejectsBadSpec) {
  const ViewGraph g = GenerateSyntheticGraph(5, 1.0, 0);
  NoiseSpec spec;
  spec.rotation_sigma = -1.0;
  EXPECT_THROW(PerturbEdges(g, spec), std::invalid_argument);
  spec.rotation_sigma = 0.0;
  spec.outlier_fraction = 1.5;
  EXPECT_THROW(PerturbEdges(g, spec), std::invalid_argument);
}

TEST(PerturbPosesTest, ZeroSigmaIsIdentity) {
  std::vector<CameraPose> poses(3);
  for (int k = 0; k < 3; ++k) {
    poses[k] = CameraPose::FromCenter(QuatToMatrix(ExpMap(Vec3(0.1 * k, 0.2, -0.3))),
                                      Vec3(k, 1, 2), {10, 10, 5, 5, 10, 10});
  }
  const auto same = PerturbAbsolutePoses(poses, 0.0, 1);
  for (int k = 0; k < 3; ++k) {
    EXPECT_EQ(same[k].rotation.matrix(), poses[k].rotation.matrix());
    EXPECT_EQ(same[k].translation, poses[k].translation);
  }
}

TEST(PerturbPosesTest, DistributionMatchesOracleAndCentersFixed) {
  std::vector<CameraPose> poses(10000);
  for (auto& p : poses) p = CameraPose::FromCenter(RotationMatrix(), Vec3(1, 2, 3), {});
  const auto noisy = PerturbAbsolutePoses(poses, 0.1, 7);
  double sum = 0.0;
  for (std::size_t k = 0; k < poses.size(); ++k) {
    sum += GeodesicAngle(noisy[k].rotation, poses[k].rotation);
    EXPECT_LT((noisy[k].Center() - poses[k].Center()).norm(), 1e-12);
  }
  const double oracle = SimulatedMeanAngle(0.1, 1000000);
  EXPECT_NEAR(sum / poses.size(), oracle, 0.05 * oracle);
}

TEST(PerturbPosesTest, HundredCameraRig) {
  std::vector<CameraPose> poses(100);
  for (int k = 0; k < 100; ++k) {
    poses[k] = CameraPose::FromCenter(QuatToMatrix(ExpMap(Vec3(0, 0, 0.06 * k))),
                                      Vec3(std::cos(0.06 * k), std::sin(0.06 * k), 0), {});
  }
  const auto noisy = PerturbAbsolutePoses(poses, 0.1, 1);
  double sum = 0.0;
  for (int k = 0; k < 100; ++k) sum += GeodesicAngle(noisy[k].rotation, poses[k].rotation);
  // Mean of a Maxwell distribution: 2 sigma sqrt(2 / pi).
  EXPECT_NEAR(sum / 100, 0.2 * std::sqrt(2.0 / M_PI), 0.03);
}

TEST(SpanningTreeTest, NoiselessRecoversGaugedTruth) {
  const ViewGraph g = GenerateSyntheticGraph(20, 0.3, 13);
  const auto est = SpanningTreeInit(g);
  const auto gt = g.GaugedGroundTruth();
  EXPECT_EQ(est[0], UnitQuaternion::Identity());
  for (int v = 0; v < 20; ++v) EXPECT_LT(GeodesicAngle(est[v], gt[v]), 1e-9);
}

TEST(SpanningTreeTest, SingleEdge) {
  const UnitQuaternion q = ExpMap(Vec3(0.2, -0.1, 0.4));
  const ViewGraph g(Vertices(2), {MakeEdge(0, 1, q)});
  const auto est = SpanningTreeInit(g);
  EXPECT_EQ(est[0], UnitQuaternion::Identity());
  EXPECT_LT(QuatDistance(est[1], q), 1e-15);
  // Reverse direction uses the inverse measurement.
  const ViewGraph r(Vertices(2), {MakeEdge(1, 0, q)});
  EXPECT_LT(QuatDistance(SpanningTreeInit(r)[1], q.Inverse()), 1e-15);
}

TEST(SpanningTreeTest, ChainErrorMatchesComposedNoise) {
  constexpr int kLength = 12;
  double depth_err[kLength + 1] = {};
  for (int seed = 0; seed < 200; ++seed) {
    std::vector<Vertex> v = Vertices(kLength + 1);
    std::vector<Edge> edges;
    for (int k = 0; k <= kLength; ++k) {
      v[k].ground_truth = k == 0 ? UnitQuaternion() : ExpMap(Vec3(0.3 * k, 0.1, -0.2 * k));
    }
    for (int k = 0; k < kLength; ++k) {
      edges.push_back(
          MakeEdge(k, k + 1, RelativeRotation(*v[k].ground_truth, *v[k + 1].ground_truth)));
    }
    NoiseSpec spec;
    spec.rotation_sigma = 0.05;
    spec.seed = seed;
    const ViewGraph clean(v, edges);
    const ViewGraph g = PerturbEdges(clean, spec);
    const auto est = SpanningTreeInit(g);
    // Oracle: E_k = N_k A_k E_{k-1} A_k^T with N_k = measured * exact^-1.
    Mat3 err = Mat3::Identity();
    EXPECT_EQ(est[0], UnitQuaternion::Identity());
    for (int k = 1; k <= kLength; ++k) {
      const Mat3 a = QuatToMatrix(clean.edges()[k - 1].measured).matrix();
      const Mat3 n = QuatToMatrix(g.edges()[k - 1].measured * clean.edges()[k - 1].measured.Inverse())
                         .matrix();
      err = n * a * err * a.transpose();
      const double oracle = GeodesicAngle(RotationMatrix::FromTrusted(err), RotationMatrix());
      const double actual = GeodesicAngle(est[k], *v[k].ground_truth);
      EXPECT_NEAR(actual, oracle, 1e-9);
      depth_err[k] += actual / 200;
    }
  }
  EXPECT_LT(depth_err[1], depth_err[4]);
  EXPECT_LT(depth_err[4], depth_err[kLength]);
}

TEST(SpanningTreeTest, DisconnectedThrows) {
  ViewGraph g = GenerateSyntheticGraph(4, 1.0, 0);
  std::vector<Edge> one = {g.edges()[0]};
  EXPECT_THROW(ViewGraph(g.vertices(), one), std::invalid_argument);
}

TEST(ViewGraphJsonTest, BitExactRoundTrip) {
  NoiseSpec spec;
  spec.rotation_sigma = 0.1;
  spec.outlier_fraction = 0.2;
  spec.seed = 1;
  const ViewGraph g = PerturbEdges(GenerateSyntheticGraph(15, 0.4, 21), spec);
  const ViewGraph back = ViewGraphFromJson(ViewGraphToJson(g));
  ASSERT_EQ(back.num_edges(), g.num_edges());
  for (int e = 0; e < g.num_edges(); ++e) {
    EXPECT_EQ(back.edges()[e].measured, g.edges()[e].measured);
    EXPECT_EQ(back.edges()[e].outlier, g.edges()[e].outlier);
  }
  for (int v = 0; v < g.num_vertices(); ++v) {
    EXPECT_EQ(*back.vertices()[v].ground_truth, *g.vertices()[v].ground_truth);
    EXPECT_EQ(back.vertices()[v].estimate, g.vertices()[v].estimate);
  }
  const auto path = std::filesystem::temp_directory_path() / "rmnerf_graph_test.json";
  SaveViewGraph(g, path.string());
  EXPECT_EQ(ViewGraphToJson(LoadViewGraph(path.string())), ViewGraphToJson(g));
  std::filesystem::remove(path);
}

TEST(ViewGraphJsonTest, MalformedInputThrows) {
  EXPECT_THROW(ViewGraphFromJson("{"), std::invalid_argument);
  EXPECT_THROW(ViewGraphFromJson("{\"vertices\": []}"), std::invalid_argument);
  EXPECT_THROW(LoadViewGraph("/nonexistent/graph.json"), std::runtime_error);
}

TEST(GaugeTest, GaugedTruthAnchorsVertexZero) {
  const ViewGraph g = GenerateSyntheticGraph(8, 0.5, 30);
  EXPECT_LT(QuatDistance(g.GaugedGroundTruth()[0], UnitQuaternion()), 1e-9);
  ViewGraph missing(Vertices(3), {MakeEdge(0, 1), MakeEdge(1, 2)});
  EXPECT_THROW(missing.GaugedGroundTruth(), std::logic_error);
}

}  // namespace
}  // namespace rmnerf
