#include <numbers>
#include <vector>

#include <benchmark/benchmark.h>

#include "rmnerf/motion_averaging.h"
#include "rmnerf/refiner.h"
#include "rmnerf/so3.h"
#include "rmnerf/viewgraph.h"

namespace rmnerf {
namespace {

ViewGraph NoisyGraph(int n, double outliers) {
  NoiseSpec noise;
  noise.rotation_sigma = 5 * std::numbers::pi / 180.0;
  noise.outlier_fraction = outliers;
  noise.seed = 11;
  return PerturbEdges(GenerateSyntheticGraph(n, 0.3, 10), noise);
}

void BM_ExpLogRoundTrip(benchmark::State& state) {
  AxisAngle v(0.3, -0.2, 0.9);
  for (auto _ : state) {
    v = LogMap(ExpMap(v));
    benchmark::DoNotOptimize(v);
  }
}
BENCHMARK(BM_ExpLogRoundTrip);

void BM_GeodesicAngle(benchmark::State& state) {
  const UnitQuaternion a = ExpMap(AxisAngle(0.1, 0.2, 0.3));
  const UnitQuaternion b = ExpMap(AxisAngle(-0.4, 0.0, 1.1));
  for (auto _ : state) benchmark::DoNotOptimize(GeodesicAngle(a, b));
}
BENCHMARK(BM_GeodesicAngle);

void BM_SpanningTree(benchmark::State& state) {
  const ViewGraph g = NoisyGraph(static_cast<int>(state.range(0)), 0.0);
  for (auto _ : state) benchmark::DoNotOptimize(SpanningTreeInit(g));
}
BENCHMARK(BM_SpanningTree)->Arg(20)->Arg(100);

void BM_IrlsL2(benchmark::State& state) {
  const ViewGraph g = NoisyGraph(static_cast<int>(state.range(0)), 0.0);
  for (auto _ : state) benchmark::DoNotOptimize(IrlsRotationAverage(g, RobustLoss::L2()));
}
BENCHMARK(BM_IrlsL2)->Arg(20)->Arg(100)->Unit(benchmark::kMicrosecond);

void BM_IrlsHuberOutliers(benchmark::State& state) {
  const ViewGraph g = NoisyGraph(static_cast<int>(state.range(0)), 0.2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(IrlsRotationAverage(g, RobustLoss::Huber(0.1)));
  }
}
BENCHMARK(BM_IrlsHuberOutliers)->Arg(20)->Arg(100)->Unit(benchmark::kMicrosecond);

void BM_RefinerForward(benchmark::State& state) {
  const ViewGraph g = NoisyGraph(20, 0.1);
  const RefinerParams p = RefinerParams::Random({}, 1, 0.05);
  for (auto _ : state) benchmark::DoNotOptimize(RefinerForward(g, p));
}
BENCHMARK(BM_RefinerForward)->Unit(benchmark::kMicrosecond);

void BM_RefinerLossAndGradient(benchmark::State& state) {
  const std::vector<ViewGraph> data = {NoisyGraph(20, 0.1)};
  const RefinerParams p = RefinerParams::Random({}, 1, 0.05);
  std::vector<Eigen::MatrixXd> grad;
  for (auto _ : state) benchmark::DoNotOptimize(RefinerLossAndGradient(data, p, 1.0, &grad));
}
BENCHMARK(BM_RefinerLossAndGradient)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace rmnerf
