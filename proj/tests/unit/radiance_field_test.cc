#include "rmnerf/radiance_field.h"

#include <cmath>
#include <filesystem>
#include <stdexcept>

#include <gtest/gtest.h>

#include "rmnerf/scenes.h"

namespace rmnerf {
namespace {

FieldConfig SmallConfig() {
  FieldConfig c;
  c.pos_octaves = 3;
  c.dir_octaves = 2;
  c.hidden = 8;
  c.latent = 4;
  return c;
}

// Zero weights and biases chosen so density and color are constant.
RadianceField ConstantField(double sigma, const Vec3& color) {
  RadianceField f(SmallConfig(), 1);
  for (auto& p : f.params()) p.setZero();
  auto& b3 = f.params()[5];
  b3(0) = std::log(std::expm1(sigma));
  auto& bc = f.params()[7];
  for (int c = 0; c < 3; ++c) bc(c) = std::log(color(c) / (1.0 - color(c)));
  return f;
}

CameraPose TestPose(int size) {
  const Vec3 center(0.0, -4.0, 1.0);
  return CameraPose::FromCenter(LookAt(center, Vec3::Zero()), center,
                                {1.2 * size, 1.2 * size, 0.5 * size, 0.5 * size, size, size});
}

RenderConfig TestRender(int octaves) {
  RenderConfig rc;
  rc.near = 2.5;
  rc.far = 5.5;
  rc.num_samples = 16;
  rc.encoding.num_octaves = octaves;
  rc.encoding.anneal_t = octaves;
  return rc;
}

TEST(StratifiedIntervalsTest, UniformPartition) {
  EXPECT_EQ(StratifiedIntervals(1.0, 3.0, 1).breaks, (std::vector<double>{1.0, 3.0}));
  EXPECT_EQ(StratifiedIntervals(1.0, 3.0, 4).breaks,
            (std::vector<double>{1.0, 1.5, 2.0, 2.5, 3.0}));
}

TEST(StratifiedIntervalsTest, JitteredPlansCoverExactly) {
  for (std::uint64_t stream = 0; stream < 200; ++stream) {
    const RaySamplePlan p = StratifiedIntervals(0.7, 4.2, 9, 42, stream);
    ASSERT_EQ(p.num_intervals(), 9);
    EXPECT_EQ(p.breaks.front(), 0.7);
    EXPECT_EQ(p.breaks.back(), 4.2);
    for (int k = 0; k < 9; ++k) EXPECT_LT(p.breaks[k], p.breaks[k + 1]);
  }
  EXPECT_EQ(StratifiedIntervals(1, 2, 5, 3, 7).breaks, StratifiedIntervals(1, 2, 5, 3, 7).breaks);
  EXPECT_NE(StratifiedIntervals(1, 2, 5, 3, 7).breaks, StratifiedIntervals(1, 2, 5, 3, 8).breaks);
}

TEST(StratifiedIntervalsTest, RejectsBadRange) {
  EXPECT_THROW(StratifiedIntervals(2.0, 1.0, 4), std::invalid_argument);
  EXPECT_THROW(StratifiedIntervals(0.0, 1.0, 4), std::invalid_argument);
  EXPECT_THROW(StratifiedIntervals(1.0, 2.0, 0), std::invalid_argument);
}

TEST(RadianceFieldTest, OutputRanges) {
  const RadianceField f(SmallConfig(), 9);
  ad::Tape tape;
  const auto params = f.Bind(tape, false);
  Eigen::MatrixXd pos = Eigen::MatrixXd::Random(18, 50) * 20.0;
  Eigen::MatrixXd dir = Eigen::MatrixXd::Random(12, 50);
  const auto out = f.Forward(params, tape.Constant(pos), tape.Constant(dir));
  EXPECT_GE(out.sigma.value().minCoeff(), 0.0);
  EXPECT_GE(out.rgb.value().minCoeff(), 0.0);
  EXPECT_LE(out.rgb.value().maxCoeff(), 1.0);
}

TEST(RadianceFieldTest, FlattenRoundTripAndSeeds) {
  RadianceField f(SmallConfig(), 3);
  const Eigen::VectorXd flat = f.Flatten();
  EXPECT_EQ(flat.size(), f.NumParams());
  RadianceField g(SmallConfig(), 4);
  EXPECT_NE(g.Flatten(), flat);
  g.Unflatten(flat);
  EXPECT_EQ(g.Flatten(), flat);
  EXPECT_EQ(RadianceField(SmallConfig(), 3).Flatten(), flat);
  EXPECT_THROW(g.Unflatten(Eigen::VectorXd::Zero(3)), std::invalid_argument);
}

TEST(RenderRayTest, EmptyFieldIsBlack) {
  const RadianceField f = ConstantField(1e-300, Vec3(0.5, 0.5, 0.5));
  const RayRender r = RenderRay({4.5, 4.5}, TestPose(9), f, TestRender(3));
  EXPECT_LT(r.rgb.norm(), 1e-12);
  for (double w : r.weights) EXPECT_LT(w, 1e-12);
}

TEST(RenderRayTest, ConstantFieldMatchesAnalyticTransmittance) {
  const Vec3 c(0.2, 0.6, 0.9);
  const double sigma = 0.4;
  const RadianceField f = ConstantField(sigma, c);
  RenderConfig rc = TestRender(3);
  rc.jitter_seed = 5;
  const RayRender r = RenderRay({2.5, 6.5}, TestPose(9), f, rc);
  const Vec3 expected = (1.0 - std::exp(-sigma * (rc.far - rc.near))) * c;
  EXPECT_LT((r.rgb - expected).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(RenderRayTest, OpaqueFrontReturnsFirstColor) {
  const RaySamplePlan plan = StratifiedIntervals(1.0, 3.0, 8);
  const PointField field = [](const Vec3& x, double* s, Vec3* rgb) {
    *s = x.z() < 1.25 ? 1e9 : 1.0;
    *rgb = x.z() < 1.25 ? Vec3(0.1, 0.2, 0.3) : Vec3(1, 1, 1);
  };
  const RayRender r = RenderRayPoints(Vec3::Zero(), Vec3::UnitZ(), plan, field);
  EXPECT_LT((r.rgb - Vec3(0.1, 0.2, 0.3)).norm(), 1e-12);
}

TEST(RenderRayTest, WeightsAndTransmittanceInvariants) {
  const RadianceField f(SmallConfig(), 11);
  RenderConfig rc = TestRender(3);
  rc.jitter_seed = 2;
  for (int y = 0; y < 9; ++y) {
    for (int x = 0; x < 9; ++x) {
      const RayRender r = RenderRay({x + 0.5, y + 0.5}, TestPose(9), f, rc);
      double sum = 0.0;
      for (double w : r.weights) {
        EXPECT_GE(w, 0.0);
        sum += w;
      }
      EXPECT_LE(sum, 1.0 + 1e-9);
      for (std::size_t k = 1; k < r.transmittance.size(); ++k) {
        EXPECT_LE(r.transmittance[k], r.transmittance[k - 1]);
      }
      EXPECT_GE(r.rgb.minCoeff(), 0.0);
      EXPECT_LE(r.rgb.maxCoeff(), 1.0);
    }
  }
}

TEST(RenderImageTest, MatchesPerPixelRays) {
  const RadianceField f(SmallConfig(), 12);
  RenderConfig rc = TestRender(3);
  rc.jitter_seed = 77;
  const CameraPose pose = TestPose(2);
  const Image img = RenderImage(pose, f, rc);
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 2; ++x) {
      const RayRender r = RenderRay({x + 0.5, y + 0.5}, pose, f, rc);
      EXPECT_LT((img.Pixel(x, y) - r.rgb).cwiseAbs().maxCoeff(), 1e-14);
    }
  }
}

TEST(RenderImageTest, EmptyFieldBlackAndDeterministic) {
  const Image black = RenderImage(TestPose(6), ConstantField(1e-300, Vec3(0.5, 0.5, 0.5)),
                                  TestRender(3));
  for (double v : black.data()) EXPECT_LT(v, 1e-12);
  const RadianceField f(SmallConfig(), 13);
  RenderConfig rc = TestRender(3);
  rc.jitter_seed = 1;
  EXPECT_EQ(RenderImage(TestPose(6), f, rc).data(), RenderImage(TestPose(6), f, rc).data());
}

TEST(RenderImageTest, HalfResolutionMatchesBoxDownsample) {
  FieldConfig c = SmallConfig();
  c.hidden = 16;
  const RadianceField f(c, 21);
  RenderConfig rc = TestRender(3);
  rc.num_samples = 32;
  const CameraPose full = TestPose(16);
  CameraPose half = full;
  half.intrinsics = full.intrinsics.Downscaled(2);
  const Image a = BoxDownsample(RenderImage(full, f, rc), 2);
  const Image b = RenderImage(half, f, rc);
  EXPECT_GT(Psnr(a, b), 30.0);
}

TEST(RenderRaysTest, FieldGradientMatchesFiniteDifferences) {
  RadianceField f(SmallConfig(), 31);
  const CameraPose pose = TestPose(4);
  const Image target = AnalyticRender(DefaultScene(), pose, 2.5, 5.5);
  const std::vector<Eigen::Vector2d> pixels = {{0.5, 0.5}, {1.5, 2.5}, {3.5, 1.5}, {2.5, 3.5}};
  RenderConfig rc = TestRender(3);
  rc.encoding.anneal_t = 1.4;
  auto loss = [&](const RadianceField& field, std::vector<Eigen::MatrixXd>* grad) {
    ad::Tape tape;
    const auto params = field.Bind(tape, true);
    Eigen::MatrixXd o(3, 4), d(3, 4), t(3, 4);
    std::vector<double> radii;
    std::vector<RaySamplePlan> plans;
    for (int r = 0; r < 4; ++r) {
      const ConicalFrustum fr = CastFrustum(pixels[r], pose, rc.near, rc.far);
      o.col(r) = fr.origin;
      d.col(r) = fr.direction;
      radii.push_back(fr.radius);
      plans.push_back(StratifiedIntervals(rc.near, rc.far, 8, 4, r));
      t.col(r) = target.Pixel(static_cast<int>(pixels[r].x()), static_cast<int>(pixels[r].y()));
    }
    const ad::Var rgb = RenderRays(field, params, tape.Constant(o), tape.Constant(d), radii,
                                   plans, rc.encoding);
    const ad::Var err = rgb - tape.Constant(t);
    const ad::Var l = ad::Sum(err * err);
    if (grad) {
      const ad::Gradients g = tape.Backward(l);
      grad->clear();
      for (const auto& p : params) grad->push_back(g.Wrt(p));
    }
    return l.scalar();
  };
  std::vector<Eigen::MatrixXd> grad;
  loss(f, &grad);
  Eigen::VectorXd flat_grad(f.NumParams());
  int offset = 0;
  for (const auto& g : grad) {
    flat_grad.segment(offset, g.size()) = g.reshaped();
    offset += static_cast<int>(g.size());
  }
  const Eigen::VectorXd base = f.Flatten();
  double worst = 0.0;
  for (int k = 0; k < base.size(); ++k) {
    Eigen::VectorXd plus = base, minus = base;
    plus(k) += 1e-6;
    minus(k) -= 1e-6;
    RadianceField fp = f, fm = f;
    fp.Unflatten(plus);
    fm.Unflatten(minus);
    const double fd = (loss(fp, nullptr) - loss(fm, nullptr)) / 2e-6;
    worst = std::max(worst, std::abs(fd - flat_grad(k)) / std::max(1e-3, std::abs(fd)));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(FieldIoTest, SaveLoadRoundTrip) {
  const RadianceField f(SmallConfig(), 41);
  const auto path = (std::filesystem::temp_directory_path() / "rmnerf_field_test.bin").string();
  SaveField(f, path, "abc");
  const RadianceField g = LoadField(path);
  EXPECT_EQ(g.Flatten(), f.Flatten());
  EXPECT_EQ(g.config().hidden, 8);
  std::filesystem::remove(path);
  std::filesystem::remove(path + ".json");
  EXPECT_THROW(LoadField(path), std::runtime_error);
}

}  // namespace
}  // namespace rmnerf
