#include "rmnerf/ipe.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Geometry>

#include "rmnerf/random.h"

namespace rmnerf {
namespace {

// Orthonormal basis (e1, e2) perpendicular to a unit vector.
void PerpendicularBasis(const Vec3& d, Vec3* e1, Vec3* e2) {
  const Vec3 helper = std::abs(d.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  *e1 = d.cross(helper).normalized();
  *e2 = d.cross(*e1);
}

}  // namespace

void ConicalFrustum::Validate() const {
  if (std::abs(direction.norm() - 1.0) > kUnitTol) {
    throw std::invalid_argument("ConicalFrustum: direction must be unit length");
  }
  if (!(t0 > 0.0 && t1 > t0)) {
    throw std::invalid_argument("ConicalFrustum: need 0 < t0 < t1");
  }
  if (!(radius > 0.0)) throw std::invalid_argument("ConicalFrustum: radius <= 0");
}

bool ConicalFrustum::Contains(const Vec3& x) const {
  const Vec3 rel = x - origin;
  const double s = rel.dot(direction);
  if (s < t0 || s > t1) return false;
  const double r2 = (rel - s * direction).squaredNorm();
  return r2 <= radius * radius * s * s;
}

void EncodingConfig::Validate() const {
  if (num_octaves < 1) throw std::invalid_argument("EncodingConfig: L < 1");
  if (!(anneal_b > 0.0)) throw std::invalid_argument("EncodingConfig: b <= 0");
  if (!(anneal_t >= 0.0)) throw std::invalid_argument("EncodingConfig: t < 0");
}

double PixelRadius(const Intrinsics& k) {
  return (1.0 / std::sqrt(k.fx * k.fy)) * (2.0 / std::sqrt(12.0));
}

Vec3 PixelDirection(const Eigen::Vector2d& pixel, const CameraPose& pose) {
  const Intrinsics& k = pose.intrinsics;
  const Vec3 cam((pixel.x() - k.cx) / k.fx, (pixel.y() - k.cy) / k.fy, 1.0);
  return (pose.rotation.matrix().transpose() * cam).normalized();
}

ConicalFrustum CastFrustum(const Eigen::Vector2d& pixel, const CameraPose& pose,
                           double t0, double t1) {
  if (!pose.intrinsics.Valid()) {
    throw std::invalid_argument("CastFrustum: degenerate intrinsics");
  }
  ConicalFrustum f;
  f.origin = pose.Center();
  f.direction = PixelDirection(pixel, pose);
  f.radius = PixelRadius(pose.intrinsics);
  f.t0 = t0;
  f.t1 = t1;
  f.Validate();
  return f;
}

FrustumMoments ComputeFrustumMoments(double t0, double t1, double radius) {
  const double t_mu = 0.5 * (t0 + t1);
  const double t_delta = 0.5 * (t1 - t0);
  const double mu2 = t_mu * t_mu;
  const double delta2 = t_delta * t_delta;
  const double delta4 = delta2 * delta2;
  const double denom = 3.0 * mu2 + delta2;
  FrustumMoments m;
  m.mean_t = t_mu + 2.0 * t_mu * delta2 / denom;
  m.var_t = delta2 / 3.0 - (4.0 / 15.0) * delta4 * (12.0 * mu2 - delta2) / (denom * denom);
  m.var_r = radius * radius *
            (mu2 / 4.0 + (5.0 / 12.0) * delta2 - (4.0 / 15.0) * delta4 / denom);
  return m;
}

GaussianRegion FrustumToGaussian(const ConicalFrustum& f) {
  const FrustumMoments m = ComputeFrustumMoments(f.t0, f.t1, f.radius);
  const Mat3 ddt = f.direction * f.direction.transpose();
  GaussianRegion g;
  g.mean = f.origin + m.mean_t * f.direction;
  g.covariance = m.var_t * ddt + m.var_r * (Mat3::Identity() - ddt);
  return g;
}

Eigen::VectorXd IpeEncode(const GaussianRegion& gaussian, int num_octaves) {
  if (num_octaves < 1) throw std::invalid_argument("IpeEncode: L < 1");
  Eigen::VectorXd out(6 * num_octaves);
  const Vec3 var = gaussian.covariance.diagonal();
  double freq = 1.0;
  for (int l = 0; l < num_octaves; ++l, freq *= 2.0) {
    for (int a = 0; a < 3; ++a) {
      const double env = std::exp(-0.5 * freq * freq * var[a]);
      out[6 * l + a] = std::sin(freq * gaussian.mean[a]) * env;
      out[6 * l + 3 + a] = std::cos(freq * gaussian.mean[a]) * env;
    }
  }
  return out;
}

Eigen::VectorXd PositionalEncode(const Vec3& x, int num_octaves) {
  GaussianRegion point;
  point.mean = x;
  return IpeEncode(point, num_octaves);
}

MonteCarloEncoding IpeMonteCarlo(const ConicalFrustum& f, int num_octaves,
                                 std::int64_t n_samples, std::uint64_t seed) {
  f.Validate();
  if (n_samples < 1) throw std::invalid_argument("IpeMonteCarlo: n_samples < 1");
  Vec3 e1, e2;
  PerpendicularBasis(f.direction, &e1, &e2);
  const double half_width = f.radius * f.t1;
  const int dim = 6 * num_octaves;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd sum_sq = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd feature(dim);
  std::int64_t accepted = 0;
  for (std::int64_t k = 0; k < n_samples; ++k) {
    const CounterRng rng(seed, static_cast<std::uint64_t>(k));
    const double s = f.t0 + (f.t1 - f.t0) * rng.Uniform(0);
    const double a = half_width * (2.0 * rng.Uniform(1) - 1.0);
    const double b = half_width * (2.0 * rng.Uniform(2) - 1.0);
    // Indicator of the frustum in its local frame.
    if (a * a + b * b > f.radius * f.radius * s * s) continue;
    const Vec3 x = f.origin + s * f.direction + a * e1 + b * e2;
    for (int axis = 0; axis < 3; ++axis) {
      double sn = std::sin(x[axis]);
      double cs = std::cos(x[axis]);
      for (int l = 0; l < num_octaves; ++l) {
        feature[6 * l + axis] = sn;
        feature[6 * l + 3 + axis] = cs;
        // Double-angle recursion to the next octave.
        const double sn2 = 2.0 * sn * cs;
        cs = cs * cs - sn * sn;
        sn = sn2;
      }
    }
    sum += feature;
    sum_sq += feature.cwiseProduct(feature);
    ++accepted;
  }
  if (accepted == 0) throw std::runtime_error("IpeMonteCarlo: no accepted samples");
  MonteCarloEncoding out;
  const double n = static_cast<double>(accepted);
  out.mean = sum / n;
  const Eigen::VectorXd var =
      (sum_sq / n - out.mean.cwiseProduct(out.mean)).cwiseMax(0.0) * (n / std::max(n - 1.0, 1.0));
  out.standard_error = (var / n).cwiseSqrt();
  out.accepted = accepted;
  return out;
}

std::vector<Vec3> SampleFrustum(const ConicalFrustum& f, std::int64_t n,
                                std::uint64_t seed) {
  f.Validate();
  Vec3 e1, e2;
  PerpendicularBasis(f.direction, &e1, &e2);
  const double half_width = f.radius * f.t1;
  std::vector<Vec3> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t k = 0; static_cast<std::int64_t>(out.size()) < n; ++k) {
    const CounterRng rng(seed, static_cast<std::uint64_t>(k));
    const double s = f.t0 + (f.t1 - f.t0) * rng.Uniform(0);
    const double a = half_width * (2.0 * rng.Uniform(1) - 1.0);
    const double b = half_width * (2.0 * rng.Uniform(2) - 1.0);
    if (a * a + b * b > f.radius * f.radius * s * s) continue;
    out.push_back(f.origin + s * f.direction + a * e1 + b * e2);
  }
  return out;
}

double AnnealedWeight(int octave, const EncodingConfig& cfg) {
  if (octave < 0) throw std::invalid_argument("AnnealedWeight: negative octave");
  return std::exp(std::min((cfg.anneal_t - octave) / cfg.anneal_b, 0.0));
}

std::vector<double> AnnealedWeights(const EncodingConfig& cfg) {
  std::vector<double> w(cfg.num_octaves);
  for (int l = 0; l < cfg.num_octaves; ++l) w[l] = AnnealedWeight(l, cfg);
  return w;
}

}  // namespace rmnerf
