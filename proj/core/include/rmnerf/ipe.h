#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "rmnerf/so3.h"

namespace rmnerf {

// Truncated cone behind one pixel: points x with axial distance
// s = (x - o).d in [t0, t1] and radial distance at most radius * s.
struct ConicalFrustum {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  double radius = 0.0;  // cone radius per unit distance along the axis
  double t0 = 0.0;
  double t1 = 0.0;

  // Throws std::invalid_argument unless |d| = 1, 0 < t0 < t1, radius > 0.
  void Validate() const;
  bool Contains(const Vec3& x) const;
};

// Along-ray and perpendicular moments of a frustum in the midpoint
// parametrization t_mu = (t0 + t1) / 2, t_delta = (t1 - t0) / 2.
struct FrustumMoments {
  double mean_t = 0.0;
  double var_t = 0.0;
  double var_r = 0.0;
};

struct GaussianRegion {
  Vec3 mean = Vec3::Zero();
  Mat3 covariance = Mat3::Zero();
};

struct EncodingConfig {
  int num_octaves = 6;
  double anneal_t = 0.0;
  double anneal_b = 1.0;

  void Validate() const;
};

// Conical frustum through pixel coordinate (u, v) (pixel centers at half
// integers). The radius is the pixel footprint at unit depth scaled by
// 2 / sqrt(12), which matches the variance of a square pixel.
ConicalFrustum CastFrustum(const Eigen::Vector2d& pixel, const CameraPose& pose,
                           double t0, double t1);
// Unit world-space ray direction through a pixel coordinate.
Vec3 PixelDirection(const Eigen::Vector2d& pixel, const CameraPose& pose);
double PixelRadius(const Intrinsics& k);

FrustumMoments ComputeFrustumMoments(double t0, double t1, double radius);
GaussianRegion FrustumToGaussian(const ConicalFrustum& frustum);

// Expected sin/cos features of a Gaussian, layout: for octave l and axis a,
// entry 6l + a is E[sin(2^l x_a)] and 6l + 3 + a is E[cos(2^l x_a)].
Eigen::VectorXd IpeEncode(const GaussianRegion& gaussian, int num_octaves);
// Point encoding with the same layout.
Eigen::VectorXd PositionalEncode(const Vec3& x, int num_octaves);

struct MonteCarloEncoding {
  Eigen::VectorXd mean;
  Eigen::VectorXd standard_error;
  std::int64_t accepted = 0;
};

// Rejection-samples n_samples proposals uniformly in the frustum's bounding
// box and averages the point encoding of accepted points. Each proposal uses
// counter-based draws keyed by (seed, proposal index). Throws
// std::runtime_error if no proposal is accepted.
MonteCarloEncoding IpeMonteCarlo(const ConicalFrustum& frustum, int num_octaves,
                                 std::int64_t n_samples, std::uint64_t seed);

// Uniform samples inside the frustum, used by moment checks.
std::vector<Vec3> SampleFrustum(const ConicalFrustum& frustum, std::int64_t n,
                                std::uint64_t seed);

// exp(min((t - k) / b, 0)) for octave k.
double AnnealedWeight(int octave, const EncodingConfig& cfg);
std::vector<double> AnnealedWeights(const EncodingConfig& cfg);

}  // namespace rmnerf
