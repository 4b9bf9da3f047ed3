#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rmnerf/autodiff.h"
#include "rmnerf/image.h"
#include "rmnerf/ipe.h"
#include "rmnerf/so3.h"

namespace rmnerf {

struct FieldConfig {
  int pos_octaves = 6;
  int dir_octaves = 2;
  int hidden = 64;
  int latent = 16;

  void Validate() const;
  int PosFeatures() const { return 6 * pos_octaves; }
  int DirFeatures() const { return 6 * dir_octaves; }
};

// IPE features -> hidden -> hidden -> (density logit, latent), then
// (latent, direction PE) -> RGB. Hidden layers use softplus, density uses
// softplus and color uses sigmoid.
class RadianceField {
 public:
  // Parameter order: W1 b1 W2 b2 W3 b3 Wc bc.
  static constexpr int kNumTensors = 8;

  RadianceField() = default;
  RadianceField(const FieldConfig& cfg, std::uint64_t seed);

  const FieldConfig& config() const { return cfg_; }
  const std::vector<Eigen::MatrixXd>& params() const { return params_; }
  std::vector<Eigen::MatrixXd>& params() { return params_; }

  int NumParams() const;
  Eigen::VectorXd Flatten() const;
  void Unflatten(const Eigen::VectorXd& flat);

  // Puts the parameters on a tape as leaves (trainable) or constants.
  std::vector<ad::Var> Bind(ad::Tape& tape, bool trainable) const;

  struct Output {
    ad::Var sigma;  // 1 x B
    ad::Var rgb;    // 3 x B
  };
  // pos_features: PosFeatures() x B. dir_features: DirFeatures() x B.
  Output Forward(std::span<const ad::Var> params, const ad::Var& pos_features,
                 const ad::Var& dir_features) const;

 private:
  FieldConfig cfg_;
  std::vector<Eigen::MatrixXd> params_;
};

// Breakpoints t_0 < t_1 < ... < t_N covering [near, far].
struct RaySamplePlan {
  std::vector<double> breaks;

  int num_intervals() const { return static_cast<int>(breaks.size()) - 1; }
};

// N contiguous intervals. Without a seed the partition is uniform. With a
// seed each interior breakpoint moves within its half-cell neighborhood,
// keyed by (seed, stream), so the plan stays ordered and covers [near, far]
// exactly.
RaySamplePlan StratifiedIntervals(double near, double far, int n,
                                  std::optional<std::uint64_t> jitter_seed = std::nullopt,
                                  std::uint64_t stream = 0);

struct RenderConfig {
  double near = 2.0;
  double far = 6.0;
  int num_samples = 16;
  EncodingConfig encoding;
  std::optional<std::uint64_t> jitter_seed;

  void Validate() const;
};

// Per-sample frustum moments (mean_t, var_t, var_r) laid out 3 x (R * N),
// and interval lengths 1 x (R * N).
Eigen::MatrixXd SampleMoments(std::span<const double> radii,
                              std::span<const RaySamplePlan> plans);
Eigen::MatrixXd SampleDeltas(std::span<const RaySamplePlan> plans);

// Differentiable render of R rays sharing one sample count. origins and
// directions are 3 x R (directions unit length); returns 3 x R colors.
ad::Var RenderRays(const RadianceField& field, std::span<const ad::Var> params,
                   const ad::Var& origins, const ad::Var& directions,
                   std::span<const double> radii,
                   std::span<const RaySamplePlan> plans,
                   const EncodingConfig& encoding);

struct RayRender {
  Eigen::Vector3d rgb = Eigen::Vector3d::Zero();
  std::vector<double> weights;
  std::vector<double> transmittance;
};

// Single pixel through the field, with compositing weights.
RayRender RenderRay(const Eigen::Vector2d& pixel, const CameraPose& pose,
                    const RadianceField& field, const RenderConfig& cfg);

// Every pixel center of pose.intrinsics. Jitter streams are pixel indices.
Image RenderImage(const CameraPose& pose, const RadianceField& field,
                  const RenderConfig& cfg);

// Density and color at a point.
using PointField = std::function<void(const Vec3& x, double* sigma, Vec3* rgb)>;

// Quadrature of a point field along a ray, querying each interval at its
// midpoint.
RayRender RenderRayPoints(const Vec3& origin, const Vec3& direction,
                          const RaySamplePlan& plan, const PointField& field);

void SaveField(const RadianceField& field, const std::string& path,
               const std::string& config_hash);
RadianceField LoadField(const std::string& path);

}  // namespace rmnerf
