#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rmnerf/image.h"
#include "rmnerf/radiance_field.h"
#include "rmnerf/so3.h"

namespace rmnerf {

// Constant-density colored sphere.
struct Sphere {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
  double density = 1.0;
  Vec3 color = Vec3::Ones();
};

// Sum of spheres on a black background. Where spheres overlap the density
// adds and the color is the density-weighted mean.
struct AnalyticScene {
  std::vector<Sphere> spheres;

  // Throws std::invalid_argument for radius <= 0, density < 0, or colors
  // outside [0, 1].
  void Validate() const;
  void Query(const Vec3& x, double* sigma, Vec3* rgb) const;
  PointField AsPointField() const;
};

// Three overlapping semi-transparent spheres around the origin.
AnalyticScene DefaultScene();

// Exact compositing of the piecewise-constant density along the ray segment
// [near, far].
Vec3 AnalyticRay(const AnalyticScene& scene, const Vec3& origin, const Vec3& direction,
                 double near, double far);
// One ray per pixel center at pose.intrinsics.
Image AnalyticRender(const AnalyticScene& scene, const CameraPose& pose, double near,
                     double far);

// Cameras looking at the origin from rings of different radii. Poses carry the
// scale-1 intrinsics; scale s divides fx, fy, cx, cy and the image size by s.
struct MultiScaleRig {
  Intrinsics base;
  std::vector<int> scales;
  std::vector<CameraPose> poses;

  int num_cameras() const { return static_cast<int>(poses.size()); }
  Intrinsics IntrinsicsAt(int scale) const;
  CameraPose PoseAt(int camera, int scale) const;
};

struct RigSpec {
  int num_cameras = 12;
  std::vector<double> radii = {3.5, 4.5};
  std::vector<int> scales = {1, 2};
  int base_size = 24;
  double focal_ratio = 1.2;  // focal length in units of the base width
  std::uint64_t seed = 0;
};

// Camera k sits at radius radii[k % |radii|], azimuth 2 pi k / n plus a seeded
// jitter, and a seeded elevation. Throws for fewer than 2 cameras or a base
// size not divisible by every scale.
MultiScaleRig BuildRig(const RigSpec& spec);

// Look-at rotation (world to camera) for a camera at `center` facing `target`
// with world +z up; image y points down.
RotationMatrix LookAt(const Vec3& center, const Vec3& target);

nlohmann::json SceneToJson(const AnalyticScene& scene);
AnalyticScene SceneFromJson(const nlohmann::json& j);
nlohmann::json RigToJson(const MultiScaleRig& rig);
MultiScaleRig RigFromJson(const nlohmann::json& j);
nlohmann::json PoseToJson(const CameraPose& pose);
CameraPose PoseFromJson(const nlohmann::json& j);

}  // namespace rmnerf
