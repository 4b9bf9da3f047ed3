#include "rmnerf/scenes.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <Eigen/Geometry>

#include "rmnerf/random.h"

namespace rmnerf {
namespace {

nlohmann::json VecToJson(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

Vec3 VecFromJson(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

void AnalyticScene::Validate() const {
  for (const Sphere& s : spheres) {
    if (!(s.radius > 0.0)) throw std::invalid_argument("Sphere: radius must be positive");
    if (!(s.density >= 0.0)) throw std::invalid_argument("Sphere: density must be >= 0");
    if ((s.color.array() < 0.0).any() || (s.color.array() > 1.0).any()) {
      throw std::invalid_argument("Sphere: color outside [0, 1]");
    }
  }
}

void AnalyticScene::Query(const Vec3& x, double* sigma, Vec3* rgb) const {
  double total = 0.0;
  Vec3 weighted = Vec3::Zero();
  for (const Sphere& s : spheres) {
    if ((x - s.center).squaredNorm() <= s.radius * s.radius) {
      total += s.density;
      weighted += s.density * s.color;
    }
  }
  *sigma = total;
  *rgb = total > 0.0 ? Vec3(weighted / total) : Vec3::Zero();
}

PointField AnalyticScene::AsPointField() const {
  return [this](const Vec3& x, double* sigma, Vec3* rgb) { Query(x, sigma, rgb); };
}

AnalyticScene DefaultScene() {
  AnalyticScene scene;
  scene.spheres = {
      {Vec3(0.0, 0.0, 0.0), 0.9, 2.0, Vec3(0.9, 0.3, 0.2)},
      {Vec3(0.55, 0.35, 0.3), 0.5, 4.0, Vec3(0.2, 0.8, 0.3)},
      {Vec3(-0.45, -0.4, 0.45), 0.45, 3.0, Vec3(0.25, 0.35, 0.95)},
  };
  return scene;
}

Vec3 AnalyticRay(const AnalyticScene& scene, const Vec3& origin, const Vec3& direction,
                 double near, double far) {
  std::vector<double> cuts = {near, far};
  for (const Sphere& s : scene.spheres) {
    // |o + t d - c|^2 = r^2 with |d| = 1.
    const Vec3 oc = origin - s.center;
    const double b = oc.dot(direction);
    const double c = oc.squaredNorm() - s.radius * s.radius;
    const double disc = b * b - c;
    if (disc <= 0.0) continue;
    const double root = std::sqrt(disc);
    for (double t : {-b - root, -b + root}) {
      if (t > near && t < far) cuts.push_back(t);
    }
  }
  std::sort(cuts.begin(), cuts.end());
  Vec3 color = Vec3::Zero();
  double optical_depth = 0.0;
  for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
    const double len = cuts[k + 1] - cuts[k];
    if (len <= 0.0) continue;
    double sigma = 0.0;
    Vec3 rgb;
    scene.Query(origin + 0.5 * (cuts[k] + cuts[k + 1]) * direction, &sigma, &rgb);
    if (sigma <= 0.0) continue;
    color += std::exp(-optical_depth) * -std::expm1(-sigma * len) * rgb;
    optical_depth += sigma * len;
  }
  return color;
}

Image AnalyticRender(const AnalyticScene& scene, const CameraPose& pose, double near,
                     double far) {
  const Intrinsics& k = pose.intrinsics;
  if (!k.Valid() || k.width <= 0 || k.height <= 0) {
    throw std::invalid_argument("AnalyticRender: invalid intrinsics");
  }
  Image image(k.width, k.height);
  const Vec3 origin = pose.Center();
  const Mat3 rt = pose.rotation.matrix().transpose();
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      const Vec3 cam((x + 0.5 - k.cx) / k.fx, (y + 0.5 - k.cy) / k.fy, 1.0);
      image.SetPixel(x, y, AnalyticRay(scene, origin, (rt * cam).normalized(), near, far));
    }
  }
  return image;
}

Intrinsics MultiScaleRig::IntrinsicsAt(int scale) const {
  if (std::find(scales.begin(), scales.end(), scale) == scales.end()) {
    throw std::invalid_argument("MultiScaleRig: scale not in rig");
  }
  return base.Downscaled(scale);
}

CameraPose MultiScaleRig::PoseAt(int camera, int scale) const {
  CameraPose p = poses.at(camera);
  p.intrinsics = IntrinsicsAt(scale);
  return p;
}

RotationMatrix LookAt(const Vec3& center, const Vec3& target) {
  const Vec3 z = (target - center).normalized();
  Vec3 up = Vec3::UnitZ();
  if (std::abs(z.dot(up)) > 0.999) up = Vec3::UnitY();
  const Vec3 x = z.cross(up).normalized();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r.row(0) = x;
  r.row(1) = y;
  r.row(2) = z;
  return RotationMatrix(r);
}

MultiScaleRig BuildRig(const RigSpec& spec) {
  if (spec.num_cameras < 2) throw std::invalid_argument("BuildRig: need at least 2 cameras");
  if (spec.radii.empty() || spec.scales.empty() || spec.base_size <= 0) {
    throw std::invalid_argument("BuildRig: empty radii, scales, or size");
  }
  for (int s : spec.scales) {
    if (s < 1 || spec.base_size % s != 0) {
      throw std::invalid_argument("BuildRig: scale must divide the base size");
    }
  }
  MultiScaleRig rig;
  rig.scales = spec.scales;
  rig.base.width = rig.base.height = spec.base_size;
  rig.base.fx = rig.base.fy = spec.focal_ratio * spec.base_size;
  rig.base.cx = rig.base.cy = 0.5 * spec.base_size;
  const double step = 2.0 * std::numbers::pi / spec.num_cameras;
  for (int k = 0; k < spec.num_cameras; ++k) {
    const CounterRng rng(spec.seed, static_cast<std::uint64_t>(k));
    const double azimuth = step * (k + 0.5 * (rng.Uniform(0) - 0.5));
    const double elevation = 0.15 + 0.45 * rng.Uniform(1);
    const double r = spec.radii[k % spec.radii.size()];
    const Vec3 center(r * std::cos(elevation) * std::cos(azimuth),
                      r * std::cos(elevation) * std::sin(azimuth), r * std::sin(elevation));
    rig.poses.push_back(CameraPose::FromCenter(LookAt(center, Vec3::Zero()), center, rig.base));
  }
  return rig;
}

nlohmann::json SceneToJson(const AnalyticScene& scene) {
  nlohmann::json spheres = nlohmann::json::array();
  for (const Sphere& s : scene.spheres) {
    spheres.push_back({{"center", VecToJson(s.center)},
                       {"radius", s.radius},
                       {"density", s.density},
                       {"color", VecToJson(s.color)}});
  }
  return {{"spheres", spheres}};
}

AnalyticScene SceneFromJson(const nlohmann::json& j) {
  AnalyticScene scene;
  for (const auto& s : j.at("spheres")) {
    scene.spheres.push_back({VecFromJson(s.at("center")), s.at("radius").get<double>(),
                             s.at("density").get<double>(), VecFromJson(s.at("color"))});
  }
  scene.Validate();
  return scene;
}

nlohmann::json PoseToJson(const CameraPose& pose) {
  const UnitQuaternion q = MatrixToQuat(pose.rotation);
  const Intrinsics& k = pose.intrinsics;
  return {{"q", {q.w(), q.x(), q.y(), q.z()}},
          {"t", VecToJson(pose.translation)},
          {"intrinsics",
           {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy},
            {"width", k.width}, {"height", k.height}}}};
}

CameraPose PoseFromJson(const nlohmann::json& j) {
  const auto& q = j.at("q");
  if (!q.is_array() || q.size() != 4) throw std::invalid_argument("pose: q must have 4 entries");
  CameraPose p;
  p.rotation = QuatToMatrix(UnitQuaternion(q[0].get<double>(), q[1].get<double>(),
                                           q[2].get<double>(), q[3].get<double>()));
  p.translation = VecFromJson(j.at("t"));
  const auto& k = j.at("intrinsics");
  p.intrinsics.fx = k.at("fx").get<double>();
  p.intrinsics.fy = k.at("fy").get<double>();
  p.intrinsics.cx = k.at("cx").get<double>();
  p.intrinsics.cy = k.at("cy").get<double>();
  p.intrinsics.width = k.at("width").get<int>();
  p.intrinsics.height = k.at("height").get<int>();
  if (!p.intrinsics.Valid()) throw std::invalid_argument("pose: invalid intrinsics");
  return p;
}

nlohmann::json RigToJson(const MultiScaleRig& rig) {
  nlohmann::json poses = nlohmann::json::array();
  for (const CameraPose& p : rig.poses) poses.push_back(PoseToJson(p));
  return {{"scales", rig.scales}, {"poses", poses}};
}

MultiScaleRig RigFromJson(const nlohmann::json& j) {
  MultiScaleRig rig;
  rig.scales = j.at("scales").get<std::vector<int>>();
  for (const auto& p : j.at("poses")) rig.poses.push_back(PoseFromJson(p));
  if (rig.poses.size() < 2) throw std::invalid_argument("rig: need at least 2 cameras");
  rig.base = rig.poses.front().intrinsics;
  return rig;
}

}  // namespace rmnerf
