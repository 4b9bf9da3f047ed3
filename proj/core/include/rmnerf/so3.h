#pragma once

#include <array>

#include <Eigen/Core>

namespace rmnerf {

// Orthonormality residual above which a 3x3 matrix is not accepted as a
// rotation.
inline constexpr double kOrthoTol = 1e-6;
// Deviation of |q| from 1 tolerated by quaternion invariants.
inline constexpr double kUnitTol = 1e-9;
// Below this angle exp/log switch to their Taylor expansions.
inline constexpr double kSmallAngle = 1e-6;

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Axis-angle vector: unit axis scaled by the rotation angle in radians.
using AxisAngle = Eigen::Vector3d;

// Hamilton unit quaternion (w, x, y, z) kept on the w >= 0 hemisphere.
//
// Every constructor normalizes and canonicalizes, so two quaternions that
// encode the same rotation compare equal up to rounding. When w == 0 the
// first nonzero of (x, y, z) is made positive.
class UnitQuaternion {
 public:
  UnitQuaternion() = default;
  // Normalizes (w, x, y, z). Throws std::invalid_argument on a zero or
  // non-finite input.
  UnitQuaternion(double w, double x, double y, double z);
  explicit UnitQuaternion(const Eigen::Vector4d& wxyz);

  static UnitQuaternion Identity() { return UnitQuaternion(); }

  double w() const { return wxyz_[0]; }
  double x() const { return wxyz_[1]; }
  double y() const { return wxyz_[2]; }
  double z() const { return wxyz_[3]; }
  Vec3 vec() const { return wxyz_.tail<3>(); }
  const Eigen::Vector4d& coeffs() const { return wxyz_; }

  UnitQuaternion Inverse() const;
  // Rotates a vector: q * (0, v) * q^-1.
  Vec3 Rotate(const Vec3& v) const;

  std::array<double, 4> ToArray() const { return {w(), x(), y(), z()}; }

  friend bool operator==(const UnitQuaternion&, const UnitQuaternion&) = default;

 private:
  Eigen::Vector4d wxyz_{1.0, 0.0, 0.0, 0.0};
};

// Composition p * q (apply q first, then p).
UnitQuaternion QuatMul(const UnitQuaternion& p, const UnitQuaternion& q);
inline UnitQuaternion operator*(const UnitQuaternion& p,
                                const UnitQuaternion& q) {
  return QuatMul(p, q);
}

// Raw Hamilton product of two 4-vectors without normalization.
Eigen::Vector4d HamiltonProduct(const Eigen::Vector4d& p,
                                const Eigen::Vector4d& q);

// 3x3 rotation matrix with R^T R = I and det R = +1.
class RotationMatrix {
 public:
  RotationMatrix() = default;
  // Throws std::invalid_argument when the orthonormality residual or the
  // determinant error exceeds kOrthoTol.
  explicit RotationMatrix(const Mat3& m);

  static RotationMatrix Identity() { return RotationMatrix(); }
  // Wraps a matrix known to be a rotation (no check).
  static RotationMatrix FromTrusted(const Mat3& m);

  const Mat3& matrix() const { return m_; }
  RotationMatrix Transpose() const { return FromTrusted(m_.transpose()); }
  Vec3 operator*(const Vec3& v) const { return m_ * v; }
  RotationMatrix operator*(const RotationMatrix& o) const {
    return FromTrusted(m_ * o.m_);
  }

 private:
  Mat3 m_ = Mat3::Identity();
};

// max |R^T R - I| combined with |det R - 1|.
double OrthonormalityResidual(const Mat3& m);

RotationMatrix QuatToMatrix(const UnitQuaternion& q);
// Shepperd's method. Throws std::invalid_argument for non-rotations.
UnitQuaternion MatrixToQuat(const RotationMatrix& r);
UnitQuaternion MatrixToQuat(const Mat3& m);

UnitQuaternion ExpMap(const AxisAngle& v);
// Inverse of ExpMap with |result| <= pi. At exactly pi both axis signs are
// valid; the one whose largest-magnitude component is positive is returned,
// so the map is discontinuous there.
AxisAngle LogMap(const UnitQuaternion& q);

// min(|p - q|, |p + q|): a sign-invariant chordal distance in [0, sqrt(2)].
double QuatDistance(const UnitQuaternion& p, const UnitQuaternion& q);
// Geodesic angle of p^-1 q in [0, pi].
double GeodesicAngle(const UnitQuaternion& p, const UnitQuaternion& q);
double GeodesicAngle(const RotationMatrix& a, const RotationMatrix& b);

// R_j R_i^T: maps camera-i coordinates to camera-j coordinates.
RotationMatrix RelativeRotation(const RotationMatrix& r_i,
                                const RotationMatrix& r_j);
UnitQuaternion RelativeRotation(const UnitQuaternion& q_i,
                                const UnitQuaternion& q_j);

// Uniformly distributed rotation from four standard normal draws.
UnitQuaternion QuatFromNormals(double a, double b, double c, double d);

// Pinhole intrinsics in pixels.
struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  bool Valid() const;
  Intrinsics Downscaled(double factor) const;
};

// World-to-camera pose: x_cam = R * X + t.
struct CameraPose {
  RotationMatrix rotation;
  Vec3 translation = Vec3::Zero();
  Intrinsics intrinsics;

  Vec3 Center() const { return -(rotation.matrix().transpose() * translation); }
  Vec3 ToCamera(const Vec3& world) const {
    return rotation.matrix() * world + translation;
  }
  static CameraPose FromCenter(const RotationMatrix& r, const Vec3& center,
                               const Intrinsics& k);
};

// K [R | t] X followed by perspective division. Throws std::domain_error when
// the point is not in front of the camera.
Eigen::Vector2d Project(const CameraPose& pose, const Vec3& world_point);

}  // namespace rmnerf
