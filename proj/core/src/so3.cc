#include "rmnerf/so3.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Geometry>
#include <Eigen/LU>

namespace rmnerf {
namespace {

constexpr double kEpsilon = std::numeric_limits<double>::epsilon();

Eigen::Vector4d Canonicalize(Eigen::Vector4d q) {
  bool flip = false;
  if (q[0] < 0.0) {
    flip = true;
  } else if (q[0] == 0.0) {
    for (int i = 1; i < 4; ++i) {
      if (q[i] != 0.0) {
        flip = q[i] < 0.0;
        break;
      }
    }
  }
  if (flip) q = -q;
  return q;
}

}  // namespace

UnitQuaternion::UnitQuaternion(double w, double x, double y, double z)
    : UnitQuaternion(Eigen::Vector4d(w, x, y, z)) {}

UnitQuaternion::UnitQuaternion(const Eigen::Vector4d& wxyz) {
  const double n = wxyz.norm();
  if (!std::isfinite(n) || n == 0.0) {
    throw std::invalid_argument("UnitQuaternion: zero or non-finite input");
  }
  // Inputs that are already unit up to a few ulps keep their exact bits so
  // that serialized quaternions round-trip bit-exactly.
  wxyz_ = Canonicalize(std::abs(n - 1.0) <= 4.0 * kEpsilon ? wxyz : wxyz / n);
}

UnitQuaternion UnitQuaternion::Inverse() const {
  return UnitQuaternion(w(), -x(), -y(), -z());
}

Vec3 UnitQuaternion::Rotate(const Vec3& v) const {
  const Vec3 u = vec();
  const Vec3 t = 2.0 * u.cross(v);
  return v + w() * t + u.cross(t);
}

Eigen::Vector4d HamiltonProduct(const Eigen::Vector4d& p,
                                const Eigen::Vector4d& q) {
  return {p[0] * q[0] - p[1] * q[1] - p[2] * q[2] - p[3] * q[3],
          p[0] * q[1] + p[1] * q[0] + p[2] * q[3] - p[3] * q[2],
          p[0] * q[2] - p[1] * q[3] + p[2] * q[0] + p[3] * q[1],
          p[0] * q[3] + p[1] * q[2] - p[2] * q[1] + p[3] * q[0]};
}

UnitQuaternion QuatMul(const UnitQuaternion& p, const UnitQuaternion& q) {
  return UnitQuaternion(HamiltonProduct(p.coeffs(), q.coeffs()));
}

double OrthonormalityResidual(const Mat3& m) {
  const double ortho = (m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff();
  return std::max(ortho, std::abs(m.determinant() - 1.0));
}

RotationMatrix::RotationMatrix(const Mat3& m) : m_(m) {
  if (!m.allFinite() || OrthonormalityResidual(m) > kOrthoTol) {
    throw std::invalid_argument("RotationMatrix: input is not in SO(3)");
  }
}

RotationMatrix RotationMatrix::FromTrusted(const Mat3& m) {
  RotationMatrix r;
  r.m_ = m;
  return r;
}

RotationMatrix QuatToMatrix(const UnitQuaternion& q) {
  const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
  Mat3 m;
  m << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return RotationMatrix::FromTrusted(m);
}

UnitQuaternion MatrixToQuat(const Mat3& m) {
  if (!m.allFinite() || OrthonormalityResidual(m) > kOrthoTol) {
    throw std::invalid_argument("MatrixToQuat: input is not in SO(3)");
  }
  const double trace = m.trace();
  Eigen::Vector4d q;
  if (trace > 0.0) {
    const double s = 2.0 * std::sqrt(1.0 + trace);
    q << 0.25 * s, (m(2, 1) - m(1, 2)) / s, (m(0, 2) - m(2, 0)) / s,
        (m(1, 0) - m(0, 1)) / s;
  } else if (m(0, 0) > m(1, 1) && m(0, 0) > m(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2));
    q << (m(2, 1) - m(1, 2)) / s, 0.25 * s, (m(0, 1) + m(1, 0)) / s,
        (m(0, 2) + m(2, 0)) / s;
  } else if (m(1, 1) > m(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2));
    q << (m(0, 2) - m(2, 0)) / s, (m(0, 1) + m(1, 0)) / s, 0.25 * s,
        (m(1, 2) + m(2, 1)) / s;
  } else {
    const double s = 2.0 * std::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1));
    q << (m(1, 0) - m(0, 1)) / s, (m(0, 2) + m(2, 0)) / s,
        (m(1, 2) + m(2, 1)) / s, 0.25 * s;
  }
  return UnitQuaternion(q);
}

UnitQuaternion MatrixToQuat(const RotationMatrix& r) {
  return MatrixToQuat(r.matrix());
}

UnitQuaternion ExpMap(const AxisAngle& v) {
  const double theta = v.norm();
  if (theta < kSmallAngle) {
    const double t2 = theta * theta;
    const Vec3 xyz = v * (0.5 - t2 / 48.0);
    return UnitQuaternion(1.0 - t2 / 8.0, xyz.x(), xyz.y(), xyz.z());
  }
  const Vec3 xyz = v * (std::sin(0.5 * theta) / theta);
  return UnitQuaternion(std::cos(0.5 * theta), xyz.x(), xyz.y(), xyz.z());
}

AxisAngle LogMap(const UnitQuaternion& q) {
  const Vec3 u = q.vec();
  const double n = u.norm();
  const double w = q.w();
  if (n < kSmallAngle) {
    // theta / n = 2 / w * (1 - n^2 / (3 w^2)) + O(n^4).
    return u * (2.0 / w) * (1.0 - n * n / (3.0 * w * w));
  }
  if (w == 0.0) {
    Vec3 axis = u / n;
    Eigen::Index largest = 0;
    axis.cwiseAbs().maxCoeff(&largest);
    if (axis[largest] < 0.0) axis = -axis;
    return axis * M_PI;
  }
  return u * (2.0 * std::atan2(n, w) / n);
}

double QuatDistance(const UnitQuaternion& p, const UnitQuaternion& q) {
  return std::min((p.coeffs() - q.coeffs()).norm(),
                  (p.coeffs() + q.coeffs()).norm());
}

double GeodesicAngle(const UnitQuaternion& p, const UnitQuaternion& q) {
  const Eigen::Vector4d d =
      HamiltonProduct(p.Inverse().coeffs(), q.coeffs());
  return 2.0 * std::atan2(d.tail<3>().norm(), std::abs(d[0]));
}

double GeodesicAngle(const RotationMatrix& a, const RotationMatrix& b) {
  return GeodesicAngle(MatrixToQuat(a), MatrixToQuat(b));
}

RotationMatrix RelativeRotation(const RotationMatrix& r_i,
                                const RotationMatrix& r_j) {
  return RotationMatrix::FromTrusted(r_j.matrix() * r_i.matrix().transpose());
}

UnitQuaternion RelativeRotation(const UnitQuaternion& q_i,
                                const UnitQuaternion& q_j) {
  return q_j * q_i.Inverse();
}

UnitQuaternion QuatFromNormals(double a, double b, double c, double d) {
  const Eigen::Vector4d v(a, b, c, d);
  if (v.norm() == 0.0) return UnitQuaternion();
  return UnitQuaternion(v);
}

bool Intrinsics::Valid() const {
  if (!(std::isfinite(fx) && std::isfinite(fy) && fx > 0.0 && fy > 0.0)) {
    return false;
  }
  if (!(std::isfinite(cx) && std::isfinite(cy))) return false;
  if (width > 0 && (cx < 0.0 || cx > width)) return false;
  if (height > 0 && (cy < 0.0 || cy > height)) return false;
  return true;
}

Intrinsics Intrinsics::Downscaled(double factor) const {
  Intrinsics k = *this;
  k.fx /= factor;
  k.fy /= factor;
  k.cx /= factor;
  k.cy /= factor;
  k.width = static_cast<int>(width / factor);
  k.height = static_cast<int>(height / factor);
  return k;
}

CameraPose CameraPose::FromCenter(const RotationMatrix& r, const Vec3& center,
                                  const Intrinsics& k) {
  CameraPose pose;
  pose.rotation = r;
  pose.translation = -(r.matrix() * center);
  pose.intrinsics = k;
  return pose;
}

Eigen::Vector2d Project(const CameraPose& pose, const Vec3& world_point) {
  const Vec3 pc = pose.ToCamera(world_point);
  if (!(pc.z() > 0.0)) {
    throw std::domain_error("Project: point is behind the camera");
  }
  const Intrinsics& k = pose.intrinsics;
  return {k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy};
}

}  // namespace rmnerf
