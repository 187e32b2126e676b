#include "avio/lie.hpp"

#include <cmath>
#include <stdexcept>

namespace avio {

namespace {
constexpr double kTaylorThreshold = 1e-8;

void check_finite(const Vec3& v, const char* what) {
  if (!v.allFinite()) {
    throw std::invalid_argument(std::string(what) + ": non-finite input");
  }
}
}  // namespace

Rotation::Rotation(double w, double x, double y, double z) : q_(w, x, y, z) {
  normalize_canonicalize();
}

Rotation::Rotation(const Eigen::Quaterniond& q) : q_(q) { normalize_canonicalize(); }

Rotation Rotation::from_matrix(const Mat3& m) { return Rotation(Eigen::Quaterniond(m)); }

void Rotation::normalize_canonicalize() {
  double n = q_.norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw std::invalid_argument("Rotation: quaternion not normalizable");
  }
  q_.coeffs() /= n;
  if (q_.w() < 0.0) {
    q_.coeffs() = -q_.coeffs();
  }
}

bool Rotation::is_approx(const Rotation& other, double tol) const {
  return (q_.coeffs() - other.q_.coeffs()).norm() < tol;
}

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

Rotation so3_exp(const Vec3& omega) {
  check_finite(omega, "so3_exp");
  const double theta2 = omega.squaredNorm();
  const double theta = std::sqrt(theta2);
  double w, s;  // quaternion: [cos(t/2), sin(t/2)/t * omega]
  if (theta < kTaylorThreshold) {
    w = 1.0 - theta2 / 8.0;
    s = 0.5 - theta2 / 48.0;
  } else {
    w = std::cos(0.5 * theta);
    s = std::sin(0.5 * theta) / theta;
  }
  return Rotation(w, s * omega.x(), s * omega.y(), s * omega.z());
}

Vec3 so3_log(const Rotation& r) {
  const Eigen::Quaterniond& q = r.quat();
  const Vec3 v(q.x(), q.y(), q.z());
  const double vn = v.norm();
  const double w = q.w();  // >= 0 by canonicalization, so angle in [0, pi]
  if (vn < kTaylorThreshold) {
    return (2.0 / w) * (1.0 + vn * vn / (3.0 * w * w)) * v;
  }
  const double theta = 2.0 * std::atan2(vn, w);
  return (theta / vn) * v;
}

Mat3 so3_right_jacobian(const Vec3& omega) {
  check_finite(omega, "so3_right_jacobian");
  const double theta2 = omega.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 w = skew(omega);
  double c1, c2;  // Jr = I - c1 [w]x + c2 [w]x^2
  if (theta < kTaylorThreshold) {
    c1 = 0.5 - theta2 / 24.0;
    c2 = 1.0 / 6.0 - theta2 / 120.0;
  } else {
    c1 = (1.0 - std::cos(theta)) / theta2;
    c2 = (theta - std::sin(theta)) / (theta2 * theta);
  }
  return Mat3::Identity() - c1 * w + c2 * w * w;
}

Mat3 so3_right_jacobian_inv(const Vec3& omega) {
  check_finite(omega, "so3_right_jacobian_inv");
  const double theta2 = omega.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 w = skew(omega);
  double c;  // Jr^-1 = I + 1/2 [w]x + c [w]x^2
  if (theta < kTaylorThreshold) {
    c = 1.0 / 12.0 + theta2 / 720.0;
  } else {
    c = 1.0 / theta2 - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  }
  return Mat3::Identity() + 0.5 * w + c * w * w;
}

Vec3 transform_point(const RigidTransform& t, const Vec3& p) {
  check_finite(p, "transform_point");
  return t.rotation * p + t.translation;
}

}  // namespace avio
