#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace avio {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Vec9 = Eigen::Matrix<double, 9, 1>;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat9 = Eigen::Matrix<double, 9, 9>;
using MatX = Eigen::MatrixXd;
using VecX = Eigen::VectorXd;

/// Unit quaternion with the real part kept non-negative so each rotation has
/// a single canonical representation.
class Rotation {
 public:
  Rotation() : q_(1.0, 0.0, 0.0, 0.0) {}
  Rotation(double w, double x, double y, double z);
  explicit Rotation(const Eigen::Quaterniond& q);
  static Rotation from_matrix(const Mat3& m);

  Mat3 matrix() const { return q_.toRotationMatrix(); }
  const Eigen::Quaterniond& quat() const { return q_; }

  Rotation inverse() const { return Rotation(q_.conjugate()); }
  Rotation operator*(const Rotation& rhs) const { return Rotation(q_ * rhs.q_); }
  Vec3 operator*(const Vec3& v) const { return q_ * v; }

  bool is_approx(const Rotation& other, double tol = 1e-12) const;

 private:
  void normalize_canonicalize();
  Eigen::Quaterniond q_;
};

struct RigidTransform {
  Rotation rotation;
  Vec3 translation = Vec3::Zero();

  RigidTransform() = default;
  RigidTransform(const Rotation& r, const Vec3& t) : rotation(r), translation(t) {}

  RigidTransform operator*(const RigidTransform& rhs) const {
    return {rotation * rhs.rotation, translation + rotation * rhs.translation};
  }
  RigidTransform inverse() const {
    Rotation rinv = rotation.inverse();
    return {rinv, -(rinv * translation)};
  }
};

Mat3 skew(const Vec3& v);

/// Exact exponential map (Rodrigues), Taylor branch below 1e-8.
Rotation so3_exp(const Vec3& omega);

/// Inverse of so3_exp. Angle is in [0, pi]; at exactly pi the axis sign
/// follows the canonical (w >= 0) quaternion representation.
Vec3 so3_log(const Rotation& r);

/// Right Jacobian of SO(3): exp(w + d) ~= exp(w) * exp(Jr(w) d).
Mat3 so3_right_jacobian(const Vec3& omega);
Mat3 so3_right_jacobian_inv(const Vec3& omega);

Vec3 transform_point(const RigidTransform& t, const Vec3& p);

}  // namespace avio
