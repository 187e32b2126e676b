#include <doctest.h>

#include <random>

#include "avio/lie.hpp"

using namespace avio;

namespace {

// Independent Rodrigues-formula oracle: R = I + sinθ/θ [ω]x + (1-cosθ)/θ² [ω]x².
Mat3 rodrigues_oracle(const Vec3& omega) {
  const double theta = omega.norm();
  if (theta == 0.0) return Mat3::Identity();
  const Mat3 k = skew(omega);
  return Mat3::Identity() + std::sin(theta) / theta * k +
         (1.0 - std::cos(theta)) / (theta * theta) * (k * k);
}

Vec3 random_vec3(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return {u(rng), u(rng), u(rng)};
}

}  // namespace

TEST_CASE("so3_exp identity and axis rotations") {
  const Rotation id = so3_exp(Vec3::Zero());
  CHECK(id.quat().w() == doctest::Approx(1.0));
  CHECK(id.quat().vec().norm() == doctest::Approx(0.0));

  const Rotation rz = so3_exp(Vec3(0, 0, M_PI / 2));
  const Vec3 mapped = rz * Vec3(1, 0, 0);
  CHECK((mapped - Vec3(0, 1, 0)).norm() < 1e-12);
}

TEST_CASE("so3_exp matches Rodrigues matrix oracle") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> mag(0.1, 3.0);
  for (int i = 0; i < 50; ++i) {
    Vec3 axis = random_vec3(rng, 1.0);
    if (axis.norm() < 1e-3) axis = Vec3(1, 0, 0);
    const Vec3 omega = axis.normalized() * mag(rng);
    CHECK((so3_exp(omega).matrix() - rodrigues_oracle(omega)).norm() < 1e-12);
  }
}

TEST_CASE("so3_exp rejects non-finite input") {
  CHECK_THROWS_AS(so3_exp(Vec3(std::numeric_limits<double>::quiet_NaN(), 0, 0)),
                  std::invalid_argument);
}

TEST_CASE("so3_log round trip") {
  CHECK(so3_log(Rotation()).norm() == doctest::Approx(0.0));
  const Vec3 omega(0.3, -0.2, 0.1);
  CHECK((so3_log(so3_exp(omega)) - omega).norm() < 1e-10);

  std::mt19937_64 rng(11);
  for (int i = 0; i < 50; ++i) {
    Vec3 axis = random_vec3(rng, 1.0);
    if (axis.norm() < 1e-3) axis = Vec3(0, 1, 0);
    axis.normalize();
    // axis-angle oracle at a large angle (3.0 rad < pi)
    const Vec3 omega3 = 3.0 * axis;
    CHECK((so3_log(so3_exp(omega3)) - omega3).norm() < 1e-9);
  }
}

TEST_CASE("so3_log round trip near pi") {
  std::mt19937_64 rng(13);
  for (int i = 0; i < 20; ++i) {
    Vec3 axis = random_vec3(rng, 1.0).normalized();
    const Vec3 omega = (M_PI - 1e-6) * axis;
    CHECK((so3_log(so3_exp(omega)) - omega).norm() < 1e-8);
  }
}

TEST_CASE("right Jacobian basics and defect order") {
  CHECK((so3_right_jacobian(Vec3::Zero()) - Mat3::Identity()).norm() == doctest::Approx(0.0));

  // closed form at omega = (0,0,1)
  const Vec3 omega(0, 0, 1);
  const Mat3 jr = so3_right_jacobian(omega);
  const double theta = 1.0;
  const Mat3 k = skew(omega);
  const Mat3 closed = Mat3::Identity() - (1.0 - std::cos(theta)) / (theta * theta) * k +
                      (theta - std::sin(theta)) / (theta * theta * theta) * (k * k);
  CHECK((jr - closed).norm() < 1e-12);

  // exp(w + d) ~ exp(w) exp(Jr d): defect shrinks quadratically in |d|
  std::mt19937_64 rng(17);
  for (int i = 0; i < 20; ++i) {
    const Vec3 w = random_vec3(rng, 1.5);
    const Vec3 d = random_vec3(rng, 1.0).normalized() * 1e-4;
    auto defect = [&](const Vec3& dd) {
      const Rotation lhs = so3_exp(w + dd);
      const Rotation rhs = so3_exp(w) * so3_exp(so3_right_jacobian(w) * dd);
      return so3_log(rhs.inverse() * lhs).norm();
    };
    const double d1 = defect(d);
    const double d2 = defect(0.5 * d);
    if (d1 > 1e-14) CHECK(d2 < d1 / 3.0);  // quadratic => factor ~4
  }
}

TEST_CASE("right Jacobian inverse is the inverse") {
  std::mt19937_64 rng(19);
  for (int i = 0; i < 20; ++i) {
    const Vec3 w = random_vec3(rng, 2.0);
    CHECK((so3_right_jacobian(w) * so3_right_jacobian_inv(w) - Mat3::Identity()).norm() < 1e-10);
  }
}

TEST_CASE("transform_point matches homogeneous-matrix oracle") {
  CHECK((transform_point(RigidTransform{}, Vec3(1, 2, 3)) - Vec3(1, 2, 3)).norm() == 0.0);
  CHECK((transform_point({Rotation(), Vec3(0, 0, 1)}, Vec3::Zero()) - Vec3(0, 0, 1)).norm() ==
        0.0);

  std::mt19937_64 rng(23);
  for (int i = 0; i < 20; ++i) {
    const RigidTransform t{so3_exp(random_vec3(rng, 2.0)), random_vec3(rng, 5.0)};
    const Vec3 p = random_vec3(rng, 10.0);
    Eigen::Matrix4d h = Eigen::Matrix4d::Identity();
    h.topLeftCorner<3, 3>() = t.rotation.matrix();
    h.topRightCorner<3, 1>() = t.translation;
    const Eigen::Vector4d hp = h * Eigen::Vector4d(p.x(), p.y(), p.z(), 1.0);
    CHECK((transform_point(t, p) - hp.head<3>()).norm() < 1e-10);
  }
}

TEST_CASE("rotation invariants: canonical w, norm preservation, associativity") {
  std::mt19937_64 rng(29);
  for (int i = 0; i < 30; ++i) {
    const Rotation a = so3_exp(random_vec3(rng, 3.0));
    const Rotation b = so3_exp(random_vec3(rng, 3.0));
    const Rotation c = so3_exp(random_vec3(rng, 3.0));
    CHECK(a.quat().w() >= 0.0);
    CHECK(std::abs(a.quat().norm() - 1.0) < 1e-12);

    const Vec3 v = random_vec3(rng, 4.0);
    CHECK(std::abs((a * v).norm() - v.norm()) < 1e-12);

    const Rotation lhs = (a * b) * c;
    const Rotation rhs = a * (b * c);
    CHECK(so3_log(lhs.inverse() * rhs).norm() < 1e-10);
  }
}

TEST_CASE("rigid transform compose/inverse") {
  std::mt19937_64 rng(31);
  for (int i = 0; i < 20; ++i) {
    const RigidTransform t{so3_exp(random_vec3(rng, 2.5)), random_vec3(rng, 3.0)};
    const RigidTransform id = t * t.inverse();
    CHECK(id.translation.norm() < 1e-10);
    CHECK(so3_log(id.rotation).norm() < 1e-10);
  }
}
