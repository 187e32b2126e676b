#include "avio/imu_init.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <cmath>

namespace avio {

namespace {

/// Least-squares gyro bias from the rotation misfit between visual relative
/// rotations and the preintegrated gamma.
Vec3 solve_gyro_bias(const ImuInitInput& in, const std::vector<Preintegration>& preints) {
  Mat3 h = 1e-12 * Mat3::Identity();
  Vec3 b = Vec3::Zero();
  for (size_t k = 0; k < preints.size(); ++k) {
    const Rotation q_rel =
        in.frames[k].pose.rotation.inverse() * in.frames[k + 1].pose.rotation;
    const Vec3 phi = so3_log(preints[k].gamma.inverse() * q_rel);
    const Mat3& j = preints[k].J_gamma_bg;
    h += j.transpose() * j;
    b += j.transpose() * phi;
  }
  return h.ldlt().solve(b);
}

struct LinearAlignment {
  std::vector<Vec3> velocities;
  Vec3 gravity;
  double scale = 0.0;
  Vec3 accel_bias;
};

/// One joint linear solve. When g_fixed_dir is non-null the gravity block is
/// reduced to two tangent coordinates around that direction with |g| pinned
/// at the configured magnitude.
LinearAlignment solve_alignment(const ImuInitInput& in,
                                const std::vector<Preintegration>& preints,
                                const Vec3* g_fixed_dir) {
  const int n = int(in.frames.size());
  const int g_dim = g_fixed_dir ? 2 : 3;
  const int dim = 3 * n + g_dim + 1 + 3;  // velocities, gravity, scale, b_a
  const int rows = 6 * (n - 1);

  Eigen::Matrix<double, 3, 2> tangent;
  Vec3 g0 = Vec3::Zero();
  if (g_fixed_dir) {
    const Vec3 d = g_fixed_dir->normalized();
    g0 = in.gravity_magnitude * d;
    Vec3 any = std::abs(d.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
    tangent.col(0) = d.cross(any).normalized();
    tangent.col(1) = d.cross(tangent.col(0)).normalized();
  }

  MatX a = MatX::Zero(rows, dim);
  VecX rhs = VecX::Zero(rows);
  const int col_g = 3 * n;
  const int col_s = col_g + g_dim;
  const int col_ba = col_s + 1;

  for (int k = 0; k + 1 < n; ++k) {
    const Preintegration& pre = preints[k];
    const double dt = pre.dt_total;
    const Mat3 r_t = in.frames[k].pose.rotation.matrix().transpose();
    const Vec3 dp = in.frames[k + 1].pose.translation - in.frames[k].pose.translation;
    const int row = 6 * k;

    // alpha rows
    a.block<3, 3>(row, 3 * k) = -r_t * dt;
    a.block<3, 1>(row, col_s) = r_t * dp;
    a.block<3, 3>(row, col_ba) = -pre.J_alpha_ba;
    // beta rows
    a.block<3, 3>(row + 3, 3 * k) = -r_t;
    a.block<3, 3>(row + 3, 3 * (k + 1)) = r_t;
    a.block<3, 3>(row + 3, col_ba) = -pre.J_beta_ba;

    Mat3 ga = -0.5 * r_t * dt * dt;
    Mat3 gb = -r_t * dt;
    if (g_fixed_dir) {
      a.block<3, 2>(row, col_g) = ga * tangent;
      a.block<3, 2>(row + 3, col_g) = gb * tangent;
      rhs.segment<3>(row) = pre.alpha - ga * g0;
      rhs.segment<3>(row + 3) = pre.beta - gb * g0;
    } else {
      a.block<3, 3>(row, col_g) = ga;
      a.block<3, 3>(row + 3, col_g) = gb;
      rhs.segment<3>(row) = pre.alpha;
      rhs.segment<3>(row + 3) = pre.beta;
    }
  }

  const VecX x = a.colPivHouseholderQr().solve(rhs);
  LinearAlignment out;
  out.velocities.resize(n);
  for (int k = 0; k < n; ++k) out.velocities[k] = x.segment<3>(3 * k);
  if (g_fixed_dir) {
    out.gravity = g0 + tangent * x.segment<2>(col_g);
    out.gravity = in.gravity_magnitude * out.gravity.normalized();
  } else {
    out.gravity = x.segment<3>(col_g);
  }
  out.scale = x(col_s);
  out.accel_bias = x.segment<3>(col_ba);
  return out;
}

}  // namespace

Rotation rotation_between(const Vec3& from, const Vec3& to) {
  return Rotation(Eigen::Quaterniond::FromTwoVectors(from, to));
}

ImuInitResult run_imu_initialization(const ImuInitInput& in) {
  ImuInitResult out;
  const size_t n = in.frames.size();
  if (n < 5 || in.interval_samples.size() != n - 1) {
    out.failure_reason = "too few frames or mismatched interval count";
    return out;
  }

  // Preintegrate at zero bias, estimate the gyro bias, re-integrate. Two
  // rounds are enough; the problem is nearly linear in b_g.
  BiasState bias;
  std::vector<Preintegration> preints(n - 1);
  for (int round = 0; round < 2; ++round) {
    for (size_t k = 0; k + 1 < n; ++k) {
      preints[k] = integrate_batch(in.interval_samples[k], bias, in.noise);
    }
    bias.gyro += solve_gyro_bias(in, preints);
  }
  for (size_t k = 0; k + 1 < n; ++k) {
    preints[k] = integrate_batch(in.interval_samples[k], bias, in.noise);
  }

  LinearAlignment first = solve_alignment(in, preints, nullptr);
  if (!(first.scale > 0.0)) {
    out.failure_reason = "non-positive scale";
    return out;
  }
  const double mag_misfit =
      std::abs(first.gravity.norm() - in.gravity_magnitude) / in.gravity_magnitude;
  if (mag_misfit > 0.1) {
    out.failure_reason = "gravity magnitude misfit " + std::to_string(mag_misfit);
    return out;
  }

  // Refine with |g| pinned to the known magnitude.
  const Vec3 g_dir = first.gravity;
  LinearAlignment refined = solve_alignment(in, preints, &g_dir);
  if (!(refined.scale > 0.0)) {
    out.failure_reason = "non-positive scale after refinement";
    return out;
  }

  out.success = true;
  out.scale = refined.scale;
  out.gravity = refined.gravity;
  out.bias = BiasState{refined.accel_bias, bias.gyro};
  out.velocities = std::move(refined.velocities);
  return out;
}

}  // namespace avio
