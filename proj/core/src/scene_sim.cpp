#include "avio/scene_sim.hpp"

#include <cmath>
#include <random>

namespace avio {

namespace {
constexpr double kTwoPi = 2.0 * M_PI;
}

double AxisSignal::value(double t) const {
  double v = offset;
  for (const auto& s : terms) v += s.amplitude * std::sin(kTwoPi * s.frequency_hz * t + s.phase);
  return v;
}

double AxisSignal::d1(double t) const {
  double v = 0.0;
  for (const auto& s : terms) {
    const double w = kTwoPi * s.frequency_hz;
    v += s.amplitude * w * std::cos(w * t + s.phase);
  }
  return v;
}

double AxisSignal::d2(double t) const {
  double v = 0.0;
  for (const auto& s : terms) {
    const double w = kTwoPi * s.frequency_hz;
    v -= s.amplitude * w * w * std::sin(w * t + s.phase);
  }
  return v;
}

Vec3 TrajectoryModel::position_at(double t) const {
  return {position[0].value(t), position[1].value(t), position[2].value(t)};
}
Vec3 TrajectoryModel::velocity_at(double t) const {
  return {position[0].d1(t), position[1].d1(t), position[2].d1(t)};
}
Vec3 TrajectoryModel::acceleration_at(double t) const {
  return {position[0].d2(t), position[1].d2(t), position[2].d2(t)};
}

Rotation TrajectoryModel::orientation_at(double t) const {
  return so3_exp({rotvec[0].value(t), rotvec[1].value(t), rotvec[2].value(t)});
}

Vec3 TrajectoryModel::angular_velocity_body(double t) const {
  // R = exp(phi): dR = R [Jr(phi) dphi]x
  const Vec3 phi{rotvec[0].value(t), rotvec[1].value(t), rotvec[2].value(t)};
  const Vec3 dphi{rotvec[0].d1(t), rotvec[1].d1(t), rotvec[2].d1(t)};
  return so3_right_jacobian(phi) * dphi;
}

RigidTransform TrajectoryModel::pose_at(double t) const {
  return {orientation_at(t), position_at(t)};
}

BiasState BiasProcess::instantaneous(const Vec3& accel_body, const Vec3& omega_body) const {
  Vec6 in;
  in << accel_body, omega_body;
  const Vec6 offset = motion_coupling * in;
  return {fixed_bias.accel + offset.head<3>(), fixed_bias.gyro + offset.tail<3>()};
}

double IntensityField::value(double x, double y) const {
  double v = offset;
  for (const auto& s : terms) {
    v += s.amplitude * std::sin(kTwoPi * (s.freq_x * x + s.freq_y * y) + s.phase);
  }
  return v;
}

Vec2 IntensityField::gradient(double x, double y) const {
  Vec2 g = Vec2::Zero();
  for (const auto& s : terms) {
    const double c = s.amplitude * kTwoPi * std::cos(kTwoPi * (s.freq_x * x + s.freq_y * y) + s.phase);
    g.x() += c * s.freq_x;
    g.y() += c * s.freq_y;
  }
  return g;
}

IntensityField IntensityField::procedural(uint64_t seed, int n_terms) {
  IntensityField f;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, kTwoPi);
  std::uniform_real_distribution<double> freq(0.05, 1.2);
  std::uniform_real_distribution<double> dir(0.0, kTwoPi);
  for (int i = 0; i < n_terms; ++i) {
    const double fmag = freq(rng);
    const double th = dir(rng);
    f.terms.push_back({0.4 / double(n_terms) * 3.0, fmag * std::cos(th), fmag * std::sin(th),
                       phase(rng)});
  }
  return f;
}

SynthImuResult synth_imu(const TrajectoryModel& traj, const BiasProcess& bias,
                         const ImuNoiseParams& noise, const Vec3& gravity, uint64_t seed) {
  SynthImuResult out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const double dt = 1.0 / traj.imu_rate_hz;
  const int n = int(std::llround(traj.duration_s * traj.imu_rate_hz)) + 1;
  const double sg = noise.sigma_g * std::sqrt(traj.imu_rate_hz);
  const double sa = noise.sigma_a * std::sqrt(traj.imu_rate_hz);

  Vec6 walk = Vec6::Zero();
  out.samples.reserve(n);
  out.true_bias.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double t = i * dt;
    const Rotation r = traj.orientation_at(t);
    const Mat3 Rt = r.matrix().transpose();
    const Vec3 accel_body = Rt * traj.acceleration_at(t);
    const Vec3 omega_body = traj.angular_velocity_body(t);

    BiasState b = bias.instantaneous(accel_body, omega_body);
    b.accel += walk.head<3>();
    b.gyro += walk.tail<3>();

    ImuSample s;
    s.timestamp_ns = int64_t(std::llround(t * 1e9));
    s.accel = Rt * (traj.acceleration_at(t) - gravity) + b.accel;
    s.gyro = omega_body + b.gyro;
    if (sa > 0.0) {
      s.accel += sa * Vec3(gauss(rng), gauss(rng), gauss(rng));
    }
    if (sg > 0.0) {
      s.gyro += sg * Vec3(gauss(rng), gauss(rng), gauss(rng));
    }
    out.samples.push_back(s);
    out.true_bias.push_back(b);

    for (int c = 0; c < 6; ++c) {
      if (bias.walk_std[c] > 0.0) walk[c] += bias.walk_std[c] * std::sqrt(dt) * gauss(rng);
    }
  }
  return out;
}

std::optional<Projection> project(const CameraIntrinsics& intrinsics, const RigidTransform& pose,
                                  const Vec3& point_w) {
  const Vec3 pc = pose.inverse().rotation * (point_w - pose.translation);
  if (pc.z() <= 1e-6) return std::nullopt;
  return Projection{{intrinsics.fx * pc.x() / pc.z() + intrinsics.cx,
                     intrinsics.fy * pc.y() / pc.z() + intrinsics.cy},
                    pc.z()};
}

std::optional<RayHit> raycast_plane(const CameraIntrinsics& intrinsics,
                                    const RigidTransform& pose, const Vec2& pixel) {
  const Vec3 dir_cam{(pixel.x() - intrinsics.cx) / intrinsics.fx,
                     (pixel.y() - intrinsics.cy) / intrinsics.fy, 1.0};
  const Vec3 dir_w = pose.rotation * dir_cam;
  if (std::abs(dir_w.z()) < 1e-12) return std::nullopt;
  const double t = -pose.translation.z() / dir_w.z();
  if (t <= 1e-6) return std::nullopt;
  return RayHit{pose.translation + t * dir_w, t};
}

std::optional<IntensitySample> sample_intensity(const IntensityField& field,
                                                const CameraIntrinsics& intrinsics,
                                                const RigidTransform& pose, const Vec2& pixel) {
  const Vec3 dir_cam{(pixel.x() - intrinsics.cx) / intrinsics.fx,
                     (pixel.y() - intrinsics.cy) / intrinsics.fy, 1.0};
  const Mat3 R = pose.rotation.matrix();
  const Vec3 dir_w = R * dir_cam;
  if (std::abs(dir_w.z()) < 1e-12) return std::nullopt;
  const double t = -pose.translation.z() / dir_w.z();
  if (t <= 1e-6) return std::nullopt;
  const Vec3 q = pose.translation + t * dir_w;

  // dq/dpixel through the ray direction and the plane intersection distance
  const Vec3 dd_du = R.col(0) / intrinsics.fx;
  const Vec3 dd_dv = R.col(1) / intrinsics.fy;
  const double dt_du = pose.translation.z() * dd_du.z() / (dir_w.z() * dir_w.z());
  const double dt_dv = pose.translation.z() * dd_dv.z() / (dir_w.z() * dir_w.z());
  const Vec3 dq_du = dt_du * dir_w + t * dd_du;
  const Vec3 dq_dv = dt_dv * dir_w + t * dd_dv;

  const Vec2 gf = field.gradient(q.x(), q.y());
  IntensitySample out;
  out.intensity = field.value(q.x(), q.y());
  out.grad_pixel = {gf.x() * dq_du.x() + gf.y() * dq_du.y(),
                    gf.x() * dq_dv.x() + gf.y() * dq_dv.y()};
  return out;
}

TrajectoryModel default_trajectory() {
  TrajectoryModel traj;
  // Frequencies are kept low enough that 200 Hz sampling closes the
  // preintegration residuals below 1e-6 (quadrature error scales with the
  // snap of the specific force).
  traj.position[0].offset = 0.0;
  traj.position[0].terms = {{0.8, 0.14, 0.0}, {0.25, 0.22, 1.1}};
  traj.position[1].offset = 0.0;
  traj.position[1].terms = {{0.8, 0.12, 1.7}, {0.2, 0.23, 0.4}};
  traj.position[2].offset = 5.0;
  traj.position[2].terms = {{0.3, 0.16, 0.9}};
  // base attitude: camera z axis pointing down at the plane
  traj.rotvec[0].offset = M_PI;
  traj.rotvec[0].terms = {{0.08, 0.15, 0.3}};
  traj.rotvec[1].terms = {{0.08, 0.13, 2.0}};
  traj.rotvec[2].terms = {{0.10, 0.10, 1.2}};
  return traj;
}

}  // namespace avio
