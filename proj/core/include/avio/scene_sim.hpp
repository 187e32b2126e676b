#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "avio/preintegration.hpp"

namespace avio {

struct SinusoidTerm {
  double amplitude = 0.0;
  double frequency_hz = 0.0;
  double phase = 0.0;
};

/// offset + sum of sinusoids, with analytic first and second derivatives.
struct AxisSignal {
  double offset = 0.0;
  std::vector<SinusoidTerm> terms;

  double value(double t) const;
  double d1(double t) const;
  double d2(double t) const;
};

/// Analytic ground-truth motion: position per axis and an axis-angle
/// orientation signal, both sums of sinusoids. The body orientation is
/// exp(rotvec(t)); body angular rate follows from the right Jacobian.
struct TrajectoryModel {
  AxisSignal position[3];
  AxisSignal rotvec[3];
  double duration_s = 20.0;
  double frame_rate_hz = 20.0;
  double imu_rate_hz = 200.0;

  Vec3 position_at(double t) const;
  Vec3 velocity_at(double t) const;
  Vec3 acceleration_at(double t) const;
  Rotation orientation_at(double t) const;
  Vec3 angular_velocity_body(double t) const;
  RigidTransform pose_at(double t) const;
};

/// Structured truth bias: a constant part, a random walk, and a linear
/// coupling from (body acceleration, body angular rate) to a bias offset.
struct BiasProcess {
  BiasState fixed_bias;
  Vec6 walk_std = Vec6::Zero();  // per sqrt(s), order (accel, gyro)
  Mat6 motion_coupling = Mat6::Zero();

  BiasState instantaneous(const Vec3& accel_body, const Vec3& omega_body) const;
};

struct CameraIntrinsics {
  double fx = 320.0, fy = 320.0, cx = 320.0, cy = 240.0;
  int width = 640, height = 480;
};

/// Band-limited scalar texture on the world plane z = 0 with analytic
/// gradient.
struct IntensityField {
  double offset = 0.5;
  struct Term {
    double amplitude;
    double freq_x;  // cycles per meter
    double freq_y;
    double phase;
  };
  std::vector<Term> terms;

  double value(double x, double y) const;
  Vec2 gradient(double x, double y) const;

  static IntensityField procedural(uint64_t seed, int n_terms = 24);
};

struct SynthImuResult {
  std::vector<ImuSample> samples;
  std::vector<BiasState> true_bias;  // per sample
};

/// Generates IMU measurements along the trajectory: specific force plus bias
/// plus white noise (discrete std sigma * sqrt(rate)). Deterministic per seed.
SynthImuResult synth_imu(const TrajectoryModel& traj, const BiasProcess& bias,
                         const ImuNoiseParams& noise, const Vec3& gravity, uint64_t seed);

struct Projection {
  Vec2 pixel;
  double depth;
};

/// Pinhole projection of a world point through a camera-to-world pose.
/// Empty when the point is at or behind the camera plane.
std::optional<Projection> project(const CameraIntrinsics& intrinsics, const RigidTransform& pose,
                                  const Vec3& point_w);

struct RayHit {
  Vec3 point_w;
  double depth;  // along the camera z axis
};

/// Casts the pixel ray onto the textured plane z = 0.
std::optional<RayHit> raycast_plane(const CameraIntrinsics& intrinsics,
                                    const RigidTransform& pose, const Vec2& pixel);

struct IntensitySample {
  double intensity;
  Vec2 grad_pixel;
};

/// Intensity seen at a pixel plus its gradient w.r.t. the pixel coordinates.
/// Empty when the ray misses the plane.
std::optional<IntensitySample> sample_intensity(const IntensityField& field,
                                                const CameraIntrinsics& intrinsics,
                                                const RigidTransform& pose, const Vec2& pixel);

/// Gentle default benchmark trajectory: camera ~5 m above the plane looking
/// down, sinusoidal translation and small attitude wobble.
TrajectoryModel default_trajectory();

}  // namespace avio
