#pragma once

#include <string>
#include <vector>

#include "avio/preintegration.hpp"

namespace avio {

/// Visual-inertial alignment: recovers metric scale, gravity direction,
/// per-frame velocities and IMU biases from up-to-scale visual poses plus the
/// preintegrated IMU between consecutive frames.
struct ImuInitInput {
  struct Frame {
    int64_t timestamp_ns = 0;
    RigidTransform pose;  // visual (up-to-scale) world frame
  };
  std::vector<Frame> frames;
  /// raw IMU per interval [k, k+1]; re-integrated after the gyro bias solve
  std::vector<std::vector<ImuSample>> interval_samples;
  double gravity_magnitude = 9.81;
  ImuNoiseParams noise;
};

struct ImuInitResult {
  bool success = false;
  std::string failure_reason;

  double scale = 1.0;
  Vec3 gravity = Vec3::Zero();  // in the visual world frame, |g| = G
  BiasState bias;
  std::vector<Vec3> velocities;  // metric, visual world frame, per frame
};

ImuInitResult run_imu_initialization(const ImuInitInput& in);

/// Shortest rotation R with R * from || to (unit vectors not required).
Rotation rotation_between(const Vec3& from, const Vec3& to);

}  // namespace avio
