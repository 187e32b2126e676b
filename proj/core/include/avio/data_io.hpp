#pragma once

#include <optional>
#include <string>
#include <vector>

#include "avio/config.hpp"
#include "avio/preintegration.hpp"
#include "avio/scene_sim.hpp"

namespace avio {

struct ImuLog {
  std::vector<ImuSample> samples;
  std::string source_path;
  double rate_estimate_hz = 0.0;
  bool rate_plausible = true;  // [50, 1000] Hz
};

struct GroundTruthRecord {
  int64_t timestamp_ns = 0;
  Vec3 position = Vec3::Zero();
  Rotation orientation;
  Vec3 velocity = Vec3::Zero();
  BiasState bias;
};

struct GroundTruthTrajectory {
  std::vector<GroundTruthRecord> records;

  /// Linear position / slerp orientation interpolation; clamps at the ends.
  GroundTruthRecord at(int64_t timestamp_ns) const;
};

struct TimedPose {
  int64_t timestamp_ns = 0;
  RigidTransform pose;
};

using TrajectoryEstimate = std::vector<TimedPose>;

/// EuRoC ASL IMU CSV: timestamp [ns], w_xyz [rad/s], a_xyz [m/s^2].
/// Structural errors (wrong field count, disorder) are rejected with the
/// offending line number; no silent repair.
ImuLog load_euroc_imu(const std::string& path);
void write_euroc_imu(const std::vector<ImuSample>& samples, const std::string& path);

/// EuRoC state ground truth column order: timestamp, p_xyz, q_wxyz, v_xyz,
/// b_g xyz, b_a xyz. Extra columns are tolerated; quaternions off unit norm
/// by more than 1e-3 are an error.
GroundTruthTrajectory load_groundtruth(const std::string& path);
void write_groundtruth(const GroundTruthTrajectory& traj, const std::string& path);

/// TUM trajectory text: "timestamp_s tx ty tz qx qy qz qw", 9 significant
/// digits, LF endings.
void write_tum_trajectory(const TrajectoryEstimate& traj, const std::string& path);
TrajectoryEstimate load_tum_trajectory(const std::string& path);

/// A full synthetic sequence directory: imu.csv + groundtruth.csv + scene.cfg.
struct Sequence {
  std::vector<ImuSample> imu;
  GroundTruthTrajectory ground_truth;
  std::vector<BiasState> true_bias;  // per IMU sample, empty for real logs
  SimConfig sim;
  IntensityField field;
  bool has_scene = false;
};

void write_sequence(const Sequence& seq, const std::string& dir);
Sequence load_sequence(const std::string& dir);

/// Builds the full sequence (trajectory, IMU, ground truth, texture) from a
/// simulation config using the default benchmark trajectory shape.
Sequence generate_sequence(const SimConfig& cfg);

}  // namespace avio
