#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "avio/scene_sim.hpp"

namespace avio {

/// Flat key=value text config. Lines starting with '#' and blank lines are
/// ignored. Unknown keys are rejected by the typed loaders below.
class KeyValueConfig {
 public:
  static KeyValueConfig from_file(const std::string& path);
  static KeyValueConfig from_string(const std::string& text);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  std::string get_string(const std::string& key, const std::string& fallback);
  double get_double(const std::string& key, double fallback);
  int get_int(const std::string& key, int fallback);
  uint64_t get_uint64(const std::string& key, uint64_t fallback);
  bool get_bool(const std::string& key, bool fallback);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  /// Keys present in the file but never consumed by a getter.
  std::vector<std::string> unused_keys() const;

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, bool> consumed_;
};

enum class SessionMode { kOnlineLearning, kDeployment };
enum class ProviderKind { kOracleNoisy, kLearnableCorrector, kOracleWithCorrector };
enum class BiasPredictorKind { kNetwork, kRandomWalk };

/// Every tunable of the tracking/learning loop. Defaults are the values the
/// system is calibrated for (EuRoC-class sensors, 20 Hz frames).
struct SessionConfig {
  SessionMode mode = SessionMode::kOnlineLearning;

  int window_size = 10;             // free keyframes
  int patches_per_frame = 96;
  int association_span = 13;        // previous keyframes searched
  int viba_iterations = 2;
  int imu_loss_span = 2;            // frames covered by the preintegration loss
  int photo_loss_span = 4;          // frames covered by the photometric loss
  int visual_update_every = 100;    // iterations
  int bias_update_every = 1;        // iterations
  int max_keyframe_gap = 3;         // frames
  int covisibility_cap = 8;         // pairs
  int imu_tail_online = 4;          // frames with IMU constraints in online mode

  double lr_visual = 1e-5;
  double lr_bias_pre_viba = 1e-4;
  double lr_bias_viba = 1e-6;
  int epochs = 60;
  int visual_only_epochs = 30;

  int map_init_frames = 8;
  int imu_init_trigger_1 = 40;
  int imu_init_trigger_2 = 80;
  int stats_freeze_frame = 240;
  double parallax_threshold_px = 15.0;
  double cull_disparity_threshold_px = 8.0;
  /// association gate: tracked-phase predictions farther than this from the
  /// reprojection of the current estimate are discarded (0 disables)
  double match_gate_px = 6.0;
  double gravity_tolerance = 0.1;   // relative magnitude misfit for init retry

  double sigma_bias_accel = 1e-2;
  double sigma_bias_gyro = 1e-3;
  double damping = 1e-6;
  double gravity_magnitude = 9.81;
  double scene_mean_depth = 5.0;

  ImuNoiseParams imu_noise;

  ProviderKind provider = ProviderKind::kOracleNoisy;
  double oracle_pixel_noise_std = 0.0;
  double oracle_outlier_rate = 0.0;
  double oracle_outlier_std = 20.0;
  uint64_t provider_seed = 0;

  BiasPredictorKind bias_predictor = BiasPredictorKind::kNetwork;
  uint64_t net_seed = 0;

  bool feedback_enabled = true;

  static SessionConfig from_config(KeyValueConfig& cfg);
  std::string serialize() const;
};

/// Synthetic-sequence generation settings.
struct SimConfig {
  double duration_s = 20.0;
  double frame_rate_hz = 20.0;
  double imu_rate_hz = 200.0;
  uint64_t seed = 1;
  uint64_t field_seed = 7;

  ImuNoiseParams imu_noise;
  double gravity_magnitude = 9.81;

  BiasState fixed_bias;
  Vec6 walk_std = Vec6::Zero();
  double coupling_accel = 0.0;  // accel bias per body accel
  double coupling_gyro = 0.0;   // gyro bias per body angular rate

  CameraIntrinsics intrinsics;

  static SimConfig from_config(KeyValueConfig& cfg);
  std::string serialize() const;
};

}  // namespace avio
