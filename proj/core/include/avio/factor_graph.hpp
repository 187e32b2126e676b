#pragma once

#include <map>
#include <string>
#include <vector>

#include "avio/frontend.hpp"
#include "avio/preintegration.hpp"

namespace avio {

/// Per-keyframe optimization state. The tangent block is 15-dimensional in
/// the order (d_p, d_theta, d_v, d_ba, d_bg); orientation perturbations are
/// applied on the right: R <- R * exp(d_theta).
struct KeyframeState {
  int id = -1;
  int frame_index = -1;
  int64_t timestamp_ns = 0;

  Vec3 position = Vec3::Zero();
  Rotation orientation;
  Vec3 velocity = Vec3::Zero();
  BiasState bias;

  std::vector<PatchTrack> patches;

  bool pose_fixed = false;    // pose/velocity/bias block held constant
  bool depths_fixed = false;  // hosted inverse depths held constant

  RigidTransform pose() const { return {orientation, position}; }
};

inline constexpr int kStateDim = 15;

/// One observed correspondence of a hosted patch in a target keyframe.
struct VisualFactor {
  int source_kf = -1;
  int patch_index = -1;
  int target_kf = -1;
  Vec2 observed = Vec2::Zero();
  double weight = 1.0;  // squared provider confidence
};

struct ImuFactor {
  int kf_i = -1;
  int kf_j = -1;
  Preintegration preint;
  std::vector<ImuSample> samples;  // raw interval, kept for re-integration
};

/// Soft prior pulling the optimized bias toward the predictor output.
struct BiasFactor {
  int kf = -1;
  BiasState predicted;
};

struct FactorGraph {
  Vec3 gravity = Vec3(0.0, 0.0, -9.81);
  CameraIntrinsics intrinsics;
  double sigma_bias_accel = 1e-2;
  double sigma_bias_gyro = 1e-3;

  std::map<int, KeyframeState> keyframes;
  std::vector<VisualFactor> visual_factors;
  std::vector<ImuFactor> imu_factors;
  std::vector<BiasFactor> bias_factors;

  KeyframeState& kf(int id);
  const KeyframeState& kf(int id) const;
  bool has_kf(int id) const { return keyframes.count(id) != 0; }
};

struct VisualResidual {
  bool valid = false;  // false when the point lands behind the target camera
  Vec2 r = Vec2::Zero();
  Eigen::Matrix<double, 2, kStateDim> J_source = Eigen::Matrix<double, 2, kStateDim>::Zero();
  Eigen::Matrix<double, 2, kStateDim> J_target = Eigen::Matrix<double, 2, kStateDim>::Zero();
  Vec2 J_depth = Vec2::Zero();  // w.r.t. the hosted inverse depth
  double weight = 1.0;
};

/// r = pi(T_target^-1 T_source backproject(p, d)) - observed, with analytic
/// Jacobians w.r.t. both keyframe tangents and the inverse depth.
VisualResidual reprojection_residual(const FactorGraph& g, const VisualFactor& f);

struct ImuResidual {
  Vec9 r = Vec9::Zero();  // (r_alpha, r_beta, r_theta)
  Eigen::Matrix<double, 9, kStateDim> J_i = Eigen::Matrix<double, 9, kStateDim>::Zero();
  Eigen::Matrix<double, 9, kStateDim> J_j = Eigen::Matrix<double, 9, kStateDim>::Zero();
  Mat9 sqrt_info = Mat9::Identity();  // upper-triangular whitener
};

/// Preintegration residual between the two endpoint states, bias-corrected to
/// first order around the integration reference bias. Whitened by the inverse
/// preintegration covariance.
ImuResidual preintegration_residual(const FactorGraph& g, const ImuFactor& f);

struct BiasResidual {
  Vec6 r = Vec6::Zero();     // (accel, gyro) order
  Vec6 weight = Vec6::Ones();  // diagonal information
};

BiasResidual bias_residual(const FactorGraph& g, const BiasFactor& f);

/// Plain-text dump of states and factors for debugging.
void dump_factor_graph(const FactorGraph& g, const std::string& path);

}  // namespace avio
