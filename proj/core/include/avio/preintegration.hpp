#pragma once

#include <cstdint>
#include <vector>

#include "avio/lie.hpp"

namespace avio {

struct ImuSample {
  int64_t timestamp_ns = 0;
  Vec3 gyro = Vec3::Zero();   // rad/s, before bias subtraction
  Vec3 accel = Vec3::Zero();  // m/s^2, before bias subtraction
};

struct BiasState {
  Vec3 accel = Vec3::Zero();  // m/s^2
  Vec3 gyro = Vec3::Zero();   // rad/s

  Vec6 vector() const {
    Vec6 b;
    b << accel, gyro;
    return b;
  }
  static BiasState from_vector(const Vec6& b) { return {b.head<3>(), b.tail<3>()}; }
};

struct ImuNoiseParams {
  double sigma_g = 1.7e-4;  // rad/s/sqrt(Hz)
  double sigma_a = 2e-3;    // m/s^2/sqrt(Hz)
};

/// Relative-motion pseudo-measurement between two image frames: translation
/// (alpha), velocity (beta) and rotation (gamma) terms integrated in the body
/// frame of the earlier image frame, with covariance over (d_alpha, d_beta,
/// d_theta) and first-order bias Jacobians. Measurements are integrated with
/// the midpoint rule, rotation by the exact exponential.
struct Preintegration {
  Vec3 alpha = Vec3::Zero();
  Vec3 beta = Vec3::Zero();
  Rotation gamma;
  double dt_total = 0.0;
  Mat9 covariance = Mat9::Zero();

  Mat3 J_alpha_ba = Mat3::Zero();
  Mat3 J_alpha_bg = Mat3::Zero();
  Mat3 J_beta_ba = Mat3::Zero();
  Mat3 J_beta_bg = Mat3::Zero();
  Mat3 J_gamma_bg = Mat3::Zero();

  BiasState reference_bias;
};

/// Bias-corrected (alpha, beta, gamma) at a bias near the reference.
struct CorrectedPreintegration {
  Vec3 alpha;
  Vec3 beta;
  Rotation gamma;
};

/// Advances the preintegration by one IMU interval [sample_prev, sample_next].
/// Throws if the interval is non-positive or exceeds 0.1 s.
Preintegration integrate_step(const Preintegration& state, const ImuSample& sample_prev,
                              const ImuSample& sample_next, const BiasState& bias,
                              const ImuNoiseParams& noise = {});

/// Left fold of integrate_step over >= 2 samples with strictly increasing
/// timestamps; records the bias used as reference_bias.
Preintegration integrate_batch(const std::vector<ImuSample>& samples, const BiasState& bias,
                               const ImuNoiseParams& noise = {});

/// First-order correction of (alpha, beta, gamma) to a nearby bias.
CorrectedPreintegration bias_correct(const Preintegration& p, const BiasState& new_bias);

/// Chains two preintegrations over adjacent intervals (alpha/beta/gamma and
/// dt only; covariance and bias Jacobians are not composed here).
CorrectedPreintegration compose_preintegration(const Preintegration& first,
                                               const Preintegration& second);
double composed_dt(const Preintegration& first, const Preintegration& second);

/// d(alpha, beta, theta)/d(accel_i, gyro_i) for every sample of a batch;
/// theta is the right-tangent perturbation of gamma. Blocks are 9x3 each.
struct MeasurementJacobians {
  std::vector<Eigen::Matrix<double, 9, 3>> d_accel;
  std::vector<Eigen::Matrix<double, 9, 3>> d_gyro;
};

MeasurementJacobians preintegration_jacobians_wrt_measurements(
    const std::vector<ImuSample>& samples, const BiasState& bias,
    const ImuNoiseParams& noise = {});

}  // namespace avio
