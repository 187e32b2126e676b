#include "avio/preintegration.hpp"

#include <cmath>
#include <stdexcept>

namespace avio {

namespace {

constexpr double kMaxStepSeconds = 0.1;
constexpr double kNsToS = 1e-9;

void check_bias(const BiasState& bias) {
  if (!bias.vector().allFinite() || bias.vector().norm() >= 10.0) {
    throw std::invalid_argument("BiasState: non-finite or implausibly large bias");
  }
}

// Per-step linearization shared by covariance, bias-Jacobian and
// measurement-Jacobian propagation. State order (d_alpha, d_beta, d_theta).
struct StepLinearization {
  Mat9 F;
  // Injection of a perturbation of the midpoint angular rate / of each
  // corrected accel sample into the next error state.
  Eigen::Matrix<double, 9, 3> G_w;
  Eigen::Matrix<double, 9, 3> G_a0;
  Eigen::Matrix<double, 9, 3> G_a1;
};

struct StepResult {
  Preintegration next;
  StepLinearization lin;
  double dt;
};

StepResult integrate_step_impl(const Preintegration& state, const ImuSample& sample_prev,
                               const ImuSample& sample_next, const BiasState& bias,
                               const ImuNoiseParams& noise) {
  check_bias(bias);
  const double dt = double(sample_next.timestamp_ns - sample_prev.timestamp_ns) * kNsToS;
  if (dt <= 0.0) {
    throw std::invalid_argument("integrate_step: non-positive interval");
  }
  if (dt > kMaxStepSeconds) {
    throw std::invalid_argument("integrate_step: IMU stream gap exceeds 0.1 s");
  }
  if (!sample_prev.gyro.allFinite() || !sample_prev.accel.allFinite() ||
      !sample_next.gyro.allFinite() || !sample_next.accel.allFinite()) {
    throw std::invalid_argument("integrate_step: non-finite measurement");
  }

  const Vec3 w_mid = 0.5 * (sample_prev.gyro + sample_next.gyro) - bias.gyro;
  const Vec3 a0 = sample_prev.accel - bias.accel;
  const Vec3 a1 = sample_next.accel - bias.accel;
  const Vec3 a_mid = 0.5 * (a0 + a1);

  StepResult out;
  out.dt = dt;
  Preintegration& next = out.next;
  next = state;

  // Rotation advances by the exact exponential of the averaged rate; the
  // specific-force integrals use Simpson quadrature at {R0, R_mid, R1}, which
  // keeps the per-step defect at O(dt^5) against a step-size-converged oracle.
  const Rotation e_half = so3_exp(w_mid * (0.5 * dt));
  const Rotation e_full = so3_exp(w_mid * dt);
  next.gamma = state.gamma * e_full;
  const Mat3 R0 = state.gamma.matrix();
  const Mat3 Rm = (state.gamma * e_half).matrix();
  const Mat3 R1 = next.gamma.matrix();
  const Vec3 g0 = R0 * a0;
  const Vec3 gm = Rm * a_mid;
  const Vec3 g1 = R1 * a1;

  next.beta = state.beta + dt / 6.0 * (g0 + 4.0 * gm + g1);
  // double integral of the quadratic interpolant against the kernel (dt - s)
  next.alpha = state.alpha + state.beta * dt + dt * dt * (g0 / 6.0 + gm / 3.0);
  next.dt_total = state.dt_total + dt;

  const Mat3 A_theta = e_full.matrix().transpose();
  const Mat3 B_theta = so3_right_jacobian(w_mid * dt);
  const Mat3 B_half = so3_right_jacobian(w_mid * (0.5 * dt));
  // d(g)/d(d_theta) for each quadrature node (right perturbation on gamma)
  const Mat3 S0 = R0 * skew(a0);
  const Mat3 Sm = R0 * skew(e_half.matrix() * a_mid);
  const Mat3 S1 = R0 * skew(e_full.matrix() * a1);
  const Mat3 X_alpha = -(S0 / 6.0 + Sm / 3.0);
  const Mat3 X_beta = -(S0 + 4.0 * Sm + S1) / 6.0;
  // d(g)/d(d_w_mid) through the step rotations
  const Mat3 Wm = Rm * skew(a_mid) * B_half;
  const Mat3 W1 = R1 * skew(a1) * B_theta;

  StepLinearization& lin = out.lin;
  lin.F.setIdentity();
  lin.F.block<3, 3>(0, 3) = Mat3::Identity() * dt;
  lin.F.block<3, 3>(0, 6) = dt * dt * X_alpha;
  lin.F.block<3, 3>(3, 6) = dt * X_beta;
  lin.F.block<3, 3>(6, 6) = A_theta;

  lin.G_w.setZero();
  lin.G_w.block<3, 3>(0, 0) = -dt * dt * dt / 6.0 * Wm;
  lin.G_w.block<3, 3>(3, 0) = -dt * dt * (Wm / 3.0 + W1 / 6.0);
  lin.G_w.block<3, 3>(6, 0) = B_theta * dt;

  lin.G_a0.setZero();
  lin.G_a0.block<3, 3>(0, 0) = dt * dt * (R0 + Rm) / 6.0;
  lin.G_a0.block<3, 3>(3, 0) = dt * (R0 / 6.0 + Rm / 3.0);
  lin.G_a1.setZero();
  lin.G_a1.block<3, 3>(0, 0) = dt * dt * Rm / 6.0;
  lin.G_a1.block<3, 3>(3, 0) = dt * (Rm / 3.0 + R1 / 6.0);

  // Bias Jacobians: bias enters every measurement with sign -1.
  Eigen::Matrix<double, 9, 3> J_ba, J_bg;
  J_ba << state.J_alpha_ba, state.J_beta_ba, Mat3::Zero();
  J_bg << state.J_alpha_bg, state.J_beta_bg, state.J_gamma_bg;
  J_ba = (lin.F * J_ba - lin.G_a0 - lin.G_a1).eval();
  J_bg = (lin.F * J_bg - lin.G_w).eval();
  next.J_alpha_ba = J_ba.block<3, 3>(0, 0);
  next.J_beta_ba = J_ba.block<3, 3>(3, 0);
  next.J_alpha_bg = J_bg.block<3, 3>(0, 0);
  next.J_beta_bg = J_bg.block<3, 3>(3, 0);
  next.J_gamma_bg = J_bg.block<3, 3>(6, 0);

  // Discrete per-sample noise variance sigma^2 / dt; the midpoint gyro uses
  // the average of two samples, the accel term one sample per end point.
  const double qg = noise.sigma_g * noise.sigma_g / dt;
  const double qa = noise.sigma_a * noise.sigma_a / dt;
  Mat9 cov = lin.F * state.covariance * lin.F.transpose();
  cov += 0.5 * qg * lin.G_w * lin.G_w.transpose();  // two half-weight gyro samples
  cov += qa * lin.G_a0 * lin.G_a0.transpose();
  cov += qa * lin.G_a1 * lin.G_a1.transpose();
  next.covariance = 0.5 * (cov + cov.transpose());

  return out;
}

void check_batch(const std::vector<ImuSample>& samples) {
  if (samples.size() < 2) {
    throw std::invalid_argument("integrate_batch: need at least 2 samples");
  }
  for (size_t i = 1; i < samples.size(); ++i) {
    if (samples[i].timestamp_ns <= samples[i - 1].timestamp_ns) {
      throw std::invalid_argument("integrate_batch: timestamps not strictly increasing");
    }
  }
}

}  // namespace

Preintegration integrate_step(const Preintegration& state, const ImuSample& sample_prev,
                              const ImuSample& sample_next, const BiasState& bias,
                              const ImuNoiseParams& noise) {
  return integrate_step_impl(state, sample_prev, sample_next, bias, noise).next;
}

Preintegration integrate_batch(const std::vector<ImuSample>& samples, const BiasState& bias,
                               const ImuNoiseParams& noise) {
  check_batch(samples);
  Preintegration p;
  p.reference_bias = bias;
  for (size_t i = 0; i + 1 < samples.size(); ++i) {
    p = integrate_step(p, samples[i], samples[i + 1], bias, noise);
  }
  p.reference_bias = bias;
  return p;
}

CorrectedPreintegration bias_correct(const Preintegration& p, const BiasState& new_bias) {
  const Vec3 dba = new_bias.accel - p.reference_bias.accel;
  const Vec3 dbg = new_bias.gyro - p.reference_bias.gyro;
  CorrectedPreintegration c;
  c.alpha = p.alpha + p.J_alpha_ba * dba + p.J_alpha_bg * dbg;
  c.beta = p.beta + p.J_beta_ba * dba + p.J_beta_bg * dbg;
  c.gamma = p.gamma * so3_exp(p.J_gamma_bg * dbg);
  return c;
}

CorrectedPreintegration compose_preintegration(const Preintegration& first,
                                               const Preintegration& second) {
  CorrectedPreintegration c;
  const Mat3 R1 = first.gamma.matrix();
  c.alpha = first.alpha + first.beta * second.dt_total + R1 * second.alpha;
  c.beta = first.beta + R1 * second.beta;
  c.gamma = first.gamma * second.gamma;
  return c;
}

double composed_dt(const Preintegration& first, const Preintegration& second) {
  return first.dt_total + second.dt_total;
}

MeasurementJacobians preintegration_jacobians_wrt_measurements(
    const std::vector<ImuSample>& samples, const BiasState& bias, const ImuNoiseParams& noise) {
  check_batch(samples);
  const size_t n_steps = samples.size() - 1;
  std::vector<StepLinearization> lins;
  lins.reserve(n_steps);
  Preintegration p;
  p.reference_bias = bias;
  for (size_t i = 0; i < n_steps; ++i) {
    StepResult r = integrate_step_impl(p, samples[i], samples[i + 1], bias, noise);
    lins.push_back(r.lin);
    p = r.next;
  }

  MeasurementJacobians out;
  out.d_accel.assign(samples.size(), Eigen::Matrix<double, 9, 3>::Zero());
  out.d_gyro.assign(samples.size(), Eigen::Matrix<double, 9, 3>::Zero());

  // Suffix products of the step transition matrices: Phi maps a perturbation
  // injected after step k to the final state.
  Mat9 phi = Mat9::Identity();
  for (size_t k = n_steps; k-- > 0;) {
    const StepLinearization& lin = lins[k];
    const Eigen::Matrix<double, 9, 3> gw = phi * lin.G_w;
    out.d_accel[k] += phi * lin.G_a0;
    out.d_accel[k + 1] += phi * lin.G_a1;
    out.d_gyro[k] += 0.5 * gw;
    out.d_gyro[k + 1] += 0.5 * gw;
    phi = (phi * lin.F).eval();
  }
  return out;
}

}  // namespace avio
