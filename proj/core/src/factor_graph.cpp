#include "avio/factor_graph.hpp"

#include <Eigen/Cholesky>
#include <fstream>
#include <stdexcept>

namespace avio {

KeyframeState& FactorGraph::kf(int id) {
  auto it = keyframes.find(id);
  if (it == keyframes.end()) throw std::out_of_range("FactorGraph: unknown keyframe id");
  return it->second;
}

const KeyframeState& FactorGraph::kf(int id) const {
  auto it = keyframes.find(id);
  if (it == keyframes.end()) throw std::out_of_range("FactorGraph: unknown keyframe id");
  return it->second;
}

VisualResidual reprojection_residual(const FactorGraph& g, const VisualFactor& f) {
  const KeyframeState& src = g.kf(f.source_kf);
  const KeyframeState& tgt = g.kf(f.target_kf);
  const PatchTrack& patch = src.patches.at(f.patch_index);
  const CameraIntrinsics& intr = g.intrinsics;

  VisualResidual out;
  out.weight = f.weight;
  if (!(patch.inv_depth > 0.0)) return out;

  const Vec3 p_c_s((patch.center.x() - intr.cx) / intr.fx / patch.inv_depth,
                   (patch.center.y() - intr.cy) / intr.fy / patch.inv_depth,
                   1.0 / patch.inv_depth);
  const Mat3 R_s = src.orientation.matrix();
  const Mat3 R_t = tgt.orientation.matrix();
  const Vec3 p_w = R_s * p_c_s + src.position;
  const Vec3 p_c_t = R_t.transpose() * (p_w - tgt.position);
  if (p_c_t.z() <= 1e-6) return out;

  const double iz = 1.0 / p_c_t.z();
  out.valid = true;
  out.r = Vec2(intr.fx * p_c_t.x() * iz + intr.cx, intr.fy * p_c_t.y() * iz + intr.cy) - f.observed;

  Eigen::Matrix<double, 2, 3> P;
  P << intr.fx * iz, 0.0, -intr.fx * p_c_t.x() * iz * iz,
       0.0, intr.fy * iz, -intr.fy * p_c_t.y() * iz * iz;

  const Mat3 Rt_T = R_t.transpose();
  out.J_source.block<2, 3>(0, 0) = P * Rt_T;
  out.J_source.block<2, 3>(0, 3) = -P * Rt_T * R_s * skew(p_c_s);
  out.J_target.block<2, 3>(0, 0) = -P * Rt_T;
  out.J_target.block<2, 3>(0, 3) = P * skew(p_c_t);
  out.J_depth = P * (Rt_T * R_s * (-p_c_s / patch.inv_depth));
  return out;
}

ImuResidual preintegration_residual(const FactorGraph& g, const ImuFactor& f) {
  const KeyframeState& si = g.kf(f.kf_i);
  const KeyframeState& sj = g.kf(f.kf_j);
  const Preintegration& pre = f.preint;
  const double dt = pre.dt_total;

  const CorrectedPreintegration corr = bias_correct(pre, si.bias);
  const Mat3 Ri_T = si.orientation.matrix().transpose();
  const Vec3 u = sj.position - si.position - si.velocity * dt - 0.5 * g.gravity * dt * dt;
  const Vec3 w = sj.velocity - si.velocity - g.gravity * dt;

  ImuResidual out;
  out.r.segment<3>(0) = Ri_T * u - corr.alpha;
  out.r.segment<3>(3) = Ri_T * w - corr.beta;
  const Rotation delta = corr.gamma.inverse() * si.orientation.inverse() * sj.orientation;
  const Vec3 phi = so3_log(delta);
  out.r.segment<3>(6) = phi;

  const Mat3 Jr_inv = so3_right_jacobian_inv(phi);

  // alpha rows
  out.J_i.block<3, 3>(0, 0) = -Ri_T;
  out.J_i.block<3, 3>(0, 3) = skew(Ri_T * u);
  out.J_i.block<3, 3>(0, 6) = -Ri_T * dt;
  out.J_i.block<3, 3>(0, 9) = -pre.J_alpha_ba;
  out.J_i.block<3, 3>(0, 12) = -pre.J_alpha_bg;
  out.J_j.block<3, 3>(0, 0) = Ri_T;
  // beta rows
  out.J_i.block<3, 3>(3, 3) = skew(Ri_T * w);
  out.J_i.block<3, 3>(3, 6) = -Ri_T;
  out.J_i.block<3, 3>(3, 9) = -pre.J_beta_ba;
  out.J_i.block<3, 3>(3, 12) = -pre.J_beta_bg;
  out.J_j.block<3, 3>(3, 6) = Ri_T;
  // theta rows
  const Mat3 Rij = (si.orientation.inverse() * sj.orientation).matrix();
  out.J_i.block<3, 3>(6, 3) = -Jr_inv * Rij.transpose();
  out.J_i.block<3, 3>(6, 12) = -Jr_inv * so3_exp(phi).inverse().matrix() * pre.J_gamma_bg;
  out.J_j.block<3, 3>(6, 3) = Jr_inv;

  // Whitener: upper Cholesky factor of the information matrix.
  Mat9 info = pre.covariance.ldlt().solve(Mat9::Identity());
  info = 0.5 * (info + info.transpose());
  Eigen::LLT<Mat9> llt(info);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("preintegration_residual: covariance not invertible");
  }
  out.sqrt_info = llt.matrixU();
  return out;
}

BiasResidual bias_residual(const FactorGraph& g, const BiasFactor& f) {
  const KeyframeState& s = g.kf(f.kf);
  BiasResidual out;
  out.r = s.bias.vector() - f.predicted.vector();
  const double wa = 1.0 / (g.sigma_bias_accel * g.sigma_bias_accel);
  const double wg = 1.0 / (g.sigma_bias_gyro * g.sigma_bias_gyro);
  out.weight << wa, wa, wa, wg, wg, wg;
  return out;
}

void dump_factor_graph(const FactorGraph& g, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("dump_factor_graph: cannot open " + path);
  out.precision(12);
  out << "gravity " << g.gravity.transpose() << "\n";
  out << "keyframes " << g.keyframes.size() << "\n";
  for (const auto& [id, kf] : g.keyframes) {
    out << "kf " << id << " frame " << kf.frame_index << " t " << kf.timestamp_ns
        << (kf.pose_fixed ? " fixed" : " free") << "\n"
        << "  p " << kf.position.transpose() << "\n"
        << "  q " << kf.orientation.quat().w() << " " << kf.orientation.quat().vec().transpose()
        << "\n"
        << "  v " << kf.velocity.transpose() << "\n"
        << "  ba " << kf.bias.accel.transpose() << " bg " << kf.bias.gyro.transpose() << "\n"
        << "  patches " << kf.patches.size() << (kf.depths_fixed ? " (depths fixed)" : "") << "\n";
  }
  out << "visual_factors " << g.visual_factors.size() << "\n";
  for (const VisualFactor& f : g.visual_factors) {
    out << "  v " << f.source_kf << ":" << f.patch_index << " -> " << f.target_kf << " obs "
        << f.observed.transpose() << " w " << f.weight << "\n";
  }
  out << "imu_factors " << g.imu_factors.size() << "\n";
  for (const ImuFactor& f : g.imu_factors) {
    out << "  i " << f.kf_i << " -> " << f.kf_j << " dt " << f.preint.dt_total << " samples "
        << f.samples.size() << "\n";
  }
  out << "bias_factors " << g.bias_factors.size() << "\n";
  for (const BiasFactor& f : g.bias_factors) {
    out << "  b " << f.kf << " pred " << f.predicted.vector().transpose() << "\n";
  }
}

}  // namespace avio
