#include "avio/solver.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace avio {

namespace {

constexpr int kMaxEscalations = 5;

void scatter_block(NormalSystem& sys, int row_off, int col_off,
                   const Eigen::Ref<const MatX>& block) {
  sys.H_mm.block(row_off, col_off, block.rows(), block.cols()) += block;
}

}  // namespace

NormalSystem build_normal_system(const FactorGraph& g) {
  NormalSystem sys;
  for (const auto& [id, kf] : g.keyframes) {
    if (kf.pose_fixed) continue;
    sys.kf_offset[id] = int(sys.kf_ids.size()) * kStateDim;
    sys.kf_ids.push_back(id);
  }
  for (const VisualFactor& f : g.visual_factors) {
    const KeyframeState& src = g.kf(f.source_kf);
    if (src.depths_fixed || !src.patches.at(f.patch_index).alive) continue;
    const std::pair<int, int> key{f.source_kf, f.patch_index};
    if (sys.depth_index.count(key) == 0) {
      sys.depth_index[key] = int(sys.depth_keys.size());
      sys.depth_keys.push_back(key);
    }
  }

  const int nm = sys.motion_dim();
  const int nd = sys.depth_dim();
  sys.H_mm = MatX::Zero(nm, nm);
  sys.H_md = MatX::Zero(nm, nd);
  sys.H_dd = VecX::Zero(nd);
  sys.b_m = VecX::Zero(nm);
  sys.b_d = VecX::Zero(nd);

  bool any_active = false;

  for (const VisualFactor& f : g.visual_factors) {
    if (!g.kf(f.source_kf).patches.at(f.patch_index).alive) continue;
    const VisualResidual res = reprojection_residual(g, f);
    if (!res.valid) {
      ++sys.skipped_visual;
      continue;
    }
    sys.cost += res.weight * res.r.squaredNorm();
    ++sys.residual_count;

    const auto src_it = sys.kf_offset.find(f.source_kf);
    const auto tgt_it = sys.kf_offset.find(f.target_kf);
    const auto dep_it = sys.depth_index.find({f.source_kf, f.patch_index});
    const bool src_free = src_it != sys.kf_offset.end();
    const bool tgt_free = tgt_it != sys.kf_offset.end();
    const bool dep_free = dep_it != sys.depth_index.end();
    if (!src_free && !tgt_free && !dep_free) continue;
    any_active = true;

    // visual Jacobians only touch the pose part (first 6 columns) of the
    // 15-dim keyframe block; restrict the products accordingly
    const double w = res.weight;
    const auto Js = res.J_source.template leftCols<6>();
    const auto Jt = res.J_target.template leftCols<6>();
    if (src_free) {
      sys.H_mm.block<6, 6>(src_it->second, src_it->second) += w * Js.transpose() * Js;
      sys.b_m.segment<6>(src_it->second) += w * Js.transpose() * res.r;
    }
    if (tgt_free) {
      sys.H_mm.block<6, 6>(tgt_it->second, tgt_it->second) += w * Jt.transpose() * Jt;
      sys.b_m.segment<6>(tgt_it->second) += w * Jt.transpose() * res.r;
    }
    if (src_free && tgt_free) {
      const Eigen::Matrix<double, 6, 6> cross = w * Js.transpose() * Jt;
      sys.H_mm.block<6, 6>(src_it->second, tgt_it->second) += cross;
      sys.H_mm.block<6, 6>(tgt_it->second, src_it->second) += cross.transpose();
    }
    if (dep_free) {
      const int d = dep_it->second;
      sys.H_dd(d) += w * res.J_depth.squaredNorm();
      sys.b_d(d) += w * res.J_depth.dot(res.r);
      if (src_free) {
        sys.H_md.block<6, 1>(src_it->second, d) += w * Js.transpose() * res.J_depth;
      }
      if (tgt_free) {
        sys.H_md.block<6, 1>(tgt_it->second, d) += w * Jt.transpose() * res.J_depth;
      }
    }
  }

  for (const ImuFactor& f : g.imu_factors) {
    const ImuResidual res = preintegration_residual(g, f);
    const Vec9 rw = res.sqrt_info * res.r;
    sys.cost += rw.squaredNorm();
    ++sys.residual_count;

    const auto i_it = sys.kf_offset.find(f.kf_i);
    const auto j_it = sys.kf_offset.find(f.kf_j);
    const bool i_free = i_it != sys.kf_offset.end();
    const bool j_free = j_it != sys.kf_offset.end();
    if (!i_free && !j_free) continue;
    any_active = true;

    const Eigen::Matrix<double, 9, kStateDim> Ai = res.sqrt_info * res.J_i;
    const Eigen::Matrix<double, 9, kStateDim> Aj = res.sqrt_info * res.J_j;
    if (i_free) {
      scatter_block(sys, i_it->second, i_it->second, Ai.transpose() * Ai);
      sys.b_m.segment<kStateDim>(i_it->second) += Ai.transpose() * rw;
    }
    if (j_free) {
      scatter_block(sys, j_it->second, j_it->second, Aj.transpose() * Aj);
      sys.b_m.segment<kStateDim>(j_it->second) += Aj.transpose() * rw;
    }
    if (i_free && j_free) {
      const MatX cross = Ai.transpose() * Aj;
      scatter_block(sys, i_it->second, j_it->second, cross);
      scatter_block(sys, j_it->second, i_it->second, cross.transpose());
    }
  }

  for (const BiasFactor& f : g.bias_factors) {
    const BiasResidual res = bias_residual(g, f);
    sys.cost += res.r.cwiseProduct(res.weight).dot(res.r);
    ++sys.residual_count;
    const auto it = sys.kf_offset.find(f.kf);
    if (it == sys.kf_offset.end()) continue;
    any_active = true;
    for (int k = 0; k < 6; ++k) {
      const int col = it->second + 9 + k;
      sys.H_mm(col, col) += res.weight(k);
      sys.b_m(col) += res.weight(k) * res.r(k);
    }
  }

  if (!any_active) {
    throw std::runtime_error("build_normal_system: no factor touches a free variable");
  }
  return sys;
}

double evaluate_cost(const FactorGraph& g) {
  double cost = 0.0;
  const CameraIntrinsics& intr = g.intrinsics;
  for (const VisualFactor& f : g.visual_factors) {
    // residual-only re-projection with the exact validity rules of
    // reprojection_residual; skipping the Jacobians here roughly halves the
    // per-iteration cost of the step-acceptance check
    const KeyframeState& src = g.kf(f.source_kf);
    const PatchTrack& patch = src.patches.at(f.patch_index);
    if (!patch.alive || !(patch.inv_depth > 0.0)) continue;
    const KeyframeState& tgt = g.kf(f.target_kf);
    const Vec3 p_c_s((patch.center.x() - intr.cx) / intr.fx / patch.inv_depth,
                     (patch.center.y() - intr.cy) / intr.fy / patch.inv_depth,
                     1.0 / patch.inv_depth);
    const Vec3 p_w = src.orientation.matrix() * p_c_s + src.position;
    const Vec3 p_c_t = tgt.orientation.matrix().transpose() * (p_w - tgt.position);
    if (p_c_t.z() <= 1e-6) continue;
    const double iz = 1.0 / p_c_t.z();
    const Vec2 r = Vec2(intr.fx * p_c_t.x() * iz + intr.cx, intr.fy * p_c_t.y() * iz + intr.cy) -
                   f.observed;
    cost += f.weight * r.squaredNorm();
  }
  for (const ImuFactor& f : g.imu_factors) {
    const ImuResidual res = preintegration_residual(g, f);
    cost += (res.sqrt_info * res.r).squaredNorm();
  }
  for (const BiasFactor& f : g.bias_factors) {
    const BiasResidual res = bias_residual(g, f);
    cost += res.r.cwiseProduct(res.weight).dot(res.r);
  }
  return cost;
}

SchurResult schur_solve(const NormalSystem& sys, double lambda) {
  SchurResult out;
  const int nm = sys.motion_dim();
  const int nd = sys.depth_dim();

  double lam = lambda;
  for (int attempt = 0; attempt <= kMaxEscalations; ++attempt, lam *= 10.0) {
    out.escalations = attempt;
    out.lambda_used = lam;

    const VecX d_damped = sys.H_dd.array() + lam;
    if (nd > 0 && d_damped.minCoeff() <= 0.0) continue;
    const VecX d_inv = d_damped.cwiseInverse();

    VecX delta_m(nm);
    if (nm > 0) {
      MatX s = sys.H_mm;
      s.diagonal().array() += lam;
      if (nd > 0) s -= sys.H_md * d_inv.asDiagonal() * sys.H_md.transpose();
      VecX rhs = -sys.b_m;
      if (nd > 0) rhs += sys.H_md * d_inv.cwiseProduct(sys.b_d);
      Eigen::LDLT<MatX> ldlt(s);
      if (ldlt.info() != Eigen::Success) continue;
      delta_m = ldlt.solve(rhs);
      if (!delta_m.allFinite()) continue;
    } else {
      delta_m.resize(0);
    }

    VecX delta_d(nd);
    if (nd > 0) {
      VecX rhs_d = -sys.b_d;
      if (nm > 0) rhs_d -= sys.H_md.transpose() * delta_m;
      delta_d = d_inv.cwiseProduct(rhs_d);
      if (!delta_d.allFinite()) continue;
    }

    out.success = true;
    out.delta_motion = std::move(delta_m);
    out.delta_depth = std::move(delta_d);
    return out;
  }
  return out;
}

int apply_state_update(FactorGraph& g, const NormalSystem& sys, const VecX& delta_motion,
                       const VecX& delta_depth, double depth_min) {
  for (int idx = 0; idx < int(sys.kf_ids.size()); ++idx) {
    KeyframeState& kf = g.kf(sys.kf_ids[idx]);
    const auto d = delta_motion.segment<kStateDim>(idx * kStateDim);
    kf.position += d.segment<3>(0);
    kf.orientation = kf.orientation * so3_exp(d.segment<3>(3));
    kf.velocity += d.segment<3>(6);
    kf.bias.accel += d.segment<3>(9);
    kf.bias.gyro += d.segment<3>(12);
  }
  int clamped = 0;
  for (int d = 0; d < int(sys.depth_keys.size()); ++d) {
    const auto& [kf_id, patch_index] = sys.depth_keys[d];
    double& inv_depth = g.kf(kf_id).patches.at(patch_index).inv_depth;
    inv_depth += delta_depth(d);
    if (inv_depth < depth_min) {
      inv_depth = depth_min;
      ++clamped;
    }
  }
  return clamped;
}

namespace {

// snapshot of exactly the states a solve can move; factors never change, so
// copying the whole graph per iteration would be wasted work
struct StateSnapshot {
  struct KfState {
    Vec3 position, velocity;
    Rotation orientation;
    BiasState bias;
  };
  std::vector<KfState> kfs;
  std::vector<double> inv_depths;
};

StateSnapshot take_snapshot(const FactorGraph& g, const NormalSystem& sys) {
  StateSnapshot snap;
  snap.kfs.reserve(sys.kf_ids.size());
  for (int id : sys.kf_ids) {
    const KeyframeState& kf = g.kf(id);
    snap.kfs.push_back({kf.position, kf.velocity, kf.orientation, kf.bias});
  }
  snap.inv_depths.reserve(sys.depth_keys.size());
  for (const auto& [kf_id, patch_index] : sys.depth_keys) {
    snap.inv_depths.push_back(g.kf(kf_id).patches.at(patch_index).inv_depth);
  }
  return snap;
}

void restore_snapshot(FactorGraph& g, const NormalSystem& sys, const StateSnapshot& snap) {
  for (size_t i = 0; i < sys.kf_ids.size(); ++i) {
    KeyframeState& kf = g.kf(sys.kf_ids[i]);
    kf.position = snap.kfs[i].position;
    kf.velocity = snap.kfs[i].velocity;
    kf.orientation = snap.kfs[i].orientation;
    kf.bias = snap.kfs[i].bias;
  }
  for (size_t d = 0; d < sys.depth_keys.size(); ++d) {
    const auto& [kf_id, patch_index] = sys.depth_keys[d];
    g.kf(kf_id).patches.at(patch_index).inv_depth = snap.inv_depths[d];
  }
}

}  // namespace

GaussNewtonResult gauss_newton(FactorGraph& g, const GaussNewtonOptions& opts) {
  GaussNewtonResult result;
  double lambda = opts.damping;
  double current_cost = std::numeric_limits<double>::quiet_NaN();

  for (int iter = 0; iter < opts.iterations; ++iter) {
    const NormalSystem sys = build_normal_system(g);
    if (iter == 0) result.initial_cost = sys.cost;
    current_cost = sys.cost;
    SchurResult step = schur_solve(sys, lambda);
    if (!step.success) {
      result.solver_failed = true;
      break;
    }

    const StateSnapshot snap = take_snapshot(g, sys);
    int clamps = apply_state_update(g, sys, step.delta_motion, step.delta_depth, opts.depth_min);
    double new_cost = evaluate_cost(g);
    if (new_cost > 2.0 * sys.cost) {
      restore_snapshot(g, sys, snap);
      lambda = step.lambda_used * 10.0;
      ++result.rejected_steps;
      step = schur_solve(sys, lambda);
      if (!step.success) {
        result.solver_failed = true;
        break;
      }
      clamps = apply_state_update(g, sys, step.delta_motion, step.delta_depth, opts.depth_min);
      new_cost = evaluate_cost(g);
      if (new_cost > 2.0 * sys.cost) {
        restore_snapshot(g, sys, snap);
        ++result.rejected_steps;
        break;
      }
    }
    current_cost = new_cost;
    result.depth_clamps += clamps;
    ++result.iterations_run;
  }
  if (!std::isfinite(current_cost)) current_cost = evaluate_cost(g);
  if (opts.iterations == 0) result.initial_cost = current_cost;
  result.final_cost = current_cost;
  return result;
}

}  // namespace avio
