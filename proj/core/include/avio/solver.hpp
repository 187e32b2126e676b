#pragma once

#include <map>
#include <utility>
#include <vector>

#include "avio/factor_graph.hpp"

namespace avio {

/// Gauss-Newton normal equations with the structure (motion | depth) kept
/// separate: H_mm is dense over free keyframe blocks, H_dd is the diagonal
/// over free inverse depths, H_md couples them. Solve H delta = -b.
struct NormalSystem {
  std::vector<int> kf_ids;  // free keyframes in ascending id order
  std::map<int, int> kf_offset;
  std::vector<std::pair<int, int>> depth_keys;  // (source_kf, patch_index)
  std::map<std::pair<int, int>, int> depth_index;

  MatX H_mm;
  MatX H_md;
  VecX H_dd;
  VecX b_m;
  VecX b_d;

  double cost = 0.0;
  size_t residual_count = 0;
  size_t skipped_visual = 0;  // factors invalid at the linearization point

  int motion_dim() const { return int(kf_ids.size()) * kStateDim; }
  int depth_dim() const { return int(depth_keys.size()); }
};

/// Linearizes every factor at the current graph state. Throws when the graph
/// has no factor touching a free variable.
NormalSystem build_normal_system(const FactorGraph& g);

/// Weighted squared residual total at the current state (no Jacobians).
double evaluate_cost(const FactorGraph& g);

struct SchurResult {
  bool success = false;
  VecX delta_motion;
  VecX delta_depth;
  double lambda_used = 0.0;
  int escalations = 0;
};

/// Eliminates the depth diagonal, solves the reduced motion system by dense
/// LDLT, and back-substitutes. The damping lambda is escalated by 10x (at
/// most 5 times) whenever the factorization fails or the step is non-finite.
SchurResult schur_solve(const NormalSystem& sys, double lambda);

struct GaussNewtonOptions {
  int iterations = 2;
  double damping = 1e-6;
  double depth_min = 1e-4;
};

struct GaussNewtonResult {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations_run = 0;
  int depth_clamps = 0;
  int rejected_steps = 0;
  bool solver_failed = false;
};

/// Applies (delta_motion, delta_depth) to the graph state: additive for
/// position / velocity / bias / inverse depth (clamped from below), right
/// multiplicative exp for orientation. Returns the number of clamped depths.
int apply_state_update(FactorGraph& g, const NormalSystem& sys, const VecX& delta_motion,
                       const VecX& delta_depth, double depth_min);

/// Fixed small number of damped Gauss-Newton iterations. A step that more
/// than doubles the cost is rolled back and retried once at 10x damping.
GaussNewtonResult gauss_newton(FactorGraph& g, const GaussNewtonOptions& opts = {});

}  // namespace avio
