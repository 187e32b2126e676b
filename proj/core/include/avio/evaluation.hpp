#pragma once

#include <string>
#include <vector>

#include "avio/data_io.hpp"

namespace avio {

enum class AlignMode { kSe3, kSim3 };

struct AlignmentResult {
  Rotation rotation;
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;  // 1 in SE(3) mode
  double rmse_ate = 0.0;
  std::vector<double> per_pose_errors;
  size_t matched_pairs = 0;

  Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
};

/// Closed-form least-squares alignment of the estimate's positions onto the
/// reference (scale fixed to 1 in SE(3) mode), association by nearest
/// timestamp within 10 ms. Throws on degenerate (collinear) point sets.
AlignmentResult align(const TrajectoryEstimate& estimate, const TrajectoryEstimate& reference,
                      AlignMode mode);

AlignmentResult align(const TrajectoryEstimate& estimate, const GroundTruthTrajectory& reference,
                      AlignMode mode);

struct LabeledTrajectory {
  std::string label;
  TrajectoryEstimate trajectory;
};

/// Writes aligned xy(z) tracks as CSV plus a top-down SVG polyline render.
/// Empty input produces an empty CSV and no SVG.
void emit_plot_data(const std::vector<LabeledTrajectory>& trajectories,
                    const std::string& csv_path, const std::string& svg_path);

}  // namespace avio
