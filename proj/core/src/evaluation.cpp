#include "avio/evaluation.hpp"

#include <Eigen/Geometry>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace avio {

namespace {

constexpr int64_t kAssocToleranceNs = 10'000'000;  // 10 ms

struct MatchedPositions {
  MatX est;  // 3 x n
  MatX ref;
};

MatchedPositions associate(const TrajectoryEstimate& estimate,
                           const std::vector<std::pair<int64_t, Vec3>>& reference) {
  std::vector<Vec3> e, r;
  for (const TimedPose& p : estimate) {
    auto it = std::lower_bound(
        reference.begin(), reference.end(), p.timestamp_ns,
        [](const std::pair<int64_t, Vec3>& a, int64_t t) { return a.first < t; });
    int64_t best_dt = std::numeric_limits<int64_t>::max();
    const std::pair<int64_t, Vec3>* best = nullptr;
    if (it != reference.end() && std::abs(it->first - p.timestamp_ns) < best_dt) {
      best_dt = std::abs(it->first - p.timestamp_ns);
      best = &*it;
    }
    if (it != reference.begin()) {
      auto prev = it - 1;
      if (std::abs(prev->first - p.timestamp_ns) < best_dt) {
        best_dt = std::abs(prev->first - p.timestamp_ns);
        best = &*prev;
      }
    }
    if (best != nullptr && best_dt <= kAssocToleranceNs) {
      e.push_back(p.pose.translation);
      r.push_back(best->second);
    }
  }
  MatchedPositions out;
  out.est.resize(3, e.size());
  out.ref.resize(3, e.size());
  for (size_t i = 0; i < e.size(); ++i) {
    out.est.col(i) = e[i];
    out.ref.col(i) = r[i];
  }
  return out;
}

AlignmentResult align_positions(const MatchedPositions& m, AlignMode mode) {
  const Eigen::Index n = m.est.cols();
  if (n < 3) {
    throw std::runtime_error("align: fewer than 3 matched positions");
  }
  const Vec3 mean_e = m.est.rowwise().mean();
  const Vec3 mean_r = m.ref.rowwise().mean();
  const MatX ce = m.est.colwise() - mean_e;
  const MatX cr = m.ref.colwise() - mean_r;

  const Mat3 sigma = (cr * ce.transpose()) / double(n);
  Eigen::JacobiSVD<Mat3> svd(sigma, Eigen::ComputeFullU | Eigen::ComputeFullV);
  if (svd.singularValues()(1) < 1e-12 * std::max(1.0, svd.singularValues()(0))) {
    throw std::runtime_error("align: degenerate (collinear or coincident) point set");
  }
  Mat3 s = Mat3::Identity();
  if (sigma.determinant() < 0.0 ||
      (svd.rank() == 2 && svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0)) {
    s(2, 2) = -1.0;
  }
  const Mat3 R = svd.matrixU() * s * svd.matrixV().transpose();

  double scale = 1.0;
  if (mode == AlignMode::kSim3) {
    const double var_e = ce.squaredNorm() / double(n);
    scale = (svd.singularValues().cwiseProduct(s.diagonal())).sum() / var_e;
    if (!(scale > 0.0)) {
      throw std::runtime_error("align: non-positive scale");
    }
  }

  AlignmentResult out;
  out.rotation = Rotation::from_matrix(R);
  out.scale = scale;
  out.translation = mean_r - scale * (R * mean_e);
  out.matched_pairs = size_t(n);

  double sq_sum = 0.0;
  out.per_pose_errors.reserve(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double err = (out.apply(m.est.col(i)) - Vec3(m.ref.col(i))).norm();
    out.per_pose_errors.push_back(err);
    sq_sum += err * err;
  }
  out.rmse_ate = std::sqrt(sq_sum / double(n));
  return out;
}

}  // namespace

AlignmentResult align(const TrajectoryEstimate& estimate, const TrajectoryEstimate& reference,
                      AlignMode mode) {
  std::vector<std::pair<int64_t, Vec3>> ref;
  ref.reserve(reference.size());
  for (const TimedPose& p : reference) ref.emplace_back(p.timestamp_ns, p.pose.translation);
  return align_positions(associate(estimate, ref), mode);
}

AlignmentResult align(const TrajectoryEstimate& estimate, const GroundTruthTrajectory& reference,
                      AlignMode mode) {
  std::vector<std::pair<int64_t, Vec3>> ref;
  ref.reserve(reference.records.size());
  for (const GroundTruthRecord& r : reference.records) ref.emplace_back(r.timestamp_ns, r.position);
  return align_positions(associate(estimate, ref), mode);
}

void emit_plot_data(const std::vector<LabeledTrajectory>& trajectories,
                    const std::string& csv_path, const std::string& svg_path) {
  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("emit_plot_data: cannot open " + csv_path);
  csv << "label,timestamp_s,x,y,z\n";
  csv.precision(12);

  double min_x = 0, max_x = 0, min_y = 0, max_y = 0;
  bool any = false;
  for (const auto& lt : trajectories) {
    for (const TimedPose& p : lt.trajectory) {
      csv << lt.label << "," << double(p.timestamp_ns) * 1e-9 << "," << p.pose.translation.x()
          << "," << p.pose.translation.y() << "," << p.pose.translation.z() << "\n";
      if (!any) {
        min_x = max_x = p.pose.translation.x();
        min_y = max_y = p.pose.translation.y();
        any = true;
      } else {
        min_x = std::min(min_x, p.pose.translation.x());
        max_x = std::max(max_x, p.pose.translation.x());
        min_y = std::min(min_y, p.pose.translation.y());
        max_y = std::max(max_y, p.pose.translation.y());
      }
    }
  }
  if (!any) return;  // empty CSV written, no SVG

  const double w = 800.0, h = 800.0, margin = 40.0;
  const double span_x = std::max(max_x - min_x, 1e-9);
  const double span_y = std::max(max_y - min_y, 1e-9);
  const double s = std::min((w - 2 * margin) / span_x, (h - 2 * margin) / span_y);

  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd"};
  std::ofstream svg(svg_path);
  if (!svg) throw std::runtime_error("emit_plot_data: cannot open " + svg_path);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  int ci = 0;
  for (const auto& lt : trajectories) {
    svg << "<polyline fill=\"none\" stroke=\"" << kColors[ci % 5] << "\" stroke-width=\"1.5\" points=\"";
    for (const TimedPose& p : lt.trajectory) {
      const double px = margin + (p.pose.translation.x() - min_x) * s;
      const double py = h - margin - (p.pose.translation.y() - min_y) * s;
      svg << px << "," << py << " ";
    }
    svg << "\"/>\n";
    svg << "<text x=\"" << margin << "\" y=\"" << margin + 16 * ci << "\" fill=\""
        << kColors[ci % 5] << "\">" << lt.label << "</text>\n";
    ++ci;
  }
  svg << "</svg>\n";
}

}  // namespace avio
