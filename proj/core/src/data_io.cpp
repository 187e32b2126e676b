#include "avio/data_io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace avio {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, const std::string& path, int lineno) {
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bad number '" + s + "'");
  }
}

int64_t parse_ts(const std::string& s, const std::string& path, int lineno) {
  int64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bad timestamp '" + s + "'");
  }
  return v;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

GroundTruthRecord GroundTruthTrajectory::at(int64_t timestamp_ns) const {
  if (records.empty()) {
    throw std::runtime_error("GroundTruthTrajectory::at: empty trajectory");
  }
  if (timestamp_ns <= records.front().timestamp_ns) return records.front();
  if (timestamp_ns >= records.back().timestamp_ns) return records.back();
  auto it = std::lower_bound(records.begin(), records.end(), timestamp_ns,
                             [](const GroundTruthRecord& r, int64_t t) { return r.timestamp_ns < t; });
  const GroundTruthRecord& b = *it;
  const GroundTruthRecord& a = *(it - 1);
  if (b.timestamp_ns == timestamp_ns) return b;
  const double u = double(timestamp_ns - a.timestamp_ns) / double(b.timestamp_ns - a.timestamp_ns);
  GroundTruthRecord out;
  out.timestamp_ns = timestamp_ns;
  out.position = (1.0 - u) * a.position + u * b.position;
  out.velocity = (1.0 - u) * a.velocity + u * b.velocity;
  out.orientation = Rotation(a.orientation.quat().slerp(u, b.orientation.quat()));
  out.bias.accel = (1.0 - u) * a.bias.accel + u * b.bias.accel;
  out.bias.gyro = (1.0 - u) * a.bias.gyro + u * b.bias.gyro;
  return out;
}

ImuLog load_euroc_imu(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_euroc_imu: cannot open " + path);
  ImuLog log;
  log.source_path = path;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_csv(line);
    if (fields.size() != 7) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected 7 fields, got " +
                               std::to_string(fields.size()));
    }
    ImuSample s;
    s.timestamp_ns = parse_ts(fields[0], path, lineno);
    for (int i = 0; i < 3; ++i) s.gyro[i] = parse_double(fields[1 + i], path, lineno);
    for (int i = 0; i < 3; ++i) s.accel[i] = parse_double(fields[4 + i], path, lineno);
    if (!log.samples.empty() && s.timestamp_ns <= log.samples.back().timestamp_ns) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": timestamps not strictly increasing");
    }
    log.samples.push_back(s);
  }
  if (log.samples.empty()) {
    throw std::runtime_error("load_euroc_imu: no samples in " + path);
  }
  if (log.samples.size() >= 2) {
    const double span = double(log.samples.back().timestamp_ns - log.samples.front().timestamp_ns) * 1e-9;
    log.rate_estimate_hz = double(log.samples.size() - 1) / span;
    log.rate_plausible = log.rate_estimate_hz >= 50.0 && log.rate_estimate_hz <= 1000.0;
  }
  return log;
}

void write_euroc_imu(const std::vector<ImuSample>& samples, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_euroc_imu: cannot open " + path);
  out << "#timestamp [ns],w_RS_S_x [rad s^-1],w_RS_S_y [rad s^-1],w_RS_S_z [rad s^-1],"
         "a_RS_S_x [m s^-2],a_RS_S_y [m s^-2],a_RS_S_z [m s^-2]\n";
  for (const ImuSample& s : samples) {
    out << s.timestamp_ns << "," << fmt(s.gyro.x()) << "," << fmt(s.gyro.y()) << ","
        << fmt(s.gyro.z()) << "," << fmt(s.accel.x()) << "," << fmt(s.accel.y()) << ","
        << fmt(s.accel.z()) << "\n";
  }
}

GroundTruthTrajectory load_groundtruth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_groundtruth: cannot open " + path);
  GroundTruthTrajectory traj;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_csv(line);
    if (fields.size() < 8) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected >= 8 fields");
    }
    GroundTruthRecord r;
    r.timestamp_ns = parse_ts(fields[0], path, lineno);
    for (int i = 0; i < 3; ++i) r.position[i] = parse_double(fields[1 + i], path, lineno);
    const double qw = parse_double(fields[4], path, lineno);
    const double qx = parse_double(fields[5], path, lineno);
    const double qy = parse_double(fields[6], path, lineno);
    const double qz = parse_double(fields[7], path, lineno);
    const double norm = std::sqrt(qw * qw + qx * qx + qy * qy + qz * qz);
    if (std::abs(norm - 1.0) > 1e-3) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": quaternion norm " +
                               std::to_string(norm) + " too far from 1");
    }
    r.orientation = Rotation(qw, qx, qy, qz);
    if (fields.size() >= 11) {
      for (int i = 0; i < 3; ++i) r.velocity[i] = parse_double(fields[8 + i], path, lineno);
    }
    if (fields.size() >= 17) {
      for (int i = 0; i < 3; ++i) r.bias.gyro[i] = parse_double(fields[11 + i], path, lineno);
      for (int i = 0; i < 3; ++i) r.bias.accel[i] = parse_double(fields[14 + i], path, lineno);
    }
    if (!traj.records.empty() && r.timestamp_ns <= traj.records.back().timestamp_ns) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": timestamps not strictly increasing");
    }
    traj.records.push_back(r);
  }
  if (traj.records.empty()) {
    throw std::runtime_error("load_groundtruth: no records in " + path);
  }
  return traj;
}

void write_groundtruth(const GroundTruthTrajectory& traj, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_groundtruth: cannot open " + path);
  out << "#timestamp,p_x,p_y,p_z,q_w,q_x,q_y,q_z,v_x,v_y,v_z,b_w_x,b_w_y,b_w_z,b_a_x,b_a_y,b_a_z\n";
  for (const GroundTruthRecord& r : traj.records) {
    const auto& q = r.orientation.quat();
    out << r.timestamp_ns << "," << fmt(r.position.x()) << "," << fmt(r.position.y()) << ","
        << fmt(r.position.z()) << "," << fmt(q.w()) << "," << fmt(q.x()) << "," << fmt(q.y())
        << "," << fmt(q.z()) << "," << fmt(r.velocity.x()) << "," << fmt(r.velocity.y()) << ","
        << fmt(r.velocity.z()) << "," << fmt(r.bias.gyro.x()) << "," << fmt(r.bias.gyro.y())
        << "," << fmt(r.bias.gyro.z()) << "," << fmt(r.bias.accel.x()) << ","
        << fmt(r.bias.accel.y()) << "," << fmt(r.bias.accel.z()) << "\n";
  }
}

void write_tum_trajectory(const TrajectoryEstimate& traj, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_tum_trajectory: cannot open " + path);
  char buf[256];
  for (const TimedPose& p : traj) {
    const auto& q = p.pose.rotation.quat();
    std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g %.9g %.9g %.9g %.9g %.9g\n",
                  double(p.timestamp_ns) * 1e-9, p.pose.translation.x(), p.pose.translation.y(),
                  p.pose.translation.z(), q.x(), q.y(), q.z(), q.w());
    out << buf;
  }
  if (!out) throw std::runtime_error("write_tum_trajectory: write failed for " + path);
}

TrajectoryEstimate load_tum_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_tum_trajectory: cannot open " + path);
  TrajectoryEstimate traj;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    double t, tx, ty, tz, qx, qy, qz, qw;
    if (!(ss >> t >> tx >> ty >> tz >> qx >> qy >> qz >> qw)) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": malformed TUM line");
    }
    TimedPose p;
    p.timestamp_ns = int64_t(std::llround(t * 1e9));
    p.pose = RigidTransform(Rotation(qw, qx, qy, qz), Vec3(tx, ty, tz));
    traj.push_back(p);
  }
  return traj;
}

void write_sequence(const Sequence& seq, const std::string& dir) {
  std::filesystem::create_directories(dir);
  write_euroc_imu(seq.imu, dir + "/imu.csv");
  write_groundtruth(seq.ground_truth, dir + "/groundtruth.csv");
  std::ofstream cfg(dir + "/scene.cfg");
  if (!cfg) throw std::runtime_error("write_sequence: cannot open scene.cfg");
  cfg << seq.sim.serialize();
}

Sequence load_sequence(const std::string& dir) {
  Sequence seq;
  KeyValueConfig cfg = KeyValueConfig::from_file(dir + "/scene.cfg");
  seq.sim = SimConfig::from_config(cfg);
  seq.imu = load_euroc_imu(dir + "/imu.csv").samples;
  seq.ground_truth = load_groundtruth(dir + "/groundtruth.csv");
  seq.field = IntensityField::procedural(seq.sim.field_seed);
  seq.has_scene = true;
  if (seq.ground_truth.records.size() == seq.imu.size()) {
    seq.true_bias.reserve(seq.imu.size());
    for (const auto& r : seq.ground_truth.records) seq.true_bias.push_back(r.bias);
  }
  return seq;
}

Sequence generate_sequence(const SimConfig& cfg) {
  TrajectoryModel traj = default_trajectory();
  traj.duration_s = cfg.duration_s;
  traj.frame_rate_hz = cfg.frame_rate_hz;
  traj.imu_rate_hz = cfg.imu_rate_hz;

  BiasProcess bias;
  bias.fixed_bias = cfg.fixed_bias;
  bias.walk_std = cfg.walk_std;
  bias.motion_coupling.setZero();
  bias.motion_coupling.block<3, 3>(0, 0) = cfg.coupling_accel * Mat3::Identity();
  bias.motion_coupling.block<3, 3>(3, 3) = cfg.coupling_gyro * Mat3::Identity();

  const Vec3 gravity(0.0, 0.0, -cfg.gravity_magnitude);
  SynthImuResult imu = synth_imu(traj, bias, cfg.imu_noise, gravity, cfg.seed);

  Sequence seq;
  seq.sim = cfg;
  seq.imu = std::move(imu.samples);
  seq.true_bias = std::move(imu.true_bias);
  seq.field = IntensityField::procedural(cfg.field_seed);
  seq.has_scene = true;
  seq.ground_truth.records.reserve(seq.imu.size());
  for (size_t i = 0; i < seq.imu.size(); ++i) {
    const double t = double(seq.imu[i].timestamp_ns) * 1e-9;
    GroundTruthRecord r;
    r.timestamp_ns = seq.imu[i].timestamp_ns;
    r.position = traj.position_at(t);
    r.velocity = traj.velocity_at(t);
    r.orientation = traj.orientation_at(t);
    r.bias = seq.true_bias[i];
    seq.ground_truth.records.push_back(r);
  }
  return seq;
}

}  // namespace avio
