#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <unistd.h>

#include "avio/data_io.hpp"

using namespace avio;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("avio_dataio_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

}  // namespace

TEST_CASE("load_euroc_imu parses the minimal fixture exactly") {
  TempDir tmp;
  const std::string p = tmp.file("imu.csv");
  write_text(p,
             "#timestamp [ns],w_RS_S_x,w_RS_S_y,w_RS_S_z,a_RS_S_x,a_RS_S_y,a_RS_S_z\n"
             "1403636579758555392,-0.1,0.2,0.3,8.1,-0.3,9.7\n"
             "1403636579763555584,-0.11,0.21,0.31,8.2,-0.2,9.8\n");
  const ImuLog log = load_euroc_imu(p);
  REQUIRE(log.samples.size() == 2);
  CHECK(log.samples[0].timestamp_ns == 1403636579758555392LL);
  CHECK(log.samples[0].gyro == Vec3(-0.1, 0.2, 0.3));
  CHECK(log.samples[0].accel == Vec3(8.1, -0.3, 9.7));
  CHECK(log.samples[1].timestamp_ns == 1403636579763555584LL);
  CHECK(log.rate_estimate_hz == doctest::Approx(200.0).epsilon(0.01));
}

TEST_CASE("load_euroc_imu rejects malformed rows with a line number") {
  TempDir tmp;
  const std::string p = tmp.file("bad.csv");
  write_text(p,
             "#header\n"
             "100,0,0,0,0,0,9.81\n"
             "200,0,0,0,0,0\n");  // 6 fields on line 3
  try {
    load_euroc_imu(p);
    FAIL("expected a parse error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("3") != std::string::npos);
  }
}

TEST_CASE("load_euroc_imu rejects disorder and empty files") {
  TempDir tmp;
  const std::string p = tmp.file("disorder.csv");
  write_text(p,
             "#header\n"
             "200,0,0,0,0,0,9.81\n"
             "100,0,0,0,0,0,9.81\n");
  CHECK_THROWS(load_euroc_imu(p));
  const std::string e = tmp.file("empty.csv");
  write_text(e, "#header only\n");
  CHECK_THROWS(load_euroc_imu(e));
}

TEST_CASE("imu write/read round trip is bit exact") {
  TempDir tmp;
  std::vector<ImuSample> samples;
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 3.0);
  for (int i = 0; i < 50; ++i) {
    ImuSample s;
    s.timestamp_ns = 1'000'000'000LL + 5'000'000LL * i;
    s.gyro = Vec3(g(rng), g(rng), g(rng));
    s.accel = Vec3(g(rng), g(rng), g(rng));
    samples.push_back(s);
  }
  const std::string p = tmp.file("roundtrip.csv");
  write_euroc_imu(samples, p);
  const ImuLog log = load_euroc_imu(p);
  REQUIRE(log.samples.size() == samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    CHECK(log.samples[i].timestamp_ns == samples[i].timestamp_ns);
    CHECK(log.samples[i].gyro == samples[i].gyro);
    CHECK(log.samples[i].accel == samples[i].accel);
  }
}

TEST_CASE("ground truth: identity fixture, norm enforcement, round trip") {
  TempDir tmp;
  const std::string p = tmp.file("gt.csv");
  write_text(p,
             "#timestamp,p,q,v,bw,ba\n"
             "100,0,0,0,1,0,0,0,0,0,0,0,0,0,0,0,0\n"
             "200,1,2,3,1,0,0,0,0.1,0.2,0.3,0.001,0.002,0.003,0.01,0.02,0.03\n");
  const GroundTruthTrajectory gt = load_groundtruth(p);
  REQUIRE(gt.records.size() == 2);
  CHECK(gt.records[0].position.norm() == 0.0);
  CHECK(gt.records[0].orientation.quat().w() == doctest::Approx(1.0));
  CHECK(gt.records[1].position == Vec3(1, 2, 3));
  CHECK(gt.records[1].velocity == Vec3(0.1, 0.2, 0.3));
  CHECK(gt.records[1].bias.gyro == Vec3(0.001, 0.002, 0.003));
  CHECK(gt.records[1].bias.accel == Vec3(0.01, 0.02, 0.03));

  const std::string bad = tmp.file("badq.csv");
  write_text(bad,
             "#h\n"
             "100,0,0,0,0.9,0,0,0,0,0,0,0,0,0,0,0,0\n");  // |q| = 0.9
  CHECK_THROWS(load_groundtruth(bad));

  const std::string rt = tmp.file("gt_rt.csv");
  write_groundtruth(gt, rt);
  const GroundTruthTrajectory gt2 = load_groundtruth(rt);
  REQUIRE(gt2.records.size() == gt.records.size());
  for (size_t i = 0; i < gt.records.size(); ++i) {
    CHECK(gt2.records[i].timestamp_ns == gt.records[i].timestamp_ns);
    CHECK(gt2.records[i].position == gt.records[i].position);
    CHECK(gt2.records[i].orientation.quat().coeffs() == gt.records[i].orientation.quat().coeffs());
    CHECK(gt2.records[i].bias.accel == gt.records[i].bias.accel);
  }
}

TEST_CASE("ground truth interpolation clamps and blends") {
  GroundTruthTrajectory gt;
  GroundTruthRecord a, b;
  a.timestamp_ns = 1'000'000'000;
  a.position = Vec3(0, 0, 0);
  b.timestamp_ns = 2'000'000'000;
  b.position = Vec3(2, 0, 0);
  b.orientation = so3_exp(Vec3(0, 0, 0.4));
  gt.records = {a, b};
  CHECK(gt.at(500'000'000).position == a.position);
  CHECK(gt.at(3'000'000'000).position == b.position);
  const GroundTruthRecord mid = gt.at(1'500'000'000);
  CHECK((mid.position - Vec3(1, 0, 0)).norm() < 1e-12);
  CHECK(so3_log(mid.orientation).z() == doctest::Approx(0.2).epsilon(1e-9));
}

TEST_CASE("TUM trajectory: format, round trip, empty file") {
  TempDir tmp;
  TrajectoryEstimate traj;
  traj.push_back({1'000'000'000, RigidTransform{}});
  traj.push_back({1'050'000'000,
                  RigidTransform{so3_exp(Vec3(0.1, -0.2, 0.3)), Vec3(1.5, -2.25, 0.125)}});
  const std::string p = tmp.file("traj.tum");
  write_tum_trajectory(traj, p);

  std::ifstream in(p);
  std::string line1;
  std::getline(in, line1);
  // "timestamp_s tx ty tz qx qy qz qw" with identity pose
  std::istringstream ss(line1);
  double t, tx, ty, tz, qx, qy, qz, qw;
  ss >> t >> tx >> ty >> tz >> qx >> qy >> qz >> qw;
  CHECK(t == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(tx == 0.0);
  CHECK(qw == doctest::Approx(1.0).epsilon(1e-8));

  const TrajectoryEstimate back = load_tum_trajectory(p);
  REQUIRE(back.size() == traj.size());
  for (size_t i = 0; i < traj.size(); ++i) {
    CHECK(std::abs(1e-9 * double(back[i].timestamp_ns - traj[i].timestamp_ns)) < 1e-8);
    CHECK((back[i].pose.translation - traj[i].pose.translation).norm() < 1e-8);
    CHECK(so3_log(back[i].pose.rotation.inverse() * traj[i].pose.rotation).norm() < 1e-7);
  }

  const std::string e = tmp.file("empty.tum");
  write_tum_trajectory({}, e);
  CHECK(load_tum_trajectory(e).empty());
}

TEST_CASE("synthetic sequence directory round trip") {
  TempDir tmp;
  SimConfig cfg;
  cfg.duration_s = 2.0;
  cfg.seed = 9;
  cfg.fixed_bias = BiasState{Vec3(0.02, -0.01, 0.015), Vec3(0.002, 0.001, -0.001)};
  const Sequence seq = generate_sequence(cfg);
  REQUIRE(!seq.imu.empty());
  REQUIRE(!seq.ground_truth.records.empty());
  CHECK(seq.has_scene);

  const std::string dir = tmp.file("seq");
  write_sequence(seq, dir);
  const Sequence back = load_sequence(dir);
  REQUIRE(back.imu.size() == seq.imu.size());
  CHECK(back.imu.front().timestamp_ns == seq.imu.front().timestamp_ns);
  CHECK(back.imu.back().accel == seq.imu.back().accel);
  REQUIRE(back.ground_truth.records.size() == seq.ground_truth.records.size());
  CHECK(back.has_scene);
  CHECK(back.sim.seed == cfg.seed);
  // the reloaded texture evaluates identically
  REQUIRE(!back.field.terms.empty());
  CHECK(back.field.value(1.25, -0.75) == doctest::Approx(seq.field.value(1.25, -0.75)));

  CHECK_THROWS(load_sequence(tmp.file("missing_dir")));
}
