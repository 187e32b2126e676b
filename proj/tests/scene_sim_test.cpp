#include <doctest.h>

#include <random>

#include "avio/scene_sim.hpp"

using namespace avio;

TEST_CASE("trajectory derivatives match central differences") {
  const TrajectoryModel traj = default_trajectory();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> pick_t(0.5, traj.duration_s - 0.5);
  const double h = 1e-6;
  for (int i = 0; i < 20; ++i) {
    const double t = pick_t(rng);
    const Vec3 v_fd = (traj.position_at(t + h) - traj.position_at(t - h)) / (2 * h);
    const Vec3 a_fd = (traj.velocity_at(t + h) - traj.velocity_at(t - h)) / (2 * h);
    CHECK((v_fd - traj.velocity_at(t)).norm() < 1e-6 * std::max(1.0, v_fd.norm()));
    CHECK((a_fd - traj.acceleration_at(t)).norm() < 1e-5 * std::max(1.0, a_fd.norm()));

    // body angular rate: log of the relative rotation over 2h
    const Rotation r0 = traj.orientation_at(t - h);
    const Rotation r1 = traj.orientation_at(t + h);
    const Vec3 w_fd = so3_log(r0.inverse() * r1) / (2 * h);
    CHECK((w_fd - traj.angular_velocity_body(t)).norm() < 1e-5 * std::max(1.0, w_fd.norm()));
  }
}

TEST_CASE("stationary trajectory yields pure specific-force readings") {
  TrajectoryModel traj;
  traj.duration_s = 1.0;
  traj.position[2].offset = 5.0;
  traj.rotvec[0].offset = 0.3;  // fixed tilt
  ImuNoiseParams no_noise;
  no_noise.sigma_a = 0.0;
  no_noise.sigma_g = 0.0;
  const Vec3 g(0, 0, -9.81);
  const SynthImuResult imu = synth_imu(traj, BiasProcess{}, no_noise, g, 1);
  REQUIRE(!imu.samples.empty());
  const Mat3 rwb_t = traj.orientation_at(0.5).inverse().matrix();
  const Vec3 expected = rwb_t * Vec3(0, 0, 9.81);
  for (const auto& s : imu.samples) {
    CHECK((s.accel - expected).norm() < 1e-9);
    CHECK(s.gyro.norm() < 1e-9);
  }
}

TEST_CASE("synth_imu is deterministic per seed and bias trace is honest") {
  const TrajectoryModel traj = default_trajectory();
  BiasProcess bias;
  bias.fixed_bias = BiasState{Vec3(0.05, -0.02, 0.01), Vec3(0.003, 0.001, -0.002)};
  ImuNoiseParams noise;
  const Vec3 g(0, 0, -9.81);
  const SynthImuResult a = synth_imu(traj, bias, noise, g, 42);
  const SynthImuResult b = synth_imu(traj, bias, noise, g, 42);
  const SynthImuResult c = synth_imu(traj, bias, noise, g, 43);
  REQUIRE(a.samples.size() == b.samples.size());
  REQUIRE(a.true_bias.size() == a.samples.size());
  bool identical = true;
  bool differs_from_c = false;
  for (size_t i = 0; i < a.samples.size(); ++i) {
    if (a.samples[i].accel != b.samples[i].accel || a.samples[i].gyro != b.samples[i].gyro)
      identical = false;
    if (a.samples[i].accel != c.samples[i].accel) differs_from_c = true;
  }
  CHECK(identical);
  CHECK(differs_from_c);

  // zero walk + zero coupling: reported true bias is the fixed bias
  ImuNoiseParams no_noise;
  no_noise.sigma_a = 0.0;
  no_noise.sigma_g = 0.0;
  BiasProcess fixed_only;
  fixed_only.fixed_bias = bias.fixed_bias;
  const SynthImuResult d = synth_imu(traj, fixed_only, no_noise, g, 1);
  for (const auto& tb : d.true_bias) {
    CHECK((tb.vector() - bias.fixed_bias.vector()).norm() == 0.0);
  }
}

TEST_CASE("motion coupling shifts the instantaneous bias") {
  BiasProcess bias;
  bias.motion_coupling.setZero();
  bias.motion_coupling(0, 0) = 0.01;  // accel-x -> accel-bias-x
  bias.motion_coupling(3, 5) = 0.1;   // omega-z -> gyro-bias-x
  const BiasState b = bias.instantaneous(Vec3(2, 0, 0), Vec3(0, 0, 0.5));
  CHECK(b.accel.x() == doctest::Approx(0.02));
  CHECK(b.gyro.x() == doctest::Approx(0.05));
  CHECK(b.accel.tail<2>().norm() == 0.0);
}

TEST_CASE("project: axis and offset trivials plus matrix oracle") {
  CameraIntrinsics k;
  k.fx = 100;
  k.fy = 100;
  k.cx = 320;
  k.cy = 240;
  const RigidTransform identity_pose;
  const auto on_axis = project(k, identity_pose, Vec3(0, 0, 2));
  REQUIRE(on_axis.has_value());
  CHECK((on_axis->pixel - Vec2(320, 240)).norm() < 1e-12);
  CHECK(on_axis->depth == doctest::Approx(2.0));

  const auto offset = project(k, identity_pose, Vec3(1, 0, 1));
  REQUIRE(offset.has_value());
  CHECK((offset->pixel - Vec2(320 + 100, 240)).norm() < 1e-12);

  CHECK_FALSE(project(k, identity_pose, Vec3(0, 0, -1)).has_value());

  std::mt19937_64 rng(17);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int i = 0; i < 20; ++i) {
    const RigidTransform pose{so3_exp(Vec3(g(rng), g(rng), g(rng)) * 0.3),
                              Vec3(g(rng), g(rng), g(rng))};
    const Vec3 pt_cam(g(rng), g(rng), 2.0 + std::abs(g(rng)));
    const Vec3 pt_w = transform_point(pose, pt_cam);
    const auto pr = project(k, pose, pt_w);
    REQUIRE(pr.has_value());
    const Vec2 oracle(k.fx * pt_cam.x() / pt_cam.z() + k.cx,
                      k.fy * pt_cam.y() / pt_cam.z() + k.cy);
    CHECK((pr->pixel - oracle).norm() < 1e-10);
    CHECK(pr->depth == doctest::Approx(pt_cam.z()).epsilon(1e-10));
  }
}

TEST_CASE("raycast_plane inverts project on the plane") {
  CameraIntrinsics k;
  const RigidTransform pose{so3_exp(Vec3(M_PI, 0, 0)), Vec3(0.3, -0.2, 4.0)};  // looking down
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> px(100, 500), py(100, 380);
  for (int i = 0; i < 20; ++i) {
    const Vec2 pixel(px(rng), py(rng));
    const auto hit = raycast_plane(k, pose, pixel);
    REQUIRE(hit.has_value());
    CHECK(std::abs(hit->point_w.z()) < 1e-9);
    const auto back = project(k, pose, hit->point_w);
    REQUIRE(back.has_value());
    CHECK((back->pixel - pixel).norm() < 1e-8);
    CHECK(back->depth == doctest::Approx(hit->depth).epsilon(1e-9));
  }
}

TEST_CASE("intensity field gradient matches central differences") {
  const IntensityField field = IntensityField::procedural(9);
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  const double h = 1e-6;
  for (int i = 0; i < 20; ++i) {
    const double x = u(rng), y = u(rng);
    const Vec2 g = field.gradient(x, y);
    const double gx = (field.value(x + h, y) - field.value(x - h, y)) / (2 * h);
    const double gy = (field.value(x, y + h) - field.value(x, y - h)) / (2 * h);
    CHECK(std::abs(g.x() - gx) < 1e-6 * std::max(1.0, std::abs(gx)));
    CHECK(std::abs(g.y() - gy) < 1e-6 * std::max(1.0, std::abs(gy)));
  }
}

TEST_CASE("sample_intensity: constant field, pose identity, pixel FD gradient") {
  CameraIntrinsics k;
  const RigidTransform pose{so3_exp(Vec3(M_PI, 0, 0)), Vec3(0, 0, 5.0)};

  IntensityField constant;
  constant.offset = 0.7;
  const auto flat = sample_intensity(constant, k, pose, Vec2(300, 250));
  REQUIRE(flat.has_value());
  CHECK(flat->intensity == doctest::Approx(0.7));
  CHECK(flat->grad_pixel.norm() < 1e-12);

  const IntensityField field = IntensityField::procedural(31);
  const auto a = sample_intensity(field, k, pose, Vec2(280, 230));
  const auto b = sample_intensity(field, k, pose, Vec2(280, 230));
  REQUIRE(a.has_value());
  CHECK(a->intensity == b->intensity);

  const double h = 1e-5;
  std::mt19937_64 rng(37);
  std::uniform_real_distribution<double> px(150, 450), py(120, 360);
  for (int i = 0; i < 10; ++i) {
    const Vec2 pixel(px(rng), py(rng));
    const auto s = sample_intensity(field, k, pose, pixel);
    REQUIRE(s.has_value());
    const double gx = (sample_intensity(field, k, pose, pixel + Vec2(h, 0))->intensity -
                       sample_intensity(field, k, pose, pixel - Vec2(h, 0))->intensity) /
                      (2 * h);
    const double gy = (sample_intensity(field, k, pose, pixel + Vec2(0, h))->intensity -
                       sample_intensity(field, k, pose, pixel - Vec2(0, h))->intensity) /
                      (2 * h);
    CHECK(std::abs(s->grad_pixel.x() - gx) < 1e-5 * std::max(1.0, std::abs(gx)));
    CHECK(std::abs(s->grad_pixel.y() - gy) < 1e-5 * std::max(1.0, std::abs(gy)));
  }

  // a ray pointing away from the plane misses
  const RigidTransform up_pose{Rotation(), Vec3(0, 0, 5.0)};  // +z optical axis, away from z=0
  CHECK_FALSE(sample_intensity(field, k, up_pose, Vec2(320, 240)).has_value());
}
