#include <benchmark/benchmark.h>

#include <random>

#include "avio/frontend.hpp"
#include "avio/scene_sim.hpp"
#include "avio/solver.hpp"

using namespace avio;

namespace {

std::vector<ImuSample> make_samples(int n) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<ImuSample> out;
  for (int i = 0; i < n; ++i) {
    ImuSample s;
    s.timestamp_ns = static_cast<int64_t>(5e6) * i;
    s.accel = Vec3(g(rng), g(rng), 9.81 + g(rng));
    s.gyro = Vec3(g(rng), g(rng), g(rng)) * 0.6;
    out.push_back(s);
  }
  return out;
}

/// Noise-free n-keyframe window with all-pairs visual factors, consecutive
/// IMU factors, and bias priors, linearized at the ground truth.
FactorGraph make_window(int n_kf, int patches_per_kf) {
  static IntensityField field = IntensityField::procedural(19);
  FrontendContext ctx;
  ctx.field = &field;
  TrajectoryModel traj = default_trajectory();
  FactorGraph graph;
  ctx.intrinsics = graph.intrinsics;
  const double t0 = 1.0, dt = 0.05;

  for (int k = 0; k < n_kf; ++k) {
    const double t = t0 + k * dt;
    KeyframeState s;
    s.id = k;
    s.frame_index = k;
    s.timestamp_ns = static_cast<int64_t>(t * 1e9);
    const RigidTransform pose = traj.pose_at(t);
    s.position = pose.translation;
    s.orientation = pose.rotation;
    s.velocity = traj.velocity_at(t);
    graph.keyframes[k] = s;
  }
  graph.kf(0).pose_fixed = true;

  for (int src = 0; src < n_kf - 1; ++src) {
    FrameView view{src, src, graph.kf(src).timestamp_ns, graph.kf(src).pose()};
    graph.kf(src).patches = sample_patches(ctx, view, 40 + src, 0.2, patches_per_kf, src * 1000);
    for (auto& p : graph.kf(src).patches) p.inv_depth = 1.0 / p.true_depth;
    for (int tgt = src + 1; tgt < std::min(n_kf, src + 4); ++tgt) {
      for (size_t pi = 0; pi < graph.kf(src).patches.size(); ++pi) {
        const auto& patch = graph.kf(src).patches[pi];
        const auto proj = project(ctx.intrinsics, graph.kf(tgt).pose(), patch.true_point_w);
        if (!proj) continue;
        graph.visual_factors.push_back({src, int(pi), tgt, proj->pixel, 1.0});
      }
    }
  }

  ImuNoiseParams nf;
  nf.sigma_a = 0.0;
  nf.sigma_g = 0.0;
  const SynthImuResult imu = synth_imu(traj, BiasProcess{}, nf, graph.gravity, 2);
  for (int k = 0; k + 1 < n_kf; ++k) {
    const double ta = t0 + k * dt, tb = ta + dt;
    std::vector<ImuSample> window;
    for (const auto& s : imu.samples) {
      const double t = 1e-9 * double(s.timestamp_ns);
      if (t >= ta - 1e-9 && t <= tb + 1e-9) window.push_back(s);
    }
    ImuFactor f;
    f.kf_i = k;
    f.kf_j = k + 1;
    f.samples = window;
    f.preint = integrate_batch(window, BiasState{});
    graph.imu_factors.push_back(f);
    graph.bias_factors.push_back({k + 1, BiasState{}});
  }
  return graph;
}

void BM_PreintegrationStep(benchmark::State& state) {
  const auto samples = make_samples(2);
  const BiasState bias{Vec3(0.02, -0.01, 0.015), Vec3(0.002, -0.001, 0.003)};
  Preintegration p;
  for (auto _ : state) {
    benchmark::DoNotOptimize(p = integrate_step(Preintegration{}, samples[0], samples[1], bias));
  }
}
BENCHMARK(BM_PreintegrationStep);

void BM_PreintegrationBatch200(benchmark::State& state) {
  const auto samples = make_samples(200);
  const BiasState bias;
  for (auto _ : state) {
    benchmark::DoNotOptimize(integrate_batch(samples, bias));
  }
}
BENCHMARK(BM_PreintegrationBatch200);

void BM_BuildNormalSystem(benchmark::State& state) {
  const FactorGraph graph = make_window(int(state.range(0)), 96);
  for (auto _ : state) {
    benchmark::DoNotOptimize(build_normal_system(graph));
  }
}
BENCHMARK(BM_BuildNormalSystem)->Arg(5)->Arg(10);

void BM_SchurSolve(benchmark::State& state) {
  const FactorGraph graph = make_window(int(state.range(0)), 96);
  const NormalSystem sys = build_normal_system(graph);
  for (auto _ : state) {
    benchmark::DoNotOptimize(schur_solve(sys, 1e-6));
  }
}
BENCHMARK(BM_SchurSolve)->Arg(5)->Arg(10);

void BM_GaussNewtonWindow(benchmark::State& state) {
  for (auto _ : state) {
    state.PauseTiming();
    FactorGraph graph = make_window(10, 96);
    state.ResumeTiming();
    GaussNewtonOptions opts;
    benchmark::DoNotOptimize(gauss_newton(graph, opts));
  }
}
BENCHMARK(BM_GaussNewtonWindow)->Unit(benchmark::kMillisecond);

void BM_OracleTrackingStep(benchmark::State& state) {
  static IntensityField field = IntensityField::procedural(7);
  FrontendContext ctx;
  ctx.field = &field;
  const RigidTransform pose_a{so3_exp(Vec3(M_PI, 0, 0)), Vec3(0, 0, 5.0)};
  const RigidTransform pose_b{so3_exp(Vec3(M_PI, 0, 0)) * so3_exp(Vec3(0.02, -0.01, 0.03)),
                              Vec3(0.3, 0.1, 5.1)};
  FrameView source{0, 0, 0, pose_a};
  FrameView target{1, 1, 50'000'000, pose_b};
  const auto patches = sample_patches(ctx, source, 3, 0.2, 96, 0);
  OracleProviderAdapter provider(OracleNoisyProvider{0.5, 0.05, 10.0, 11});
  std::vector<TargetFrame> targets = {{&target, &pose_b}};
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        predict_correspondences(ctx, provider, patches, source, pose_a, targets));
  }
}
BENCHMARK(BM_OracleTrackingStep);

}  // namespace

BENCHMARK_MAIN();
