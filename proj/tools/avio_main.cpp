// avio: synthetic-sequence generation, VIO tracking, online continual
// learning, trajectory evaluation and plotting.
//
// Exit codes: 0 success, 1 usage error, 2 data/config error, 3 divergence.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "avio/config.hpp"
#include "avio/data_io.hpp"
#include "avio/evaluation.hpp"
#include "avio/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitDivergence = 3;

struct Options {
  std::string config_path;
  std::string out_dir = ".";
  std::string data_dir;
  std::string params_dir;
  std::string est_path;
  std::string ref_path;
  std::vector<std::string> plot_inputs;
  std::string mode = "sim3";
  int64_t seed = -1;
  bool verbose = false;
};

avio::KeyValueConfig load_config(const Options& opt) {
  if (opt.config_path.empty()) return avio::KeyValueConfig::from_string("");
  return avio::KeyValueConfig::from_file(opt.config_path);
}

void reject_unused(const avio::KeyValueConfig& cfg) {
  const auto unused = cfg.unused_keys();
  if (unused.empty()) return;
  std::string msg = "invalid config keys:";
  for (const auto& k : unused) msg += " " + k;
  throw std::runtime_error(msg);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << text;
}

avio::AlignMode parse_mode(const std::string& mode) {
  if (mode == "se3") return avio::AlignMode::kSe3;
  if (mode == "sim3") return avio::AlignMode::kSim3;
  throw std::runtime_error("unknown alignment mode: " + mode);
}

avio::TrajectoryEstimate load_reference(const std::string& path, bool* is_groundtruth,
                                        avio::GroundTruthTrajectory* gt) {
  if (std::filesystem::is_directory(path)) {
    *is_groundtruth = true;
    *gt = avio::load_groundtruth(path + "/groundtruth.csv");
    return {};
  }
  *is_groundtruth = false;
  return avio::load_tum_trajectory(path);
}

int cmd_simulate(const Options& opt) {
  avio::KeyValueConfig cfg = load_config(opt);
  avio::SimConfig sim = avio::SimConfig::from_config(cfg);
  reject_unused(cfg);
  if (opt.seed >= 0) sim.seed = uint64_t(opt.seed);

  std::filesystem::create_directories(opt.out_dir);
  const avio::Sequence seq = avio::generate_sequence(sim);
  avio::write_sequence(seq, opt.out_dir);
  write_text(opt.out_dir + "/resolved.cfg", sim.serialize());
  if (opt.verbose) {
    std::cout << "wrote " << seq.imu.size() << " IMU samples to " << opt.out_dir << "\n";
  }
  return kExitOk;
}

int run_or_adapt(const Options& opt, bool adapt) {
  avio::KeyValueConfig cfg = load_config(opt);
  avio::SessionConfig session_cfg = avio::SessionConfig::from_config(cfg);
  reject_unused(cfg);
  if (opt.seed >= 0) {
    session_cfg.net_seed = uint64_t(opt.seed);
    session_cfg.provider_seed = uint64_t(opt.seed);
  }
  if (!adapt) session_cfg.mode = avio::SessionMode::kDeployment;

  if (opt.data_dir.empty()) throw std::runtime_error("--data is required");
  const avio::Sequence seq = avio::load_sequence(opt.data_dir);

  avio::LearnedState state = opt.params_dir.empty() ? avio::LearnedState::fresh(session_cfg)
                                                    : avio::LearnedState::load(opt.params_dir);
  avio::Session session(seq, session_cfg, std::move(state));

  std::filesystem::create_directories(opt.out_dir);
  write_text(opt.out_dir + "/resolved.cfg", session_cfg.serialize());

  const avio::SessionResult result =
      adapt ? session.run_online_learning() : session.run_single_pass();
  avio::write_tum_trajectory(result.trajectory, opt.out_dir + "/trajectory.tum");
  write_text(opt.out_dir + "/session.log", result.log);
  if (adapt) {
    session.learned().save(opt.out_dir + "/params");
    avio::write_metrics_csv(result.epochs, opt.out_dir + "/metrics.csv");
  }

  std::ostringstream metrics;
  metrics << "frames " << result.frames_processed << "\n"
          << "imu_initialized " << int(result.imu_initialized) << "\n";
  bool diverged = false;
  try {
    const double ate = avio::align(result.trajectory, seq.ground_truth,
                                   avio::AlignMode::kSim3).rmse_ate;
    metrics << "ate_sim3 " << ate << "\n";
    if (!std::isfinite(ate)) diverged = true;
    if (opt.verbose) std::cout << "ATE (Sim3): " << ate << " m\n";
  } catch (const std::exception& ex) {
    metrics << "ate_sim3 nan (" << ex.what() << ")\n";
  }
  write_text(opt.out_dir + "/metrics.txt", metrics.str());
  for (const avio::EpochMetrics& e : result.epochs) diverged = diverged || e.aborted;
  if (opt.verbose) std::cout << result.log;
  return diverged ? kExitDivergence : kExitOk;
}

int cmd_eval(const Options& opt) {
  if (opt.est_path.empty() || opt.ref_path.empty()) {
    throw std::runtime_error("--est and --ref are required");
  }
  const avio::AlignMode mode = parse_mode(opt.mode);
  const avio::TrajectoryEstimate est = avio::load_tum_trajectory(opt.est_path);
  bool is_gt = false;
  avio::GroundTruthTrajectory gt;
  const avio::TrajectoryEstimate ref = load_reference(opt.ref_path, &is_gt, &gt);
  const avio::AlignmentResult res = is_gt ? avio::align(est, gt, mode) : avio::align(est, ref, mode);

  std::ostringstream report;
  report.precision(12);
  report << "mode " << opt.mode << "\n"
         << "matched_pairs " << res.matched_pairs << "\n"
         << "scale " << res.scale << "\n"
         << "rotation_wxyz " << res.rotation.quat().w() << " " << res.rotation.quat().x() << " "
         << res.rotation.quat().y() << " " << res.rotation.quat().z() << "\n"
         << "translation " << res.translation.transpose() << "\n"
         << "rmse_ate " << res.rmse_ate << "\n";
  std::filesystem::create_directories(opt.out_dir);
  write_text(opt.out_dir + "/alignment.txt", report.str());
  std::cout << "ATE (" << opt.mode << "): " << res.rmse_ate << " m\n";
  return kExitOk;
}

int cmd_plot(const Options& opt) {
  std::vector<avio::LabeledTrajectory> trajectories;
  for (const std::string& path : opt.plot_inputs) {
    trajectories.push_back({std::filesystem::path(path).stem().string(),
                            avio::load_tum_trajectory(path)});
  }
  if (!opt.ref_path.empty()) {
    bool is_gt = false;
    avio::GroundTruthTrajectory gt;
    avio::TrajectoryEstimate ref = load_reference(opt.ref_path, &is_gt, &gt);
    if (is_gt) {
      for (const auto& r : gt.records) {
        ref.push_back({r.timestamp_ns, {r.orientation, r.position}});
      }
    }
    trajectories.push_back({"reference", std::move(ref)});
  }
  std::filesystem::create_directories(opt.out_dir);
  avio::emit_plot_data(trajectories, opt.out_dir + "/plot.csv", opt.out_dir + "/plot.svg");
  if (opt.verbose) std::cout << "wrote " << opt.out_dir << "/plot.csv\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"avio: adaptive visual-inertial odometry"};
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&opt](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "key=value config file");
    sub->add_option("--out", opt.out_dir, "output directory");
    sub->add_option("--seed", opt.seed, "seed override");
    sub->add_flag("-v,--verbose", opt.verbose, "verbose output");
  };

  CLI::App* simulate = app.add_subcommand("simulate", "generate a synthetic sequence");
  add_common(simulate);

  CLI::App* run = app.add_subcommand("run", "deployment-mode tracking over a sequence");
  add_common(run);
  run->add_option("--data", opt.data_dir, "sequence directory")->required();
  run->add_option("--params", opt.params_dir, "learned-parameter directory");

  CLI::App* adapt = app.add_subcommand("adapt", "online continual learning over a sequence");
  add_common(adapt);
  adapt->add_option("--data", opt.data_dir, "sequence directory")->required();
  adapt->add_option("--params", opt.params_dir, "initial learned-parameter directory");

  CLI::App* eval = app.add_subcommand("eval", "align and score a trajectory");
  add_common(eval);
  eval->add_option("--est", opt.est_path, "estimated trajectory (TUM)")->required();
  eval->add_option("--ref", opt.ref_path, "reference TUM file or sequence directory")->required();
  eval->add_option("--mode", opt.mode, "alignment mode: se3 | sim3");

  CLI::App* plot = app.add_subcommand("plot", "render trajectories to CSV + SVG");
  add_common(plot);
  plot->add_option("--est", opt.plot_inputs, "trajectory files (TUM)");
  plot->add_option("--ref", opt.ref_path, "reference TUM file or sequence directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(opt);
    if (run->parsed()) return run_or_adapt(opt, false);
    if (adapt->parsed()) return run_or_adapt(opt, true);
    if (eval->parsed()) return cmd_eval(opt);
    if (plot->parsed()) return cmd_plot(opt);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
