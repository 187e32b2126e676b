#pragma once

#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "avio/bias_net.hpp"
#include "avio/config.hpp"
#include "avio/data_io.hpp"
#include "avio/factor_graph.hpp"
#include "avio/frontend.hpp"
#include "avio/solver.hpp"

namespace avio {

/// Everything that survives across epochs and sessions: the bias predictor
/// and the correspondence corrector. Normalization statistics are always
/// re-estimated from the warmup of the current sequence, so they are not
/// part of the persisted state.
struct LearnedState {
  BiasNetParams bias_net;
  CorrectorParams corrector;

  static LearnedState fresh(const SessionConfig& cfg);
  void save(const std::string& dir) const;
  static LearnedState load(const std::string& dir);
};

struct EpochMetrics {
  int epoch = 0;
  double ate_sim3 = std::numeric_limits<double>::quiet_NaN();
  double imu_loss_mean = 0.0;
  double photo_loss_mean = 0.0;
  bool viba = false;
  bool aborted = false;
};

struct SessionResult {
  TrajectoryEstimate trajectory;  // of the final pass
  std::vector<EpochMetrics> epochs;
  /// predicted bias per tracked interval, stamped at the interval end
  std::vector<std::pair<int64_t, BiasState>> bias_predictions;
  size_t frames_processed = 0;
  bool imu_initialized = false;
  double init_scale = 1.0;
  std::string log;
};

void write_metrics_csv(const std::vector<EpochMetrics>& epochs, const std::string& path);

/// One VIO estimation session over a sequence. run_single_pass() is the
/// deployment path; run_online_learning() loops epochs over the same
/// sequence, resetting the estimator while the learned state persists.
class Session {
 public:
  Session(const Sequence& sequence, const SessionConfig& config, LearnedState state);

  SessionResult run_single_pass();
  SessionResult run_online_learning();

  const LearnedState& learned() const { return learned_; }
  LearnedState& learned() { return learned_; }
  const NormalizationStats& normalization() const { return stats_; }

 private:
  struct IntervalRecord {
    int kf_i = -1;
    int kf_j = -1;
    std::vector<ImuSample> samples;
    Preintegration preint;  // reference bias = the prediction below
    BiasPrediction prediction;
    NormalizationStats stats_at_prediction;
    bool has_prediction = false;
  };

  void reset_estimator();
  void run_pass(SessionResult& result);
  void process_frame(int frame_index, SessionResult& result);
  FrameView make_view(int frame_index);
  std::vector<ImuSample> interval_samples(int frame_a, int frame_b) const;
  void map_init_step(const FrameView& view);
  void finish_map_init();
  void track_frame(const FrameView& view, SessionResult& result);
  void try_imu_init(SessionResult& result);
  void refresh_window();
  void collect_garbage();
  void cull_check();
  void remove_keyframe(int kf_id);
  IntervalRecord make_interval(int kf_i, int kf_j, std::vector<ImuSample> samples);
  void feedback_step();
  void set_finite_difference_velocities();
  void record_poses();
  void observe_stats(const std::vector<ImuSample>& samples, const BiasState* bias);
  std::vector<int> active_kf_ids() const;
  uint64_t patch_seed(int frame_index) const;

  const Sequence& seq_;
  SessionConfig cfg_;
  LearnedState learned_;
  FrontendContext ctx_;
  std::optional<OracleNoisyProvider> base_oracle_;
  std::unique_ptr<CorrespondenceProvider> provider_;
  bool provider_has_corrector_ = false;

  RunningStats running_;
  NormalizationStats stats_;
  bool stats_frozen_ = false;
  uint64_t global_iteration_ = 0;  // frames across all epochs
  uint64_t frames_seen_total_ = 0;

  int frame_stride_ = 1;
  int n_frames_ = 0;

  // per-epoch estimator state
  enum class Phase { kMapInit, kTracking };
  Phase phase_ = Phase::kMapInit;
  FactorGraph graph_;
  std::map<int, FrameView> views_;
  std::map<int, IntervalRecord> intervals_;  // keyed by kf_j
  std::map<int, TimedPose> trajectory_;      // keyed by frame index
  int next_kf_id_ = 0;
  int epoch_frame_ = 0;
  bool imu_ready_ = false;
  bool viba_active_ = false;
  int consecutive_culls_ = 0;
  double epoch_imu_loss_sum_ = 0.0;
  size_t epoch_imu_loss_n_ = 0;
  double epoch_photo_loss_sum_ = 0.0;
  size_t epoch_photo_loss_n_ = 0;
  std::ostringstream log_;
};

}  // namespace avio
