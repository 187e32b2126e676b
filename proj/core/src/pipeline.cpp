#include <cstdlib>
#include "avio/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "avio/evaluation.hpp"
#include "avio/imu_init.hpp"

namespace avio {

namespace {

void accumulate_grads(BiasNetGrads& total, const BiasNetGrads& part) {
  auto dst = total.blocks();
  auto src = part.blocks();
  for (size_t i = 0; i < dst.size(); ++i) *dst[i].second += *src[i].second;
}

std::vector<ImuSample> merge_samples(const std::vector<ImuSample>& left,
                                     const std::vector<ImuSample>& right) {
  std::vector<ImuSample> out = left;
  for (const ImuSample& s : right) {
    if (!out.empty() && s.timestamp_ns <= out.back().timestamp_ns) continue;
    out.push_back(s);
  }
  return out;
}

}  // namespace

LearnedState LearnedState::fresh(const SessionConfig& cfg) {
  LearnedState s;
  s.bias_net = BiasNetParams::initial(cfg.net_seed);
  s.corrector = CorrectorParams::initial(cfg.net_seed);
  return s;
}

void LearnedState::save(const std::string& dir) const {
  std::filesystem::create_directories(dir);
  bias_net.save(dir + "/bias_net.tensors");
  corrector.save(dir + "/corrector.tensors");
}

LearnedState LearnedState::load(const std::string& dir) {
  LearnedState s;
  s.bias_net = BiasNetParams::load(dir + "/bias_net.tensors");
  s.corrector = CorrectorParams::load(dir + "/corrector.tensors");
  return s;
}

void write_metrics_csv(const std::vector<EpochMetrics>& epochs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_metrics_csv: cannot open " + path);
  out << "epoch,ate_sim3,imu_loss_mean,photo_loss_mean,viba,aborted\n";
  out.precision(12);
  for (const EpochMetrics& e : epochs) {
    out << e.epoch << "," << e.ate_sim3 << "," << e.imu_loss_mean << "," << e.photo_loss_mean
        << "," << int(e.viba) << "," << int(e.aborted) << "\n";
  }
}

Session::Session(const Sequence& sequence, const SessionConfig& config, LearnedState state)
    : seq_(sequence), cfg_(config), learned_(std::move(state)) {
  if (seq_.imu.size() < 2) throw std::invalid_argument("Session: sequence has no IMU data");

  ctx_.field = seq_.has_scene ? &seq_.field : nullptr;
  ctx_.intrinsics = seq_.sim.intrinsics;
  ctx_.synthetic_depth_min = 0.5 * cfg_.scene_mean_depth;
  ctx_.synthetic_depth_max = 2.0 * cfg_.scene_mean_depth;

  graph_.gravity = Vec3(0.0, 0.0, -cfg_.gravity_magnitude);
  graph_.intrinsics = ctx_.intrinsics;
  graph_.sigma_bias_accel = cfg_.sigma_bias_accel;
  graph_.sigma_bias_gyro = cfg_.sigma_bias_gyro;

  const double ratio = seq_.sim.imu_rate_hz / seq_.sim.frame_rate_hz;
  frame_stride_ = std::max(1, int(std::lround(ratio)));
  n_frames_ = int((seq_.imu.size() - 1) / size_t(frame_stride_)) + 1;

  switch (cfg_.provider) {
    case ProviderKind::kOracleNoisy: {
      OracleNoisyProvider oracle{cfg_.oracle_pixel_noise_std, cfg_.oracle_outlier_rate,
                                 cfg_.oracle_outlier_std, cfg_.provider_seed};
      base_oracle_.reset();
      provider_ = std::make_unique<OracleProviderAdapter>(oracle);
      provider_has_corrector_ = false;
      break;
    }
    case ProviderKind::kLearnableCorrector:
      base_oracle_.reset();
      provider_ = std::make_unique<CorrectorProviderAdapter>(&learned_.corrector);
      provider_has_corrector_ = true;
      break;
    case ProviderKind::kOracleWithCorrector:
      base_oracle_ = OracleNoisyProvider{cfg_.oracle_pixel_noise_std, cfg_.oracle_outlier_rate,
                                         cfg_.oracle_outlier_std, cfg_.provider_seed};
      provider_ = std::make_unique<CorrectorProviderAdapter>(&learned_.corrector, base_oracle_);
      provider_has_corrector_ = true;
      break;
  }
}

uint64_t Session::patch_seed(int frame_index) const {
  return cfg_.provider_seed * 0x100000001b3ULL + uint64_t(uint32_t(frame_index));
}

FrameView Session::make_view(int frame_index) {
  const ImuSample& s = seq_.imu.at(size_t(frame_index) * frame_stride_);
  const GroundTruthRecord gt = seq_.ground_truth.at(s.timestamp_ns);
  FrameView view;
  view.keyframe_id = next_kf_id_++;
  view.frame_index = frame_index;
  view.timestamp_ns = s.timestamp_ns;
  view.gt_pose = {gt.orientation, gt.position};
  return view;
}

std::vector<ImuSample> Session::interval_samples(int frame_a, int frame_b) const {
  const size_t i0 = size_t(frame_a) * frame_stride_;
  const size_t i1 = std::min(size_t(frame_b) * frame_stride_, seq_.imu.size() - 1);
  return {seq_.imu.begin() + i0, seq_.imu.begin() + i1 + 1};
}

std::vector<int> Session::active_kf_ids() const {
  std::vector<int> ids;
  ids.reserve(graph_.keyframes.size());
  for (const auto& [id, kf] : graph_.keyframes) ids.push_back(id);
  return ids;
}

void Session::reset_estimator() {
  phase_ = Phase::kMapInit;
  graph_.keyframes.clear();
  graph_.visual_factors.clear();
  graph_.imu_factors.clear();
  graph_.bias_factors.clear();
  views_.clear();
  intervals_.clear();
  trajectory_.clear();
  next_kf_id_ = 0;
  epoch_frame_ = 0;
  imu_ready_ = false;
  consecutive_culls_ = 0;
  epoch_imu_loss_sum_ = 0.0;
  epoch_imu_loss_n_ = 0;
  epoch_photo_loss_sum_ = 0.0;
  epoch_photo_loss_n_ = 0;
}

void Session::observe_stats(const std::vector<ImuSample>& samples, const BiasState* bias) {
  if (stats_frozen_) return;
  for (const ImuSample& s : samples) running_.observe_measurement(s);
  if (bias) running_.observe_bias(*bias);
  stats_ = running_.finalize();
  if (frames_seen_total_ >= uint64_t(cfg_.stats_freeze_frame)) stats_frozen_ = true;
}

Session::IntervalRecord Session::make_interval(int kf_i, int kf_j,
                                               std::vector<ImuSample> samples) {
  IntervalRecord rec;
  rec.kf_i = kf_i;
  rec.kf_j = kf_j;
  rec.samples = std::move(samples);

  const BiasState prev_bias = graph_.kf(kf_i).bias;
  BiasState bhat;
  if (cfg_.bias_predictor == BiasPredictorKind::kNetwork) {
    rec.prediction = predict(learned_.bias_net, stats_, prev_bias, rec.samples);
    rec.stats_at_prediction = stats_;
    rec.has_prediction = true;
    bhat = rec.prediction.predicted_bias;
  } else {
    bhat = random_walk_predict(prev_bias);
  }
  rec.preint = integrate_batch(rec.samples, bhat, cfg_.imu_noise);
  return rec;
}

void Session::process_frame(int frame_index, SessionResult& result) {
  ++frames_seen_total_;
  FrameView view = make_view(frame_index);
  if (phase_ == Phase::kMapInit) {
    map_init_step(view);
  } else {
    track_frame(view, result);
  }
  if (phase_ == Phase::kTracking && !imu_ready_ &&
      (epoch_frame_ == cfg_.imu_init_trigger_1 || epoch_frame_ == cfg_.imu_init_trigger_2)) {
    try_imu_init(result);
  }
  record_poses();
  ++epoch_frame_;
  ++global_iteration_;
}

void Session::map_init_step(const FrameView& view) {
  KeyframeState kf;
  kf.id = view.keyframe_id;
  kf.frame_index = view.frame_index;
  kf.timestamp_ns = view.timestamp_ns;
  const auto ids_before = active_kf_ids();
  if (!ids_before.empty()) {
    const KeyframeState& prev = graph_.kf(ids_before.back());
    kf.position = prev.position;
    kf.orientation = prev.orientation;
  }
  kf.patches = sample_patches(ctx_, view, patch_seed(view.frame_index),
                              1.0 / cfg_.scene_mean_depth, cfg_.patches_per_frame,
                              view.keyframe_id * cfg_.patches_per_frame);
  views_[kf.id] = view;
  graph_.keyframes[kf.id] = std::move(kf);

  if (!ids_before.empty()) {
    intervals_[view.keyframe_id] =
        make_interval(ids_before.back(), view.keyframe_id,
                      interval_samples(graph_.kf(ids_before.back()).frame_index,
                                       view.frame_index));
  }
  observe_stats(ids_before.empty() ? std::vector<ImuSample>{} : intervals_[view.keyframe_id].samples,
                nullptr);

  // every frame is kept until the map is initialized: they are all optimized
  // together in finish_map_init and refined again at IMU initialization, so
  // the emitted trajectory has no unrefined head
  const auto ids = active_kf_ids();
  if (int(ids.size()) >= cfg_.map_init_frames) {
    const double disp =
        disparity_between(ctx_, graph_.kf(ids.front()).patches, views_.at(ids.back()));
    if (disp >= cfg_.parallax_threshold_px) finish_map_init();
  }
}

void Session::finish_map_init() {
  const auto ids = active_kf_ids();
  for (size_t si = 0; si < ids.size(); ++si) {
    const KeyframeState& src = graph_.kf(ids[si]);
    std::vector<TargetFrame> targets;
    std::vector<RigidTransform> poses;
    poses.reserve(ids.size());
    for (size_t ti = si + 1; ti < ids.size(); ++ti) poses.push_back(graph_.kf(ids[ti]).pose());
    size_t pi = 0;
    for (size_t ti = si + 1; ti < ids.size(); ++ti) {
      targets.push_back({&views_.at(ids[ti]), &poses[pi++]});
    }
    if (targets.empty()) continue;
    const auto preds =
        predict_correspondences(ctx_, *provider_, src.patches, views_.at(ids[si]), src.pose(),
                                targets);
    for (const CorrespondencePrediction& p : preds) {
      graph_.visual_factors.push_back(
          {ids[si], p.patch_index, p.target_kf, p.pixel, p.confidence * p.confidence});
    }
  }
  graph_.kf(ids.front()).pose_fixed = true;

  GaussNewtonOptions opts;
  opts.iterations = 10;
  opts.damping = cfg_.damping;
  const GaussNewtonResult gn = gauss_newton(graph_, opts);

  // no pose estimate existed when the factors were created, so the
  // association gate could not run; prune gross mismatches against the
  // converged fit instead and settle the map once more
  if (cfg_.match_gate_px > 0.0) {
    const size_t before = graph_.visual_factors.size();
    std::erase_if(graph_.visual_factors, [this](const VisualFactor& f) {
      const VisualResidual res = reprojection_residual(graph_, f);
      return res.valid && res.r.norm() > cfg_.match_gate_px;
    });
    if (graph_.visual_factors.size() != before) {
      GaussNewtonOptions again;
      again.iterations = 5;
      again.damping = cfg_.damping;
      gauss_newton(graph_, again);
    }
  }

  set_finite_difference_velocities();
  phase_ = Phase::kTracking;
  log_ << "map_init frame=" << epoch_frame_ << " cost " << gn.initial_cost << " -> "
       << gn.final_cost << "\n";
}

void Session::track_frame(const FrameView& view, SessionResult& result) {
  const auto ids = active_kf_ids();
  const int prev_id = ids.back();
  const KeyframeState prev = graph_.kf(prev_id);

  // new keyframe: IMU propagation once gravity is known, constant velocity
  // before that
  KeyframeState kf;
  kf.id = view.keyframe_id;
  kf.frame_index = view.frame_index;
  kf.timestamp_ns = view.timestamp_ns;
  views_[kf.id] = view;
  graph_.keyframes[kf.id] = kf;  // placeholder so make_interval can see prev bias

  IntervalRecord rec =
      make_interval(prev_id, kf.id, interval_samples(prev.frame_index, view.frame_index));
  const BiasState bhat = rec.has_prediction ? rec.prediction.predicted_bias
                                            : random_walk_predict(prev.bias);
  result.bias_predictions.emplace_back(view.timestamp_ns, bhat);

  KeyframeState& stored = graph_.kf(kf.id);
  if (imu_ready_) {
    const double dt = rec.preint.dt_total;
    const Mat3 r_i = prev.orientation.matrix();
    stored.position = prev.position + prev.velocity * dt + 0.5 * graph_.gravity * dt * dt +
                      r_i * rec.preint.alpha;
    stored.velocity = prev.velocity + graph_.gravity * dt + r_i * rec.preint.beta;
    stored.orientation = prev.orientation * rec.preint.gamma;
  } else if (ids.size() >= 2) {
    const KeyframeState& prev2 = graph_.kf(ids[ids.size() - 2]);
    const RigidTransform rel = prev2.pose().inverse() * prev.pose();
    const RigidTransform guess = prev.pose() * rel;
    stored.position = guess.translation;
    stored.orientation = guess.rotation;
    stored.velocity = prev.velocity;
  } else {
    stored.position = prev.position;
    stored.orientation = prev.orientation;
    stored.velocity = prev.velocity;
  }
  stored.bias = bhat;
  stored.patches = sample_patches(ctx_, view, patch_seed(view.frame_index),
                                  1.0 / cfg_.scene_mean_depth, cfg_.patches_per_frame,
                                  kf.id * cfg_.patches_per_frame);
  intervals_[kf.id] = std::move(rec);

  // visual association against the recent keyframes
  const int first = std::max(0, int(ids.size()) - cfg_.association_span);
  const RigidTransform new_pose = stored.pose();
  std::vector<double> assoc_disparity;
  for (size_t si = size_t(first); si < ids.size(); ++si) {
    const KeyframeState& src = graph_.kf(ids[si]);
    std::vector<TargetFrame> targets{{&views_.at(kf.id), &new_pose}};
    const auto preds = predict_correspondences(ctx_, *provider_, src.patches, views_.at(ids[si]),
                                               src.pose(), targets, nullptr, cfg_.match_gate_px);
    for (const CorrespondencePrediction& p : preds) {
      graph_.visual_factors.push_back(
          {ids[si], p.patch_index, kf.id, p.pixel, p.confidence * p.confidence});
    }
    assoc_disparity.push_back(disparity_between(ctx_, src.patches, view));
  }

  // deployment only: covisibility pairs to older keyframes whose disparity is
  // below the median of the standard associations, at most covisibility_cap
  if (cfg_.mode == SessionMode::kDeployment && !assoc_disparity.empty() && first > 0) {
    std::vector<double> sorted = assoc_disparity;
    std::sort(sorted.begin(), sorted.end());
    const double median = sorted[sorted.size() / 2];
    int added_pairs = 0;
    // the candidate scan is bounded: keyframes far in the past share no
    // covisibility with the current view, and probing each one costs a full
    // patch re-projection
    const int scan_floor = std::max(0, first - 1 - 3 * cfg_.covisibility_cap);
    for (int si = first - 1; si >= scan_floor && added_pairs < cfg_.covisibility_cap; --si) {
      const KeyframeState& src = graph_.kf(ids[si]);
      if (disparity_between(ctx_, src.patches, view) >= median) continue;
      std::vector<TargetFrame> targets{{&views_.at(kf.id), &new_pose}};
      const auto preds = predict_correspondences(ctx_, *provider_, src.patches, views_.at(ids[si]),
                                                 src.pose(), targets, nullptr, cfg_.match_gate_px);
      for (const CorrespondencePrediction& p : preds) {
        graph_.visual_factors.push_back(
            {ids[si], p.patch_index, kf.id, p.pixel, p.confidence * p.confidence});
      }
      if (!preds.empty()) ++added_pairs;
    }
  }

  if (imu_ready_ && viba_active_) {
    graph_.imu_factors.push_back(
        {prev_id, kf.id, intervals_.at(kf.id).preint, intervals_.at(kf.id).samples});
    graph_.bias_factors.push_back({kf.id, bhat});
    if (cfg_.mode == SessionMode::kOnlineLearning) {
      const auto now_ids = active_kf_ids();
      const int tail_start = std::max(0, int(now_ids.size()) - cfg_.imu_tail_online);
      const int cutoff = now_ids[tail_start];
      std::erase_if(graph_.imu_factors,
                    [cutoff](const ImuFactor& f) { return f.kf_j <= cutoff; });
    }
  }

  refresh_window();
  collect_garbage();

  GaussNewtonOptions opts;
  opts.iterations = cfg_.viba_iterations;
  opts.damping = cfg_.damping;
  gauss_newton(graph_, opts);
  if (!viba_active_) set_finite_difference_velocities();

  // placeholder biases before the visual-inertial alignment carry no
  // information; only real estimates enter the normalization statistics
  observe_stats(intervals_.at(kf.id).samples, imu_ready_ ? &graph_.kf(kf.id).bias : nullptr);
  cull_check();
  if (cfg_.feedback_enabled) feedback_step();
}

void Session::refresh_window() {
  const auto ids = active_kf_ids();
  const int fixed_until = int(ids.size()) - cfg_.window_size;
  for (int i = 0; i < int(ids.size()); ++i) {
    if (i < fixed_until) {
      KeyframeState& kf = graph_.kf(ids[i]);
      kf.pose_fixed = true;
      kf.depths_fixed = true;
    }
  }
}

void Session::collect_garbage() {
  std::erase_if(graph_.visual_factors, [this](const VisualFactor& f) {
    if (!graph_.has_kf(f.source_kf) || !graph_.has_kf(f.target_kf)) return true;
    const KeyframeState& s = graph_.kf(f.source_kf);
    const KeyframeState& t = graph_.kf(f.target_kf);
    return s.pose_fixed && t.pose_fixed && s.depths_fixed;
  });
  std::erase_if(graph_.imu_factors, [this](const ImuFactor& f) {
    if (!graph_.has_kf(f.kf_i) || !graph_.has_kf(f.kf_j)) return true;
    return graph_.kf(f.kf_i).pose_fixed && graph_.kf(f.kf_j).pose_fixed;
  });
  std::erase_if(graph_.bias_factors, [this](const BiasFactor& f) {
    return !graph_.has_kf(f.kf) || graph_.kf(f.kf).pose_fixed;
  });
}

void Session::cull_check() {
  // culling starts once the map is metric: before IMU initialization every
  // keyframe is retained so the init-time global refinement can reach it
  if (!imu_ready_) {
    consecutive_culls_ = 0;
    return;
  }
  const auto ids = active_kf_ids();
  const int n = int(ids.size());
  if (n < 6) {
    consecutive_culls_ = 0;
    return;
  }
  // deployment: after two consecutive removals the next frame is retained
  if (cfg_.mode == SessionMode::kDeployment && consecutive_culls_ >= 2) {
    consecutive_culls_ = 0;
    return;
  }
  const int candidate = ids[n - 5];
  const int before = ids[n - 6];
  const int after = ids[n - 4];
  if (graph_.kf(candidate).pose_fixed) {
    consecutive_culls_ = 0;
    return;
  }
  if (graph_.kf(after).frame_index - graph_.kf(before).frame_index > cfg_.max_keyframe_gap) {
    consecutive_culls_ = 0;
    return;
  }
  const double disp =
      disparity_between(ctx_, graph_.kf(before).patches, views_.at(after));
  if (disp < cfg_.cull_disparity_threshold_px) {
    remove_keyframe(candidate);
    ++consecutive_culls_;
  } else {
    consecutive_culls_ = 0;
  }
}

void Session::remove_keyframe(int kf_id) {
  // fold the two adjoining IMU intervals into one
  const auto left_it = intervals_.find(kf_id);
  int right_id = -1;
  for (const auto& [j, rec] : intervals_) {
    if (rec.kf_i == kf_id) {
      right_id = j;
      break;
    }
  }
  if (left_it != intervals_.end() && right_id >= 0) {
    std::vector<ImuSample> merged = merge_samples(left_it->second.samples,
                                                  intervals_.at(right_id).samples);
    const int kf_i = left_it->second.kf_i;
    intervals_.erase(left_it);
    intervals_[right_id] = make_interval(kf_i, right_id, std::move(merged));
    // refresh the matching IMU factor if one is active
    bool had_factor = false;
    std::erase_if(graph_.imu_factors, [&](const ImuFactor& f) {
      const bool touches = f.kf_i == kf_id || f.kf_j == kf_id;
      had_factor = had_factor || touches;
      return touches;
    });
    if (had_factor) {
      graph_.imu_factors.push_back(
          {kf_i, right_id, intervals_.at(right_id).preint, intervals_.at(right_id).samples});
    }
  } else if (left_it != intervals_.end()) {
    intervals_.erase(left_it);
    std::erase_if(graph_.imu_factors,
                  [kf_id](const ImuFactor& f) { return f.kf_i == kf_id || f.kf_j == kf_id; });
  }

  std::erase_if(graph_.visual_factors, [kf_id](const VisualFactor& f) {
    return f.source_kf == kf_id || f.target_kf == kf_id;
  });
  std::erase_if(graph_.bias_factors, [kf_id](const BiasFactor& f) { return f.kf == kf_id; });

  const KeyframeState& kf = graph_.kf(kf_id);
  trajectory_[kf.frame_index] = {kf.timestamp_ns, kf.pose()};
  graph_.keyframes.erase(kf_id);
  views_.erase(kf_id);
}

void Session::try_imu_init(SessionResult& result) {
  const auto ids = active_kf_ids();
  // the initializer consumes the whole history available at the trigger; a
  // short tail is not enough to separate gravity from the accelerometer bias
  const int use = std::min<int>(80, int(ids.size()));
  if (use < 5) return;

  // the alignment double-differentiates the visual poses, so pixel-noise in
  // the tracking poses is amplified by 1/dt^2; stride the frames to ~0.25 s
  // intervals (merging the raw IMU in between) to keep that error below the
  // gravity tolerance
  const int first = int(ids.size()) - use;
  const int last = int(ids.size()) - 1;
  const double frame_dt =
      use > 1 ? double(graph_.kf(ids[last]).timestamp_ns - graph_.kf(ids[first]).timestamp_ns) *
                    1e-9 / double(use - 1)
              : 0.0;
  int stride = frame_dt > 0.0 ? std::max(1, int(std::lround(0.25 / frame_dt))) : 1;
  if (std::getenv("AVIO_INIT_STRIDE")) stride = std::atoi(std::getenv("AVIO_INIT_STRIDE"));
  std::vector<int> picked;
  for (int i = first; i < last; i += stride) picked.push_back(i);
  picked.push_back(last);

  ImuInitInput in;
  in.gravity_magnitude = cfg_.gravity_magnitude;
  in.noise = cfg_.imu_noise;
  for (size_t pi = 0; pi < picked.size(); ++pi) {
    const KeyframeState& kf = graph_.kf(ids[picked[pi]]);
    in.frames.push_back({kf.timestamp_ns, kf.pose()});
    if (pi == 0) continue;
    std::vector<ImuSample> merged;
    for (int i = picked[pi - 1] + 1; i <= picked[pi]; ++i) {
      for (const ImuSample& s : intervals_.at(ids[i]).samples) {
        if (!merged.empty() && s.timestamp_ns <= merged.back().timestamp_ns) continue;
        merged.push_back(s);
      }
    }
    in.interval_samples.push_back(std::move(merged));
  }
  const ImuInitResult res = run_imu_initialization(in);
  if (!res.success) {
    log_ << "imu_init frame=" << epoch_frame_ << " failed: " << res.failure_reason << "\n";
    return;
  }

  const double s = res.scale;
  const Rotation r_align = rotation_between(res.gravity, graph_.gravity);
  for (auto& [id, kf] : graph_.keyframes) {
    kf.position = r_align * (s * kf.position);
    kf.orientation = r_align * kf.orientation;
    kf.velocity = r_align * (s * kf.velocity);
    kf.bias = res.bias;
    for (PatchTrack& p : kf.patches) p.inv_depth /= s;
  }
  // solved velocities at the strided frames; central differences of the now
  // metric poses in between (the refinement below settles them further)
  for (int i = 0; i < int(ids.size()); ++i) {
    const int a = std::max(0, i - 1);
    const int b = std::min(int(ids.size()) - 1, i + 1);
    if (a == b) continue;
    const KeyframeState& ka = graph_.kf(ids[a]);
    const KeyframeState& kb = graph_.kf(ids[b]);
    const double dt = double(kb.timestamp_ns - ka.timestamp_ns) * 1e-9;
    if (dt > 0.0) graph_.kf(ids[i]).velocity = (kb.position - ka.position) / dt;
  }
  for (size_t pi = 0; pi < picked.size(); ++pi) {
    graph_.kf(ids[picked[pi]]).velocity = r_align * res.velocities[pi];
  }
  // bring the already-recorded (visual-scale) trajectory into the metric,
  // gravity-aligned frame as well, so one pass emits a single consistent map
  for (auto& [frame, pose] : trajectory_) {
    pose.pose.translation = r_align * (s * pose.pose.translation);
    pose.pose.rotation = r_align * pose.pose.rotation;
  }

  // re-predict and re-integrate every interval at the solved bias
  for (size_t i = 1; i < ids.size(); ++i) {
    const auto it = intervals_.find(ids[i]);
    if (it == intervals_.end()) continue;
    IntervalRecord& rec = it->second;
    rec = make_interval(rec.kf_i, rec.kf_j, std::move(rec.samples));
  }

  // one-time global refinement: poses frozen before initialization carry the
  // visual-only drift, which is not a uniform scale and survives the rescale
  // above. Re-open the whole map, constrain it with IMU factors everywhere,
  // and let Gauss-Newton settle it in the metric frame. The sliding window
  // re-freezes and trims the history on the next frame.
  if (viba_active_) {
    for (auto& [id, kf] : graph_.keyframes) {
      kf.pose_fixed = false;
      kf.depths_fixed = false;
    }
    graph_.visual_factors.clear();
    graph_.imu_factors.clear();
    graph_.bias_factors.clear();
    for (size_t si = 0; si + 1 < ids.size(); ++si) {
      const KeyframeState& src = graph_.kf(ids[si]);
      const size_t last = std::min(ids.size(), si + 4);
      std::vector<RigidTransform> poses;
      std::vector<TargetFrame> targets;
      poses.reserve(last - si - 1);
      for (size_t ti = si + 1; ti < last; ++ti) poses.push_back(graph_.kf(ids[ti]).pose());
      size_t pi = 0;
      for (size_t ti = si + 1; ti < last; ++ti) {
        targets.push_back({&views_.at(ids[ti]), &poses[pi++]});
      }
      const auto preds = predict_correspondences(ctx_, *provider_, src.patches,
                                                 views_.at(ids[si]), src.pose(), targets, nullptr,
                                                 cfg_.match_gate_px);
      for (const CorrespondencePrediction& p : preds) {
        graph_.visual_factors.push_back(
            {ids[si], p.patch_index, p.target_kf, p.pixel, p.confidence * p.confidence});
      }
    }
    for (size_t i = 1; i < ids.size(); ++i) {
      const auto it = intervals_.find(ids[i]);
      if (it == intervals_.end()) continue;
      const IntervalRecord& rec = it->second;
      graph_.imu_factors.push_back({rec.kf_i, rec.kf_j, rec.preint, rec.samples});
      graph_.bias_factors.push_back(
          {rec.kf_j,
           rec.has_prediction ? rec.prediction.predicted_bias : graph_.kf(rec.kf_i).bias});
    }
    GaussNewtonOptions opts;
    opts.iterations = 8;
    opts.damping = cfg_.damping;
    const GaussNewtonResult gn = gauss_newton(graph_, opts);
    log_ << "imu_init refinement cost " << gn.initial_cost << " -> " << gn.final_cost << "\n";
  }

  imu_ready_ = true;
  result.imu_initialized = true;
  result.init_scale = s;
  log_ << "imu_init frame=" << epoch_frame_ << " scale=" << s << " |g|=" << res.gravity.norm()
       << "\n";
}

void Session::set_finite_difference_velocities() {
  const auto ids = active_kf_ids();
  const int n = int(ids.size());
  for (int i = 0; i < n; ++i) {
    KeyframeState& kf = graph_.kf(ids[i]);
    if (kf.pose_fixed) continue;
    const int a = std::max(0, i - 1);
    const int b = std::min(n - 1, i + 1);
    if (a == b) continue;
    const KeyframeState& ka = graph_.kf(ids[a]);
    const KeyframeState& kb = graph_.kf(ids[b]);
    const double dt = double(kb.timestamp_ns - ka.timestamp_ns) * 1e-9;
    if (dt <= 0.0) continue;
    kf.velocity = (kb.position - ka.position) / dt;
  }
}

void Session::feedback_step() {
  // deployment mode never updates parameters; losses are still tracked as
  // metrics
  const bool learn = cfg_.mode == SessionMode::kOnlineLearning;
  if (imu_ready_ && cfg_.bias_predictor == BiasPredictorKind::kNetwork) {
    const double lr = viba_active_ ? cfg_.lr_bias_viba : cfg_.lr_bias_pre_viba;
    const auto ids = active_kf_ids();
    BiasNetGrads grads;  // zero-initialized
    double loss_total = 0.0;
    int used = 0;
    for (int i = int(ids.size()) - 1; i >= 1 && used < cfg_.imu_loss_span; --i) {
      const auto it = intervals_.find(ids[i]);
      if (it == intervals_.end() || !it->second.has_prediction) continue;
      const IntervalRecord& rec = it->second;
      if (!graph_.has_kf(rec.kf_i) || !graph_.has_kf(rec.kf_j)) continue;
      const KeyframeState& ki = graph_.kf(rec.kf_i);
      const KeyframeState& kj = graph_.kf(rec.kf_j);
      const Preintegration& pre = rec.preint;
      const double dt = pre.dt_total;
      const Mat3 ri_t = ki.orientation.matrix().transpose();
      const Vec3 r_a =
          ri_t * (kj.position - ki.position - ki.velocity * dt - 0.5 * graph_.gravity * dt * dt) -
          pre.alpha;
      const Vec3 r_b = ri_t * (kj.velocity - ki.velocity - graph_.gravity * dt) - pre.beta;
      const Vec3 phi = so3_log(pre.gamma.inverse() * (ki.orientation.inverse() * kj.orientation));
      loss_total += r_a.squaredNorm() + r_b.squaredNorm() + phi.squaredNorm();

      // d loss / d predicted bias: the preintegration was integrated at the
      // prediction, so the sensitivities are the stored bias Jacobians
      const Vec3 g_ba = -2.0 * (pre.J_alpha_ba.transpose() * r_a + pre.J_beta_ba.transpose() * r_b);
      const Mat3 d_phi = -so3_right_jacobian_inv(phi) * so3_exp(phi).inverse().matrix() *
                         pre.J_gamma_bg;
      const Vec3 g_bg = -2.0 * (pre.J_alpha_bg.transpose() * r_a + pre.J_beta_bg.transpose() * r_b) +
                        2.0 * d_phi.transpose() * phi;
      Vec6 grad;
      grad << g_ba, g_bg;
      const BiasNetBackwardResult back =
          backward(learned_.bias_net, rec.stats_at_prediction, rec.prediction, grad);
      accumulate_grads(grads, back.grads);
      ++used;
    }
    if (used > 0) {
      epoch_imu_loss_sum_ += loss_total / used;
      ++epoch_imu_loss_n_;
      if (learn && global_iteration_ % uint64_t(std::max(1, cfg_.bias_update_every)) == 0) {
        apply_update(learned_.bias_net, grads, lr);
      }
    }
  }

  if (global_iteration_ % uint64_t(std::max(1, cfg_.visual_update_every)) == 0) {
    const auto ids = active_kf_ids();
    const int first = std::max(0, int(ids.size()) - cfg_.photo_loss_span);
    std::map<int, RigidTransform> poses;
    for (const auto& [id, kf] : graph_.keyframes) poses[id] = kf.pose();
    std::vector<PhotoLossItem> items;
    for (const VisualFactor& f : graph_.visual_factors) {
      bool recent = false;
      for (int i = first; i < int(ids.size()); ++i) recent = recent || ids[i] == f.source_kf;
      if (!recent) continue;
      if (views_.count(f.source_kf) == 0 || views_.count(f.target_kf) == 0) continue;
      items.push_back({&views_.at(f.source_kf), &poses.at(f.source_kf),
                       &graph_.kf(f.source_kf).patches.at(f.patch_index), &views_.at(f.target_kf),
                       &poses.at(f.target_kf)});
    }
    if (!items.empty()) {
      const OracleNoisyProvider* base =
          cfg_.provider == ProviderKind::kOracleWithCorrector ? &*base_oracle_ : nullptr;
      const PhotometricLossResult res = photometric_loss(
          ctx_, items, provider_has_corrector_ ? &learned_.corrector : nullptr, base);
      if (res.terms > 0) {
        epoch_photo_loss_sum_ += res.loss / double(res.terms);
        ++epoch_photo_loss_n_;
      }
      if (learn && provider_has_corrector_ && res.has_grads) {
        corrector_apply_update(learned_.corrector, res.grads, cfg_.lr_visual);
      }
    }
  }
}

void Session::record_poses() {
  for (const auto& [id, kf] : graph_.keyframes) {
    trajectory_[kf.frame_index] = {kf.timestamp_ns, kf.pose()};
  }
}

void Session::run_pass(SessionResult& result) {
  for (int k = 0; k < n_frames_; ++k) process_frame(k, result);
  result.frames_processed = size_t(n_frames_);
  result.trajectory.clear();
  result.trajectory.reserve(trajectory_.size());
  for (const auto& [frame, pose] : trajectory_) result.trajectory.push_back(pose);
}

SessionResult Session::run_single_pass() {
  SessionResult result;
  reset_estimator();
  viba_active_ = true;
  run_pass(result);
  result.log = log_.str();
  return result;
}

SessionResult Session::run_online_learning() {
  SessionResult result;
  // divergence baseline per phase: visual-only epochs are gauge-free after
  // Sim(3) alignment and sit orders of magnitude below metric VIBA epochs,
  // so the two must not be compared against each other
  double baseline_ate = std::numeric_limits<double>::quiet_NaN();
  bool baseline_viba = false;

  for (int e = 0; e < cfg_.epochs; ++e) {
    SessionResult pass;
    reset_estimator();
    viba_active_ = e >= cfg_.visual_only_epochs;
    run_pass(pass);

    EpochMetrics m;
    m.epoch = e;
    m.viba = viba_active_;
    m.imu_loss_mean = epoch_imu_loss_n_ > 0 ? epoch_imu_loss_sum_ / double(epoch_imu_loss_n_) : 0.0;
    m.photo_loss_mean =
        epoch_photo_loss_n_ > 0 ? epoch_photo_loss_sum_ / double(epoch_photo_loss_n_) : 0.0;
    try {
      m.ate_sim3 = align(pass.trajectory, seq_.ground_truth, AlignMode::kSim3).rmse_ate;
    } catch (const std::exception& ex) {
      log_ << "epoch " << e << " alignment failed: " << ex.what() << "\n";
    }
    const bool new_phase = !std::isfinite(baseline_ate) || baseline_viba != viba_active_;
    if (new_phase && std::isfinite(m.ate_sim3)) {
      baseline_ate = m.ate_sim3;
      baseline_viba = viba_active_;
    }
    const bool diverged = !new_phase && std::isfinite(baseline_ate) &&
                          std::isfinite(m.ate_sim3) &&
                          m.ate_sim3 > 100.0 * std::max(baseline_ate, 1e-9);
    m.aborted = diverged || !std::isfinite(m.ate_sim3);
    result.epochs.push_back(m);
    log_ << "epoch " << e << " ate=" << m.ate_sim3 << " imu_loss=" << m.imu_loss_mean
         << " photo_loss=" << m.photo_loss_mean << (m.viba ? " viba" : " visual-only") << "\n";

    result.trajectory = std::move(pass.trajectory);
    result.bias_predictions = std::move(pass.bias_predictions);
    result.frames_processed = pass.frames_processed;
    result.imu_initialized = pass.imu_initialized;
    result.init_scale = pass.init_scale;
    if (diverged) {
      log_ << "epoch " << e << " diverged (>100x epoch-0 ATE), stopping\n";
      break;
    }
  }
  result.log = log_.str();
  return result;
}

}  // namespace avio
