#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "avio/scene_sim.hpp"

namespace avio {

/// What the camera captured at one frame: the scene rendered from the
/// ground-truth pose. Stands in for the image raster.
struct FrameView {
  int keyframe_id = -1;
  int frame_index = -1;
  int64_t timestamp_ns = 0;
  RigidTransform gt_pose;
};

inline constexpr int kPatchPixels = 9;  // 3x3
std::array<Vec2, kPatchPixels> patch_offsets();

struct PatchTrack {
  int id = -1;
  int source_kf = -1;
  Vec2 center = Vec2::Zero();
  double inv_depth = 0.2;
  bool alive = true;
  std::array<double, kPatchPixels> source_intensity{};

  // oracle geometry captured at sampling time
  Vec3 true_point_w = Vec3::Zero();
  double true_depth = 0.0;
  bool has_true_point = false;
};

struct FrontendContext {
  const IntensityField* field = nullptr;  // null for image-free real logs
  CameraIntrinsics intrinsics;
  double synthetic_depth_min = 2.0;  // patch depth range when no scene exists
  double synthetic_depth_max = 10.0;
  int border_margin = 8;
};

/// Uniform random patch centers with the border margin, inverse depths at
/// init_inv_depth; oracle geometry from a ground-truth ray cast (or a seeded
/// synthetic depth when no scene field is present).
std::vector<PatchTrack> sample_patches(const FrontendContext& ctx, const FrameView& view,
                                       uint64_t seed, double init_inv_depth, int count,
                                       int id_base);

struct PredictedMatch {
  Vec2 pixel = Vec2::Zero();
  double confidence = 1.0;
  bool outlier = false;
};

struct CorrespondencePrediction {
  int patch_index = -1;  // into the source keyframe's patch list
  int target_kf = -1;
  Vec2 pixel = Vec2::Zero();
  double confidence = 1.0;
  bool outlier = false;
};

/// Pinhole reprojection of a source pixel at a given inverse depth into the
/// target camera; empty when behind the target camera.
std::optional<Vec2> reproject_pixel(const CameraIntrinsics& intr, const RigidTransform& source_pose,
                                    const RigidTransform& target_pose, const Vec2& pixel,
                                    double inv_depth);

/// True-geometry match of the patch in the target frame plus seeded Gaussian
/// pixel noise; with probability outlier_rate the noise comes from the
/// outlier distribution, with strictly lower confidence. Deterministic per
/// (seed, patch id, target frame).
struct OracleNoisyProvider {
  double pixel_noise_std = 0.0;
  double outlier_rate = 0.0;
  double outlier_std = 20.0;
  uint64_t seed = 0;

  std::optional<PredictedMatch> predict(const FrontendContext& ctx, const PatchTrack& patch,
                                        const FrameView& target) const;
};

/// Two-layer perceptron over (normalized base pixel, source patch
/// intensities, target intensities at the base pixel) predicting a pixel
/// update on top of the base match.
struct CorrectorParams {
  static constexpr int kHidden = 32;
  static constexpr int kInput = 2 + 2 * kPatchPixels;

  MatX w1{MatX::Zero(kHidden, kInput)}, b1{MatX::Zero(kHidden, 1)};
  MatX w2{MatX::Zero(2, kHidden)}, b2{MatX::Zero(2, 1)};

  std::vector<std::pair<std::string, MatX*>> blocks();
  std::vector<std::pair<std::string, const MatX*>> blocks() const;
  static CorrectorParams initial(uint64_t seed = 0);
  void save(const std::string& path) const;
  static CorrectorParams load(const std::string& path);
};

using CorrectorGrads = CorrectorParams;

struct CorrectorForward {
  Vec2 base_pixel;
  Vec2 update;
  VecX input;
  VecX hidden;
  double base_confidence = 1.0;
  bool base_outlier = false;
};

/// Forward pass of the corrector on top of a base pixel in the target view.
/// Empty when an intensity sample misses the scene.
std::optional<CorrectorForward> corrector_forward(const CorrectorParams& params,
                                                  const FrontendContext& ctx,
                                                  const PatchTrack& patch,
                                                  const FrameView& target, const Vec2& base_pixel);

/// Accumulates parameter gradients for dL/d(update).
void corrector_backward(const CorrectorParams& params, const CorrectorForward& fwd,
                        const Vec2& d_update, CorrectorGrads& grads);

bool corrector_apply_update(CorrectorParams& params, const CorrectorGrads& grads,
                            double learning_rate);

/// Pluggable correspondence source used by tracking.
class CorrespondenceProvider {
 public:
  virtual ~CorrespondenceProvider() = default;
  /// initial_reprojection: match seed from the current state estimate.
  virtual std::optional<PredictedMatch> predict(const FrontendContext& ctx,
                                                const PatchTrack& patch, const FrameView& source,
                                                const FrameView& target,
                                                const std::optional<Vec2>& initial_reprojection)
      const = 0;
};

class OracleProviderAdapter : public CorrespondenceProvider {
 public:
  explicit OracleProviderAdapter(OracleNoisyProvider oracle) : oracle_(oracle) {}
  std::optional<PredictedMatch> predict(const FrontendContext& ctx, const PatchTrack& patch,
                                        const FrameView&, const FrameView& target,
                                        const std::optional<Vec2>&) const override {
    return oracle_.predict(ctx, patch, target);
  }
  const OracleNoisyProvider& oracle() const { return oracle_; }

 private:
  OracleNoisyProvider oracle_;
};

/// Corrector on top of either the state reprojection (default) or a noisy
/// oracle base.
class CorrectorProviderAdapter : public CorrespondenceProvider {
 public:
  CorrectorProviderAdapter(const CorrectorParams* params,
                           std::optional<OracleNoisyProvider> base = std::nullopt)
      : params_(params), base_(base) {}
  std::optional<PredictedMatch> predict(const FrontendContext& ctx, const PatchTrack& patch,
                                        const FrameView& source, const FrameView& target,
                                        const std::optional<Vec2>& initial_reprojection)
      const override;
  const OracleNoisyProvider* base() const { return base_ ? &*base_ : nullptr; }

 private:
  const CorrectorParams* params_;
  std::optional<OracleNoisyProvider> base_;
};

struct PredictStats {
  size_t attempted = 0;
  size_t predicted = 0;
  size_t omitted = 0;
};

struct TargetFrame {
  const FrameView* view;
  const RigidTransform* pose_estimate;
};

/// Batch prediction of one source keyframe's patches against target frames.
/// When gate_px > 0, predictions farther than gate_px from the reprojection of
/// the current estimate are discarded (association gate against gross
/// mismatches; only meaningful once poses and depths have been optimized).
std::vector<CorrespondencePrediction> predict_correspondences(
    const FrontendContext& ctx, const CorrespondenceProvider& provider,
    const std::vector<PatchTrack>& patches, const FrameView& source,
    const RigidTransform& source_pose_estimate, const std::vector<TargetFrame>& targets,
    PredictStats* stats = nullptr, double gate_px = 0.0);

struct PhotoLossItem {
  const FrameView* source_view;
  const RigidTransform* source_pose_estimate;
  const PatchTrack* patch;
  const FrameView* target_view;
  const RigidTransform* target_pose_estimate;
};

struct PhotometricLossResult {
  double loss = 0.0;
  size_t terms = 0;
  size_t excluded = 0;
  CorrectorGrads grads;
  bool has_grads = false;
};

/// L1 intensity discrepancy between source patch pixels and their
/// reprojections (corrector applied on top when provided); reverse-mode
/// gradients w.r.t. the corrector parameters.
PhotometricLossResult photometric_loss(const FrontendContext& ctx,
                                       const std::vector<PhotoLossItem>& items,
                                       const CorrectorParams* corrector,
                                       const OracleNoisyProvider* base);

/// Mean true-geometry displacement (px) of A's patches seen from B; large
/// when nothing overlaps.
double disparity_between(const FrontendContext& ctx, const std::vector<PatchTrack>& patches_a,
                         const FrameView& view_b);

}  // namespace avio
