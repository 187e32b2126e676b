#include "avio/frontend.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "avio/tensor_archive.hpp"

namespace avio {

namespace {

// splitmix64: cheap, well-mixed hash for per-(seed, patch, frame) streams.
uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t match_stream_seed(uint64_t seed, int patch_id, int target_frame) {
  uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ uint64_t(uint32_t(patch_id)));
  h = splitmix64(h ^ (uint64_t(uint32_t(target_frame)) << 20));
  return h;
}

bool inside_image(const CameraIntrinsics& intr, const Vec2& px) {
  return px.x() >= 0.0 && px.x() < double(intr.width) && px.y() >= 0.0 &&
         px.y() < double(intr.height);
}

Vec3 backproject(const CameraIntrinsics& intr, const Vec2& pixel, double depth) {
  return {(pixel.x() - intr.cx) / intr.fx * depth, (pixel.y() - intr.cy) / intr.fy * depth, depth};
}

double clip_gradients(std::vector<std::pair<std::string, MatX*>> blocks, double max_norm) {
  double sq = 0.0;
  for (auto& [name, m] : blocks) sq += m->squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& [name, m] : blocks) *m *= s;
  }
  return norm;
}

}  // namespace

std::array<Vec2, kPatchPixels> patch_offsets() {
  std::array<Vec2, kPatchPixels> out;
  int k = 0;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) out[k++] = Vec2(dx, dy);
  return out;
}

std::vector<PatchTrack> sample_patches(const FrontendContext& ctx, const FrameView& view,
                                       uint64_t seed, double init_inv_depth, int count,
                                       int id_base) {
  if (count <= 0) throw std::invalid_argument("sample_patches: count must be positive");
  const CameraIntrinsics& intr = ctx.intrinsics;
  const double m = double(ctx.border_margin);
  std::mt19937_64 rng(splitmix64(seed ^ (uint64_t(uint32_t(view.frame_index)) << 32)));
  std::uniform_real_distribution<double> ux(m, double(intr.width) - m);
  std::uniform_real_distribution<double> uy(m, double(intr.height) - m);
  std::uniform_real_distribution<double> ud(ctx.synthetic_depth_min, ctx.synthetic_depth_max);

  const auto offsets = patch_offsets();
  std::vector<PatchTrack> out;
  out.reserve(count);
  int attempts = 0;
  while (int(out.size()) < count) {
    if (++attempts > 100 * count) {
      throw std::runtime_error("sample_patches: scene not visible from this frame");
    }
    PatchTrack p;
    p.id = id_base + int(out.size());
    p.source_kf = view.keyframe_id;
    p.center = Vec2(ux(rng), uy(rng));
    p.inv_depth = init_inv_depth;
    if (ctx.field != nullptr) {
      auto hit = raycast_plane(intr, view.gt_pose, p.center);
      if (!hit) continue;
      p.true_point_w = hit->point_w;
      p.true_depth = hit->depth;
      p.has_true_point = true;
      bool ok = true;
      for (int k = 0; k < kPatchPixels; ++k) {
        auto s = sample_intensity(*ctx.field, intr, view.gt_pose, p.center + offsets[k]);
        if (!s) {
          ok = false;
          break;
        }
        p.source_intensity[k] = s->intensity;
      }
      if (!ok) continue;
    } else {
      const double depth = ud(rng);
      p.true_point_w = transform_point(view.gt_pose, backproject(intr, p.center, depth));
      p.true_depth = depth;
      p.has_true_point = true;
      p.source_intensity.fill(0.0);
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::optional<Vec2> reproject_pixel(const CameraIntrinsics& intr, const RigidTransform& source_pose,
                                    const RigidTransform& target_pose, const Vec2& pixel,
                                    double inv_depth) {
  if (!(inv_depth > 0.0)) return std::nullopt;
  const Vec3 p_c_source = backproject(intr, pixel, 1.0 / inv_depth);
  const Vec3 p_w = transform_point(source_pose, p_c_source);
  auto proj = project(intr, target_pose, p_w);
  if (!proj) return std::nullopt;
  return proj->pixel;
}

std::optional<PredictedMatch> OracleNoisyProvider::predict(const FrontendContext& ctx,
                                                           const PatchTrack& patch,
                                                           const FrameView& target) const {
  if (!patch.has_true_point) return std::nullopt;
  auto proj = project(ctx.intrinsics, target.gt_pose, patch.true_point_w);
  if (!proj || !inside_image(ctx.intrinsics, proj->pixel)) return std::nullopt;

  std::mt19937_64 rng(match_stream_seed(seed, patch.id, target.frame_index));
  std::uniform_real_distribution<double> uniform01(0.0, 1.0);
  const bool outlier = uniform01(rng) < outlier_rate;
  const double std_used = outlier ? outlier_std : pixel_noise_std;
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double nx = gauss(rng), ny = gauss(rng);

  PredictedMatch match;
  match.pixel = proj->pixel + std_used * Vec2(nx, ny);
  match.confidence = 1.0 / (1.0 + std_used);
  match.outlier = outlier;
  return match;
}

std::vector<std::pair<std::string, MatX*>> CorrectorParams::blocks() {
  return {{"w1", &w1}, {"b1", &b1}, {"w2", &w2}, {"b2", &b2}};
}

std::vector<std::pair<std::string, const MatX*>> CorrectorParams::blocks() const {
  return {{"w1", &w1}, {"b1", &b1}, {"w2", &w2}, {"b2", &b2}};
}

CorrectorParams CorrectorParams::initial(uint64_t seed) {
  CorrectorParams p;
  std::mt19937_64 rng(splitmix64(seed ^ 0x636f727265637420ULL));
  std::uniform_real_distribution<double> u(-1e-3, 1e-3);
  for (auto& [name, m] : p.blocks()) {
    if (name == "w2" || name == "b2") continue;  // zero output head: identity start
    for (Eigen::Index i = 0; i < m->size(); ++i) (*m)(i) = u(rng);
  }
  return p;
}

void CorrectorParams::save(const std::string& path) const { save_tensors(path, blocks()); }

CorrectorParams CorrectorParams::load(const std::string& path) {
  auto tensors = load_tensors(path);
  CorrectorParams p;
  for (auto& [name, m] : p.blocks()) {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
      throw std::runtime_error("CorrectorParams::load: missing tensor " + name);
    }
    if (it->second.rows() != m->rows() || it->second.cols() != m->cols()) {
      throw std::runtime_error("CorrectorParams::load: shape mismatch for " + name);
    }
    *m = it->second;
  }
  return p;
}

std::optional<CorrectorForward> corrector_forward(const CorrectorParams& params,
                                                  const FrontendContext& ctx,
                                                  const PatchTrack& patch,
                                                  const FrameView& target, const Vec2& base_pixel) {
  const CameraIntrinsics& intr = ctx.intrinsics;
  CorrectorForward fwd;
  fwd.base_pixel = base_pixel;
  fwd.input = VecX::Zero(CorrectorParams::kInput);
  fwd.input(0) = (base_pixel.x() - intr.cx) / intr.fx;
  fwd.input(1) = (base_pixel.y() - intr.cy) / intr.fy;
  const auto offsets = patch_offsets();
  for (int k = 0; k < kPatchPixels; ++k) {
    fwd.input(2 + k) = patch.source_intensity[k];
    if (ctx.field != nullptr) {
      auto s = sample_intensity(*ctx.field, intr, target.gt_pose, base_pixel + offsets[k]);
      if (!s) return std::nullopt;
      fwd.input(2 + kPatchPixels + k) = s->intensity;
    }
  }
  fwd.hidden = (params.w1 * fwd.input + params.b1).array().tanh();
  fwd.update = Vec2(params.w2 * fwd.hidden + params.b2);
  return fwd;
}

void corrector_backward(const CorrectorParams& params, const CorrectorForward& fwd,
                        const Vec2& d_update, CorrectorGrads& grads) {
  grads.w2 += d_update * fwd.hidden.transpose();
  grads.b2 += d_update;
  const VecX d_hidden = params.w2.transpose() * d_update;
  const VecX d_pre = d_hidden.array() * (1.0 - fwd.hidden.array().square());
  grads.w1 += d_pre * fwd.input.transpose();
  grads.b1 += d_pre;
}

bool corrector_apply_update(CorrectorParams& params, const CorrectorGrads& grads,
                            double learning_rate) {
  CorrectorGrads clipped = grads;
  for (auto& [name, m] : clipped.blocks()) {
    if (!m->allFinite()) return false;
  }
  clip_gradients(clipped.blocks(), 1.0);
  auto dst = params.blocks();
  auto src = clipped.blocks();
  for (size_t i = 0; i < dst.size(); ++i) *dst[i].second -= learning_rate * *src[i].second;
  return true;
}

std::optional<PredictedMatch> CorrectorProviderAdapter::predict(
    const FrontendContext& ctx, const PatchTrack& patch, const FrameView&, const FrameView& target,
    const std::optional<Vec2>& initial_reprojection) const {
  Vec2 base;
  double confidence = 1.0;
  bool outlier = false;
  if (base_) {
    auto m = base_->predict(ctx, patch, target);
    if (!m) return std::nullopt;
    base = m->pixel;
    confidence = m->confidence;
    outlier = m->outlier;
  } else {
    if (!initial_reprojection) return std::nullopt;
    base = *initial_reprojection;
  }
  if (!inside_image(ctx.intrinsics, base)) return std::nullopt;
  auto fwd = corrector_forward(*params_, ctx, patch, target, base);
  if (!fwd) return std::nullopt;
  PredictedMatch match;
  match.pixel = fwd->base_pixel + fwd->update;
  match.confidence = confidence;
  match.outlier = outlier;
  return match;
}

std::vector<CorrespondencePrediction> predict_correspondences(
    const FrontendContext& ctx, const CorrespondenceProvider& provider,
    const std::vector<PatchTrack>& patches, const FrameView& source,
    const RigidTransform& source_pose_estimate, const std::vector<TargetFrame>& targets,
    PredictStats* stats, double gate_px) {
  std::vector<CorrespondencePrediction> out;
  for (const TargetFrame& target : targets) {
    for (size_t i = 0; i < patches.size(); ++i) {
      const PatchTrack& patch = patches[i];
      if (!patch.alive) continue;
      if (stats) ++stats->attempted;
      std::optional<Vec2> initial = reproject_pixel(ctx.intrinsics, source_pose_estimate,
                                                    *target.pose_estimate, patch.center,
                                                    patch.inv_depth);
      auto match = provider.predict(ctx, patch, source, *target.view, initial);
      if (!match || !inside_image(ctx.intrinsics, match->pixel)) {
        if (stats) ++stats->omitted;
        continue;
      }
      if (gate_px > 0.0 && initial && (match->pixel - *initial).norm() > gate_px) {
        if (stats) ++stats->omitted;
        continue;
      }
      if (stats) ++stats->predicted;
      CorrespondencePrediction pred;
      pred.patch_index = int(i);
      pred.target_kf = target.view->keyframe_id;
      pred.pixel = match->pixel;
      pred.confidence = match->confidence;
      pred.outlier = match->outlier;
      out.push_back(pred);
    }
  }
  return out;
}

PhotometricLossResult photometric_loss(const FrontendContext& ctx,
                                       const std::vector<PhotoLossItem>& items,
                                       const CorrectorParams* corrector,
                                       const OracleNoisyProvider* base) {
  PhotometricLossResult result;
  result.has_grads = corrector != nullptr;
  if (ctx.field == nullptr) return result;  // no imagery, nothing to measure
  const CameraIntrinsics& intr = ctx.intrinsics;
  const auto offsets = patch_offsets();

  for (const PhotoLossItem& item : items) {
    const PatchTrack& patch = *item.patch;
    if (!patch.alive) continue;

    // Per-pixel reprojections under the current state estimate.
    std::array<std::optional<Vec2>, kPatchPixels> reproj;
    for (int k = 0; k < kPatchPixels; ++k) {
      reproj[k] = reproject_pixel(intr, *item.source_pose_estimate, *item.target_pose_estimate,
                                  patch.center + offsets[k], patch.inv_depth);
    }

    // Base pixel the corrector refines: the oracle match if stacked on one,
    // otherwise the center reprojection.
    std::optional<CorrectorForward> fwd;
    Vec2 update = Vec2::Zero();
    if (corrector != nullptr) {
      std::optional<Vec2> base_pixel;
      if (base != nullptr) {
        auto m = base->predict(ctx, patch, *item.target_view);
        if (m) base_pixel = m->pixel;
      } else {
        base_pixel = reproj[4];  // center offset (0, 0)
      }
      if (!base_pixel || !inside_image(intr, *base_pixel)) {
        result.excluded += kPatchPixels;
        continue;
      }
      fwd = corrector_forward(*corrector, ctx, patch, *item.target_view, *base_pixel);
      if (!fwd) {
        result.excluded += kPatchPixels;
        continue;
      }
      update = fwd->update;
    }

    Vec2 d_update = Vec2::Zero();
    bool any_term = false;
    for (int k = 0; k < kPatchPixels; ++k) {
      if (!reproj[k]) {
        ++result.excluded;
        continue;
      }
      Vec2 target_pixel = *reproj[k] + update;
      if (base != nullptr && fwd) {
        // Oracle-based correction replaces the center prediction entirely.
        target_pixel = fwd->base_pixel + update + (*reproj[k] - *reproj[4]);
      }
      if (!inside_image(intr, target_pixel)) {
        ++result.excluded;
        continue;
      }
      auto s = sample_intensity(*ctx.field, intr, item.target_view->gt_pose, target_pixel);
      if (!s) {
        ++result.excluded;
        continue;
      }
      const double diff = s->intensity - patch.source_intensity[k];
      result.loss += std::abs(diff);
      ++result.terms;
      any_term = true;
      if (corrector != nullptr) {
        const double sgn = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
        d_update += sgn * s->grad_pixel;
      }
    }
    if (corrector != nullptr && fwd && any_term) {
      corrector_backward(*corrector, *fwd, d_update, result.grads);
    }
  }
  return result;
}

double disparity_between(const FrontendContext& ctx, const std::vector<PatchTrack>& patches_a,
                         const FrameView& view_b) {
  double sum = 0.0;
  size_t n = 0;
  for (const PatchTrack& p : patches_a) {
    if (!p.alive || !p.has_true_point) continue;
    auto proj = project(ctx.intrinsics, view_b.gt_pose, p.true_point_w);
    if (!proj || !inside_image(ctx.intrinsics, proj->pixel)) continue;
    sum += (proj->pixel - p.center).norm();
    ++n;
  }
  if (n == 0) return 1e9;  // no overlap at all: definitely enough motion
  return sum / double(n);
}

}  // namespace avio
