#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "avio/preintegration.hpp"

namespace avio {

/// Per-channel normalization for (gyro, accel, accel bias, gyro bias).
/// Standard deviations are floored at 1e-6.
struct NormalizationStats {
  Vec3 mean_gyro = Vec3::Zero();
  Vec3 std_gyro = Vec3::Ones();
  Vec3 mean_accel = Vec3::Zero();
  Vec3 std_accel = Vec3::Ones();
  Vec3 mean_ba = Vec3::Zero();
  Vec3 std_ba = Vec3::Ones();
  Vec3 mean_bg = Vec3::Zero();
  Vec3 std_bg = Vec3::Ones();

  Vec6 normalize_bias(const BiasState& b) const;
  Vec6 normalize_measurement(const ImuSample& s) const;
  // Decoding applies the bias channel scales only, so an all-zero network
  // output maps to exactly zero bias.
  BiasState denormalize_bias(const Vec6& y) const;
  Vec6 bias_scale() const;
};

/// Welford accumulator used to freeze NormalizationStats after warmup.
class RunningStats {
 public:
  void observe_measurement(const ImuSample& s);
  void observe_bias(const BiasState& b);
  NormalizationStats finalize() const;

 private:
  struct Acc {
    int64_t n = 0;
    Eigen::Array<double, 6, 1> mean = Eigen::Array<double, 6, 1>::Zero();
    Eigen::Array<double, 6, 1> m2 = Eigen::Array<double, 6, 1>::Zero();
    void add(const Vec6& x);
  };
  Acc meas_;
  Acc bias_;
};

/// Parameters of the bias predictor: FC encoders, a hidden-size-64 GRU, and
/// an FC decoder. Layout mirrors the forward pass in predict().
struct BiasNetParams {
  static constexpr int kHidden = 64;

  MatX fc1_w{MatX::Zero(kHidden, 6)}, fc1_b{MatX::Zero(kHidden, 1)};
  MatX fc2_w{MatX::Zero(kHidden, 12)}, fc2_b{MatX::Zero(kHidden, 1)};
  MatX gru_wz{MatX::Zero(kHidden, kHidden)}, gru_uz{MatX::Zero(kHidden, kHidden)},
      gru_bz{MatX::Zero(kHidden, 1)};
  MatX gru_wr{MatX::Zero(kHidden, kHidden)}, gru_ur{MatX::Zero(kHidden, kHidden)},
      gru_br{MatX::Zero(kHidden, 1)};
  MatX gru_wn{MatX::Zero(kHidden, kHidden)}, gru_un{MatX::Zero(kHidden, kHidden)},
      gru_bni{MatX::Zero(kHidden, 1)}, gru_bnh{MatX::Zero(kHidden, 1)};
  MatX fc3_w{MatX::Zero(6, kHidden)}, fc3_b{MatX::Zero(6, 1)};

  std::vector<std::pair<std::string, MatX*>> blocks();
  std::vector<std::pair<std::string, const MatX*>> blocks() const;

  /// Small uniform FC weights, zero GRU gates with update-gate bias +1:
  /// the cold network behaves like a near-constant estimator.
  static BiasNetParams initial(uint64_t seed = 0);

  void save(const std::string& path) const;
  static BiasNetParams load(const std::string& path);
};

using BiasNetGrads = BiasNetParams;

/// Forward activations sufficient for exact reverse-mode gradients.
struct BiasNetTape {
  Vec6 norm_bias;
  std::vector<Eigen::Matrix<double, 12, 1>> x_in;  // [norm bias ; norm meas]
  std::vector<VecX> x;                             // fc2 output per step
  std::vector<VecX> h_prev, z, r, n, hn;           // GRU internals per step
  VecX h_last;
};

struct BiasPrediction {
  BiasState predicted_bias;
  BiasNetTape tape;
};

struct BiasNetBackwardResult {
  BiasNetGrads grads;
  Vec6 d_prev_bias;
};

/// Runs the recurrent predictor over all samples between two frames.
/// Deterministic; throws on an empty sample list.
BiasPrediction predict(const BiasNetParams& params, const NormalizationStats& stats,
                       const BiasState& prev_bias, const std::vector<ImuSample>& samples);

/// Exact reverse-mode gradients of predict() w.r.t. every parameter block and
/// the previous-bias input. grad_wrt_bias is dL/d(predicted bias), bias order
/// (accel, gyro).
BiasNetBackwardResult backward(const BiasNetParams& params, const NormalizationStats& stats,
                               const BiasPrediction& prediction, const Vec6& grad_wrt_bias);

/// Clipped (global norm 1.0) gradient-descent step. Returns false and leaves
/// params untouched when any gradient entry is non-finite.
bool apply_update(BiasNetParams& params, const BiasNetGrads& grads, double learning_rate);

/// Zero-mean random-walk baseline: prediction equals the previous bias.
BiasState random_walk_predict(const BiasState& prev_bias);

}  // namespace avio
