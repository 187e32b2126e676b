#include "avio/bias_net.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "avio/tensor_archive.hpp"

namespace avio {

namespace {
constexpr double kStdFloor = 1e-6;
constexpr double kBaScaleFloor = 1e-2;  // m/s^2, typical accelerometer bias
constexpr double kBgScaleFloor = 1e-3;  // rad/s, typical gyroscope bias

VecX sigmoid(const VecX& v) { return (1.0 + (-v.array()).exp()).inverse().matrix(); }
}  // namespace

Vec6 NormalizationStats::bias_scale() const {
  Vec6 s;
  s << std_ba, std_bg;
  return s;
}

Vec6 NormalizationStats::normalize_bias(const BiasState& b) const {
  Vec6 out;
  out.head<3>() = (b.accel - mean_ba).cwiseQuotient(std_ba);
  out.tail<3>() = (b.gyro - mean_bg).cwiseQuotient(std_bg);
  return out;
}

Vec6 NormalizationStats::normalize_measurement(const ImuSample& s) const {
  Vec6 out;
  out.head<3>() = (s.gyro - mean_gyro).cwiseQuotient(std_gyro);
  out.tail<3>() = (s.accel - mean_accel).cwiseQuotient(std_accel);
  return out;
}

BiasState NormalizationStats::denormalize_bias(const Vec6& y) const {
  return BiasState{mean_ba + y.head<3>().cwiseProduct(std_ba),
                   mean_bg + y.tail<3>().cwiseProduct(std_bg)};
}

void RunningStats::Acc::add(const Vec6& x) {
  ++n;
  const Eigen::Array<double, 6, 1> d = x.array() - mean;
  mean += d / double(n);
  m2 += d * (x.array() - mean);
}

void RunningStats::observe_measurement(const ImuSample& s) {
  Vec6 x;
  x << s.gyro, s.accel;
  meas_.add(x);
}

void RunningStats::observe_bias(const BiasState& b) { bias_.add(b.vector()); }

NormalizationStats RunningStats::finalize() const {
  NormalizationStats out;
  auto std_of = [](const Acc& a, const Eigen::Array<double, 6, 1>& floor)
      -> Eigen::Array<double, 6, 1> {
    if (a.n < 2) return floor.max(1.0);
    return (a.m2 / double(a.n - 1)).sqrt().max(floor);
  };
  if (meas_.n > 0) {
    out.mean_gyro = meas_.mean.head<3>();
    out.mean_accel = meas_.mean.tail<3>();
  }
  const auto ms = std_of(meas_, Eigen::Array<double, 6, 1>::Constant(kStdFloor));
  out.std_gyro = ms.head<3>();
  out.std_accel = ms.tail<3>();
  if (bias_.n > 0) {
    out.mean_ba = bias_.mean.head<3>();
    out.mean_bg = bias_.mean.tail<3>();
  }
  // the observed bias estimates often barely move (e.g. before the first
  // visual-inertial alignment), which would pin the output scale near zero;
  // floor it at the typical bias magnitude so the head stays expressive
  Eigen::Array<double, 6, 1> bias_floor;
  bias_floor << kBaScaleFloor, kBaScaleFloor, kBaScaleFloor, kBgScaleFloor, kBgScaleFloor,
      kBgScaleFloor;
  const auto bs = std_of(bias_, bias_floor);
  out.std_ba = bs.head<3>();
  out.std_bg = bs.tail<3>();
  return out;
}

std::vector<std::pair<std::string, MatX*>> BiasNetParams::blocks() {
  return {{"fc1_w", &fc1_w},   {"fc1_b", &fc1_b},   {"fc2_w", &fc2_w},   {"fc2_b", &fc2_b},
          {"gru_wz", &gru_wz}, {"gru_uz", &gru_uz}, {"gru_bz", &gru_bz}, {"gru_wr", &gru_wr},
          {"gru_ur", &gru_ur}, {"gru_br", &gru_br}, {"gru_wn", &gru_wn}, {"gru_un", &gru_un},
          {"gru_bni", &gru_bni}, {"gru_bnh", &gru_bnh}, {"fc3_w", &fc3_w}, {"fc3_b", &fc3_b}};
}

std::vector<std::pair<std::string, const MatX*>> BiasNetParams::blocks() const {
  auto mutable_blocks = const_cast<BiasNetParams*>(this)->blocks();
  std::vector<std::pair<std::string, const MatX*>> out;
  out.reserve(mutable_blocks.size());
  for (auto& [name, mat] : mutable_blocks) out.emplace_back(name, mat);
  return out;
}

BiasNetParams BiasNetParams::initial(uint64_t seed) {
  BiasNetParams p;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1e-3, 1e-3);
  auto fill = [&](MatX& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  };
  fill(p.fc1_w);
  fill(p.fc2_w);
  fill(p.fc3_w);
  p.gru_bz.setConstant(1.0);
  return p;
}

void BiasNetParams::save(const std::string& path) const { save_tensors(path, blocks()); }

BiasNetParams BiasNetParams::load(const std::string& path) {
  BiasNetParams p;
  auto tensors = load_tensors(path);
  for (auto& [name, mat] : p.blocks()) {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
      throw std::runtime_error("BiasNetParams::load: missing block " + name);
    }
    if (it->second.rows() != mat->rows() || it->second.cols() != mat->cols()) {
      throw std::runtime_error("BiasNetParams::load: shape mismatch for " + name);
    }
    *mat = it->second;
  }
  return p;
}

BiasPrediction predict(const BiasNetParams& params, const NormalizationStats& stats,
                       const BiasState& prev_bias, const std::vector<ImuSample>& samples) {
  if (samples.empty()) {
    throw std::invalid_argument("predict: empty sample list");
  }
  BiasPrediction out;
  BiasNetTape& tape = out.tape;
  tape.norm_bias = stats.normalize_bias(prev_bias);

  VecX h = params.fc1_w * tape.norm_bias + params.fc1_b;
  for (const ImuSample& s : samples) {
    Eigen::Matrix<double, 12, 1> x_in;
    x_in << tape.norm_bias, stats.normalize_measurement(s);
    const VecX x = params.fc2_w * x_in + params.fc2_b;

    const VecX z = sigmoid(params.gru_wz * x + params.gru_uz * h + params.gru_bz);
    const VecX r = sigmoid(params.gru_wr * x + params.gru_ur * h + params.gru_br);
    const VecX hn = params.gru_un * h + params.gru_bnh;
    const VecX n =
        (params.gru_wn * x + params.gru_bni + r.cwiseProduct(hn)).array().tanh().matrix();
    const VecX h_next = (VecX::Ones(h.size()) - z).cwiseProduct(n) + z.cwiseProduct(h);

    tape.x_in.push_back(x_in);
    tape.x.push_back(x);
    tape.h_prev.push_back(h);
    tape.z.push_back(z);
    tape.r.push_back(r);
    tape.n.push_back(n);
    tape.hn.push_back(hn);
    h = h_next;
  }
  tape.h_last = h;
  const Vec6 y = params.fc3_w * h + params.fc3_b;
  out.predicted_bias = stats.denormalize_bias(y);
  return out;
}

BiasNetBackwardResult backward(const BiasNetParams& params, const NormalizationStats& stats,
                               const BiasPrediction& prediction, const Vec6& grad_wrt_bias) {
  const BiasNetTape& tape = prediction.tape;
  if (tape.x.empty() || tape.h_last.size() != BiasNetParams::kHidden ||
      params.fc3_w.rows() != 6) {
    throw std::invalid_argument("backward: tape/params shape mismatch");
  }
  BiasNetBackwardResult out;
  BiasNetGrads& g = out.grads;

  const Vec6 dy = grad_wrt_bias.cwiseProduct(stats.bias_scale());
  g.fc3_w += dy * tape.h_last.transpose();
  g.fc3_b += dy;
  VecX dh = params.fc3_w.transpose() * dy;

  Vec6 d_norm_bias = Vec6::Zero();
  const VecX ones = VecX::Ones(BiasNetParams::kHidden);
  for (size_t t = tape.x.size(); t-- > 0;) {
    const VecX& x = tape.x[t];
    const VecX& h_prev = tape.h_prev[t];
    const VecX& z = tape.z[t];
    const VecX& r = tape.r[t];
    const VecX& n = tape.n[t];
    const VecX& hn = tape.hn[t];

    const VecX dz = dh.cwiseProduct(h_prev - n);
    const VecX dn = dh.cwiseProduct(ones - z);
    VecX dh_prev = dh.cwiseProduct(z);

    const VecX dn_pre = dn.cwiseProduct((ones.array() - n.array().square()).matrix());
    g.gru_wn += dn_pre * x.transpose();
    g.gru_bni += dn_pre;
    const VecX dr = dn_pre.cwiseProduct(hn);
    const VecX d_hn = dn_pre.cwiseProduct(r);
    g.gru_un += d_hn * h_prev.transpose();
    g.gru_bnh += d_hn;
    dh_prev += params.gru_un.transpose() * d_hn;

    const VecX dz_pre = dz.cwiseProduct(z).cwiseProduct(ones - z);
    const VecX dr_pre = dr.cwiseProduct(r).cwiseProduct(ones - r);
    g.gru_wz += dz_pre * x.transpose();
    g.gru_uz += dz_pre * h_prev.transpose();
    g.gru_bz += dz_pre;
    dh_prev += params.gru_uz.transpose() * dz_pre;
    g.gru_wr += dr_pre * x.transpose();
    g.gru_ur += dr_pre * h_prev.transpose();
    g.gru_br += dr_pre;
    dh_prev += params.gru_ur.transpose() * dr_pre;

    const VecX dx = params.gru_wz.transpose() * dz_pre + params.gru_wr.transpose() * dr_pre +
                    params.gru_wn.transpose() * dn_pre;
    g.fc2_w += dx * tape.x_in[t].transpose();
    g.fc2_b += dx;
    d_norm_bias += (params.fc2_w.transpose() * dx).head<6>();

    dh = dh_prev;
  }

  g.fc1_w += dh * tape.norm_bias.transpose();
  g.fc1_b += dh;
  d_norm_bias += params.fc1_w.transpose() * dh;

  Vec6 inv_std;
  inv_std << stats.std_ba.cwiseInverse(), stats.std_bg.cwiseInverse();
  out.d_prev_bias = d_norm_bias.cwiseProduct(inv_std);
  return out;
}

bool apply_update(BiasNetParams& params, const BiasNetGrads& grads, double learning_rate) {
  double sq = 0.0;
  for (auto& [name, mat] : grads.blocks()) {
    if (!mat->allFinite()) return false;
    sq += mat->squaredNorm();
  }
  const double norm = std::sqrt(sq);
  const double scale = norm > 1.0 ? 1.0 / norm : 1.0;
  auto dst = params.blocks();
  auto src = grads.blocks();
  for (size_t i = 0; i < dst.size(); ++i) {
    *dst[i].second -= learning_rate * scale * (*src[i].second);
  }
  return true;
}

BiasState random_walk_predict(const BiasState& prev_bias) { return prev_bias; }

}  // namespace avio
