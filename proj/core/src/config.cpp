#include "avio/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace avio {

namespace {
std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}
}  // namespace

KeyValueConfig KeyValueConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("config: cannot open " + path);
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return from_string(ss.str());
}

KeyValueConfig KeyValueConfig::from_string(const std::string& text) {
  KeyValueConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config: line " + std::to_string(lineno) + ": expected key=value");
    }
    cfg.values_[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  return cfg;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) {
  consumed_[key] = true;
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) {
  const std::string s = get_string(key, "");
  if (s.empty()) return fallback;
  size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size()) throw std::runtime_error("config: bad number for " + key);
  return v;
}

int KeyValueConfig::get_int(const std::string& key, int fallback) {
  const std::string s = get_string(key, "");
  if (s.empty()) return fallback;
  size_t pos = 0;
  const int v = std::stoi(s, &pos);
  if (pos != s.size()) throw std::runtime_error("config: bad integer for " + key);
  return v;
}

uint64_t KeyValueConfig::get_uint64(const std::string& key, uint64_t fallback) {
  const std::string s = get_string(key, "");
  if (s.empty()) return fallback;
  size_t pos = 0;
  const uint64_t v = std::stoull(s, &pos);
  if (pos != s.size()) throw std::runtime_error("config: bad integer for " + key);
  return v;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) {
  const std::string s = get_string(key, "");
  if (s.empty()) return fallback;
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::runtime_error("config: bad boolean for " + key);
}

std::vector<std::string> KeyValueConfig::unused_keys() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_) {
    if (!consumed_.count(k)) out.push_back(k);
  }
  return out;
}

namespace {

SessionMode parse_mode(const std::string& s) {
  if (s == "online_learning") return SessionMode::kOnlineLearning;
  if (s == "deployment") return SessionMode::kDeployment;
  throw std::runtime_error("config: unknown mode '" + s + "'");
}

ProviderKind parse_provider(const std::string& s) {
  if (s == "oracle") return ProviderKind::kOracleNoisy;
  if (s == "corrector") return ProviderKind::kLearnableCorrector;
  if (s == "oracle_corrector") return ProviderKind::kOracleWithCorrector;
  throw std::runtime_error("config: unknown provider '" + s + "'");
}

BiasPredictorKind parse_bias_predictor(const std::string& s) {
  if (s == "network") return BiasPredictorKind::kNetwork;
  if (s == "random_walk") return BiasPredictorKind::kRandomWalk;
  throw std::runtime_error("config: unknown bias_predictor '" + s + "'");
}

const char* mode_name(SessionMode m) {
  return m == SessionMode::kOnlineLearning ? "online_learning" : "deployment";
}
const char* provider_name(ProviderKind p) {
  switch (p) {
    case ProviderKind::kOracleNoisy: return "oracle";
    case ProviderKind::kLearnableCorrector: return "corrector";
    default: return "oracle_corrector";
  }
}
const char* bias_predictor_name(BiasPredictorKind b) {
  return b == BiasPredictorKind::kNetwork ? "network" : "random_walk";
}

}  // namespace

SessionConfig SessionConfig::from_config(KeyValueConfig& cfg) {
  SessionConfig c;
  c.mode = parse_mode(cfg.get_string("mode", mode_name(c.mode)));
  c.window_size = cfg.get_int("window_size", c.window_size);
  c.patches_per_frame = cfg.get_int("patches_per_frame", c.patches_per_frame);
  c.association_span = cfg.get_int("association_span", c.association_span);
  c.viba_iterations = cfg.get_int("viba_iterations", c.viba_iterations);
  c.imu_loss_span = cfg.get_int("imu_loss_span", c.imu_loss_span);
  c.photo_loss_span = cfg.get_int("photo_loss_span", c.photo_loss_span);
  c.visual_update_every = cfg.get_int("visual_update_every", c.visual_update_every);
  c.bias_update_every = cfg.get_int("bias_update_every", c.bias_update_every);
  c.max_keyframe_gap = cfg.get_int("max_keyframe_gap", c.max_keyframe_gap);
  c.covisibility_cap = cfg.get_int("covisibility_cap", c.covisibility_cap);
  c.imu_tail_online = cfg.get_int("imu_tail_online", c.imu_tail_online);
  c.lr_visual = cfg.get_double("lr_visual", c.lr_visual);
  c.lr_bias_pre_viba = cfg.get_double("lr_bias_pre_viba", c.lr_bias_pre_viba);
  c.lr_bias_viba = cfg.get_double("lr_bias_viba", c.lr_bias_viba);
  c.epochs = cfg.get_int("epochs", c.epochs);
  c.visual_only_epochs = cfg.get_int("visual_only_epochs", c.visual_only_epochs);
  c.map_init_frames = cfg.get_int("map_init_frames", c.map_init_frames);
  c.imu_init_trigger_1 = cfg.get_int("imu_init_trigger_1", c.imu_init_trigger_1);
  c.imu_init_trigger_2 = cfg.get_int("imu_init_trigger_2", c.imu_init_trigger_2);
  c.stats_freeze_frame = cfg.get_int("stats_freeze_frame", c.stats_freeze_frame);
  c.parallax_threshold_px = cfg.get_double("parallax_threshold_px", c.parallax_threshold_px);
  c.cull_disparity_threshold_px =
      cfg.get_double("cull_disparity_threshold_px", c.cull_disparity_threshold_px);
  c.gravity_tolerance = cfg.get_double("gravity_tolerance", c.gravity_tolerance);
  c.sigma_bias_accel = cfg.get_double("sigma_bias_accel", c.sigma_bias_accel);
  c.sigma_bias_gyro = cfg.get_double("sigma_bias_gyro", c.sigma_bias_gyro);
  c.damping = cfg.get_double("damping", c.damping);
  c.gravity_magnitude = cfg.get_double("gravity_magnitude", c.gravity_magnitude);
  c.scene_mean_depth = cfg.get_double("scene_mean_depth", c.scene_mean_depth);
  c.imu_noise.sigma_g = cfg.get_double("sigma_g", c.imu_noise.sigma_g);
  c.imu_noise.sigma_a = cfg.get_double("sigma_a", c.imu_noise.sigma_a);
  c.provider = parse_provider(cfg.get_string("provider", provider_name(c.provider)));
  c.oracle_pixel_noise_std = cfg.get_double("oracle_pixel_noise_std", c.oracle_pixel_noise_std);
  c.oracle_outlier_rate = cfg.get_double("oracle_outlier_rate", c.oracle_outlier_rate);
  c.oracle_outlier_std = cfg.get_double("oracle_outlier_std", c.oracle_outlier_std);
  c.provider_seed = cfg.get_uint64("provider_seed", c.provider_seed);
  c.bias_predictor =
      parse_bias_predictor(cfg.get_string("bias_predictor", bias_predictor_name(c.bias_predictor)));
  c.net_seed = cfg.get_uint64("net_seed", c.net_seed);
  c.feedback_enabled = cfg.get_bool("feedback_enabled", c.feedback_enabled);
  return c;
}

std::string SessionConfig::serialize() const {
  std::ostringstream o;
  o.precision(17);
  o << "mode = " << mode_name(mode) << "\n"
    << "window_size = " << window_size << "\n"
    << "patches_per_frame = " << patches_per_frame << "\n"
    << "association_span = " << association_span << "\n"
    << "viba_iterations = " << viba_iterations << "\n"
    << "imu_loss_span = " << imu_loss_span << "\n"
    << "photo_loss_span = " << photo_loss_span << "\n"
    << "visual_update_every = " << visual_update_every << "\n"
    << "bias_update_every = " << bias_update_every << "\n"
    << "max_keyframe_gap = " << max_keyframe_gap << "\n"
    << "covisibility_cap = " << covisibility_cap << "\n"
    << "imu_tail_online = " << imu_tail_online << "\n"
    << "lr_visual = " << lr_visual << "\n"
    << "lr_bias_pre_viba = " << lr_bias_pre_viba << "\n"
    << "lr_bias_viba = " << lr_bias_viba << "\n"
    << "epochs = " << epochs << "\n"
    << "visual_only_epochs = " << visual_only_epochs << "\n"
    << "map_init_frames = " << map_init_frames << "\n"
    << "imu_init_trigger_1 = " << imu_init_trigger_1 << "\n"
    << "imu_init_trigger_2 = " << imu_init_trigger_2 << "\n"
    << "stats_freeze_frame = " << stats_freeze_frame << "\n"
    << "parallax_threshold_px = " << parallax_threshold_px << "\n"
    << "cull_disparity_threshold_px = " << cull_disparity_threshold_px << "\n"
    << "gravity_tolerance = " << gravity_tolerance << "\n"
    << "sigma_bias_accel = " << sigma_bias_accel << "\n"
    << "sigma_bias_gyro = " << sigma_bias_gyro << "\n"
    << "damping = " << damping << "\n"
    << "gravity_magnitude = " << gravity_magnitude << "\n"
    << "scene_mean_depth = " << scene_mean_depth << "\n"
    << "sigma_g = " << imu_noise.sigma_g << "\n"
    << "sigma_a = " << imu_noise.sigma_a << "\n"
    << "provider = " << provider_name(provider) << "\n"
    << "oracle_pixel_noise_std = " << oracle_pixel_noise_std << "\n"
    << "oracle_outlier_rate = " << oracle_outlier_rate << "\n"
    << "oracle_outlier_std = " << oracle_outlier_std << "\n"
    << "provider_seed = " << provider_seed << "\n"
    << "bias_predictor = " << bias_predictor_name(bias_predictor) << "\n"
    << "net_seed = " << net_seed << "\n"
    << "feedback_enabled = " << (feedback_enabled ? "true" : "false") << "\n";
  return o.str();
}

SimConfig SimConfig::from_config(KeyValueConfig& cfg) {
  SimConfig c;
  c.duration_s = cfg.get_double("sim.duration_s", c.duration_s);
  c.frame_rate_hz = cfg.get_double("sim.frame_rate_hz", c.frame_rate_hz);
  c.imu_rate_hz = cfg.get_double("sim.imu_rate_hz", c.imu_rate_hz);
  c.seed = cfg.get_uint64("sim.seed", c.seed);
  c.field_seed = cfg.get_uint64("sim.field_seed", c.field_seed);
  c.imu_noise.sigma_g = cfg.get_double("sim.sigma_g", c.imu_noise.sigma_g);
  c.imu_noise.sigma_a = cfg.get_double("sim.sigma_a", c.imu_noise.sigma_a);
  c.gravity_magnitude = cfg.get_double("sim.gravity_magnitude", c.gravity_magnitude);
  c.fixed_bias.accel.x() = cfg.get_double("sim.fixed_bias_ax", c.fixed_bias.accel.x());
  c.fixed_bias.accel.y() = cfg.get_double("sim.fixed_bias_ay", c.fixed_bias.accel.y());
  c.fixed_bias.accel.z() = cfg.get_double("sim.fixed_bias_az", c.fixed_bias.accel.z());
  c.fixed_bias.gyro.x() = cfg.get_double("sim.fixed_bias_gx", c.fixed_bias.gyro.x());
  c.fixed_bias.gyro.y() = cfg.get_double("sim.fixed_bias_gy", c.fixed_bias.gyro.y());
  c.fixed_bias.gyro.z() = cfg.get_double("sim.fixed_bias_gz", c.fixed_bias.gyro.z());
  const double wa = cfg.get_double("sim.walk_std_accel", 0.0);
  const double wg = cfg.get_double("sim.walk_std_gyro", 0.0);
  c.walk_std.head<3>().setConstant(wa);
  c.walk_std.tail<3>().setConstant(wg);
  c.coupling_accel = cfg.get_double("sim.coupling_accel", c.coupling_accel);
  c.coupling_gyro = cfg.get_double("sim.coupling_gyro", c.coupling_gyro);
  c.intrinsics.fx = cfg.get_double("sim.fx", c.intrinsics.fx);
  c.intrinsics.fy = cfg.get_double("sim.fy", c.intrinsics.fy);
  c.intrinsics.cx = cfg.get_double("sim.cx", c.intrinsics.cx);
  c.intrinsics.cy = cfg.get_double("sim.cy", c.intrinsics.cy);
  c.intrinsics.width = cfg.get_int("sim.width", c.intrinsics.width);
  c.intrinsics.height = cfg.get_int("sim.height", c.intrinsics.height);
  return c;
}

std::string SimConfig::serialize() const {
  std::ostringstream o;
  o.precision(17);
  o << "sim.duration_s = " << duration_s << "\n"
    << "sim.frame_rate_hz = " << frame_rate_hz << "\n"
    << "sim.imu_rate_hz = " << imu_rate_hz << "\n"
    << "sim.seed = " << seed << "\n"
    << "sim.field_seed = " << field_seed << "\n"
    << "sim.sigma_g = " << imu_noise.sigma_g << "\n"
    << "sim.sigma_a = " << imu_noise.sigma_a << "\n"
    << "sim.gravity_magnitude = " << gravity_magnitude << "\n"
    << "sim.fixed_bias_ax = " << fixed_bias.accel.x() << "\n"
    << "sim.fixed_bias_ay = " << fixed_bias.accel.y() << "\n"
    << "sim.fixed_bias_az = " << fixed_bias.accel.z() << "\n"
    << "sim.fixed_bias_gx = " << fixed_bias.gyro.x() << "\n"
    << "sim.fixed_bias_gy = " << fixed_bias.gyro.y() << "\n"
    << "sim.fixed_bias_gz = " << fixed_bias.gyro.z() << "\n"
    << "sim.walk_std_accel = " << walk_std[0] << "\n"
    << "sim.walk_std_gyro = " << walk_std[3] << "\n"
    << "sim.coupling_accel = " << coupling_accel << "\n"
    << "sim.coupling_gyro = " << coupling_gyro << "\n"
    << "sim.fx = " << intrinsics.fx << "\n"
    << "sim.fy = " << intrinsics.fy << "\n"
    << "sim.cx = " << intrinsics.cx << "\n"
    << "sim.cy = " << intrinsics.cy << "\n"
    << "sim.width = " << intrinsics.width << "\n"
    << "sim.height = " << intrinsics.height << "\n";
  return o.str();
}

}  // namespace avio
