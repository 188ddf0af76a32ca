#include "bodyfuse/config.hpp"

#include <fstream>
#include <sstream>

#include "bodyfuse/error.hpp"
#include "bodyfuse/transport.hpp"
#include "yaml_io.hpp"

namespace bodyfuse {

using yaml_io::get_or;

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

void check(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::InvalidArgument, "config: " + what);
}

}  // namespace

RecognizerConfig parse_recognizer(const std::string& spec) {
  RecognizerConfig r;
  if (spec == "none" || spec.empty()) return r;
  if (spec == "inprocess") {
    r.kind = RecognizerConfig::Kind::InProcess;
    return r;
  }
  transport::Endpoint::parse(spec);
  r.kind = RecognizerConfig::Kind::Socket;
  r.endpoint = spec;
  return r;
}

void Config::validate() const {
  check(store || script, "either store or script is required");
  check(speed >= 0.0, "speed must be >= 0");
  check(!period_us || *period_us > 0, "period_us must be positive");
  const PipelineConfig& p = pipeline;
  check(p.match_threshold_m > 0.0, "thresholds.match_m must be positive");
  check(p.max_gap_us > 0, "thresholds.max_gap_ms must be positive");
  check(p.join_window_us > 0, "thresholds.join_window_ms must be positive");
  check(p.identity_threshold >= 0.0 && p.identity_threshold <= 1.0, "thresholds.identity must be in [0, 1]");
  check(p.hand_crop_every >= 0 && p.face_crop_every >= 0, "crop cadence must be >= 0");
  check(p.crops.min_side_px > 0, "crops.min_side_px must be positive");
  check(p.crops.face_size_m > 0.0 && p.crops.hand_size_m > 0.0, "crop sizes must be positive");
  check(p.tracker.gate_m > 0.0 && p.tracker.gate_speed_mps >= 0.0 && p.tracker.lost_timeout_us > 0,
        "tracker gates must be positive");
  check(icp.reject_threshold > 0.0 && icp.epsilon >= 0.0 && icp.max_iterations > 0 && icp.min_inlier_fraction >= 0.0 &&
            icp.min_inlier_fraction <= 1.0,
        "icp parameters out of range");
  check(recognizer.timeout_ms > 0, "recognizer.timeout_ms must be positive");
  if (recognizer.kind == RecognizerConfig::Kind::Socket) transport::Endpoint::parse(recognizer.endpoint);
  if (gateway) transport::Endpoint::parse(*gateway);
}

Config parse_config(const std::string& yaml_text, const std::filesystem::path& base_dir, bool validate) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw Error(ErrorCode::ParseError, std::string("config: ") + e.what());
  }
  if (root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
  if (!root.IsMap()) throw Error(ErrorCode::ParseError, "config: top level must be a map");

  Config c;
  const auto path_of = [&](const char* key) -> std::optional<std::filesystem::path> {
    if (!root[key]) return std::nullopt;
    return resolve(base_dir, yaml_io::get<std::string>(root, key));
  };
  c.scene = path_of("scene");
  c.calibration = path_of("calibration");
  c.store = path_of("store");
  c.script = path_of("script");
  if (root["seed"]) c.seed = yaml_io::get<std::uint64_t>(root, "seed");
  if (root["period_us"]) c.period_us = yaml_io::get<std::int64_t>(root, "period_us");
  c.speed = get_or(root, "speed", c.speed);

  PipelineConfig& p = c.pipeline;
  const YAML::Node th = root["thresholds"];
  p.match_threshold_m = get_or(th, "match_m", p.match_threshold_m);
  p.max_gap_us = static_cast<std::int64_t>(get_or(th, "max_gap_ms", p.max_gap_us / 1000.0) * 1000.0);
  p.join_window_us = static_cast<std::int64_t>(get_or(th, "join_window_ms", p.join_window_us / 1000.0) * 1000.0);
  p.identity_threshold = get_or(th, "identity", p.identity_threshold);

  const YAML::Node icp = root["icp"];
  c.icp.reject_threshold = get_or(icp, "reject_m", c.icp.reject_threshold);
  c.icp.epsilon = get_or(icp, "epsilon_m", c.icp.epsilon);
  c.icp.max_iterations = get_or(icp, "max_iterations", c.icp.max_iterations);
  c.icp.min_inlier_fraction = get_or(icp, "min_inlier_fraction", c.icp.min_inlier_fraction);

  const std::string mode = get_or<std::string>(root, "pointing", "elbow_hand");
  if (mode == "elbow_hand")
    p.pointing_mode = PointingMode::ElbowHand;
  else if (mode == "head_hand")
    p.pointing_mode = PointingMode::HeadHand;
  else
    throw Error(ErrorCode::ParseError, "config: pointing must be elbow_hand or head_hand");

  const YAML::Node crops = root["crops"];
  p.hand_crop_every = get_or(crops, "hand_every", p.hand_crop_every);
  p.face_crop_every = get_or(crops, "face_every", p.face_crop_every);
  p.crops.min_side_px = get_or(crops, "min_side_px", p.crops.min_side_px);
  p.crops.face_size_m = get_or(crops, "face_m", p.crops.face_size_m);
  p.crops.hand_size_m = get_or(crops, "hand_m", p.crops.hand_size_m);

  const YAML::Node tr = root["tracker"];
  p.tracker.gate_m = get_or(tr, "gate_m", p.tracker.gate_m);
  p.tracker.gate_speed_mps = get_or(tr, "gate_speed_mps", p.tracker.gate_speed_mps);
  p.tracker.lost_timeout_us =
      static_cast<std::int64_t>(get_or(tr, "lost_timeout_ms", p.tracker.lost_timeout_us / 1000.0) * 1000.0);

  if (const YAML::Node rec = root["recognizer"]) {
    if (rec.IsScalar()) {
      c.recognizer = parse_recognizer(rec.as<std::string>());
    } else {
      c.recognizer = parse_recognizer(get_or<std::string>(rec, "endpoint", "none"));
      c.recognizer.timeout_ms = get_or(rec, "timeout_ms", c.recognizer.timeout_ms);
    }
  }
  if (root["gateway"]) c.gateway = yaml_io::get<std::string>(root, "gateway");
  c.output = get_or<std::string>(root, "output", c.output);
  if (c.output != "-") c.output = resolve(base_dir, c.output).string();

  if (validate) c.validate();
  return c;
}

Config load_config(const std::filesystem::path& path, bool validate) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path(), validate);
}

}  // namespace bodyfuse
