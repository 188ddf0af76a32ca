#pragma once

// Run configuration. YAML keys and their defaults:
//
//   scene: scene.yaml              # optional; the session meta carries the scene otherwise
//   calibration: calibration.yaml  # required by run and replay
//   store: session/                # replay source, or the recording target of a live run
//   script: occlusion.yaml         # live source: the simulator runs this scenario
//   seed: 7                        # optional override of the script seed
//   speed: 0                       # replay pacing, 0 = as fast as possible, 1 = real time
//   period_us: 33333               # fusion period for live runs (overrides the script)
//   thresholds:
//     match_m: 0.3
//     max_gap_ms: 200
//     join_window_ms: 500
//     identity: 0.8
//   icp: {reject_m: 0.1, epsilon_m: 1.0e-6, max_iterations: 50, min_inlier_fraction: 0.3}
//   pointing: elbow_hand           # or head_hand
//   crops: {hand_every: 3, face_every: 15, min_side_px: 16, face_m: 0.25, hand_m: 0.30}
//   tracker: {gate_m: 0.5, gate_speed_mps: 1.0, lost_timeout_ms: 2000}
//   recognizer: {endpoint: "tcp://127.0.0.1:5555", timeout_ms: 300}   # "inprocess" or "none" also accepted
//   gateway: "127.0.0.1:8765"      # optional websocket endpoint
//   output: events.jsonl           # "-" for stdout
//
// Relative paths resolve against the config file's directory.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "bodyfuse/pipeline.hpp"
#include "bodyfuse/pointcloud.hpp"

namespace bodyfuse {

struct RecognizerConfig {
  enum class Kind : std::uint8_t { None, InProcess, Socket };
  Kind kind = Kind::None;
  std::string endpoint;
  int timeout_ms = 300;
};

struct Config {
  std::optional<std::filesystem::path> scene;
  std::optional<std::filesystem::path> calibration;
  std::optional<std::filesystem::path> store;
  std::optional<std::filesystem::path> script;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> period_us;
  double speed = 0.0;
  PipelineConfig pipeline;
  IcpParams icp;
  RecognizerConfig recognizer;
  std::optional<std::string> gateway;
  std::string output = "-";

  /// Throws InvalidArgument for out-of-range thresholds or a missing source.
  void validate() const;
};

/// Throws ParseError, or InvalidArgument from validate() unless `validate` is false (for
/// callers that apply command-line overrides first). Relative paths resolve against `base_dir`.
Config parse_config(const std::string& yaml_text, const std::filesystem::path& base_dir = {}, bool validate = true);
Config load_config(const std::filesystem::path& path, bool validate = true);

/// "inprocess", "none", or an endpoint URI.
RecognizerConfig parse_recognizer(const std::string& spec);

}  // namespace bodyfuse
