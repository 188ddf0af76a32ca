#pragma once

// Synthetic RGB-D sensors with ground truth. Persons are capsule bodies following scripted
// pelvis paths; sensors capture in their schedule slots and emit skeletons, tag-carrying
// colour frames and depth clouds, with Gaussian noise from a seeded generator.
//
// Scenario scripts are YAML:
//
//   name: occlusion
//   seed: 7
//   duration_s: 30
//   period_us: 33333            # optional
//   scene: {screens: [...]}     # or scene_file: relative/path.yaml
//   noise: {joint_sigma: 0.001, depth_sigma: 0.002}
//   depth: {every: 30, stride: 4}           # one depth cloud per 30 captures; 0 disables
//   jitter_us: 0                            # uniform capture-time jitter
//   sensors:
//     - id: k0
//       main: true                          # optional, first sensor by default
//       pose: {translation: [..], rotation: {w, x, y, z}}   # world_from_sensor
//       look_at: {eye: [..], target: [..]}                  # alternative to pose
//       intrinsics: {fx, fy, cx, cy, width, height}
//       offset_us: 0                        # optional, evenly spaced by default
//   persons:
//     - name: a
//       identity: alice                     # optional face label
//       path: [{t: 0, pelvis: [x, y, z], facing_deg: 0}, ...]
//       present: [[0, 10], [15, 30]]        # optional presence intervals in seconds
//       gestures:
//         - {hand: right, from: 2, to: 6, label: point_one_finger, point_at: {screen: s0, uv: [0.5, 0.5]}}
//   occluders: [{min: [..], max: [..]}]
//   planes: [{point: [..], normal: [..]}]   # extra depth-only surfaces (floor, walls)
//
// facing_deg = 0 faces -z (towards screens in the z = 0 plane); positive turns towards -x.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bodyfuse/calibration.hpp"
#include "bodyfuse/records.hpp"
#include "bodyfuse/streams.hpp"

namespace bodyfuse::sim {

enum class Hand : std::uint8_t { Left, Right };

struct Box {
  Vec3 min;
  Vec3 max;
};

struct Plane {
  Vec3 point;
  Vec3 normal;
};

struct ScriptSensor {
  std::string id;
  RigidTransform world_from_sensor;
  CameraIntrinsics intrinsics;
  std::optional<std::int64_t> offset_us;
};

struct PathPoint {
  double t_s = 0.0;
  Vec3 pelvis;
  double facing_deg = 0.0;
};

struct PointAt {
  std::string screen_id;
  Vec2 uv;
};

struct ScriptGesture {
  Hand hand = Hand::Right;
  double from_s = 0.0;
  double to_s = 0.0;
  std::string label;
  std::optional<PointAt> point_at;
};

struct ScriptPerson {
  std::string name;
  std::optional<std::string> identity;
  std::vector<PathPoint> path;  // time-ordered
  std::vector<std::pair<double, double>> present;  // empty: always present
  std::vector<ScriptGesture> gestures;
};

struct ScenarioScript {
  std::string name = "scenario";
  std::uint64_t seed = 1;
  double duration_s = 10.0;
  std::int64_t period_us = kDefaultPeriodUs;
  SceneModel scene;
  std::vector<ScriptSensor> sensors;
  std::string main_sensor;
  std::vector<ScriptPerson> persons;
  std::vector<Box> occluders;
  std::vector<Plane> planes;
  double joint_sigma = 0.0;
  double depth_sigma = 0.0;
  int depth_every = 30;
  int depth_stride = 4;
  std::int64_t jitter_us = 0;

  /// Throws InvalidScript.
  void validate() const;
  SensorSchedule schedule() const;
  std::int64_t duration_us() const { return static_cast<std::int64_t>(duration_s * 1e6); }
};

/// Throws InvalidScript (including YAML errors). Relative scene_file paths resolve against `base_dir`.
ScenarioScript parse_script(const std::string& yaml_text, const std::filesystem::path& base_dir = {});
ScenarioScript load_script(const std::filesystem::path& path);

/// world_from_sensor for a camera at `eye` looking at `target` with world +y up (image y down).
RigidTransform look_at(const Vec3& eye, const Vec3& target);

// --- body model -----------------------------------------------------------------------------

/// Canonical joint offsets from the pelvis in (right, up, forward) body coordinates.
const std::array<Vec3, kJointCount>& canonical_offsets();
/// Unit forward direction for a facing angle.
Vec3 facing_direction(double facing_deg);

struct PersonState {
  bool present = false;
  std::array<Vec3, kJointCount> joints{};
  Vec3 forward;
  std::optional<std::string> left_gesture;
  std::optional<std::string> right_gesture;
  std::optional<TrueTarget> left_pointing;
  std::optional<TrueTarget> right_pointing;
};

/// True pose and scripted behaviour of a person at time t. A pointing hand lies on the line
/// from its shoulder through the target, so the elbow-to-hand ray passes through it exactly.
PersonState person_state(const ScriptPerson& person, const SceneModel& scene, double t_s);

/// True gaze target: the ray from the head along the facing direction, against the screens.
std::optional<TrueTarget> true_gaze(const PersonState& state, const SceneModel& scene);

struct Capsule {
  Vec3 a;
  Vec3 b;
  double radius = 0.0;
};
std::vector<Capsule> body_capsules(const std::array<Vec3, kJointCount>& joints);

// --- rendering ------------------------------------------------------------------------------

/// Entry parameter of the segment p -> q into the box, if the segment touches it.
std::optional<double> segment_box_entry(const Vec3& p, const Vec3& q, const Box& box);
bool segment_hits_any(const Vec3& p, const Vec3& q, std::span<const Box> boxes);

/// Nearest positive ray parameter of o + t d against each primitive.
std::optional<double> ray_capsule(const Vec3& o, const Vec3& d, const Capsule& c);
std::optional<double> ray_box(const Vec3& o, const Vec3& d, const Box& b);

struct RenderWorld {
  std::vector<Capsule> capsules;
  std::vector<Box> boxes;
  std::vector<ScreenRect> screens;
  std::vector<Plane> planes;
};

/// Depth ray casting of every `stride`-th pixel in row-major order, others left invalid.
/// Noise is added per rendered pixel when `rng` is given.
DepthImage render_depth(const RenderWorld& world, const ScriptSensor& sensor, int stride, double depth_sigma,
                        std::mt19937_64* rng, double max_range = 8.0);

// --- scenario execution ---------------------------------------------------------------------

struct ScenarioOutput {
  SessionMeta meta;
  TruePoses poses;
  std::vector<Envelope> envelopes;  // every stream, merged in replay order
};

/// Runs the script; `sink` receives envelopes in replay order and may return false to stop.
/// Identical scripts produce byte-identical output.
void run_scenario(const ScenarioScript& script, const std::function<bool(const Envelope&)>& sink);
ScenarioOutput run_scenario(const ScenarioScript& script);

/// Writes run_scenario output into a session directory.
void simulate_to_store(const ScenarioScript& script, const std::filesystem::path& dir);

}  // namespace bodyfuse::sim
