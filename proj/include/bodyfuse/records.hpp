#pragma once

// Payload schemas for the session streams:
//   meta               SessionMeta, once at time 0
//   skeletons/<id>     SensorFrame per capture
//   color/<id>         ColourFrame per capture
//   depth/<id>         serialize_cloud blob (sensor frame)
//   truth/poses        TruePoses, once at time 0
//   truth/frames       TruthFrame per fusion tick
// All except depth are MessagePack maps.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bodyfuse/calibration.hpp"
#include "bodyfuse/msgpack.hpp"
#include "bodyfuse/streams.hpp"

namespace bodyfuse {

inline constexpr const char* kMetaStream = "meta";
inline constexpr const char* kTruthPosesStream = "truth/poses";
inline constexpr const char* kTruthFramesStream = "truth/frames";
std::string skeleton_stream(const std::string& sensor_id);
std::string colour_stream(const std::string& sensor_id);
std::string depth_stream(const std::string& sensor_id);

struct SensorInfo {
  std::string id;
  CameraIntrinsics intrinsics;
  std::int64_t offset_us = 0;
  bool operator==(const SensorInfo&) const = default;
};

struct SessionMeta {
  std::string scenario;
  std::uint64_t seed = 0;
  std::int64_t duration_us = 0;
  std::int64_t period_us = kDefaultPeriodUs;
  std::string main_sensor;
  std::vector<SensorInfo> sensors;
  SceneModel scene;

  SensorSchedule schedule() const;
  const SensorInfo& sensor(const std::string& id) const;
};

/// A machine-readable label drawn into a colour frame, centred at pixel (x, y).
struct ColourTag {
  double x = 0.0;
  double y = 0.0;
  std::string label;
  bool operator==(const ColourTag&) const = default;
};

/// Colour frames are stored as their tags; pixels are rendered on demand.
struct ColourFrame {
  std::string sensor_id;
  std::int64_t timestamp_us = 0;
  int width = 0;
  int height = 0;
  std::vector<ColourTag> tags;
  bool operator==(const ColourFrame&) const = default;
};

/// BGRA pixels of the rectangle [x0, x0 + w) x [y0, y0 + h) of the frame. Pixels outside the
/// frame are black; the background texture keeps B below the tag markers.
std::vector<std::uint8_t> render_region(const ColourFrame& frame, int x0, int y0, int w, int h);

struct TrueTarget {
  std::string screen_id;
  Vec3 point;
  Vec2 uv;
  bool operator==(const TrueTarget&) const = default;
};

struct TruePerson {
  std::string name;
  std::optional<std::string> identity;
  std::array<Vec3, kJointCount> joints{};  // world frame
  std::optional<std::string> left_gesture;
  std::optional<std::string> right_gesture;
  std::optional<TrueTarget> left_pointing;
  std::optional<TrueTarget> right_pointing;
  std::optional<TrueTarget> gaze;
  std::vector<std::string> visible_to;

  const Vec3& joint(JointId id) const { return joints[index_of(id)]; }
  bool operator==(const TruePerson&) const = default;
};

struct TruthFrame {
  std::int64_t timestamp_us = 0;
  std::vector<TruePerson> persons;
  bool operator==(const TruthFrame&) const = default;
};

struct TruePoses {
  std::map<std::string, RigidTransform> world_from_sensor;
};

namespace records {

msgpack::Value vec3(const Vec3& v);
Vec3 vec3(const msgpack::Value& v);
msgpack::Value transform(const RigidTransform& t);
RigidTransform transform(const msgpack::Value& v);

msgpack::Value to_value(const Skeleton& s);
Skeleton skeleton(const msgpack::Value& v);

// All decoders throw SchemaViolation, TruncatedPayload or MalformedMessage.
std::vector<std::uint8_t> encode(const SensorFrame& f);
SensorFrame decode_sensor_frame(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode(const ColourFrame& f);
ColourFrame decode_colour_frame(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode(const SessionMeta& m);
SessionMeta decode_meta(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode(const TruthFrame& f);
TruthFrame decode_truth_frame(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode(const TruePoses& p);
TruePoses decode_true_poses(std::span<const std::uint8_t> bytes);

}  // namespace records
}  // namespace bodyfuse
