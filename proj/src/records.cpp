#include "bodyfuse/records.hpp"

#include <algorithm>
#include <cmath>

#include "bodyfuse/error.hpp"
#include "bodyfuse/stub_recognizer.hpp"

namespace bodyfuse {

using msgpack::Array;
using msgpack::at;
using msgpack::Map;
using msgpack::Value;

std::string skeleton_stream(const std::string& sensor_id) { return "skeletons/" + sensor_id; }
std::string colour_stream(const std::string& sensor_id) { return "color/" + sensor_id; }
std::string depth_stream(const std::string& sensor_id) { return "depth/" + sensor_id; }

SensorSchedule SessionMeta::schedule() const {
  SensorSchedule s;
  s.period_us = period_us;
  for (const auto& info : sensors) s.slots[info.id] = info.offset_us;
  return s;
}

const SensorInfo& SessionMeta::sensor(const std::string& id) const {
  for (const auto& s : sensors)
    if (s.id == id) return s;
  throw Error(ErrorCode::InvalidArgument, "session has no sensor '" + id + "'");
}

std::vector<std::uint8_t> render_region(const ColourFrame& frame, int x0, int y0, int w, int h) {
  if (w <= 0 || h <= 0) throw Error(ErrorCode::InvalidArgument, "render region must be non-empty");
  std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * h * 4, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int fx = x0 + x, fy = y0 + y;
      auto* p = &px[(static_cast<std::size_t>(y) * w + x) * 4];
      if (fx < 0 || fy < 0 || fx >= frame.width || fy >= frame.height) continue;
      p[0] = static_cast<std::uint8_t>((fx * 7 + fy * 13) & 0x3f);
      p[1] = static_cast<std::uint8_t>((fx ^ fy) & 0xff);
      p[2] = static_cast<std::uint8_t>((fx + fy) & 0xff);
      p[3] = 0xff;
    }
  }
  for (const auto& tag : frame.tags) {
    const int block = stub::tag_block_width(tag.label.size());
    const int hx = static_cast<int>(std::lround(tag.x)) - block / 2;
    const int hy = static_cast<int>(std::lround(tag.y)) - block / 2;
    // Skip tags whose block would leave the frame; a real camera would not see them whole either.
    if (hx < 0 || hy < 0 || hx + block > frame.width || hy + block > frame.height) continue;
    stub::paint_tag(px, w, h, hx - x0, hy - y0, tag.label);
  }
  return px;
}

namespace records {
namespace {

const Map& as_map(const Value& v) { return v.as_map(); }

Value opt_string(const std::optional<std::string>& s) { return s ? Value(*s) : Value(); }
std::optional<std::string> opt_string(const Map& m, const std::string& key) {
  const Value* v = msgpack::find(m, key);
  if (!v || v->is_nil()) return std::nullopt;
  return v->as_string();
}

Value intrinsics(const CameraIntrinsics& i) {
  return Map{{"fx", i.fx}, {"fy", i.fy}, {"cx", i.cx}, {"cy", i.cy}, {"width", i.width}, {"height", i.height}};
}
CameraIntrinsics intrinsics(const Value& v) {
  const auto& m = as_map(v);
  CameraIntrinsics i;
  i.fx = at(m, "fx").as_double();
  i.fy = at(m, "fy").as_double();
  i.cx = at(m, "cx").as_double();
  i.cy = at(m, "cy").as_double();
  i.width = static_cast<int>(at(m, "width").as_int());
  i.height = static_cast<int>(at(m, "height").as_int());
  return i;
}

Value screen(const ScreenRect& s) {
  return Map{{"id", s.screen_id},       {"origin", vec3(s.origin)}, {"u_axis", vec3(s.u_axis)},
             {"v_axis", vec3(s.v_axis)}, {"width", s.width},         {"height", s.height},
             {"pixel_width", s.pixel_width}, {"pixel_height", s.pixel_height}};
}
ScreenRect screen(const Value& v) {
  const auto& m = as_map(v);
  ScreenRect s;
  s.screen_id = at(m, "id").as_string();
  s.origin = vec3(at(m, "origin"));
  s.u_axis = vec3(at(m, "u_axis"));
  s.v_axis = vec3(at(m, "v_axis"));
  s.width = at(m, "width").as_double();
  s.height = at(m, "height").as_double();
  s.pixel_width = static_cast<int>(at(m, "pixel_width").as_int());
  s.pixel_height = static_cast<int>(at(m, "pixel_height").as_int());
  return s;
}

Value target(const std::optional<TrueTarget>& t) {
  if (!t) return {};
  return Map{{"screen", t->screen_id}, {"point", vec3(t->point)}, {"uv", Array{t->uv.x, t->uv.y}}};
}
std::optional<TrueTarget> target(const Map& m, const std::string& key) {
  const Value* v = msgpack::find(m, key);
  if (!v || v->is_nil()) return std::nullopt;
  const auto& tm = v->as_map();
  TrueTarget t;
  t.screen_id = at(tm, "screen").as_string();
  t.point = vec3(at(tm, "point"));
  const auto& uv = at(tm, "uv").as_array();
  if (uv.size() != 2) throw Error(ErrorCode::SchemaViolation, "uv needs 2 numbers");
  t.uv = {uv[0].as_double(), uv[1].as_double()};
  return t;
}

}  // namespace

Value vec3(const Vec3& v) { return Array{v.x, v.y, v.z}; }

Vec3 vec3(const Value& v) {
  const auto& a = v.as_array();
  if (a.size() != 3) throw Error(ErrorCode::SchemaViolation, "vector needs 3 numbers");
  return {a[0].as_double(), a[1].as_double(), a[2].as_double()};
}

Value transform(const RigidTransform& t) {
  const auto& q = t.rotation;
  return Map{{"rotation", Array{q.w, q.x, q.y, q.z}}, {"translation", vec3(t.translation)}};
}

RigidTransform transform(const Value& v) {
  const auto& m = as_map(v);
  const auto& q = at(m, "rotation").as_array();
  if (q.size() != 4) throw Error(ErrorCode::SchemaViolation, "quaternion needs 4 numbers");
  return {Quaternion{q[0].as_double(), q[1].as_double(), q[2].as_double(), q[3].as_double()},
          vec3(at(m, "translation"))};
}

Value to_value(const Skeleton& s) {
  Array joints;
  joints.reserve(kJointCount);
  for (const auto& j : s.joints)
    joints.push_back(Array{j.position.x, j.position.y, j.position.z, static_cast<int>(j.confidence)});
  return Map{{"sensor_id", s.sensor_id},
             {"body_id", s.body_id},
             {"ts_us", s.timestamp_us},
             {"frame", s.frame == Frame::World ? "world" : "sensor"},
             {"joints", std::move(joints)}};
}

Skeleton skeleton(const Value& v) {
  const auto& m = as_map(v);
  Skeleton s;
  s.sensor_id = at(m, "sensor_id").as_string();
  const auto body = at(m, "body_id").as_uint();
  if (body > UINT32_MAX) throw Error(ErrorCode::SchemaViolation, "body_id out of range");
  s.body_id = static_cast<std::uint32_t>(body);
  s.timestamp_us = at(m, "ts_us").as_int();
  const auto& frame = at(m, "frame").as_string();
  if (frame != "world" && frame != "sensor") throw Error(ErrorCode::SchemaViolation, "unknown frame " + frame);
  s.frame = frame == "world" ? Frame::World : Frame::Sensor;
  const auto& joints = at(m, "joints").as_array();
  if (joints.size() != kJointCount) throw Error(ErrorCode::SchemaViolation, "skeleton needs 15 joints");
  for (std::size_t i = 0; i < kJointCount; ++i) {
    const auto& j = joints[i].as_array();
    if (j.size() != 4) throw Error(ErrorCode::SchemaViolation, "joint needs x, y, z, confidence");
    const auto c = j[3].as_int();
    if (c < 0 || c > 3) throw Error(ErrorCode::SchemaViolation, "joint confidence out of range");
    s.joints[i] = {{j[0].as_double(), j[1].as_double(), j[2].as_double()}, static_cast<Confidence>(c)};
  }
  return s;
}

std::vector<std::uint8_t> encode(const SensorFrame& f) {
  Array bodies;
  for (const auto& b : f.bodies) bodies.push_back(to_value(b));
  return msgpack::encode(Map{{"sensor_id", f.sensor_id}, {"ts_us", f.timestamp_us}, {"bodies", std::move(bodies)}});
}

SensorFrame decode_sensor_frame(std::span<const std::uint8_t> bytes) {
  const auto v = msgpack::decode(bytes);
  const auto& m = as_map(v);
  SensorFrame f;
  f.sensor_id = at(m, "sensor_id").as_string();
  f.timestamp_us = at(m, "ts_us").as_int();
  for (const auto& b : at(m, "bodies").as_array()) f.bodies.push_back(skeleton(b));
  return f;
}

std::vector<std::uint8_t> encode(const ColourFrame& f) {
  Array tags;
  for (const auto& t : f.tags) tags.push_back(Map{{"x", t.x}, {"y", t.y}, {"label", t.label}});
  return msgpack::encode(Map{{"sensor_id", f.sensor_id},
                             {"ts_us", f.timestamp_us},
                             {"width", f.width},
                             {"height", f.height},
                             {"tags", std::move(tags)}});
}

ColourFrame decode_colour_frame(std::span<const std::uint8_t> bytes) {
  const auto v = msgpack::decode(bytes);
  const auto& m = as_map(v);
  ColourFrame f;
  f.sensor_id = at(m, "sensor_id").as_string();
  f.timestamp_us = at(m, "ts_us").as_int();
  f.width = static_cast<int>(at(m, "width").as_int());
  f.height = static_cast<int>(at(m, "height").as_int());
  for (const auto& t : at(m, "tags").as_array()) {
    const auto& tm = t.as_map();
    f.tags.push_back({at(tm, "x").as_double(), at(tm, "y").as_double(), at(tm, "label").as_string()});
  }
  return f;
}

std::vector<std::uint8_t> encode(const SessionMeta& meta) {
  Array sensors;
  for (const auto& s : meta.sensors)
    sensors.push_back(Map{{"id", s.id}, {"intrinsics", intrinsics(s.intrinsics)}, {"offset_us", s.offset_us}});
  Array screens;
  for (const auto& s : meta.scene.screens) screens.push_back(screen(s));
  return msgpack::encode(Map{{"scenario", meta.scenario},
                             {"seed", meta.seed},
                             {"duration_us", meta.duration_us},
                             {"period_us", meta.period_us},
                             {"main_sensor", meta.main_sensor},
                             {"sensors", std::move(sensors)},
                             {"screens", std::move(screens)}});
}

SessionMeta decode_meta(std::span<const std::uint8_t> bytes) {
  const auto v = msgpack::decode(bytes);
  const auto& m = as_map(v);
  SessionMeta meta;
  meta.scenario = at(m, "scenario").as_string();
  meta.seed = at(m, "seed").as_uint();
  meta.duration_us = at(m, "duration_us").as_int();
  meta.period_us = at(m, "period_us").as_int();
  meta.main_sensor = at(m, "main_sensor").as_string();
  for (const auto& s : at(m, "sensors").as_array()) {
    const auto& sm = s.as_map();
    meta.sensors.push_back({at(sm, "id").as_string(), intrinsics(at(sm, "intrinsics")), at(sm, "offset_us").as_int()});
  }
  for (const auto& s : at(m, "screens").as_array()) meta.scene.screens.push_back(screen(s));
  return meta;
}

std::vector<std::uint8_t> encode(const TruthFrame& f) {
  Array persons;
  for (const auto& p : f.persons) {
    Array joints;
    for (const auto& j : p.joints) joints.push_back(vec3(j));
    Array visible(p.visible_to.begin(), p.visible_to.end());
    persons.push_back(Map{{"name", p.name},
                          {"identity", opt_string(p.identity)},
                          {"joints", std::move(joints)},
                          {"left_gesture", opt_string(p.left_gesture)},
                          {"right_gesture", opt_string(p.right_gesture)},
                          {"left_pointing", target(p.left_pointing)},
                          {"right_pointing", target(p.right_pointing)},
                          {"gaze", target(p.gaze)},
                          {"visible_to", std::move(visible)}});
  }
  return msgpack::encode(Map{{"ts_us", f.timestamp_us}, {"persons", std::move(persons)}});
}

TruthFrame decode_truth_frame(std::span<const std::uint8_t> bytes) {
  const auto v = msgpack::decode(bytes);
  const auto& m = as_map(v);
  TruthFrame f;
  f.timestamp_us = at(m, "ts_us").as_int();
  for (const auto& pv : at(m, "persons").as_array()) {
    const auto& pm = pv.as_map();
    TruePerson p;
    p.name = at(pm, "name").as_string();
    p.identity = opt_string(pm, "identity");
    const auto& joints = at(pm, "joints").as_array();
    if (joints.size() != kJointCount) throw Error(ErrorCode::SchemaViolation, "truth needs 15 joints");
    for (std::size_t i = 0; i < kJointCount; ++i) p.joints[i] = vec3(joints[i]);
    p.left_gesture = opt_string(pm, "left_gesture");
    p.right_gesture = opt_string(pm, "right_gesture");
    p.left_pointing = target(pm, "left_pointing");
    p.right_pointing = target(pm, "right_pointing");
    p.gaze = target(pm, "gaze");
    for (const auto& s : at(pm, "visible_to").as_array()) p.visible_to.push_back(s.as_string());
    f.persons.push_back(std::move(p));
  }
  return f;
}

std::vector<std::uint8_t> encode(const TruePoses& p) {
  Map poses;
  for (const auto& [id, t] : p.world_from_sensor) poses[id] = transform(t);
  return msgpack::encode(Map{{"world_from_sensor", std::move(poses)}});
}

TruePoses decode_true_poses(std::span<const std::uint8_t> bytes) {
  const auto v = msgpack::decode(bytes);
  TruePoses p;
  for (const auto& [id, t] : at(as_map(v), "world_from_sensor").as_map()) p.world_from_sensor[id] = transform(t);
  return p;
}

}  // namespace records
}  // namespace bodyfuse
