#pragma once

// YAML conversions shared by the calibration, scene, scenario and config formats.

#include <yaml-cpp/yaml.h>

#include <string>

#include "bodyfuse/calibration.hpp"
#include "bodyfuse/error.hpp"
#include "bodyfuse/geometry.hpp"

namespace bodyfuse::yaml_io {

inline YAML::Node require(const YAML::Node& node, const std::string& key) {
  if (!node.IsMap() || !node[key]) throw Error(ErrorCode::ParseError, "missing key '" + key + "'");
  return node[key];
}

template <typename T>
T get(const YAML::Node& node, const std::string& key) {
  try {
    return require(node, key).as<T>();
  } catch (const YAML::Exception& e) {
    throw Error(ErrorCode::ParseError, "bad value for '" + key + "': " + e.what());
  }
}

template <typename T>
T get_or(const YAML::Node& node, const std::string& key, T fallback) {
  if (!node.IsMap() || !node[key]) return fallback;
  return get<T>(node, key);
}

inline Vec3 as_vec3(const YAML::Node& n) {
  try {
    if (n.IsSequence() && n.size() == 3) return {n[0].as<double>(), n[1].as<double>(), n[2].as<double>()};
    if (n.IsMap()) return {n["x"].as<double>(), n["y"].as<double>(), n["z"].as<double>()};
  } catch (const YAML::Exception& e) {
    throw Error(ErrorCode::ParseError, std::string("bad vector: ") + e.what());
  }
  throw Error(ErrorCode::ParseError, "vector must be [x, y, z] or {x, y, z}");
}

inline YAML::Node vec3_node(const Vec3& v) {
  YAML::Node n;
  n["x"] = v.x;
  n["y"] = v.y;
  n["z"] = v.z;
  return n;
}

/// Quaternion as given; callers decide whether to validate or normalize.
inline Quaternion as_quaternion(const YAML::Node& n) {
  try {
    return {n["w"].as<double>(), n["x"].as<double>(), n["y"].as<double>(), n["z"].as<double>()};
  } catch (const YAML::Exception& e) {
    throw Error(ErrorCode::ParseError, std::string("bad quaternion: ") + e.what());
  }
}

inline YAML::Node quaternion_node(const Quaternion& q) {
  YAML::Node n;
  n["w"] = q.w;
  n["x"] = q.x;
  n["y"] = q.y;
  n["z"] = q.z;
  return n;
}

/// Accepts {rotation: {w,x,y,z}, translation} or, for hand-written scripts,
/// {yaw_deg, pitch_deg, roll_deg, translation} (intrinsic y-x-z order).
inline RigidTransform as_transform(const YAML::Node& n) {
  RigidTransform t;
  t.translation = as_vec3(require(n, "translation"));
  if (n["rotation"]) {
    t.rotation = as_quaternion(n["rotation"]);
  } else {
    const double yaw = get_or<double>(n, "yaw_deg", 0.0) * M_PI / 180.0;
    const double pitch = get_or<double>(n, "pitch_deg", 0.0) * M_PI / 180.0;
    const double roll = get_or<double>(n, "roll_deg", 0.0) * M_PI / 180.0;
    t.rotation = (Quaternion::from_axis_angle({0, 1, 0}, yaw) * Quaternion::from_axis_angle({1, 0, 0}, pitch) *
                  Quaternion::from_axis_angle({0, 0, 1}, roll))
                     .normalized();
  }
  return t;
}

inline YAML::Node transform_node(const RigidTransform& t) {
  YAML::Node n;
  n["rotation"] = quaternion_node(t.rotation);
  n["translation"] = vec3_node(t.translation);
  return n;
}

inline CameraIntrinsics as_intrinsics(const YAML::Node& n) {
  CameraIntrinsics intr;
  intr.fx = get<double>(n, "fx");
  intr.fy = get<double>(n, "fy");
  intr.cx = get<double>(n, "cx");
  intr.cy = get<double>(n, "cy");
  intr.width = get<int>(n, "width");
  intr.height = get<int>(n, "height");
  return intr;
}

inline YAML::Node intrinsics_node(const CameraIntrinsics& intr) {
  YAML::Node n;
  n["fx"] = intr.fx;
  n["fy"] = intr.fy;
  n["cx"] = intr.cx;
  n["cy"] = intr.cy;
  n["width"] = intr.width;
  n["height"] = intr.height;
  return n;
}

inline ScreenRect as_screen(const YAML::Node& n) {
  ScreenRect s;
  s.screen_id = get<std::string>(n, "id");
  s.origin = as_vec3(require(n, "origin"));
  if (n["u_axis"]) s.u_axis = as_vec3(n["u_axis"]);
  if (n["v_axis"]) s.v_axis = as_vec3(n["v_axis"]);
  s.width = get<double>(n, "width");
  s.height = get<double>(n, "height");
  s.pixel_width = get<int>(n, "pixel_width");
  s.pixel_height = get<int>(n, "pixel_height");
  return s;
}

inline YAML::Node screen_node(const ScreenRect& s) {
  YAML::Node n;
  n["id"] = s.screen_id;
  n["origin"] = vec3_node(s.origin);
  n["u_axis"] = vec3_node(s.u_axis);
  n["v_axis"] = vec3_node(s.v_axis);
  n["width"] = s.width;
  n["height"] = s.height;
  n["pixel_width"] = s.pixel_width;
  n["pixel_height"] = s.pixel_height;
  return n;
}

inline SceneModel as_scene(const YAML::Node& n) {
  SceneModel scene;
  const auto screens = require(n, "screens");
  if (!screens.IsSequence()) throw Error(ErrorCode::ParseError, "'screens' must be a list");
  for (const auto& s : screens) scene.screens.push_back(as_screen(s));
  return scene;
}

inline YAML::Node scene_node(const SceneModel& scene) {
  YAML::Node n;
  for (const auto& s : scene.screens) n["screens"].push_back(screen_node(s));
  return n;
}

inline YAML::Node parse(const std::string& text) {
  try {
    return YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
}

inline std::string emit(const YAML::Node& node) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << node;
  return out.c_str();
}

}  // namespace bodyfuse::yaml_io
