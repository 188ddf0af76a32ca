#include "bodyfuse/simsensor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "bodyfuse/error.hpp"
#include "bodyfuse/stub_recognizer.hpp"
#include "yaml_io.hpp"

namespace bodyfuse::sim {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kUpperArm = 0.28;
constexpr double kForearm = 0.25;
constexpr double kHandLength = 0.08;
constexpr double kMinDepth = 0.05;

[[noreturn]] void invalid(const std::string& what) { throw Error(ErrorCode::InvalidScript, what); }

Vec3 screen_point(const ScreenRect& s, const Vec2& uv) {
  return s.origin + s.u_axis * (uv.x * s.width) + s.v_axis * (uv.y * s.height);
}

const ScreenRect* find_screen(const SceneModel& scene, const std::string& id) {
  for (const auto& s : scene.screens)
    if (s.screen_id == id) return &s;
  return nullptr;
}

}  // namespace

// --- script ---------------------------------------------------------------------------------

void ScenarioScript::validate() const {
  if (!(duration_s > 0)) invalid("duration_s must be positive");
  if (period_us <= 0) invalid("period_us must be positive");
  try {
    scene.validate();
  } catch (const Error& e) {
    invalid(std::string("scene: ") + e.what());
  }
  if (sensors.empty()) invalid("at least one sensor is required");
  std::set<std::string> ids;
  for (const auto& s : sensors) {
    if (s.id.empty() || !ids.insert(s.id).second) invalid("sensor ids must be unique and non-empty");
    try {
      s.intrinsics.validate();
    } catch (const Error& e) {
      invalid("sensor '" + s.id + "': " + e.what());
    }
    if (std::abs(s.world_from_sensor.rotation.norm() - 1.0) > 1e-6) invalid("sensor '" + s.id + "' rotation not unit");
  }
  if (!ids.count(main_sensor)) invalid("main sensor '" + main_sensor + "' is not listed");
  try {
    schedule().validate();
  } catch (const Error& e) {
    invalid(std::string("schedule: ") + e.what());
  }
  if (joint_sigma < 0 || depth_sigma < 0) invalid("noise sigmas must be non-negative");
  if (depth_every < 0 || depth_stride < 1) invalid("depth.every >= 0 and depth.stride >= 1 required");
  if (jitter_us < 0 || 2 * jitter_us >= period_us / static_cast<std::int64_t>(sensors.size()))
    invalid("jitter_us must stay below half a slot");
  std::set<std::string> names;
  for (const auto& p : persons) {
    if (p.name.empty() || !names.insert(p.name).second) invalid("person names must be unique and non-empty");
    if (p.path.empty()) invalid("person '" + p.name + "' has no path");
    for (std::size_t i = 1; i < p.path.size(); ++i)
      if (!(p.path[i].t_s > p.path[i - 1].t_s)) invalid("person '" + p.name + "' path times must increase");
    if (p.identity && (p.identity->empty() || p.identity->size() > stub::kMaxLabelLength))
      invalid("person '" + p.name + "' identity label length");
    for (const auto& [a, b] : p.present)
      if (!(b > a)) invalid("person '" + p.name + "' presence interval is empty");
    for (const auto& g : p.gestures) {
      if (!(g.to_s > g.from_s)) invalid("person '" + p.name + "' gesture interval is empty");
      if (g.label.empty() || g.label.size() > stub::kMaxLabelLength) invalid("gesture label length");
      if (g.point_at && !find_screen(scene, g.point_at->screen_id))
        invalid("gesture points at unknown screen '" + g.point_at->screen_id + "'");
    }
  }
  for (const auto& b : occluders)
    if (!(b.max.x > b.min.x && b.max.y > b.min.y && b.max.z > b.min.z)) invalid("occluder box must have volume");
  for (const auto& pl : planes)
    if (!(norm(pl.normal) > 0)) invalid("plane normal must be non-zero");
}

SensorSchedule ScenarioScript::schedule() const {
  std::vector<std::string> ids;
  for (const auto& s : sensors) ids.push_back(s.id);
  SensorSchedule sched = SensorSchedule::evenly_spaced(ids, period_us);
  for (const auto& s : sensors)
    if (s.offset_us) sched.slots[s.id] = *s.offset_us;
  return sched;
}

RigidTransform look_at(const Vec3& eye, const Vec3& target) {
  const Vec3 z = normalized(target - eye);
  const Vec3 up(0, 1, 0);
  if (norm(cross(z, up)) < 1e-9) throw Error(ErrorCode::InvalidArgument, "look_at direction parallel to up");
  const Vec3 x = normalized(cross(z, up));
  const Vec3 y = cross(z, x);
  const std::array<double, 9> m{x.x, y.x, z.x, x.y, y.y, z.y, x.z, y.z, z.z};
  return {Quaternion::from_matrix(m).normalized(), eye};
}

namespace {

Hand parse_hand(const std::string& s) {
  if (s == "left") return Hand::Left;
  if (s == "right") return Hand::Right;
  invalid("hand must be 'left' or 'right', got '" + s + "'");
}

Box parse_box(const YAML::Node& n) {
  return {yaml_io::as_vec3(yaml_io::require(n, "min")), yaml_io::as_vec3(yaml_io::require(n, "max"))};
}

ScenarioScript parse_node(const YAML::Node& root, const std::filesystem::path& base_dir) {
  using namespace yaml_io;
  if (!root.IsMap()) invalid("script must be a map");
  ScenarioScript s;
  s.name = get_or<std::string>(root, "name", s.name);
  s.seed = get_or<std::uint64_t>(root, "seed", s.seed);
  s.duration_s = get<double>(root, "duration_s");
  s.period_us = get_or<std::int64_t>(root, "period_us", s.period_us);
  if (root["scene"]) {
    s.scene = as_scene(root["scene"]);
  } else if (root["scene_file"]) {
    s.scene = load_scene(base_dir / get<std::string>(root, "scene_file"));
  } else {
    invalid("script needs 'scene' or 'scene_file'");
  }
  if (const auto noise = root["noise"]) {
    s.joint_sigma = get_or<double>(noise, "joint_sigma", 0.0);
    s.depth_sigma = get_or<double>(noise, "depth_sigma", 0.0);
  }
  if (const auto depth = root["depth"]) {
    s.depth_every = get_or<int>(depth, "every", s.depth_every);
    s.depth_stride = get_or<int>(depth, "stride", s.depth_stride);
  }
  s.jitter_us = get_or<std::int64_t>(root, "jitter_us", 0);
  const auto sensors = require(root, "sensors");
  if (!sensors.IsSequence()) invalid("'sensors' must be a list");
  for (const auto& n : sensors) {
    ScriptSensor sensor;
    sensor.id = get<std::string>(n, "id");
    if (n["pose"]) {
      sensor.world_from_sensor = as_transform(n["pose"]);
    } else if (n["look_at"]) {
      sensor.world_from_sensor =
          look_at(as_vec3(require(n["look_at"], "eye")), as_vec3(require(n["look_at"], "target")));
    } else {
      invalid("sensor '" + sensor.id + "' needs 'pose' or 'look_at'");
    }
    sensor.intrinsics = as_intrinsics(require(n, "intrinsics"));
    if (n["offset_us"]) sensor.offset_us = get<std::int64_t>(n, "offset_us");
    if (get_or<bool>(n, "main", false)) s.main_sensor = sensor.id;
    s.sensors.push_back(std::move(sensor));
  }
  if (s.main_sensor.empty() && !s.sensors.empty()) s.main_sensor = s.sensors.front().id;
  if (const auto persons = root["persons"]) {
    for (const auto& n : persons) {
      ScriptPerson p;
      p.name = get<std::string>(n, "name");
      if (n["identity"]) p.identity = get<std::string>(n, "identity");
      for (const auto& pt : require(n, "path"))
        p.path.push_back({get<double>(pt, "t"), as_vec3(require(pt, "pelvis")), get_or<double>(pt, "facing_deg", 0.0)});
      if (const auto present = n["present"]) {
        for (const auto& iv : present) {
          if (!iv.IsSequence() || iv.size() != 2) invalid("presence interval must be [from, to]");
          p.present.emplace_back(iv[0].as<double>(), iv[1].as<double>());
        }
      }
      if (const auto gestures = n["gestures"]) {
        for (const auto& g : gestures) {
          ScriptGesture gesture;
          gesture.hand = parse_hand(get<std::string>(g, "hand"));
          gesture.from_s = get<double>(g, "from");
          gesture.to_s = get<double>(g, "to");
          gesture.label = get<std::string>(g, "label");
          if (const auto pa = g["point_at"]) {
            const auto uv = require(pa, "uv");
            if (!uv.IsSequence() || uv.size() != 2) invalid("point_at.uv must be [u, v]");
            gesture.point_at = PointAt{get<std::string>(pa, "screen"), {uv[0].as<double>(), uv[1].as<double>()}};
          }
          p.gestures.push_back(std::move(gesture));
        }
      }
      s.persons.push_back(std::move(p));
    }
  }
  if (const auto occ = root["occluders"])
    for (const auto& b : occ) s.occluders.push_back(parse_box(b));
  if (const auto planes = root["planes"])
    for (const auto& pl : planes)
      s.planes.push_back({as_vec3(require(pl, "point")), as_vec3(require(pl, "normal"))});
  return s;
}

}  // namespace

ScenarioScript parse_script(const std::string& yaml_text, const std::filesystem::path& base_dir) {
  ScenarioScript s;
  try {
    s = parse_node(yaml_io::parse(yaml_text), base_dir);
  } catch (const YAML::Exception& e) {
    invalid(e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::InvalidScript) throw;
    invalid(e.what());
  }
  s.validate();
  return s;
}

ScenarioScript load_script(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot read script " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_script(ss.str(), path.parent_path());
}

// --- body model -----------------------------------------------------------------------------

const std::array<Vec3, kJointCount>& canonical_offsets() {
  static const std::array<Vec3, kJointCount> offsets{{
      {0.0, 0.0, 0.0},      // pelvis
      {0.0, 0.2, 0.0},      // spine
      {0.0, 0.4, 0.0},      // chest
      {0.0, 0.58, 0.0},     // neck
      {0.0, 0.75, 0.0},     // head
      {-0.18, 0.52, 0.0},   // left shoulder
      {-0.2, 0.24, 0.0},    // left elbow
      {-0.21, 0.0, 0.02},   // left wrist
      {-0.21, -0.08, 0.03}, // left hand
      {0.18, 0.52, 0.0},    // right shoulder
      {0.2, 0.24, 0.0},     // right elbow
      {0.21, 0.0, 0.02},    // right wrist
      {0.21, -0.08, 0.03},  // right hand
      {-0.1, 0.0, 0.0},     // left hip
      {0.1, 0.0, 0.0},      // right hip
  }};
  return offsets;
}

Vec3 facing_direction(double facing_deg) {
  const double a = facing_deg * kPi / 180.0;
  return {-std::sin(a), 0.0, -std::cos(a)};
}

namespace {

bool is_present(const ScriptPerson& p, double t) {
  if (p.present.empty()) return true;
  return std::any_of(p.present.begin(), p.present.end(), [t](const auto& iv) { return t >= iv.first && t < iv.second; });
}

void path_at(const ScriptPerson& p, double t, Vec3& pelvis, double& facing) {
  const auto& path = p.path;
  if (t <= path.front().t_s) {
    pelvis = path.front().pelvis;
    facing = path.front().facing_deg;
    return;
  }
  if (t >= path.back().t_s) {
    pelvis = path.back().pelvis;
    facing = path.back().facing_deg;
    return;
  }
  const auto it = std::upper_bound(path.begin(), path.end(), t, [](double v, const PathPoint& q) { return v < q.t_s; });
  const PathPoint& b = *it;
  const PathPoint& a = *(it - 1);
  const double s = (t - a.t_s) / (b.t_s - a.t_s);
  pelvis = a.pelvis + (b.pelvis - a.pelvis) * s;
  facing = a.facing_deg + (b.facing_deg - a.facing_deg) * s;
}

void point_arm(std::array<Vec3, kJointCount>& joints, JointId shoulder, const Vec3& target) {
  const Vec3 s = joints[index_of(shoulder)];
  const Vec3 d = normalized(target - s);
  const std::size_t base = index_of(shoulder);
  joints[base + 1] = s + d * kUpperArm;
  joints[base + 2] = s + d * (kUpperArm + kForearm);
  joints[base + 3] = s + d * (kUpperArm + kForearm + kHandLength);
}

}  // namespace

PersonState person_state(const ScriptPerson& person, const SceneModel& scene, double t_s) {
  PersonState st;
  st.present = is_present(person, t_s);
  Vec3 pelvis;
  double facing = 0.0;
  path_at(person, t_s, pelvis, facing);
  const Vec3 f = facing_direction(facing);
  const Vec3 up(0, 1, 0);
  const Vec3 r = cross(f, up);
  st.forward = f;
  const auto& off = canonical_offsets();
  for (std::size_t j = 0; j < kJointCount; ++j) st.joints[j] = pelvis + r * off[j].x + up * off[j].y + f * off[j].z;
  for (const auto& g : person.gestures) {
    if (t_s < g.from_s || t_s >= g.to_s) continue;
    const bool left = g.hand == Hand::Left;
    (left ? st.left_gesture : st.right_gesture) = g.label;
    if (!g.point_at) continue;
    const ScreenRect* screen = find_screen(scene, g.point_at->screen_id);
    const Vec3 target = screen_point(*screen, g.point_at->uv);
    point_arm(st.joints, left ? JointId::LeftShoulder : JointId::RightShoulder, target);
    (left ? st.left_pointing : st.right_pointing) = TrueTarget{screen->screen_id, target, g.point_at->uv};
  }
  return st;
}

std::optional<TrueTarget> true_gaze(const PersonState& state, const SceneModel& scene) {
  const auto hit = intersect_screens(Ray(state.joints[index_of(JointId::Head)], state.forward), scene.screens);
  if (!hit) return std::nullopt;
  return TrueTarget{hit->screen_id, hit->point, hit->uv};
}

std::vector<Capsule> body_capsules(const std::array<Vec3, kJointCount>& j) {
  auto at = [&](JointId id) { return j[index_of(id)]; };
  const Vec3 down(0, -0.9, 0);
  std::vector<Capsule> c{
      {at(JointId::Pelvis), at(JointId::Spine), 0.14},
      {at(JointId::Spine), at(JointId::Chest), 0.15},
      {at(JointId::Chest), at(JointId::Neck), 0.1},
      {at(JointId::Neck), at(JointId::Head), 0.05},
      {at(JointId::Head), at(JointId::Head), 0.11},
      {at(JointId::LeftHip), at(JointId::LeftHip) + down, 0.08},
      {at(JointId::RightHip), at(JointId::RightHip) + down, 0.08},
  };
  for (JointId s : {JointId::LeftShoulder, JointId::RightShoulder}) {
    const std::size_t b = index_of(s);
    c.push_back({at(JointId::Chest), j[b], 0.06});
    c.push_back({j[b], j[b + 1], 0.05});
    c.push_back({j[b + 1], j[b + 2], 0.045});
    c.push_back({j[b + 2], j[b + 3], 0.04});
  }
  return c;
}

// --- rendering ------------------------------------------------------------------------------

namespace {

/// Slab clipping of o + t d against the box for t in [t0, t1].
bool clip_box(const Vec3& o, const Vec3& d, const Box& box, double& t0, double& t1) {
  const double os[3] = {o.x, o.y, o.z}, ds[3] = {d.x, d.y, d.z};
  const double lo[3] = {box.min.x, box.min.y, box.min.z}, hi[3] = {box.max.x, box.max.y, box.max.z};
  for (int a = 0; a < 3; ++a) {
    if (std::abs(ds[a]) < 1e-15) {
      if (os[a] < lo[a] || os[a] > hi[a]) return false;
      continue;
    }
    double ta = (lo[a] - os[a]) / ds[a], tb = (hi[a] - os[a]) / ds[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  return true;
}

std::optional<double> ray_sphere(const Vec3& o, const Vec3& d, const Vec3& c, double r) {
  const Vec3 oc = o - c;
  const double b = dot(d, oc);
  const double h = b * b - (dot(oc, oc) - r * r);
  if (h < 0) return std::nullopt;
  const double t = -b - std::sqrt(h);
  if (t > 1e-9) return t;
  return std::nullopt;
}

void keep_min(std::optional<double>& best, std::optional<double> t) {
  if (t && (!best || *t < *best)) best = t;
}

}  // namespace

std::optional<double> segment_box_entry(const Vec3& p, const Vec3& q, const Box& box) {
  double t0 = 0.0, t1 = 1.0;
  if (!clip_box(p, q - p, box, t0, t1)) return std::nullopt;
  return t0;
}

bool segment_hits_any(const Vec3& p, const Vec3& q, std::span<const Box> boxes) {
  return std::any_of(boxes.begin(), boxes.end(), [&](const Box& b) { return segment_box_entry(p, q, b).has_value(); });
}

std::optional<double> ray_box(const Vec3& o, const Vec3& d, const Box& b) {
  double t0 = 0.0, t1 = 1e300;
  if (!clip_box(o, d, b, t0, t1)) return std::nullopt;
  if (t0 > 1e-9) return t0;
  return std::nullopt;
}

std::optional<double> ray_capsule(const Vec3& o, const Vec3& d, const Capsule& c) {
  std::optional<double> best;
  const Vec3 ba = c.b - c.a;
  const double baba = dot(ba, ba);
  if (baba > 1e-12) {
    const Vec3 oa = o - c.a;
    const double bard = dot(ba, d), baoa = dot(ba, oa), rdoa = dot(d, oa), oaoa = dot(oa, oa);
    const double qa = baba - bard * bard;
    const double qb = baba * rdoa - baoa * bard;
    const double qc = baba * oaoa - baoa * baoa - c.radius * c.radius * baba;
    const double h = qb * qb - qa * qc;
    if (qa > 1e-12 && h >= 0) {
      const double t = (-qb - std::sqrt(h)) / qa;
      const double y = baoa + t * bard;
      if (t > 1e-9 && y > 0 && y < baba) best = t;
    }
  }
  keep_min(best, ray_sphere(o, d, c.a, c.radius));
  keep_min(best, ray_sphere(o, d, c.b, c.radius));
  return best;
}

DepthImage render_depth(const RenderWorld& world, const ScriptSensor& sensor, int stride, double depth_sigma,
                        std::mt19937_64* rng, double max_range) {
  const auto& intr = sensor.intrinsics;
  DepthImage img(intr.width, intr.height);
  const Vec3 o = sensor.world_from_sensor.translation;
  const Quaternion& q = sensor.world_from_sensor.rotation;
  std::normal_distribution<double> noise(0.0, 1.0);
  // Cheap rejection for whole bodies: bounding sphere of each capsule group of 15.
  const std::size_t n = static_cast<std::size_t>(intr.width) * intr.height;
  for (std::size_t idx = 0; idx < n; idx += static_cast<std::size_t>(stride)) {
    const int u = static_cast<int>(idx % static_cast<std::size_t>(intr.width));
    const int v = static_cast<int>(idx / static_cast<std::size_t>(intr.width));
    const Vec3 ds((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0);
    const double len = norm(ds);
    const Vec3 d = q.rotate(ds / len);
    std::optional<double> best;
    for (const auto& c : world.capsules) keep_min(best, ray_capsule(o, d, c));
    for (const auto& b : world.boxes) keep_min(best, ray_box(o, d, b));
    for (const auto& s : world.screens) {
      const auto hit = intersect_screen(Ray(o, d), s);
      if (hit && hit->distance > 1e-9) keep_min(best, hit->distance);
    }
    for (const auto& pl : world.planes) {
      const double den = dot(d, pl.normal);
      if (std::abs(den) < 1e-12) continue;
      const double t = dot(pl.point - o, pl.normal) / den;
      if (t > 1e-9) keep_min(best, t);
    }
    if (!best || *best > max_range) continue;
    double depth = *best / len;
    if (rng && depth_sigma > 0) depth += depth_sigma * noise(*rng);
    if (depth > 0) img.depths[idx] = static_cast<float>(depth);
  }
  return img;
}

// --- scenario execution ---------------------------------------------------------------------

namespace {

struct Pending {
  std::int64_t time;
  std::size_t rank;
  std::string stream;
  std::vector<std::uint8_t> data;
};

struct SensorRuntime {
  const ScriptSensor* sensor = nullptr;
  RigidTransform sensor_from_world;
  std::mt19937_64 rng;
  std::uint32_t next_body = 1;
  std::map<std::size_t, std::pair<std::uint32_t, std::int64_t>> bodies;  // person -> (body id, last capture)
  std::map<std::size_t, bool> last_emitted;  // person -> emitted at the latest capture
};

bool in_frustum(const CameraIntrinsics& intr, const Vec3& p_sensor) {
  if (p_sensor.z < kMinDepth) return false;
  const Vec2 px = project(intr, p_sensor);
  return px.x >= 0 && px.y >= 0 && px.x < intr.width && px.y < intr.height;
}

}  // namespace

void run_scenario(const ScenarioScript& script, const std::function<bool(const Envelope&)>& sink) {
  script.validate();
  const SensorSchedule sched = script.schedule();
  const std::int64_t duration = script.duration_us();

  // Fixed stream order: the manifest and the merge order both follow it.
  std::vector<std::string> order{kMetaStream, kTruthPosesStream};
  for (const auto& s : script.sensors) {
    order.push_back(skeleton_stream(s.id));
    order.push_back(colour_stream(s.id));
    order.push_back(depth_stream(s.id));
  }
  order.push_back(kTruthFramesStream);
  std::map<std::string, std::size_t> rank;
  for (std::size_t i = 0; i < order.size(); ++i) rank[order[i]] = i;

  std::vector<Pending> pending;
  auto emit = [&](const std::string& stream, std::int64_t t, std::vector<std::uint8_t> data) {
    pending.push_back({t, rank.at(stream), stream, std::move(data)});
  };

  SessionMeta meta;
  meta.scenario = script.name;
  meta.seed = script.seed;
  meta.duration_us = duration;
  meta.period_us = script.period_us;
  meta.main_sensor = script.main_sensor;
  meta.scene = script.scene;
  TruePoses poses;
  for (const auto& s : script.sensors) {
    meta.sensors.push_back({s.id, s.intrinsics, sched.slots.at(s.id)});
    poses.world_from_sensor[s.id] = s.world_from_sensor;
  }
  emit(kMetaStream, 0, records::encode(meta));
  emit(kTruthPosesStream, 0, records::encode(poses));

  std::vector<SensorRuntime> rt(script.sensors.size());
  for (std::size_t i = 0; i < rt.size(); ++i) {
    rt[i].sensor = &script.sensors[i];
    rt[i].sensor_from_world = script.sensors[i].world_from_sensor.inverse();
    std::seed_seq seq{static_cast<std::uint32_t>(script.seed), static_cast<std::uint32_t>(script.seed >> 32),
                      static_cast<std::uint32_t>(i + 1)};
    rt[i].rng.seed(seq);
  }

  // Captures, in time order so per-sensor body-id continuity is well defined.
  struct Capture {
    std::int64_t t;
    std::size_t sensor;
    std::int64_t k;
  };
  std::vector<Capture> captures;
  for (std::size_t i = 0; i < rt.size(); ++i)
    for (std::int64_t k = 0;; ++k) {
      const std::int64_t t = sched.capture_time(script.sensors[i].id, k);
      if (t > duration) break;
      captures.push_back({t, i, k});
    }
  std::sort(captures.begin(), captures.end(),
            [](const Capture& a, const Capture& b) { return std::tie(a.t, a.sensor) < std::tie(b.t, b.sensor); });

  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::vector<std::int64_t> ticks = fuse_clock(sched, duration);
  std::size_t next_tick = 0;

  auto emit_truth = [&](std::int64_t tick) {
    TruthFrame tf;
    tf.timestamp_us = tick;
    const double t = static_cast<double>(tick) * 1e-6;
    for (std::size_t p = 0; p < script.persons.size(); ++p) {
      const auto& person = script.persons[p];
      const PersonState st = person_state(person, script.scene, t);
      if (!st.present) continue;
      TruePerson tp;
      tp.name = person.name;
      tp.identity = person.identity;
      tp.joints = st.joints;
      tp.left_gesture = st.left_gesture;
      tp.right_gesture = st.right_gesture;
      tp.left_pointing = st.left_pointing;
      tp.right_pointing = st.right_pointing;
      tp.gaze = true_gaze(st, script.scene);
      for (const auto& r : rt) {
        const auto it = r.last_emitted.find(p);
        if (it != r.last_emitted.end() && it->second) tp.visible_to.push_back(r.sensor->id);
      }
      tf.persons.push_back(std::move(tp));
    }
    emit(kTruthFramesStream, tick, records::encode(tf));
  };

  for (const Capture& cap : captures) {
    // Truth for ticks strictly before this capture sees the visibility of all earlier captures.
    while (next_tick < ticks.size() && ticks[next_tick] < cap.t) emit_truth(ticks[next_tick++]);
    SensorRuntime& r = rt[cap.sensor];
    const ScriptSensor& sensor = *r.sensor;
    std::int64_t t_us = cap.t;
    if (script.jitter_us > 0) {
      std::uniform_int_distribution<std::int64_t> jitter(-script.jitter_us, script.jitter_us);
      t_us = std::max<std::int64_t>(0, t_us + jitter(r.rng));
    }
    const double t = static_cast<double>(t_us) * 1e-6;
    const Vec3 eye = sensor.world_from_sensor.translation;

    SensorFrame frame{sensor.id, t_us, {}};
    ColourFrame colour{sensor.id, t_us, sensor.intrinsics.width, sensor.intrinsics.height, {}};
    RenderWorld world;
    world.boxes = script.occluders;
    world.screens = script.scene.screens;
    world.planes = script.planes;

    for (std::size_t p = 0; p < script.persons.size(); ++p) {
      const auto& person = script.persons[p];
      const PersonState st = person_state(person, script.scene, t);
      r.last_emitted[p] = false;
      if (!st.present) continue;
      const auto caps = body_capsules(st.joints);
      world.capsules.insert(world.capsules.end(), caps.begin(), caps.end());

      Joints joints{};
      std::array<Vec3, kJointCount> exact{};
      for (std::size_t j = 0; j < kJointCount; ++j) {
        exact[j] = transform_point(r.sensor_from_world, st.joints[j]);
        Confidence c = Confidence::High;
        if (!in_frustum(sensor.intrinsics, exact[j]))
          c = Confidence::None;
        else if (segment_hits_any(eye, st.joints[j], script.occluders))
          c = Confidence::Low;
        joints[j] = {exact[j], c};
      }
      if (joints[index_of(JointId::Pelvis)].confidence != Confidence::High) continue;
      if (script.joint_sigma > 0)
        for (auto& j : joints)
          j.position += Vec3(gauss(r.rng), gauss(r.rng), gauss(r.rng)) * script.joint_sigma;

      auto& slot = r.bodies[p];
      if (slot.first == 0 || slot.second != cap.k - 1) slot.first = r.next_body++;
      slot.second = cap.k;
      r.last_emitted[p] = true;

      Skeleton s;
      s.sensor_id = sensor.id;
      s.body_id = slot.first;
      s.timestamp_us = t_us;
      s.joints = joints;
      frame.bodies.push_back(s);

      auto tag = [&](JointId id, const std::optional<std::string>& label) {
        if (!label || joints[index_of(id)].confidence != Confidence::High) return;
        const Vec2 px = project(sensor.intrinsics, exact[index_of(id)]);
        colour.tags.push_back({px.x, px.y, *label});
      };
      tag(JointId::Head, person.identity);
      tag(JointId::LeftHand, st.left_gesture);
      tag(JointId::RightHand, st.right_gesture);
    }
    emit(skeleton_stream(sensor.id), t_us, records::encode(frame));
    emit(colour_stream(sensor.id), t_us, records::encode(colour));
    if (script.depth_every > 0 && cap.k % script.depth_every == 0) {
      const DepthImage img = render_depth(world, sensor, script.depth_stride, script.depth_sigma, &r.rng);
      emit(depth_stream(sensor.id), t_us, serialize_cloud(depth_to_cloud(img, sensor.intrinsics, 1)));
    }
  }
  while (next_tick < ticks.size()) emit_truth(ticks[next_tick++]);

  std::stable_sort(pending.begin(), pending.end(),
                   [](const Pending& a, const Pending& b) { return std::tie(a.time, a.rank) < std::tie(b.time, b.rank); });
  std::map<std::string, std::uint64_t> seq;
  for (auto& p : pending) {
    Envelope e{p.stream, p.time, seq[p.stream]++, std::move(p.data)};
    if (!sink(e)) return;
  }
}

ScenarioOutput run_scenario(const ScenarioScript& script) {
  ScenarioOutput out;
  run_scenario(script, [&](const Envelope& e) {
    out.envelopes.push_back(e);
    return true;
  });
  for (const auto& e : out.envelopes) {
    if (e.stream == kMetaStream) out.meta = records::decode_meta(e.payload);
    if (e.stream == kTruthPosesStream) out.poses = records::decode_true_poses(e.payload);
  }
  return out;
}

void simulate_to_store(const ScenarioScript& script, const std::filesystem::path& dir) {
  SessionWriter writer(dir);
  writer.declare(kMetaStream);
  writer.declare(kTruthPosesStream);
  for (const auto& s : script.sensors) {
    writer.declare(skeleton_stream(s.id));
    writer.declare(colour_stream(s.id));
    writer.declare(depth_stream(s.id));
  }
  writer.declare(kTruthFramesStream);
  run_scenario(script, [&](const Envelope& e) {
    writer.append(e.stream, e.originating_time_us, e.payload);
    return true;
  });
  writer.close();
}

}  // namespace bodyfuse::sim
