#include "bodyfuse/calibration.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <limits>
#include <queue>
#include <set>
#include <sstream>

#include "bodyfuse/error.hpp"
#include "bodyfuse/kernels.hpp"
#include "yaml_io.hpp"

namespace bodyfuse {

void SceneModel::validate() const {
  if (screens.empty()) throw Error(ErrorCode::InvariantViolation, "scene needs at least one screen");
  std::set<std::string> ids;
  for (const auto& s : screens) {
    try {
      s.validate();
    } catch (const Error& e) {
      throw Error(ErrorCode::InvariantViolation, "screen '" + s.screen_id + "': " + e.what());
    }
    if (!ids.insert(s.screen_id).second) throw Error(ErrorCode::InvariantViolation, "duplicate screen id " + s.screen_id);
  }
}

RigidTransform CalibrationSet::world_from_sensor(const std::string& sensor_id) const {
  const auto it = main_from_sensor.find(sensor_id);
  if (it == main_from_sensor.end()) throw Error(ErrorCode::DisconnectedSensor, "sensor '" + sensor_id + "' not calibrated");
  return compose(world_from_main, it->second);
}

namespace {

void check_transform(const RigidTransform& t, const std::string& what) {
  if (std::abs(t.rotation.norm() - 1.0) > 1e-9)
    throw Error(ErrorCode::InvariantViolation, what + ": rotation quaternion is not unit length");
  if (!is_finite(t.translation)) throw Error(ErrorCode::InvariantViolation, what + ": non-finite translation");
}

bool is_identity(const RigidTransform& t, double tol) {
  return norm(t.translation) <= tol && angle_between(t.rotation, Quaternion::identity()) <= tol;
}

}  // namespace

void CalibrationSet::validate() const {
  if (main_sensor_id.empty()) throw Error(ErrorCode::InvariantViolation, "main sensor id is empty");
  check_transform(world_from_main, "world_from_main");
  const auto it = main_from_sensor.find(main_sensor_id);
  if (it == main_from_sensor.end()) throw Error(ErrorCode::InvariantViolation, "main sensor has no entry");
  if (!is_identity(it->second, 1e-9)) throw Error(ErrorCode::InvariantViolation, "main sensor must map to identity");
  for (const auto& [id, t] : main_from_sensor) check_transform(t, "sensor '" + id + "'");
}

// --- residual ----------------------------------------------------------------------------------

namespace {

/// For each point, |distance| to the closest qualifying screen plane, or +inf.
std::vector<double> plane_distances(const kernels::SoaPoints& world, const SceneModel& scene, double band) {
  const std::size_t n = world.size();
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::vector<double> a(n), b(n), d(n);
  for (const auto& s : scene.screens) {
    const Vec3 nrm = s.normal();
    const double o[3] = {s.origin.x, s.origin.y, s.origin.z};
    const double u[3] = {s.u_axis.x, s.u_axis.y, s.u_axis.z};
    const double v[3] = {s.v_axis.x, s.v_axis.y, s.v_axis.z};
    const double nn[3] = {nrm.x, nrm.y, nrm.z};
    kernels::active().plane_coords(world.x.data(), world.y.data(), world.z.data(), n, o, u, v, nn, a.data(), b.data(),
                                   d.data());
    for (std::size_t i = 0; i < n; ++i) {
      const double ad = std::abs(d[i]);
      if (ad <= band && a[i] >= 0.0 && a[i] <= s.width && b[i] >= 0.0 && b[i] <= s.height && ad < best[i])
        best[i] = ad;
    }
  }
  return best;
}

}  // namespace

AlignmentResidual alignment_residual(const PointCloud& cloud, const RigidTransform& world_from_sensor,
                                     const SceneModel& scene, double band) {
  const kernels::SoaPoints local(cloud.points);
  kernels::SoaPoints world;
  kernels::transform_points(world_from_sensor, local, world);
  const auto dist = plane_distances(world, scene, band);
  AlignmentResidual r;
  double sum = 0.0;
  for (const double d : dist) {
    if (!std::isfinite(d)) continue;
    sum += d * d;
    ++r.sample_count;
  }
  r.rmse = r.sample_count == 0 ? std::numeric_limits<double>::infinity()
                               : std::sqrt(sum / static_cast<double>(r.sample_count));
  return r;
}

PointCloud sample_screens(const SceneModel& scene, double pitch) {
  if (!(pitch > 0.0)) throw Error(ErrorCode::InvalidArgument, "pitch must be positive");
  PointCloud out;
  for (const auto& s : scene.screens) {
    const int nu = static_cast<int>(std::floor(s.width / pitch + 1e-9));
    const int nv = static_cast<int>(std::floor(s.height / pitch + 1e-9));
    for (int j = 0; j <= nv; ++j)
      for (int i = 0; i <= nu; ++i) out.points.push_back(s.origin + s.u_axis * (i * pitch) + s.v_axis * (j * pitch));
  }
  return out;
}

IcpResult refine_scene_pose(const PointCloud& cloud, const RigidTransform& init, const SceneModel& scene,
                            const IcpParams& params, double band) {
  const AlignmentResidual before = alignment_residual(cloud, init, scene, band);
  if (!std::isfinite(before.rmse))
    throw Error(ErrorCode::PreconditionViolation, "initial pose puts no points near any screen");

  const kernels::SoaPoints local(cloud.points);
  kernels::SoaPoints world;
  kernels::transform_points(init, local, world);
  const auto dist = plane_distances(world, scene, band);
  PointCloud near_screen;
  for (std::size_t i = 0; i < dist.size(); ++i)
    if (std::isfinite(dist[i])) near_screen.points.push_back(cloud.points[i]);

  return icp(near_screen, sample_screens(scene, kScreenSamplePitch), init, params);
}

// --- person reference -------------------------------------------------------------------------

RigidTransform person_reference_calibration(std::span<const Skeleton> track_a, std::span<const Skeleton> track_b,
                                            const PersonReferenceParams& params) {
  std::vector<Skeleton> b(track_b.begin(), track_b.end());
  std::stable_sort(b.begin(), b.end(), [](const Skeleton& x, const Skeleton& y) { return x.timestamp_us < y.timestamp_us; });

  std::vector<Vec3> points_a, points_b;
  std::size_t aligned = 0;
  for (const Skeleton& sa : track_a) {
    const auto it = std::lower_bound(b.begin(), b.end(), sa.timestamp_us,
                                     [](const Skeleton& s, std::int64_t t) { return s.timestamp_us < t; });
    std::optional<Skeleton> sb;
    if (it != b.end() && it->timestamp_us == sa.timestamp_us) {
      sb = *it;
    } else if (it != b.end() && it != b.begin()) {
      try {
        sb = interpolate(*(it - 1), *it, sa.timestamp_us, params.max_gap_us);
      } catch (const Error&) {
        continue;
      }
    } else {
      continue;
    }
    bool any = false;
    for (std::size_t j = 0; j < kJointCount; ++j) {
      if (sa.joints[j].confidence < Confidence::Medium || sb->joints[j].confidence < Confidence::Medium) continue;
      points_a.push_back(sa.joints[j].position);
      points_b.push_back(sb->joints[j].position);
      any = true;
    }
    if (any) ++aligned;
  }
  if (aligned < params.min_samples)
    throw Error(ErrorCode::InsufficientOverlap, std::to_string(aligned) + " aligned frames, need " +
                                                    std::to_string(params.min_samples));
  return kabsch(points_b, points_a);
}

// --- calibration graph ------------------------------------------------------------------------

CalibrationSet build_calibration(const std::string& main_sensor_id, const RigidTransform& world_from_main,
                                 std::span<const PairwiseCalibration> pairwise,
                                 std::span<const std::string> sensor_ids) {
  std::set<std::string> nodes(sensor_ids.begin(), sensor_ids.end());
  nodes.insert(main_sensor_id);
  for (const auto& e : pairwise) {
    if (e.sensor_a == e.sensor_b) throw Error(ErrorCode::AmbiguousPath, "self edge on " + e.sensor_a);
    nodes.insert(e.sensor_a);
    nodes.insert(e.sensor_b);
  }

  // A forest has exactly |nodes| - components edges; anything more closes a cycle.
  std::map<std::string, std::string> parent;
  for (const auto& n : nodes) parent[n] = n;
  auto find = [&](std::string x) {
    while (parent[x] != x) x = parent[x];
    return x;
  };
  for (const auto& e : pairwise) {
    const auto ra = find(e.sensor_a), rb = find(e.sensor_b);
    if (ra == rb) throw Error(ErrorCode::AmbiguousPath, "calibration graph has a cycle through " + e.sensor_a + "-" + e.sensor_b);
    parent[rb] = ra;
  }

  CalibrationSet calib;
  calib.main_sensor_id = main_sensor_id;
  calib.world_from_main = world_from_main;
  calib.created_at = utc_timestamp_now();
  calib.main_from_sensor[main_sensor_id] = RigidTransform::identity();

  std::queue<std::string> frontier;
  frontier.push(main_sensor_id);
  while (!frontier.empty()) {
    const std::string cur = frontier.front();
    frontier.pop();
    const RigidTransform main_from_cur = calib.main_from_sensor.at(cur);
    for (const auto& e : pairwise) {
      if (e.sensor_a == cur && !calib.main_from_sensor.contains(e.sensor_b)) {
        calib.main_from_sensor[e.sensor_b] = compose(main_from_cur, e.a_from_b);
        frontier.push(e.sensor_b);
      } else if (e.sensor_b == cur && !calib.main_from_sensor.contains(e.sensor_a)) {
        calib.main_from_sensor[e.sensor_a] = compose(main_from_cur, e.a_from_b.inverse());
        frontier.push(e.sensor_a);
      }
    }
  }
  for (const auto& n : nodes)
    if (!calib.main_from_sensor.contains(n))
      throw Error(ErrorCode::DisconnectedSensor, "sensor '" + n + "' has no path to " + main_sensor_id);
  return calib;
}

// --- persistence --------------------------------------------------------------------------

std::string utc_timestamp_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string format_calibration(const CalibrationSet& calib) {
  YAML::Node root;
  root["format"] = "bodyfuse-calibration";
  root["version"] = 1;
  root["main_sensor"] = calib.main_sensor_id;
  root["created_at"] = calib.created_at;
  root["world_from_main"] = yaml_io::transform_node(calib.world_from_main);
  for (const auto& [id, t] : calib.main_from_sensor) {
    YAML::Node s;
    s["main_from_sensor"] = yaml_io::transform_node(t);
    const auto r = calib.residuals.find(id);
    if (r != calib.residuals.end()) s["residual"] = r->second;
    root["sensors"][id] = s;
  }
  return "# bodyfuse calibration: quaternion (w, x, y, z) + translation in metres per transform\n" +
         yaml_io::emit(root) + "\n";
}

CalibrationSet parse_calibration(const std::string& text) {
  const YAML::Node root = yaml_io::parse(text);
  if (!root.IsMap()) throw Error(ErrorCode::ParseError, "calibration file must be a mapping");
  const auto format = yaml_io::get_or<std::string>(root, "format", "bodyfuse-calibration");
  if (format != "bodyfuse-calibration") throw Error(ErrorCode::ParseError, "unexpected format '" + format + "'");
  const int version = yaml_io::get_or<int>(root, "version", 1);
  if (version != 1) throw Error(ErrorCode::ParseError, "unsupported calibration version " + std::to_string(version));

  CalibrationSet calib;
  calib.main_sensor_id = yaml_io::get<std::string>(root, "main_sensor");
  calib.created_at = yaml_io::get_or<std::string>(root, "created_at", "");
  calib.world_from_main = root["world_from_main"] ? yaml_io::as_transform(root["world_from_main"])
                                                  : RigidTransform::identity();
  const auto sensors = yaml_io::require(root, "sensors");
  if (!sensors.IsMap()) throw Error(ErrorCode::ParseError, "'sensors' must be a mapping");
  for (const auto& kv : sensors) {
    const auto id = kv.first.as<std::string>();
    calib.main_from_sensor[id] = yaml_io::as_transform(yaml_io::require(kv.second, "main_from_sensor"));
    if (kv.second["residual"]) calib.residuals[id] = yaml_io::get<double>(kv.second, "residual");
  }
  calib.validate();
  return calib;
}

void save_calibration(const CalibrationSet& calib, const std::filesystem::path& path) {
  calib.validate();
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << format_calibration(calib);
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

CalibrationSet load_calibration(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_calibration(ss.str());
}

SceneModel load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  SceneModel scene = yaml_io::as_scene(yaml_io::parse(ss.str()));
  scene.validate();
  return scene;
}

void save_scene(const SceneModel& scene, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << yaml_io::emit(yaml_io::scene_node(scene)) << "\n";
}

}  // namespace bodyfuse
