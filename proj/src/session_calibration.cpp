#include "bodyfuse/session_calibration.hpp"

#include <algorithm>
#include <cstdlib>
#include <set>

#include "bodyfuse/error.hpp"
#include "bodyfuse/records.hpp"

namespace bodyfuse {

namespace {

struct SensorData {
  std::vector<Skeleton> track;  // the body seen in the most frames
  std::vector<std::pair<std::int64_t, PointCloud>> clouds;
};

std::vector<Skeleton> dominant_track(const std::vector<SensorFrame>& frames) {
  std::map<std::uint32_t, std::vector<Skeleton>> by_body;
  for (const SensorFrame& f : frames)
    for (const Skeleton& s : f.bodies) by_body[s.body_id].push_back(s);
  std::vector<Skeleton> best;
  for (auto& [id, track] : by_body)
    if (track.size() > best.size()) best = std::move(track);
  return best;
}

struct PairedClouds {
  PointCloud a;
  PointCloud b;
  std::size_t pairs = 0;
};

PairedClouds pair_clouds(const SensorData& a, const SensorData& b, const SessionCalibrationParams& params) {
  PairedClouds out;
  std::set<std::size_t> used;
  for (const auto& [tb, cb] : b.clouds) {
    if (out.pairs >= params.max_cloud_pairs) break;
    std::size_t best = a.clouds.size();
    std::int64_t best_gap = params.max_cloud_gap_us + 1;
    for (std::size_t i = 0; i < a.clouds.size(); ++i) {
      const std::int64_t gap = std::llabs(a.clouds[i].first - tb);
      if (gap < best_gap && !used.count(i)) {
        best = i;
        best_gap = gap;
      }
    }
    if (best == a.clouds.size()) continue;
    used.insert(best);
    out.a.points.insert(out.a.points.end(), a.clouds[best].second.points.begin(), a.clouds[best].second.points.end());
    out.b.points.insert(out.b.points.end(), cb.points.begin(), cb.points.end());
    ++out.pairs;
  }
  return out;
}

PairReport align(const std::string& ref, const SensorData& a, const std::string& id, const SensorData& b,
                 const SessionCalibrationParams& params) {
  PairReport r;
  r.sensor = id;
  r.reference = ref;
  r.frames_a = a.track.size();
  r.frames_b = b.track.size();
  r.person_reference = person_reference_calibration(a.track, b.track, params.person);
  r.a_from_b = r.person_reference;
  if (!params.refine_pairwise) return r;
  const PairedClouds clouds = pair_clouds(a, b, params);
  r.cloud_pairs = clouds.pairs;
  if (clouds.pairs == 0 || clouds.a.points.size() < params.pairwise_icp.min_points ||
      clouds.b.points.size() < params.pairwise_icp.min_points)
    return r;
  try {
    r.icp = icp(clouds.b, clouds.a, r.person_reference, params.pairwise_icp);
  } catch (const Error&) {
    return r;
  }
  r.icp_accepted = r.icp->converged && r.icp->inlier_fraction >= params.pairwise_icp.min_inlier_fraction;
  if (r.icp_accepted) r.a_from_b = r.icp->transform;
  return r;
}

}  // namespace

CalibrationSet calibrate_session(std::span<const Envelope> envelopes,
                                 const std::optional<RigidTransform>& world_from_main_init,
                                 const SessionCalibrationParams& params, SessionCalibrationReport* report,
                                 const SceneModel* scene_override) {
  std::optional<SessionMeta> meta;
  std::map<std::string, std::vector<SensorFrame>> frames;
  std::map<std::string, SensorData> data;
  for (const Envelope& e : envelopes) {
    if (e.stream == kMetaStream) meta = records::decode_meta(e.payload);
  }
  if (!meta) throw Error(ErrorCode::UnknownStream, "session has no meta stream");
  std::vector<std::string> ids;
  for (const SensorInfo& s : meta->sensors) ids.push_back(s.id);
  for (const Envelope& e : envelopes)
    for (const std::string& id : ids) {
      if (e.stream == skeleton_stream(id))
        frames[id].push_back(records::decode_sensor_frame(e.payload));
      else if (e.stream == depth_stream(id))
        data[id].clouds.emplace_back(e.originating_time_us, deserialize_cloud(e.payload));
    }
  for (const std::string& id : ids) data[id].track = dominant_track(frames[id]);

  SessionCalibrationReport local;
  SessionCalibrationReport& rep = report ? *report : local;
  rep = {};
  rep.main_sensor = meta->main_sensor;

  // Grow a tree from the main sensor, trying calibrated sensors in the order they joined.
  std::vector<std::string> calibrated{meta->main_sensor};
  std::vector<std::string> pending;
  for (const std::string& id : ids)
    if (id != meta->main_sensor) pending.push_back(id);
  std::vector<PairwiseCalibration> edges;
  while (!pending.empty()) {
    bool progress = false;
    for (auto it = pending.begin(); it != pending.end();) {
      std::optional<PairReport> pair;
      std::optional<Error> last;
      for (const std::string& ref : calibrated) {
        try {
          pair = align(ref, data[ref], *it, data[*it], params);
          break;
        } catch (const Error& e) {
          if (e.code() != ErrorCode::InsufficientOverlap && e.code() != ErrorCode::DegenerateConfiguration) throw;
          last = e;
        }
      }
      if (!pair) {
        ++it;
        continue;
      }
      edges.push_back({pair->reference, pair->sensor, pair->a_from_b});
      calibrated.push_back(*it);
      rep.pairs.push_back(std::move(*pair));
      it = pending.erase(it);
      progress = true;
    }
    if (!progress)
      throw Error(ErrorCode::DisconnectedSensor, "no person-reference overlap for sensor " + pending.front());
  }

  const SceneModel& scene = scene_override ? *scene_override : meta->scene;
  RigidTransform world_from_main = world_from_main_init.value_or(RigidTransform{});
  const auto& main_clouds = data[meta->main_sensor].clouds;
  if (world_from_main_init && !main_clouds.empty()) {
    const PointCloud& cloud = main_clouds.back().second;
    const AlignmentResidual before = alignment_residual(cloud, world_from_main, scene);
    if (std::isfinite(before.rmse)) {
      rep.scene_before = before;
      rep.scene_icp = refine_scene_pose(cloud, world_from_main, scene, params.scene_icp);
      if (alignment_residual(cloud, rep.scene_icp->transform, scene).rmse <= before.rmse)
        world_from_main = rep.scene_icp->transform;
    }
  }

  CalibrationSet calib = build_calibration(meta->main_sensor, world_from_main, edges, ids);
  for (const std::string& id : ids) {
    if (data[id].clouds.empty()) continue;
    const AlignmentResidual r = alignment_residual(data[id].clouds.back().second, calib.world_from_sensor(id), scene);
    rep.residuals[id] = r;
    if (std::isfinite(r.rmse)) calib.residuals[id] = r.rmse;
  }
  calib.created_at = utc_timestamp_now();
  return calib;
}

}  // namespace bodyfuse
