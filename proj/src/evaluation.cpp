#include "bodyfuse/evaluation.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "bodyfuse/error.hpp"

namespace bodyfuse::eval {

using nlohmann::json;

SessionTruth load_truth(std::span<const Envelope> envelopes) {
  SessionTruth truth;
  bool have_meta = false;
  bool have_poses = false;
  for (const Envelope& e : envelopes) {
    if (e.stream == kMetaStream && !have_meta) {
      truth.meta = records::decode_meta(e.payload);
      have_meta = true;
    } else if (e.stream == kTruthPosesStream && !have_poses) {
      truth.poses = records::decode_true_poses(e.payload);
      have_poses = true;
    } else if (e.stream == kTruthFramesStream) {
      TruthFrame f = records::decode_truth_frame(e.payload);
      const std::int64_t t = f.timestamp_us;
      truth.frames[t] = std::move(f);
    }
  }
  if (!have_meta) throw Error(ErrorCode::UnknownStream, "session has no meta stream");
  if (!have_poses) throw Error(ErrorCode::UnknownStream, "session has no truth/poses stream");
  return truth;
}

SessionTruth load_truth(const SessionReader& reader) {
  std::vector<Envelope> all;
  for (const char* s : {kMetaStream, kTruthPosesStream, kTruthFramesStream}) {
    if (!reader.has_stream(s)) throw Error(ErrorCode::UnknownStream, std::string("session has no ") + s + " stream");
    auto part = reader.read(s);
    all.insert(all.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return load_truth(all);
}

CalibrationSet truth_calibration(const SessionTruth& truth) {
  const auto main = truth.poses.world_from_sensor.find(truth.meta.main_sensor);
  if (main == truth.poses.world_from_sensor.end())
    throw Error(ErrorCode::PreconditionViolation, "no true pose for main sensor " + truth.meta.main_sensor);
  CalibrationSet c;
  c.main_sensor_id = truth.meta.main_sensor;
  c.world_from_main = main->second;
  c.created_at = "1970-01-01T00:00:00Z";
  const RigidTransform main_from_world = main->second.inverse();
  for (const auto& [id, pose] : truth.poses.world_from_sensor) {
    c.main_from_sensor[id] = id == c.main_sensor_id ? RigidTransform::identity() : compose(main_from_world, pose);
    c.residuals[id] = 0.0;
  }
  return c;
}

Percentiles percentiles(std::vector<double> values) {
  Percentiles p;
  p.count = values.size();
  if (values.empty()) return p;
  std::sort(values.begin(), values.end());
  const auto rank = [&](double q) {
    const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
    return values[std::clamp<std::size_t>(k, 1, values.size()) - 1];
  };
  p.p50 = rank(0.50);
  p.p95 = rank(0.95);
  p.max = values.back();
  return p;
}

namespace {

const TruePerson* find_person(const SessionTruth& truth, std::int64_t t, const std::string& name) {
  const auto it = truth.frames.find(t);
  if (it == truth.frames.end()) return nullptr;
  for (const TruePerson& p : it->second.persons)
    if (p.name == name) return &p;
  return nullptr;
}

const std::optional<TrueTarget>& pointing_of(const TruePerson& p, Side side) {
  return side == Side::Left ? p.left_pointing : p.right_pointing;
}

const std::optional<std::string>& gesture_of(const TruePerson& p, Side side) {
  return side == Side::Left ? p.left_gesture : p.right_gesture;
}

bool same_target(const std::optional<TrueTarget>& a, const std::optional<TrueTarget>& b) {
  return a && b && a->screen_id == b->screen_id && distance(a->point, b->point) < 1e-9;
}

/// Targets whose neighbouring ticks carry the same target, so onsets and ends are skipped.
template <typename Get>
const TrueTarget* steady_target(const SessionTruth& truth, std::int64_t t, const std::string& name, Get get) {
  const std::int64_t period = truth.meta.period_us;
  const TruePerson* now = find_person(truth, t, name);
  const TruePerson* before = find_person(truth, t - period, name);
  const TruePerson* after = find_person(truth, t + period, name);
  if (!now || !before || !after) return nullptr;
  const auto& target = get(*now);
  if (!target) return nullptr;
  if (!same_target(target, get(*before)) || !same_target(target, get(*after))) return nullptr;
  return &*target;
}

template <typename Get>
const TrueTarget* smooth_target(const SessionTruth& truth, std::int64_t t, const std::string& name, Get get) {
  const std::int64_t period = truth.meta.period_us;
  const TruePerson* now = find_person(truth, t, name);
  const TruePerson* before = find_person(truth, t - period, name);
  const TruePerson* after = find_person(truth, t + period, name);
  if (!now || !before || !after) return nullptr;
  const auto& target = get(*now);
  if (!target || !get(*before) || !get(*after)) return nullptr;
  if (get(*before)->screen_id != target->screen_id || get(*after)->screen_id != target->screen_id) return nullptr;
  return &*target;
}

}  // namespace

EvalReport evaluate(const SessionTruth& truth, std::span<const BehaviourEvent> events,
                    const CalibrationSet* calibration, const EvalParams& params) {
  EvalReport r;
  const std::int64_t period = truth.meta.period_us;

  std::map<std::int64_t, std::vector<const BehaviourEvent*>> by_tick;
  for (const BehaviourEvent& e : events) by_tick[e.ts_us].push_back(&e);
  r.events = events.size();

  std::map<std::string, std::uint64_t> last_id_of;
  std::map<std::uint64_t, std::string> last_name_of;
  std::vector<double> pointing_errors;
  std::vector<double> gaze_errors;

  for (const auto& [t, frame] : truth.frames) {
    if (t <= 0) continue;
    ++r.ticks;
    std::vector<const TruePerson*> seen;
    for (const TruePerson& p : frame.persons)
      if (!p.visible_to.empty()) seen.push_back(&p);
    const auto ev_it = by_tick.find(t);
    static const std::vector<const BehaviourEvent*> kNone;
    const auto& evs = ev_it == by_tick.end() ? kNone : ev_it->second;
    if (evs.size() != seen.size()) ++r.count_mismatch_ticks;

    // Greedy nearest-pelvis mapping.
    struct Pair {
      double d;
      std::size_t e;
      std::size_t p;
    };
    std::vector<Pair> pairs;
    for (std::size_t i = 0; i < evs.size(); ++i)
      for (std::size_t j = 0; j < seen.size(); ++j) {
        const double d = distance(evs[i]->position, seen[j]->joint(JointId::Pelvis));
        if (d <= params.match_radius_m) pairs.push_back({d, i, j});
      }
    std::sort(pairs.begin(), pairs.end(),
              [](const Pair& a, const Pair& b) { return std::tie(a.d, a.e, a.p) < std::tie(b.d, b.e, b.p); });
    std::vector<int> person_of(evs.size(), -1);
    std::vector<bool> taken(seen.size(), false);
    for (const Pair& pr : pairs) {
      if (person_of[pr.e] >= 0 || taken[pr.p]) continue;
      person_of[pr.e] = static_cast<int>(pr.p);
      taken[pr.p] = true;
    }

    for (std::size_t i = 0; i < evs.size(); ++i) {
      const BehaviourEvent& e = *evs[i];
      if (person_of[i] < 0) {
        ++r.unmatched_events;
        continue;
      }
      const TruePerson& p = *seen[static_cast<std::size_t>(person_of[i])];

      auto& ids = r.person_ids[p.name];
      if (std::find(ids.begin(), ids.end(), e.person_id) == ids.end()) ids.push_back(e.person_id);
      const auto li = last_id_of.find(p.name);
      const auto ln = last_name_of.find(e.person_id);
      if ((li != last_id_of.end() && li->second != e.person_id) || (ln != last_name_of.end() && ln->second != p.name))
        ++r.identity_swaps;
      last_id_of[p.name] = e.person_id;
      last_name_of[e.person_id] = p.name;

      for (const Side side : {Side::Left, Side::Right}) {
        const TrueTarget* target =
            steady_target(truth, t, p.name, [side](const TruePerson& q) -> const std::optional<TrueTarget>& {
              return pointing_of(q, side);
            });
        if (!target) continue;
        const auto& got = side == Side::Left ? e.left_pointing : e.right_pointing;
        if (!got || got->hit.screen_id != target->screen_id) {
          ++r.pointing_missing;
          continue;
        }
        pointing_errors.push_back(distance(got->hit.point, target->point));
      }

      if (const TrueTarget* g = smooth_target(truth, t, p.name,
                                              [](const TruePerson& q) -> const std::optional<TrueTarget>& { return q.gaze; })) {
        if (!e.gaze || e.gaze->hit.screen_id != g->screen_id)
          ++r.gaze_missing;
        else
          gaze_errors.push_back(distance(e.gaze->hit.point, g->point));
      }

      for (const Side side : {Side::Left, Side::Right}) {
        const auto& label = side == Side::Left ? e.left_gesture : e.right_gesture;
        if (!label) continue;
        ++r.gesture_labels;
        bool correct = false;
        bool other = false;
        for (const std::int64_t dt : {-period, std::int64_t{0}, period}) {
          const auto f = truth.frames.find(label->ts_us + dt);
          if (f == truth.frames.end()) continue;
          for (const TruePerson& q : f->second.persons) {
            if (q.name == p.name) {
              if (gesture_of(q, side) == label->label) correct = true;
            } else if (q.left_gesture == label->label || q.right_gesture == label->label) {
              other = true;
            }
          }
        }
        if (correct)
          ++r.gesture_correct;
        else if (other)
          ++r.gesture_wrong_person;
      }

      if (e.identity) {
        ++r.identity_labels;
        if (p.identity == e.identity->label) ++r.identity_correct;
      }
    }
  }

  r.pointing_error_m = percentiles(std::move(pointing_errors));
  r.gaze_error_m = percentiles(std::move(gaze_errors));

  if (calibration) {
    const auto main_truth = truth.poses.world_from_sensor.find(calibration->main_sensor_id);
    for (const auto& [id, main_from_sensor] : calibration->main_from_sensor) {
      const auto t = truth.poses.world_from_sensor.find(id);
      if (t == truth.poses.world_from_sensor.end()) continue;
      r.world_error[id] = transform_error(calibration->world_from_sensor(id), t->second);
      if (main_truth != truth.poses.world_from_sensor.end())
        r.relative_error[id] = transform_error(main_from_sensor, compose(main_truth->second.inverse(), t->second));
    }
  }
  return r;
}

namespace {

json percentiles_json(const Percentiles& p) {
  return {{"count", p.count}, {"p50", p.p50}, {"p95", p.p95}, {"max", p.max}};
}

json errors_json(const std::map<std::string, TransformError>& m) {
  json j = json::object();
  for (const auto& [id, e] : m) j[id] = {{"translation_m", e.translation_m}, {"rotation_deg", e.rotation_deg}};
  return j;
}

}  // namespace

std::string EvalReport::to_json() const {
  json j;
  j["ticks"] = ticks;
  j["events"] = events;
  j["unmatched_events"] = unmatched_events;
  j["count_mismatch_ticks"] = count_mismatch_ticks;
  j["identity_swaps"] = identity_swaps;
  j["person_ids"] = person_ids;
  j["pointing_error_m"] = percentiles_json(pointing_error_m);
  j["pointing_missing"] = pointing_missing;
  j["gaze_error_m"] = percentiles_json(gaze_error_m);
  j["gaze_missing"] = gaze_missing;
  j["gesture"] = {{"labels", gesture_labels}, {"correct", gesture_correct}, {"wrong_person", gesture_wrong_person}};
  j["identity"] = {{"labels", identity_labels}, {"correct", identity_correct}};
  j["calibration"] = {{"world", errors_json(world_error)}, {"relative", errors_json(relative_error)}};
  return j.dump();
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << "ticks " << ticks << ", events " << events << ", unmatched " << unmatched_events << ", count mismatches "
     << count_mismatch_ticks << ", identity swaps " << identity_swaps << "\n";
  const auto pct = [&](const char* name, const Percentiles& p, std::size_t missing) {
    os << name << " error: n=" << p.count << " p50=" << p.p50 * 1000 << " mm p95=" << p.p95 * 1000 << " mm max=" << p.max * 1000
       << " mm, missing " << missing << "\n";
  };
  pct("pointing", pointing_error_m, pointing_missing);
  pct("gaze", gaze_error_m, gaze_missing);
  os << "gesture labels " << gesture_labels << ", correct person " << gesture_correct << ", other person "
     << gesture_wrong_person << "\n";
  os << "identity labels " << identity_labels << ", correct " << identity_correct << "\n";
  for (const auto& [id, e] : relative_error) {
    os << "calibration " << id << ": relative " << e.translation_m * 1000 << " mm / " << e.rotation_deg << " deg";
    if (const auto w = world_error.find(id); w != world_error.end())
      os << ", world " << w->second.translation_m * 1000 << " mm / " << w->second.rotation_deg << " deg";
    os << "\n";
  }
  return os.str();
}

}  // namespace bodyfuse::eval
