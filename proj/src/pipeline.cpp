#include "bodyfuse/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "bodyfuse/error.hpp"
#include "bodyfuse/pointcloud.hpp"

namespace bodyfuse {

using nlohmann::json;

namespace {

bool usable(const Joint& j) { return j.confidence >= Confidence::Medium; }

}  // namespace

std::optional<Ray> pointing_ray(const MergedBody& body, Side hand, PointingMode mode) {
  const bool left = hand == Side::Left;
  const Joint& tip = body.joint(left ? JointId::LeftHand : JointId::RightHand);
  const Joint& base = mode == PointingMode::HeadHand ? body.joint(JointId::Head)
                                                     : body.joint(left ? JointId::LeftElbow : JointId::RightElbow);
  if (!usable(tip) || !usable(base)) return std::nullopt;
  const Vec3 d = tip.position - base.position;
  if (!(norm(d) > 1e-9)) return std::nullopt;
  return Ray(base.position, d);
}

std::optional<Ray> gaze_ray(const MergedBody& body) {
  const Joint& head = body.joint(JointId::Head);
  const Joint& neck = body.joint(JointId::Neck);
  const Joint& ls = body.joint(JointId::LeftShoulder);
  const Joint& rs = body.joint(JointId::RightShoulder);
  const Joint& pelvis = body.joint(JointId::Pelvis);
  if (!usable(head) || !usable(neck) || !usable(ls) || !usable(rs) || !usable(pelvis)) return std::nullopt;
  const Vec3 forward = cross(ls.position - rs.position, neck.position - pelvis.position);
  const Vec3 axis = head.position - neck.position;
  if (!(norm(forward) > 1e-12) || !(norm(axis) > 1e-12)) return std::nullopt;
  const Vec3 a = normalized(axis);
  const Vec3 f = forward - a * dot(forward, a);
  if (!(norm(f) > 1e-12)) return std::nullopt;
  return Ray(head.position, f);
}

// --- crops ----------------------------------------------------------------------------------

wire::CropMessage CropRequest::message() const {
  wire::CropMessage m;
  m.ts_us = ts_us;
  m.person_id = std::to_string(person_id);
  m.part = part;
  m.width = width;
  m.height = height;
  m.format = wire::PixelFormat::Bgra8;
  m.pixels = pixels;
  return m;
}

JointId part_joint(wire::BodyPart part) {
  switch (part) {
    case wire::BodyPart::LeftHand: return JointId::LeftHand;
    case wire::BodyPart::RightHand: return JointId::RightHand;
    case wire::BodyPart::Face: return JointId::Head;
  }
  return JointId::Head;
}

std::vector<CropRequest> make_crops(std::uint64_t person_id, std::int64_t ts_us, std::span<const SensorView> views,
                                    std::span<const wire::BodyPart> parts, const CropParams& params) {
  std::vector<CropRequest> out;
  for (const wire::BodyPart part : parts) {
    const JointId jid = part_joint(part);
    const SensorView* best = nullptr;
    Vec2 best_px;
    for (const SensorView& v : views) {
      if (!v.colour) continue;
      const Joint& j = v.skeleton.joint(jid);
      if (!usable(j) || !(j.position.z > 0.0)) continue;
      const Vec2 px = project(v.intrinsics, j.position);
      if (!(px.x >= 0.0 && px.y >= 0.0 && px.x < v.intrinsics.width && px.y < v.intrinsics.height)) continue;
      if (!best || j.position.z < best->skeleton.joint(jid).position.z) {
        best = &v;
        best_px = px;
      }
    }
    if (!best) continue;
    const double depth = best->skeleton.joint(jid).position.z;
    const double size = part == wire::BodyPart::Face ? params.face_size_m : params.hand_size_m;
    const int side = static_cast<int>(std::lround(best->intrinsics.fx * size / depth));
    if (side < params.min_side_px) continue;
    const int x0 = static_cast<int>(std::lround(best_px.x - side / 2.0));
    const int y0 = static_cast<int>(std::lround(best_px.y - side / 2.0));
    const int cx0 = std::max(0, x0);
    const int cy0 = std::max(0, y0);
    const int cx1 = std::min(best->intrinsics.width, x0 + side);
    const int cy1 = std::min(best->intrinsics.height, y0 + side);
    if (cx1 <= cx0 || cy1 <= cy0) continue;

    CropRequest c;
    c.person_id = person_id;
    c.sensor_id = best->sensor_id;
    c.part = part;
    c.ts_us = ts_us;
    c.x0 = cx0;
    c.y0 = cy0;
    c.side = side;
    c.width = cx1 - cx0;
    c.height = cy1 - cy0;
    c.pixels = render_region(*best->colour, c.x0, c.y0, c.width, c.height);
    out.push_back(std::move(c));
  }
  return out;
}

// --- recognizers ----------------------------------------------------------------------------

InProcessRecognizer::InProcessRecognizer(transport::Handler handler) : handler_(std::move(handler)) {}

void InProcessRecognizer::submit(std::vector<wire::CropMessage> crops, std::int64_t) {
  for (const wire::CropMessage& crop : crops) {
    RecognitionOutcome o;
    o.key = wire::key_of(crop);
    const auto start = std::chrono::steady_clock::now();
    try {
      const wire::WireMessage reply = handler_({std::string(wire::kCropTopic), wire::encode(crop)});
      if (reply.topic == wire::kResultTopic) {
        o.result = wire::decode_result(reply.payload);
        if (wire::key_of(*o.result) != o.key) {
          o.result.reset();
          o.error = ErrorCode::SchemaViolation;
        }
      } else {
        o.error = ErrorCode::MalformedMessage;
      }
    } catch (const Error& e) {
      o.error = e.code();
    }
    o.latency = std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - start);
    done_.push_back(std::move(o));
  }
}

std::vector<RecognitionOutcome> InProcessRecognizer::collect() { return std::exchange(done_, {}); }

SocketRecognizer::SocketRecognizer(transport::Endpoint endpoint, std::chrono::milliseconds timeout,
                                   std::int64_t probe_interval_us)
    : client_(std::move(endpoint), timeout), probe_interval_us_(probe_interval_us) {}

void SocketRecognizer::submit(std::vector<wire::CropMessage> crops, std::int64_t now_us) {
  std::size_t allowed = crops.size();
  if (!reachable_) {
    if (last_probe_us_ != INT64_MIN && now_us - last_probe_us_ < probe_interval_us_) {
      allowed = 0;
    } else {
      allowed = std::min<std::size_t>(1, crops.size());
      last_probe_us_ = now_us;
    }
  }
  for (std::size_t i = 0; i < crops.size(); ++i) {
    if (i < allowed) {
      pending_.emplace_back(wire::key_of(crops[i]), client_.send(crops[i]));
    } else {
      ++skipped_;
      std::promise<transport::Outcome> p;
      transport::Outcome o;
      o.error = ErrorCode::ConnectionRefused;
      p.set_value(o);
      pending_.emplace_back(wire::key_of(crops[i]), p.get_future().share());
    }
  }
}

std::vector<RecognitionOutcome> SocketRecognizer::collect() {
  std::vector<RecognitionOutcome> out;
  out.reserve(pending_.size());
  for (auto& [key, future] : pending_) {
    const transport::Outcome& t = future.get();
    RecognitionOutcome o;
    o.key = key;
    o.result = t.result;
    o.error = t.error;
    o.latency = t.latency;
    out.push_back(std::move(o));
  }
  pending_.clear();
  // Reachability is judged from the sent requests only.
  bool any_sent = false;
  bool any_ok = false;
  for (const auto& o : out) {
    if (o.error == ErrorCode::ConnectionRefused && !reachable_) continue;
    any_sent = true;
    if (o.result) any_ok = true;
  }
  if (any_sent) reachable_ = any_ok;
  return out;
}

// --- identity -------------------------------------------------------------------------------

std::optional<std::uint64_t> IdentityRegistry::bound_to(const std::string& label) const {
  const auto it = by_label_.find(label);
  if (it == by_label_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::string> IdentityRegistry::label_of(std::uint64_t person_id) const {
  const auto it = by_person_.find(person_id);
  if (it == by_person_.end()) return std::nullopt;
  return it->second;
}

void IdentityRegistry::bind(const std::string& label, std::uint64_t person_id) {
  if (const auto old = by_label_.find(label); old != by_label_.end()) by_person_.erase(old->second);
  unbind(person_id);
  by_label_[label] = person_id;
  by_person_[person_id] = label;
}

void IdentityRegistry::unbind(std::uint64_t person_id) {
  const auto it = by_person_.find(person_id);
  if (it == by_person_.end()) return;
  by_label_.erase(it->second);
  by_person_.erase(it);
}

IdentityUpdate attach_identity(const MergedBody& body, const wire::ResultMessage& face_result,
                               IdentityRegistry& registry, std::span<const MergedBody> live,
                               const std::set<std::uint64_t>& retired) {
  IdentityUpdate up{body, std::nullopt, std::nullopt};
  if (face_result.part != wire::BodyPart::Face) return up;
  if (face_result.confidence < registry.threshold() || face_result.label == "unknown") return up;
  const std::string& label = face_result.label;
  const std::uint64_t p = body.person_id;

  const auto bound = registry.bound_to(label);
  if (bound && *bound != p) {
    const std::uint64_t q = *bound;
    const auto holder = std::find_if(live.begin(), live.end(), [&](const MergedBody& b) { return b.person_id == q; });
    if (holder != live.end()) {
      const double incumbent = holder->identity_label == label ? holder->identity_confidence.value_or(0.0) : 0.0;
      if (face_result.confidence <= incumbent) return up;
      up.reverted = q;
    } else if (retired.count(q)) {
      up.rebound_from = p;
      up.body.person_id = q;
      registry.unbind(p);
    } else {
      // The holder's track is unobserved but not yet retired; wait for it to expire.
      return up;
    }
  }
  registry.bind(label, up.body.person_id);
  up.body.identity_label = label;
  up.body.identity_confidence = face_result.confidence;
  return up;
}

// --- events ---------------------------------------------------------------------------------

namespace {

json vec(const Vec3& v) { return json::array({v.x, v.y, v.z}); }
json vec(const Vec2& v) { return json::array({v.x, v.y}); }

json target_json(const TargetField& t) {
  return {{"ts_us", t.ts_us},           {"screen", t.hit.screen_id}, {"uv", vec(t.hit.uv)},
          {"pixel", vec(t.hit.pixel)},  {"point", vec(t.hit.point)}, {"distance", t.hit.distance}};
}

json label_json(const LabelField& l) { return {{"ts_us", l.ts_us}, {"label", l.label}, {"confidence", l.confidence}}; }

Vec3 vec3_of(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }
Vec2 vec2_of(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

TargetField target_of(const json& j) {
  TargetField t;
  t.ts_us = j.at("ts_us").get<std::int64_t>();
  t.hit.screen_id = j.at("screen").get<std::string>();
  t.hit.uv = vec2_of(j.at("uv"));
  t.hit.pixel = vec2_of(j.at("pixel"));
  t.hit.point = vec3_of(j.at("point"));
  t.hit.distance = j.at("distance").get<double>();
  return t;
}

LabelField label_of(const json& j) {
  return {j.at("ts_us").get<std::int64_t>(), j.at("label").get<std::string>(), j.at("confidence").get<double>()};
}

}  // namespace

std::string to_json_line(const BehaviourEvent& e) {
  json j;
  j["person_id"] = e.person_id;
  j["ts_us"] = e.ts_us;
  j["position"] = vec(e.position);
  json contributors = json::array();
  for (const BodyRef& r : e.contributors) contributors.push_back(r.sensor_id + ":" + std::to_string(r.body_id));
  j["contributors"] = contributors;
  json pointing = json::object();
  if (e.left_pointing) pointing["left"] = target_json(*e.left_pointing);
  if (e.right_pointing) pointing["right"] = target_json(*e.right_pointing);
  j["pointing"] = pointing;
  if (e.gaze) j["gaze"] = target_json(*e.gaze);
  json gesture = json::object();
  if (e.left_gesture) gesture["left"] = label_json(*e.left_gesture);
  if (e.right_gesture) gesture["right"] = label_json(*e.right_gesture);
  j["gesture"] = gesture;
  if (e.identity) j["identity"] = label_json(*e.identity);
  return j.dump();
}

BehaviourEvent parse_event(const std::string& line) {
  try {
    const json j = json::parse(line);
    BehaviourEvent e;
    e.person_id = j.at("person_id").get<std::uint64_t>();
    e.ts_us = j.at("ts_us").get<std::int64_t>();
    e.position = vec3_of(j.at("position"));
    for (const auto& c : j.at("contributors")) {
      const std::string s = c.get<std::string>();
      const auto colon = s.rfind(':');
      if (colon == std::string::npos) throw Error(ErrorCode::ParseError, "bad contributor " + s);
      e.contributors.push_back({s.substr(0, colon), static_cast<std::uint32_t>(std::stoul(s.substr(colon + 1)))});
    }
    const json& pointing = j.at("pointing");
    if (pointing.contains("left")) e.left_pointing = target_of(pointing["left"]);
    if (pointing.contains("right")) e.right_pointing = target_of(pointing["right"]);
    if (j.contains("gaze")) e.gaze = target_of(j["gaze"]);
    const json& gesture = j.at("gesture");
    if (gesture.contains("left")) e.left_gesture = label_of(gesture["left"]);
    if (gesture.contains("right")) e.right_gesture = label_of(gesture["right"]);
    if (j.contains("identity")) e.identity = label_of(j["identity"]);
    return e;
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::ParseError, std::string("event: ") + ex.what());
  } catch (const std::logic_error& ex) {
    throw Error(ErrorCode::ParseError, std::string("event: ") + ex.what());
  }
}

void EventHash::add(const std::string& line) {
  for (const unsigned char c : line) {
    h_ ^= c;
    h_ *= 0x100000001b3ull;
  }
  h_ ^= static_cast<unsigned char>('\n');
  h_ *= 0x100000001b3ull;
}

std::string EventHash::hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h_));
  return buf;
}

// --- pipeline -------------------------------------------------------------------------------

Pipeline::Pipeline(PipelineConfig config, CalibrationSet calibration, Recognizer* recognizer,
                   std::optional<SceneModel> scene)
    : config_(std::move(config)),
      calibration_(std::move(calibration)),
      recognizer_(recognizer),
      scene_override_(std::move(scene)),
      sync_(config_.max_gap_us),
      tracker_(config_.tracker),
      registry_(config_.identity_threshold) {
  calibration_.validate();
  if (scene_override_) scene_ = *scene_override_;
}

void Pipeline::set_calibration(CalibrationSet calibration) {
  calibration.validate();
  calibration_ = std::move(calibration);
}

std::vector<TickOutput> Pipeline::push(const Envelope& env) {
  std::vector<TickOutput> out;
  if (env.stream == kMetaStream) {
    if (meta_) return out;
    meta_ = records::decode_meta(env.payload);
    if (!scene_override_) scene_ = meta_->scene;
    for (const SensorInfo& s : meta_->sensors) {
      if (!calibration_.main_from_sensor.count(s.id))
        throw Error(ErrorCode::PreconditionViolation, "sensor " + s.id + " is not calibrated");
      sync_.add_sensor(s.id);
    }
    next_tick_us_ = meta_->period_us;
    return out;
  }
  if (!meta_) throw Error(ErrorCode::PreconditionViolation, "envelope on " + env.stream + " before the session meta");

  last_time_us_ = std::max(last_time_us_, env.originating_time_us);
  while (next_tick_us_ + meta_->period_us <= env.originating_time_us) {
    out.push_back(process_tick(next_tick_us_));
    counters_.max_latency_us = std::max(counters_.max_latency_us, env.originating_time_us - next_tick_us_);
    next_tick_us_ += meta_->period_us;
  }

  const std::string& s = env.stream;
  if (s.rfind("skeletons/", 0) == 0) {
    SensorFrame frame = records::decode_sensor_frame(env.payload);
    const bool known = std::any_of(meta_->sensors.begin(), meta_->sensors.end(),
                                   [&](const SensorInfo& i) { return i.id == frame.sensor_id; });
    if (!known) {
      ++counters_.unknown_sensor_frames;
    } else if (!sync_.push(std::move(frame))) {
      ++counters_.late_frames;
    }
  } else if (s.rfind("color/", 0) == 0) {
    ColourFrame frame = records::decode_colour_frame(env.payload);
    auto& buf = colour_[frame.sensor_id];
    buf.push_back(std::move(frame));
    const std::int64_t keep_from = next_tick_us_ - 2 * meta_->period_us;
    while (buf.size() > 1 && buf[1].timestamp_us <= keep_from) buf.erase(buf.begin());
  } else if (s.rfind("depth/", 0) == 0) {
    if (on_cloud) on_cloud(s.substr(6), env.originating_time_us, deserialize_cloud(env.payload));
  }
  return out;
}

std::vector<TickOutput> Pipeline::finish() {
  std::vector<TickOutput> out;
  if (!meta_) return out;
  while (next_tick_us_ <= last_time_us_) {
    out.push_back(process_tick(next_tick_us_));
    next_tick_us_ += meta_->period_us;
  }
  if (recognizer_ && pending_recognition_) {
    recognizer_->collect();
    pending_recognition_ = false;
  }
  return out;
}

std::uint64_t Pipeline::resolve_alias(std::uint64_t id) const {
  for (int guard = 0; guard < 64; ++guard) {
    const auto it = alias_.find(id);
    if (it == alias_.end()) return id;
    id = it->second;
  }
  return id;
}

void Pipeline::join_results(std::int64_t tick_us, std::vector<MergedBody>& live) {
  if (!recognizer_ || !pending_recognition_) return;
  pending_recognition_ = false;
  std::vector<RecognitionOutcome> outcomes = recognizer_->collect();
  // Faces first so that hand results follow any re-binding.
  std::stable_sort(outcomes.begin(), outcomes.end(), [](const RecognitionOutcome& a, const RecognitionOutcome& b) {
    return (a.key.part == wire::BodyPart::Face) > (b.key.part == wire::BodyPart::Face);
  });
  const auto window = std::chrono::microseconds(config_.join_window_us);
  for (const RecognitionOutcome& o : outcomes) {
    if (o.error) {
      if (*o.error == ErrorCode::Timeout)
        ++counters_.recognition_timeouts;
      else
        ++counters_.recognition_errors;
      continue;
    }
    if (!o.result) continue;
    const wire::ResultMessage& r = *o.result;
    if (o.latency > window || tick_us - r.ts_us > config_.join_window_us) {
      ++counters_.results_late;
      continue;
    }
    ++counters_.results_joined;
    std::uint64_t pid = 0;
    try {
      pid = resolve_alias(std::stoull(r.person_id));
    } catch (const std::logic_error&) {
      ++counters_.recognition_errors;
      continue;
    }
    const auto body = std::find_if(live.begin(), live.end(), [&](const MergedBody& b) { return b.person_id == pid; });
    if (r.part != wire::BodyPart::Face) {
      recognized_[{pid, r.part}] = {r.ts_us, r.label, r.confidence};
      continue;
    }
    if (body == live.end()) continue;
    const IdentityUpdate up = attach_identity(*body, r, registry_, live, tracker_.retired_ids());
    if (up.reverted) {
      ++counters_.identity_conflicts;
      tracker_.set_identity(*up.reverted, std::nullopt, std::nullopt);
      identities_.erase(*up.reverted);
      for (MergedBody& b : live)
        if (b.person_id == *up.reverted) {
          b.identity_label.reset();
          b.identity_confidence.reset();
        }
    }
    if (up.rebound_from) {
      const std::uint64_t q = up.body.person_id;
      if (!tracker_.rebind(pid, q)) continue;
      ++counters_.identity_rebinds;
      alias_[pid] = q;
      for (const wire::BodyPart part : wire::kAllParts) {
        const auto it = recognized_.find({pid, part});
        if (it == recognized_.end()) continue;
        recognized_[{q, part}] = it->second;
        recognized_.erase(it);
      }
    }
    if (up.body.identity_label) {
      tracker_.set_identity(up.body.person_id, up.body.identity_label, up.body.identity_confidence);
      identities_[up.body.person_id] = {r.ts_us, *up.body.identity_label, *up.body.identity_confidence};
    }
    *body = up.body;
  }
}

TickOutput Pipeline::process_tick(std::int64_t tick_us) {
  TickOutput out;
  out.tick_us = tick_us;
  ++counters_.ticks;

  // Synchronize and move every sensor into the world frame.
  const auto synced = sync_.synchronize(tick_us);
  std::vector<std::string> sensor_ids;
  std::vector<std::vector<Skeleton>> groups;
  std::map<BodyRef, const Skeleton*> sensor_frame;
  for (const auto& [sensor_id, bodies] : synced) {
    if (!bodies || bodies->empty()) continue;
    const RigidTransform world_from_sensor = calibration_.world_from_sensor(sensor_id);
    std::vector<Skeleton> world;
    world.reserve(bodies->size());
    for (const Skeleton& s : *bodies) {
      sensor_frame[{sensor_id, s.body_id}] = &s;
      world.push_back(transformed(s, world_from_sensor, Frame::World));
    }
    sensor_ids.push_back(sensor_id);
    groups.push_back(std::move(world));
  }

  std::vector<MergedBody> candidates;
  for (const auto& set : match_skeletons(groups, config_.match_threshold_m)) {
    MergedBody m = merge(set, nullptr, config_.weights);
    m.timestamp_us = tick_us;
    candidates.push_back(std::move(m));
  }
  std::vector<MergedBody> live = tracker_.update(std::move(candidates), tick_us);

  join_results(tick_us, live);

  // Labels of retired tracks are kept only while their id may still be re-bound.
  for (auto it = identities_.begin(); it != identities_.end();) {
    if (!tracker_.is_live(it->first) && !tracker_.retired_ids().count(it->first))
      it = identities_.erase(it);
    else
      ++it;
  }

  std::sort(live.begin(), live.end(), [](const MergedBody& a, const MergedBody& b) { return a.person_id < b.person_id; });

  for (const MergedBody& body : live) {
    BehaviourEvent e;
    e.person_id = body.person_id;
    e.ts_us = tick_us;
    e.position = anchor_position(body).value_or(body.joint(JointId::Pelvis).position);
    e.contributors = body.contributors;
    const auto hit = [&](const std::optional<Ray>& ray) -> std::optional<TargetField> {
      if (!ray) return std::nullopt;
      const auto h = intersect_screens(*ray, scene_.screens);
      if (!h) return std::nullopt;
      return TargetField{tick_us, *h};
    };
    e.left_pointing = hit(pointing_ray(body, Side::Left, config_.pointing_mode));
    e.right_pointing = hit(pointing_ray(body, Side::Right, config_.pointing_mode));
    e.gaze = hit(gaze_ray(body));
    const auto gesture = [&](wire::BodyPart part) -> std::optional<LabelField> {
      const auto it = recognized_.find({body.person_id, part});
      if (it == recognized_.end()) return std::nullopt;
      const Recognized& r = it->second;
      if (tick_us - r.ts_us > config_.join_window_us || r.label == "unknown" || !(r.confidence > 0.0))
        return std::nullopt;
      return LabelField{r.ts_us, r.label, r.confidence};
    };
    e.left_gesture = gesture(wire::BodyPart::LeftHand);
    e.right_gesture = gesture(wire::BodyPart::RightHand);
    if (const auto it = identities_.find(body.person_id); it != identities_.end() && body.identity_label)
      e.identity = it->second;
    out.events.push_back(std::move(e));
  }
  counters_.events += out.events.size();

  // Stale recognition state of persons that are gone.
  for (auto it = recognized_.begin(); it != recognized_.end();) {
    if (!tracker_.is_live(it->first.first) || tick_us - it->second.ts_us > config_.join_window_us)
      it = recognized_.erase(it);
    else
      ++it;
  }

  // Crops for the next tick's join.
  if (recognizer_) {
    std::vector<wire::BodyPart> parts;
    if (config_.hand_crop_every > 0 && tick_index_ % static_cast<std::uint64_t>(config_.hand_crop_every) == 0) {
      parts.push_back(wire::BodyPart::LeftHand);
      parts.push_back(wire::BodyPart::RightHand);
    }
    if (config_.face_crop_every > 0 && tick_index_ % static_cast<std::uint64_t>(config_.face_crop_every) == 0)
      parts.push_back(wire::BodyPart::Face);
    std::vector<wire::CropMessage> messages;
    if (!parts.empty()) {
      for (const MergedBody& body : live) {
        std::vector<SensorView> views;
        for (const BodyRef& ref : body.contributors) {
          const auto sk = sensor_frame.find(ref);
          if (sk == sensor_frame.end()) continue;
          SensorView v;
          v.sensor_id = ref.sensor_id;
          v.intrinsics = meta_->sensor(ref.sensor_id).intrinsics;
          v.skeleton = *sk->second;
          const auto cf = colour_.find(ref.sensor_id);
          if (cf != colour_.end() && !cf->second.empty()) {
            const ColourFrame* best = nullptr;
            for (const ColourFrame& f : cf->second) {
              if (!best || std::llabs(f.timestamp_us - tick_us) < std::llabs(best->timestamp_us - tick_us)) best = &f;
            }
            v.colour = best;
          }
          views.push_back(std::move(v));
        }
        const auto crops = make_crops(body.person_id, tick_us, views, parts, config_.crops);
        counters_.crops_suppressed += parts.size() - crops.size();
        for (const CropRequest& c : crops) messages.push_back(c.message());
      }
    }
    counters_.crops_sent += messages.size();
    if (!messages.empty()) {
      recognizer_->submit(std::move(messages), tick_us);
      pending_recognition_ = true;
    }
  }
  ++tick_index_;

  out.bodies = std::move(live);
  return out;
}

std::vector<std::string> run_log(std::span<const Envelope> envelopes, const PipelineConfig& config,
                                 const CalibrationSet& calibration, Recognizer* recognizer,
                                 PipelineCounters* counters) {
  Pipeline pipeline(config, calibration, recognizer);
  std::vector<std::string> lines;
  const auto take = [&](const std::vector<TickOutput>& ticks) {
    for (const TickOutput& t : ticks)
      for (const BehaviourEvent& e : t.events) lines.push_back(to_json_line(e));
  };
  for (const Envelope& e : envelopes) take(pipeline.push(e));
  take(pipeline.finish());
  if (counters) *counters = pipeline.counters();
  return lines;
}

}  // namespace bodyfuse
