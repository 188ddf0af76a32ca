#include "bodyfuse/pipeline.hpp"

#include <gtest/gtest.h>

#include <set>

#include "bodyfuse/error.hpp"
#include "bodyfuse/evaluation.hpp"
#include "bodyfuse/simsensor.hpp"
#include "bodyfuse/stub_recognizer.hpp"
#include "test_support.hpp"

namespace bodyfuse {
namespace {

const std::string kScenarios = BODYFUSE_SCENARIO_DIR;

MergedBody body_from(const std::array<Vec3, kJointCount>& joints, Confidence c = Confidence::High) {
  MergedBody b;
  b.person_id = 1;
  for (std::size_t i = 0; i < kJointCount; ++i) b.joints[i] = {joints[i], c};
  return b;
}

MergedBody canonical_body(double facing_deg = 0.0) {
  sim::ScriptPerson p;
  p.name = "p";
  p.path = {{0.0, {1.0, -0.1, 2.0}, facing_deg}};
  return body_from(sim::person_state(p, {}, 0.0).joints);
}

// --- rays -----------------------------------------------------------------------------------

TEST(PointingRay, ElbowToHand) {
  MergedBody b;
  b.joints[index_of(JointId::RightElbow)] = {{0, 0, 1}, Confidence::High};
  b.joints[index_of(JointId::RightHand)] = {{0, 0, 2}, Confidence::Medium};
  const auto ray = pointing_ray(b, Side::Right);
  ASSERT_TRUE(ray);
  testing::expect_near(ray->origin(), {0, 0, 1}, 1e-15);
  testing::expect_near(ray->direction(), {0, 0, 1}, 1e-15);
  EXPECT_FALSE(pointing_ray(b, Side::Left));
}

TEST(PointingRay, LowConfidenceElbowIsAbsent) {
  MergedBody b;
  b.joints[index_of(JointId::LeftElbow)] = {{0, 0, 1}, Confidence::Low};
  b.joints[index_of(JointId::LeftHand)] = {{0, 0, 2}, Confidence::High};
  EXPECT_FALSE(pointing_ray(b, Side::Left));
}

TEST(PointingRay, HeadHandMode) {
  MergedBody b;
  b.joints[index_of(JointId::Head)] = {{0, 1, 0}, Confidence::High};
  b.joints[index_of(JointId::LeftElbow)] = {{5, 5, 5}, Confidence::None};
  b.joints[index_of(JointId::LeftHand)] = {{1, 1, 0}, Confidence::High};
  const auto ray = pointing_ray(b, Side::Left, PointingMode::HeadHand);
  ASSERT_TRUE(ray);
  testing::expect_near(ray->origin(), {0, 1, 0}, 1e-15);
  testing::expect_near(ray->direction(), {1, 0, 0}, 1e-15);
  EXPECT_FALSE(pointing_ray(b, Side::Left, PointingMode::ElbowHand));
}

TEST(GazeRay, CanonicalPoseHitsScriptedTarget) {
  const SceneModel scene = load_scene(kScenarios + "/scene.yaml");
  for (const double facing : {0.0, 10.0, -20.0}) {
    sim::ScriptPerson p;
    p.name = "p";
    p.path = {{0.0, {1.0, -0.1, 2.0}, facing}};
    const sim::PersonState st = sim::person_state(p, scene, 0.0);
    const auto truth = sim::true_gaze(st, scene);
    ASSERT_TRUE(truth);
    const auto ray = gaze_ray(body_from(st.joints));
    ASSERT_TRUE(ray);
    const auto hit = intersect_screens(*ray, scene.screens);
    ASSERT_TRUE(hit);
    EXPECT_EQ(hit->screen_id, truth->screen_id);
    EXPECT_LT(distance(hit->point, truth->point), 0.10);
    EXPECT_LT(distance(hit->point, truth->point), 1e-9);
  }
}

TEST(GazeRay, MissingShoulderIsAbsent) {
  MergedBody b = canonical_body();
  ASSERT_TRUE(gaze_ray(b));
  b.joints[index_of(JointId::LeftShoulder)].confidence = Confidence::None;
  EXPECT_FALSE(gaze_ray(b));
}

TEST(GazeRay, RigidMotionEquivariance) {
  testing::Rng rng(5);
  const MergedBody b = canonical_body(15.0);
  const Ray base = *gaze_ray(b);
  for (int i = 0; i < 200; ++i) {
    const RigidTransform t = rng.transform();
    MergedBody moved = b;
    for (auto& j : moved.joints) j.position = transform_point(t, j.position);
    const auto ray = gaze_ray(moved);
    ASSERT_TRUE(ray);
    const Ray expect = transform_ray(t, base);
    testing::expect_near(ray->origin(), expect.origin(), 1e-9);
    testing::expect_near(ray->direction(), expect.direction(), 1e-9);
  }
}

// --- crops ----------------------------------------------------------------------------------

SensorView view_at(const std::string& id, const Vec3& head, const ColourFrame* colour, double fx = 500.0) {
  SensorView v;
  v.sensor_id = id;
  v.intrinsics = {fx, fx, 320, 240, 640, 480};
  v.skeleton.sensor_id = id;
  v.skeleton.joint(JointId::Head) = {head, Confidence::High};
  v.skeleton.joint(JointId::LeftHand) = {head + Vec3{0.2, 0.1, 0.0}, Confidence::High};
  v.colour = colour;
  return v;
}

TEST(MakeCrops, SideFollowsFormula) {
  const ColourFrame frame{"k0", 0, 640, 480, {}};
  const SensorView v = view_at("k0", {0, 0, 1.0}, &frame);
  const wire::BodyPart face[] = {wire::BodyPart::Face};
  const auto crops = make_crops(7, 1000, std::span(&v, 1), face);
  ASSERT_EQ(crops.size(), 1u);
  EXPECT_EQ(crops[0].side, 125);
  EXPECT_EQ(crops[0].width, 125);
  EXPECT_EQ(crops[0].height, 125);
  EXPECT_EQ(crops[0].x0, static_cast<int>(std::lround(320 - 62.5)));
  EXPECT_EQ(crops[0].pixels.size(), 125u * 125u * 4u);
  const wire::CropMessage m = crops[0].message();
  EXPECT_EQ(m.person_id, "7");
  EXPECT_EQ(m.ts_us, 1000);
  EXPECT_NO_THROW(m.validate());

  const wire::BodyPart hand[] = {wire::BodyPart::LeftHand};
  const auto h = make_crops(7, 1000, std::span(&v, 1), hand);
  ASSERT_EQ(h.size(), 1u);
  EXPECT_EQ(h[0].side, 150);
}

TEST(MakeCrops, BehindCameraViewIsSkipped) {
  const ColourFrame frame{"k", 0, 640, 480, {}};
  const SensorView views[] = {view_at("k0", {0, 0, -1.0}, &frame), view_at("k1", {0, 0, 2.0}, &frame)};
  const wire::BodyPart face[] = {wire::BodyPart::Face};
  const auto crops = make_crops(1, 0, views, face);
  ASSERT_EQ(crops.size(), 1u);
  EXPECT_EQ(crops[0].sensor_id, "k1");
  EXPECT_TRUE(make_crops(1, 0, std::span(views, 1), face).empty());
}

TEST(MakeCrops, ClosestSensorWins) {
  const ColourFrame frame{"k", 0, 640, 480, {}};
  const SensorView views[] = {view_at("far", {0.1, 0, 2.0}, &frame), view_at("near", {0.1, 0, 1.0}, &frame)};
  const wire::BodyPart hand[] = {wire::BodyPart::LeftHand};
  const auto crops = make_crops(1, 0, views, hand);
  ASSERT_EQ(crops.size(), 1u);
  EXPECT_EQ(crops[0].sensor_id, "near");
}

TEST(MakeCrops, SuppressionAndClipping) {
  const ColourFrame frame{"k", 0, 640, 480, {}};
  const wire::BodyPart face[] = {wire::BodyPart::Face};
  // 500 * 0.25 / 8 = 15.6 -> 16 px is kept; at 9 m it is 14 px and suppressed.
  SensorView v = view_at("k", {0, 0, 8.0}, &frame);
  EXPECT_EQ(make_crops(1, 0, std::span(&v, 1), face).size(), 1u);
  v = view_at("k", {0, 0, 9.0}, &frame);
  EXPECT_TRUE(make_crops(1, 0, std::span(&v, 1), face).empty());

  v = view_at("k", {0, 0, 1.0}, &frame);
  v.skeleton.joint(JointId::Head).confidence = Confidence::Low;
  EXPECT_TRUE(make_crops(1, 0, std::span(&v, 1), face).empty());

  v = view_at("k", {0, 0, 1.0}, nullptr);
  EXPECT_TRUE(make_crops(1, 0, std::span(&v, 1), face).empty());

  // Head projecting to column 10: the region is clipped at the left border.
  v = view_at("k", {(10.0 - 320.0) / 500.0, 0, 1.0}, &frame);
  const auto c = make_crops(1, 0, std::span(&v, 1), face);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0].x0, 0);
  EXPECT_EQ(c[0].side, 125);
  EXPECT_EQ(c[0].width, static_cast<int>(std::lround(10 - 62.5)) + 125);
  EXPECT_EQ(c[0].height, 125);
  EXPECT_EQ(c[0].pixels.size(), static_cast<std::size_t>(c[0].width * c[0].height * 4));
}

TEST(MakeCrops, CropCarriesTheTag) {
  ColourFrame frame{"k", 0, 640, 480, {}};
  frame.tags.push_back({320.0, 240.0, "alice"});
  const SensorView v = view_at("k", {0.001, -0.002, 1.0}, &frame);
  const wire::BodyPart face[] = {wire::BodyPart::Face};
  const auto c = make_crops(1, 0, std::span(&v, 1), face);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(stub::decode_tag(c[0].pixels, c[0].width, c[0].height), "alice");
}

// --- identity -------------------------------------------------------------------------------

wire::ResultMessage face(const std::string& label, double confidence) {
  return {0, "1", wire::BodyPart::Face, label, confidence};
}

MergedBody person(std::uint64_t id) {
  MergedBody b;
  b.person_id = id;
  return b;
}

TEST(Identity, UniqueLabelAttaches) {
  IdentityRegistry reg;
  const MergedBody b = person(1);
  const auto up = attach_identity(b, face("alice", 1.0), reg, std::span(&b, 1), {});
  EXPECT_EQ(up.body.identity_label, "alice");
  EXPECT_EQ(up.body.identity_confidence, 1.0);
  EXPECT_EQ(reg.bound_to("alice"), 1u);
  EXPECT_FALSE(up.rebound_from);
  EXPECT_FALSE(up.reverted);
}

TEST(Identity, BelowThresholdIsIgnored) {
  IdentityRegistry reg(0.8);
  const MergedBody b = person(1);
  const auto up = attach_identity(b, face("alice", 0.5), reg, std::span(&b, 1), {});
  EXPECT_FALSE(up.body.identity_label);
  EXPECT_FALSE(reg.bound_to("alice"));
  EXPECT_FALSE(attach_identity(b, face("unknown", 1.0), reg, std::span(&b, 1), {}).body.identity_label);
}

TEST(Identity, ConflictGoesToHigherConfidence) {
  IdentityRegistry reg(0.8);
  std::vector<MergedBody> live = {person(1), person(2)};
  live[0] = attach_identity(live[0], face("alice", 0.85), reg, live, {}).body;

  // Equal confidence keeps the incumbent.
  auto up = attach_identity(live[1], face("alice", 0.85), reg, live, {});
  EXPECT_FALSE(up.body.identity_label);
  EXPECT_FALSE(up.reverted);
  EXPECT_EQ(reg.bound_to("alice"), 1u);

  up = attach_identity(live[1], face("alice", 0.95), reg, live, {});
  EXPECT_EQ(up.body.identity_label, "alice");
  EXPECT_EQ(up.reverted, 1u);
  EXPECT_EQ(reg.bound_to("alice"), 2u);
  EXPECT_FALSE(reg.label_of(1));
}

TEST(Identity, ReturningPersonRebindsToRetiredId) {
  IdentityRegistry reg;
  const MergedBody old = person(1);
  attach_identity(old, face("alice", 1.0), reg, std::span(&old, 1), {});

  const MergedBody fresh = person(5);
  // While the old track is neither live nor retired nothing changes.
  auto up = attach_identity(fresh, face("alice", 1.0), reg, std::span(&fresh, 1), {});
  EXPECT_FALSE(up.body.identity_label);

  up = attach_identity(fresh, face("alice", 1.0), reg, std::span(&fresh, 1), {1});
  EXPECT_EQ(up.body.person_id, 1u);
  EXPECT_EQ(up.rebound_from, 5u);
  EXPECT_EQ(up.body.identity_label, "alice");
  EXPECT_EQ(reg.bound_to("alice"), 1u);
}

TEST(Identity, RelabelDropsTheOldBinding) {
  IdentityRegistry reg;
  const MergedBody b = person(3);
  attach_identity(b, face("alice", 1.0), reg, std::span(&b, 1), {});
  attach_identity(b, face("bob", 1.0), reg, std::span(&b, 1), {});
  EXPECT_FALSE(reg.bound_to("alice"));
  EXPECT_EQ(reg.bound_to("bob"), 3u);
  EXPECT_EQ(reg.label_of(3), "bob");
}

// --- events ---------------------------------------------------------------------------------

TEST(Events, JsonRoundTrip) {
  BehaviourEvent e;
  e.person_id = 42;
  e.ts_us = 1'000'000;
  e.position = {1.25, -0.1, 2.0};
  e.contributors = {{"k0", 3}, {"k1", 1}};
  e.right_pointing = TargetField{1'000'000, {"left", {0.3, 0.6}, {576.5, 432.25}, {0.6, 0.72, 0.0}, 2.5}};
  e.gaze = TargetField{1'000'000, {"right", {0.1, 0.2}, {10, 20}, {2.1, 0.3, 0.05}, 3.0}};
  e.left_gesture = LabelField{966'667, "wave", 1.0};
  e.identity = LabelField{500'000, "alice", 0.9};

  const std::string line = to_json_line(e);
  EXPECT_EQ(line.find('\n'), std::string::npos);
  const BehaviourEvent back = parse_event(line);
  EXPECT_EQ(to_json_line(back), line);
  EXPECT_EQ(back.person_id, 42u);
  ASSERT_EQ(back.contributors.size(), 2u);
  EXPECT_EQ(back.contributors[1].sensor_id, "k1");
  EXPECT_FALSE(back.left_pointing);
  ASSERT_TRUE(back.right_pointing);
  EXPECT_EQ(back.right_pointing->hit.point, e.right_pointing->hit.point);
  EXPECT_EQ(back.left_gesture->label, "wave");
  EXPECT_FALSE(back.right_gesture);

  EXPECT_THROW(parse_event("{\"person_id\": 1}"), Error);
  EXPECT_THROW(parse_event("not json"), Error);
}

TEST(Events, HashIsFnv1aOverLines) {
  EventHash h;
  h.add("hello");
  EXPECT_EQ(h.value(), 0xa9bc80cca21f28b3ull);
  EXPECT_EQ(h.hex(), "a9bc80cca21f28b3");
  EXPECT_EQ(EventHash().hex(), "cbf29ce484222325");
}

// --- pipeline -------------------------------------------------------------------------------

struct SimRun {
  eval::SessionTruth truth;
  CalibrationSet calib;
  std::vector<Envelope> envelopes;
};

SimRun simulate(const sim::ScenarioScript& script) {
  SimRun r;
  r.envelopes = sim::run_scenario(script).envelopes;
  r.truth = eval::load_truth(r.envelopes);
  r.calib = eval::truth_calibration(r.truth);
  return r;
}

SimRun simulate(const std::string& name) { return simulate(sim::load_script(kScenarios + "/" + name + ".yaml")); }

std::vector<BehaviourEvent> parse_all(const std::vector<std::string>& lines) {
  std::vector<BehaviourEvent> out;
  for (const auto& l : lines) out.push_back(parse_event(l));
  return out;
}

TEST(Pipeline, OcclusionThreeBodiesEveryTick) {
  const SimRun r = simulate("occlusion");
  Pipeline p({}, r.calib);
  std::vector<TickOutput> ticks;
  for (const Envelope& e : r.envelopes)
    for (auto& t : p.push(e)) ticks.push_back(std::move(t));
  for (auto& t : p.finish()) ticks.push_back(std::move(t));
  ASSERT_EQ(ticks.size(), 900u);

  std::size_t single = 0;
  for (const TickOutput& t : ticks) {
    ASSERT_EQ(t.bodies.size(), 3u) << "tick " << t.tick_us;
    ASSERT_EQ(t.events.size(), 3u);
    // Every event refers to a body tracked at that tick.
    std::set<std::uint64_t> ids;
    for (const auto& b : t.bodies) ids.insert(b.person_id);
    for (const auto& e : t.events) {
      EXPECT_TRUE(ids.count(e.person_id));
      EXPECT_EQ(e.ts_us, t.tick_us);
    }
    const auto& tf = r.truth.frames.at(t.tick_us);
    for (const auto& tp : tf.persons) {
      if (tp.visible_to.size() != 1) continue;
      // The body closest to the single-sensor person has exactly one contributor.
      const MergedBody* best = nullptr;
      for (const auto& b : t.bodies)
        if (!best || distance(*anchor_position(b), tp.joint(JointId::Pelvis)) <
                         distance(*anchor_position(*best), tp.joint(JointId::Pelvis)))
          best = &b;
      EXPECT_EQ(best->contributors.size(), 1u);
      ++single;
    }
  }
  EXPECT_GE(single, 900u);
  EXPECT_LT(p.counters().max_latency_us, 2 * r.truth.meta.period_us);
  EXPECT_EQ(p.counters().late_frames, 0u);
}

TEST(Pipeline, ZeroPersonsZeroEvents) {
  sim::ScenarioScript s = sim::load_script(kScenarios + "/occlusion.yaml");
  s.persons.clear();
  s.duration_s = 2.0;
  const SimRun r = simulate(s);
  InProcessRecognizer rec(stub::handle);
  PipelineCounters c;
  EXPECT_TRUE(run_log(r.envelopes, {}, r.calib, &rec, &c).empty());
  EXPECT_EQ(c.ticks, 60u);
  EXPECT_EQ(c.crops_sent, 0u);
}

TEST(Pipeline, RejectsUncalibratedSensorAndMissingMeta) {
  const SimRun r = simulate("calib2");
  CalibrationSet partial = r.calib;
  partial.main_from_sensor.erase("k1");
  Pipeline p({}, partial);
  EXPECT_THROW(p.push(r.envelopes.front()), Error);

  Pipeline q({}, r.calib);
  ASSERT_NE(r.envelopes.back().stream, kMetaStream);
  EXPECT_THROW(q.push(r.envelopes.back()), Error);
}

TEST(Pipeline, ReplayIsDeterministicAndMatchesTheStore) {
  const sim::ScenarioScript script = sim::load_script(kScenarios + "/attribution.yaml");
  const SimRun r = simulate(script);
  InProcessRecognizer a(stub::handle), b(stub::handle);
  const auto first = run_log(r.envelopes, {}, r.calib, &a);
  const auto second = run_log(r.envelopes, {}, r.calib, &b);
  ASSERT_FALSE(first.empty());
  EXPECT_EQ(first, second);

  const auto dir = std::filesystem::temp_directory_path() / "bodyfuse_pipeline_store";
  sim::simulate_to_store(script, dir);
  const auto stored = SessionReader(dir).read_all();
  InProcessRecognizer c(stub::handle);
  EXPECT_EQ(run_log(stored, {}, r.calib, &c), first);
  std::filesystem::remove_all(dir);
}

TEST(Pipeline, AttributionThroughTheStub) {
  const SimRun r = simulate("attribution");
  InProcessRecognizer rec(stub::handle);
  PipelineCounters c;
  const auto events = parse_all(run_log(r.envelopes, {}, r.calib, &rec, &c));
  const auto report = eval::evaluate(r.truth, events);
  EXPECT_GT(report.gesture_labels, 500u);
  EXPECT_EQ(report.gesture_correct, report.gesture_labels);
  EXPECT_EQ(report.gesture_wrong_person, 0u);
  EXPECT_EQ(report.identity_swaps, 0u);
  EXPECT_EQ(report.identity_correct, report.identity_labels);
  EXPECT_GT(c.results_joined, 0u);
  EXPECT_EQ(c.results_late, 0u);
  // Populated fields carry tick timestamps within the join window.
  for (const auto& e : events) {
    for (const auto* f : {&e.left_gesture, &e.right_gesture}) {
      if (!*f) continue;
      EXPECT_LE(e.ts_us - (*f)->ts_us, 500'000);
      EXPECT_EQ((*f)->ts_us % r.truth.meta.period_us, 0);
    }
    if (e.right_pointing) {
      EXPECT_EQ(e.right_pointing->ts_us, e.ts_us);
    }
  }
}

TEST(Pipeline, PointingAccuracyGrowsWithNoise) {
  sim::ScenarioScript s = sim::load_script(kScenarios + "/pointing.yaml");
  double last = -1.0;
  for (const double sigma : {0.0, 0.001, 0.002, 0.004}) {
    s.joint_sigma = sigma;
    const SimRun r = simulate(s);
    const auto report = eval::evaluate(r.truth, parse_all(run_log(r.envelopes, {}, r.calib)));
    ASSERT_GT(report.pointing_error_m.count, 300u);
    EXPECT_EQ(report.pointing_missing, 0u);
    if (sigma == 0.0) {
      EXPECT_LT(report.pointing_error_m.max, 1e-9);
    }
    EXPECT_GT(report.pointing_error_m.p95, last);
    last = report.pointing_error_m.p95;
  }
}

TEST(Pipeline, ReturningPersonGetsItsIdBack) {
  const SimRun r = simulate("reentry");
  InProcessRecognizer rec(stub::handle);
  PipelineCounters c;
  const auto events = parse_all(run_log(r.envelopes, {}, r.calib, &rec, &c));
  EXPECT_EQ(c.identity_rebinds, 1u);
  std::uint64_t alice_before = 0;
  std::uint64_t alice_after = 0;
  for (const auto& e : events) {
    if (!e.identity || e.identity->label != "alice") continue;
    (e.ts_us < 6'000'000 ? alice_before : alice_after) = e.person_id;
  }
  EXPECT_NE(alice_before, 0u);
  EXPECT_EQ(alice_after, alice_before);
  // After re-binding, the returning person keeps the original id to the end.
  const auto report = eval::evaluate(r.truth, events);
  EXPECT_EQ(report.person_ids.at("a").front(), alice_before);
  EXPECT_LE(report.identity_swaps, 2u);
  std::uint64_t last_a = 0;
  for (const auto& e : events)
    if (e.ts_us > 15'000'000 && distance(e.position, {1.5, -0.1, 2.2}) < 0.3) last_a = e.person_id;
  EXPECT_EQ(last_a, alice_before);
}

sim::ScenarioScript short_attribution(double seconds) {
  sim::ScenarioScript s = sim::load_script(kScenarios + "/attribution.yaml");
  s.duration_s = seconds;
  return s;
}

TEST(Pipeline, SocketAndInProcessAgree) {
  const SimRun r = simulate(short_attribution(6.0));
  transport::RequestServer server({"127.0.0.1", 0}, stub::handle);
  SocketRecognizer sock({"127.0.0.1", server.port()});
  InProcessRecognizer local(stub::handle);
  const auto a = run_log(r.envelopes, {}, r.calib, &sock);
  const auto b = run_log(r.envelopes, {}, r.calib, &local);
  EXPECT_EQ(a, b);
  EXPECT_GT(server.requests_served(), 0u);
}

TEST(Pipeline, RecognizerLossDegradesGracefully) {
  const SimRun r = simulate(short_attribution(6.0));
  auto server = std::make_unique<transport::RequestServer>(transport::Endpoint{"127.0.0.1", 0}, stub::handle);
  SocketRecognizer rec({"127.0.0.1", server->port()});
  Pipeline p({}, r.calib, &rec);
  std::vector<BehaviourEvent> events;
  for (const Envelope& e : r.envelopes) {
    if (server && e.originating_time_us >= 3'000'000) server.reset();
    for (auto& t : p.push(e))
      for (auto& ev : t.events) events.push_back(std::move(ev));
  }
  for (auto& t : p.finish())
    for (auto& ev : t.events) events.push_back(std::move(ev));

  std::size_t labelled_late = 0;
  std::size_t after = 0;
  for (const auto& e : events) {
    if (e.ts_us < 3'600'000) continue;
    ++after;
    if (e.left_gesture || e.right_gesture) ++labelled_late;
  }
  EXPECT_GT(after, 2 * 60u);
  EXPECT_EQ(labelled_late, 0u);
  EXPECT_GT(p.counters().recognition_errors + p.counters().recognition_timeouts, 0u);
  EXPECT_GT(rec.skipped(), 0u);
}

TEST(Pipeline, RepliesPastTheJoinWindowAreDropped) {
  const SimRun r = simulate(short_attribution(0.4));
  transport::ServerOptions slow;
  slow.reply_delay = std::chrono::milliseconds(650);
  transport::RequestServer server({"127.0.0.1", 0}, stub::handle, slow);
  SocketRecognizer rec({"127.0.0.1", server.port()}, std::chrono::milliseconds(1500));
  PipelineCounters c;
  const auto events = parse_all(run_log(r.envelopes, {}, r.calib, &rec, &c));
  EXPECT_FALSE(events.empty());
  EXPECT_GT(c.results_late, 0u);
  EXPECT_EQ(c.results_joined, 0u);
  for (const auto& e : events) {
    EXPECT_FALSE(e.left_gesture);
    EXPECT_FALSE(e.right_gesture);
    EXPECT_FALSE(e.identity);
  }
}

TEST(Pipeline, DepthCloudsReachTheObserver) {
  const SimRun r = simulate(short_attribution(2.0));
  Pipeline p({}, r.calib);
  std::map<std::string, int> clouds;
  p.on_cloud = [&](const std::string& id, std::int64_t, const PointCloud& c) {
    EXPECT_FALSE(c.points.empty());
    ++clouds[id];
  };
  for (const Envelope& e : r.envelopes) p.push(e);
  EXPECT_GT(clouds["k0"], 0);
  EXPECT_GT(clouds["k1"], 0);
}

}  // namespace
}  // namespace bodyfuse
