#include "bodyfuse/calibration.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <limits>

#include "bodyfuse/error.hpp"
#include "test_support.hpp"

namespace bodyfuse {
namespace {

using testing::expect_near;
using testing::expect_transform_near;
using testing::Rng;

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::InvalidArgument;
}

ScreenRect screen(std::string id, Vec3 origin, Vec3 u, Vec3 v, double w, double h) {
  ScreenRect s;
  s.screen_id = std::move(id);
  s.origin = origin;
  s.u_axis = u;
  s.v_axis = v;
  s.width = w;
  s.height = h;
  s.pixel_width = 1920;
  s.pixel_height = 1080;
  return s;
}

/// A front wall screen plus a side screen at a right angle.
SceneModel two_screen_scene() {
  SceneModel scene;
  scene.screens.push_back(screen("front", {0, 0, 0}, {1, 0, 0}, {0, 1, 0}, 2.0, 1.2));
  scene.screens.push_back(screen("side", {2.2, 0, 0.2}, {0, 0, 1}, {0, 1, 0}, 1.5, 1.2));
  return scene;
}

/// Cell-centred grid strictly inside every screen, so rounding never pushes a point off an edge.
PointCloud interior_grid(const SceneModel& scene, double pitch) {
  PointCloud out;
  for (const auto& s : scene.screens)
    for (double b = pitch / 2; b < s.height; b += pitch)
      for (double a = pitch / 2; a < s.width; a += pitch) out.points.push_back(s.origin + s.u_axis * a + s.v_axis * b);
  return out;
}

PointCloud in_sensor_frame(const PointCloud& world, const RigidTransform& world_from_sensor) {
  return transformed(world, world_from_sensor.inverse());
}

TEST(Residual, ExactOnPlaneIsZero) {
  const SceneModel scene = two_screen_scene();
  const RigidTransform pose{Quaternion::from_axis_angle({0, 1, 0}, M_PI), {1, 1, 3}};
  const PointCloud cloud = in_sensor_frame(interior_grid(scene, 0.05), pose);
  const auto r = alignment_residual(cloud, pose, scene);
  EXPECT_LT(r.rmse, 1e-12);
  EXPECT_EQ(r.sample_count, cloud.size());
}

TEST(Residual, NormalOffsetGivesOffset) {
  SceneModel scene;
  scene.screens.push_back(two_screen_scene().screens[0]);
  const RigidTransform pose{Quaternion::identity(), {0, 0, 3}};
  const PointCloud cloud = in_sensor_frame(interior_grid(scene, 0.05), pose);
  RigidTransform shifted = pose;
  shifted.translation.z += 0.05;
  const auto r = alignment_residual(cloud, shifted, scene);
  EXPECT_NEAR(r.rmse, 0.05, 1e-12);
}

TEST(Residual, NothingNearAScreenIsInfinite) {
  const SceneModel scene = two_screen_scene();
  const PointCloud cloud{{{10, 10, 10}}};
  const auto r = alignment_residual(cloud, RigidTransform::identity(), scene);
  EXPECT_EQ(r.sample_count, 0u);
  EXPECT_TRUE(std::isinf(r.rmse));
}

/// Direct recomputation: project every world point onto every screen by explicit dot
/// products and keep the closest qualifying plane.
AlignmentResidual residual_oracle(const PointCloud& cloud, const RigidTransform& pose, const SceneModel& scene,
                                  double band) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& p : cloud.points) {
    const Vec3 w = transform_point(pose, p);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& s : scene.screens) {
      const Vec3 rel = w - s.origin;
      const double a = dot(rel, s.u_axis), b = dot(rel, s.v_axis);
      const double d = std::abs(dot(rel, cross(s.u_axis, s.v_axis)));
      if (d <= band && a >= 0 && a <= s.width && b >= 0 && b <= s.height) best = std::min(best, d);
    }
    if (std::isfinite(best)) {
      sum += best * best;
      ++n;
    }
  }
  return {n == 0 ? std::numeric_limits<double>::infinity() : std::sqrt(sum / n), n};
}

TEST(Residual, AgreesWithDirectRecomputation) {
  Rng rng(101);
  const SceneModel scene = two_screen_scene();
  const RigidTransform truth{Quaternion::from_axis_angle({0, 1, 0}, M_PI), {1, 1, 3}};
  PointCloud world = sample_screens(scene, 0.04);
  for (auto& p : world.points) p += Vec3{rng.normal(0.01), rng.normal(0.01), rng.normal(0.01)};
  for (int i = 0; i < 500; ++i) world.points.push_back(rng.vec(-1, 3));
  const PointCloud cloud = in_sensor_frame(world, truth);
  for (int trial = 0; trial < 30; ++trial) {
    const RigidTransform pose = compose({rng.rotation(0.1), rng.vec(-0.1, 0.1)}, truth);
    const auto got = alignment_residual(cloud, pose, scene);
    const auto want = residual_oracle(cloud, pose, scene, kDefaultResidualBand);
    EXPECT_EQ(got.sample_count, want.sample_count);
    EXPECT_NEAR(got.rmse, want.rmse, 1e-12);
  }
}

TEST(Residual, InvariantUnderCommonRigidMotion) {
  Rng rng(102);
  const SceneModel scene = two_screen_scene();
  const RigidTransform pose{Quaternion::from_axis_angle({0, 1, 0}, M_PI), {1, 1, 3}};
  PointCloud world = sample_screens(scene, 0.05);
  for (auto& p : world.points) p += Vec3{rng.normal(0.02), rng.normal(0.02), rng.normal(0.02)};
  const PointCloud cloud = in_sensor_frame(world, pose);
  const auto base = alignment_residual(cloud, pose, scene);
  for (int trial = 0; trial < 10; ++trial) {
    const RigidTransform m = rng.transform();
    SceneModel moved = scene;
    for (auto& s : moved.screens) {
      s.origin = transform_point(m, s.origin);
      s.u_axis = m.rotation.rotate(s.u_axis);
      s.v_axis = m.rotation.rotate(s.v_axis);
    }
    const auto r = alignment_residual(cloud, compose(m, pose), moved);
    EXPECT_EQ(r.sample_count, base.sample_count);
    EXPECT_NEAR(r.rmse, base.rmse, 1e-9);
  }
}

TEST(Refine, PerfectInitStaysPut) {
  const SceneModel scene = two_screen_scene();
  const RigidTransform pose{Quaternion::from_axis_angle({0, 1, 0}, M_PI), {1, 1, 3}};
  const PointCloud cloud = in_sensor_frame(sample_screens(scene, kScreenSamplePitch), pose);
  const IcpResult r = refine_scene_pose(cloud, pose, scene);
  EXPECT_LT(transform_error(r.transform, pose).translation_m, 1e-6);
  EXPECT_LT(transform_error(r.transform, pose).rotation_deg, 1e-6);
}

TEST(Refine, SmallErrorReducesResidual) {
  Rng rng(103);
  const SceneModel scene = two_screen_scene();
  const RigidTransform truth{Quaternion::from_axis_angle({0, 1, 0}, M_PI), {1, 1, 3}};
  PointCloud world;
  // Sensor-style sampling: irregular points on the screens plus clutter away from them.
  for (const auto& s : scene.screens)
    for (int i = 0; i < 3000; ++i)
      world.points.push_back(s.origin + s.u_axis * rng.uniform(0, s.width) + s.v_axis * rng.uniform(0, s.height) +
                             Vec3{rng.normal(0.002), rng.normal(0.002), rng.normal(0.002)});
  for (int i = 0; i < 1000; ++i) world.points.push_back(Vec3{rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(0.5, 3)});
  const PointCloud cloud = in_sensor_frame(world, truth);
  for (int trial = 0; trial < 5; ++trial) {
    const RigidTransform off{Quaternion::from_axis_angle(rng.unit(), 2.0 * M_PI / 180.0), rng.unit() * 0.02};
    const RigidTransform init = compose(off, truth);
    const double before = alignment_residual(cloud, init, scene).rmse;
    const IcpResult r = refine_scene_pose(cloud, init, scene);
    const double after = alignment_residual(cloud, r.transform, scene).rmse;
    EXPECT_LT(after, before) << trial;
  }
}

TEST(Refine, GrosslyWrongInitRejected) {
  const SceneModel scene = two_screen_scene();
  const PointCloud cloud = sample_screens(scene, 0.1);
  const RigidTransform far{Quaternion::identity(), {50, 0, 0}};
  EXPECT_EQ(code_of([&] { refine_scene_pose(cloud, far, scene); }), ErrorCode::PreconditionViolation);
}

// --- person reference -------------------------------------------------------------------------

std::vector<Skeleton> walking_track(int frames, const std::string& sensor) {
  std::vector<Skeleton> track;
  for (int f = 0; f < frames; ++f) {
    Skeleton s;
    s.sensor_id = sensor;
    s.body_id = 1;
    s.timestamp_us = f * 33333;
    const Vec3 pelvis{-1.0 + 0.02 * f, 0.9 + 0.02 * std::sin(f * 0.3), 2.5 + 0.3 * std::sin(f * 0.05)};
    for (std::size_t j = 0; j < kJointCount; ++j)
      s.joints[j] = {pelvis + Vec3{0.2 * std::cos(j * 1.3 + f * 0.1), 0.05 * j, 0.1 * std::sin(j * 0.7)},
                     Confidence::High};
    track.push_back(s);
  }
  return track;
}

std::vector<Skeleton> seen_from(const std::vector<Skeleton>& track, const RigidTransform& b_from_a, std::string sensor) {
  std::vector<Skeleton> out;
  for (const auto& s : track) {
    Skeleton t = transformed(s, b_from_a, Frame::Sensor);
    t.sensor_id = sensor;
    out.push_back(t);
  }
  return out;
}

TEST(PersonReference, ExactTransformRecovered) {
  Rng rng(111);
  const auto a = walking_track(60, "a");
  for (int trial = 0; trial < 10; ++trial) {
    const RigidTransform a_from_b = rng.transform();
    const auto b = seen_from(a, a_from_b.inverse(), "b");
    expect_transform_near(person_reference_calibration(a, b), a_from_b, 1e-9);
  }
}

TEST(PersonReference, MutualInverses) {
  Rng rng(112);
  const auto a = walking_track(60, "a");
  const RigidTransform a_from_b = rng.transform();
  const auto b = seen_from(a, a_from_b.inverse(), "b");
  const RigidTransform ab = person_reference_calibration(a, b);
  const RigidTransform ba = person_reference_calibration(b, a);
  expect_transform_near(compose(ab, ba), RigidTransform::identity(), 1e-6);
}

TEST(PersonReference, InterpolatesOffsetTimestamps) {
  Rng rng(113);
  const auto a = walking_track(80, "a");
  const RigidTransform a_from_b = rng.transform();
  auto b = seen_from(a, a_from_b.inverse(), "b");
  // Sensor b samples half a frame later; joints move linearly enough that the fit stays tight.
  for (std::size_t i = 0; i + 1 < b.size(); ++i) {
    for (std::size_t j = 0; j < kJointCount; ++j)
      b[i].joints[j].position = (b[i].joints[j].position + b[i + 1].joints[j].position) * 0.5;
    b[i].timestamp_us += 16666;
  }
  b.pop_back();
  const auto err = transform_error(person_reference_calibration(a, b), a_from_b);
  EXPECT_LT(err.translation_m, 5e-3);
  EXPECT_LT(err.rotation_deg, 0.5);
}

TEST(PersonReference, Errors) {
  Rng rng(114);
  const auto a = walking_track(20, "a");
  EXPECT_EQ(code_of([&] { person_reference_calibration(a, a); }), ErrorCode::InsufficientOverlap);

  // Standing still with every joint on one vertical line.
  std::vector<Skeleton> still;
  for (int f = 0; f < 40; ++f) {
    Skeleton s;
    s.sensor_id = "a";
    s.body_id = 1;
    s.timestamp_us = f * 33333;
    for (std::size_t j = 0; j < kJointCount; ++j) s.joints[j] = {{0, 0.1 * j, 2}, Confidence::High};
    still.push_back(s);
  }
  EXPECT_EQ(code_of([&] { person_reference_calibration(still, still); }), ErrorCode::DegenerateConfiguration);

  auto low = walking_track(60, "a");
  for (auto& s : low)
    for (auto& j : s.joints) j.confidence = Confidence::Low;
  EXPECT_EQ(code_of([&] { person_reference_calibration(low, low); }), ErrorCode::InsufficientOverlap);
}

// --- calibration graph ----------------------------------------------------------------------

TEST(BuildCalibration, SingleSensor) {
  const std::vector<std::string> ids{"main"};
  const auto c = build_calibration("main", RigidTransform::identity(), {}, ids);
  ASSERT_EQ(c.main_from_sensor.size(), 1u);
  expect_transform_near(c.main_from_sensor.at("main"), RigidTransform::identity(), 0);
}

TEST(BuildCalibration, ChainComposes) {
  Rng rng(121);
  const RigidTransform t1 = rng.transform(), t2 = rng.transform();
  const std::vector<PairwiseCalibration> edges{{"main", "A", t1}, {"A", "B", t2}};
  const std::vector<std::string> ids{"main", "A", "B"};
  const auto c = build_calibration("main", RigidTransform::identity(), edges, ids);
  expect_transform_near(c.main_from_sensor.at("B"), compose(t1, t2), 1e-12);
}

TEST(BuildCalibration, EdgesReproducedAlongTree) {
  Rng rng(122);
  for (int trial = 0; trial < 20; ++trial) {
    // Random tree over 6 sensors with random edge orientation.
    std::vector<std::string> ids{"s0", "s1", "s2", "s3", "s4", "s5"};
    std::vector<PairwiseCalibration> edges;
    for (std::size_t i = 1; i < ids.size(); ++i) {
      const std::string parent = ids[static_cast<std::size_t>(rng.integer(0, static_cast<int>(i) - 1))];
      if (rng.integer(0, 1))
        edges.push_back({parent, ids[i], rng.transform()});
      else
        edges.push_back({ids[i], parent, rng.transform()});
    }
    const auto c = build_calibration("s0", rng.transform(), edges, ids);
    for (const auto& e : edges) {
      const RigidTransform via = compose(c.main_from_sensor.at(e.sensor_a).inverse(), c.main_from_sensor.at(e.sensor_b));
      expect_transform_near(via, e.a_from_b, 1e-9);
    }
  }
}

TEST(BuildCalibration, CycleAndDisconnected) {
  const RigidTransform id = RigidTransform::identity();
  const std::vector<PairwiseCalibration> cycle{{"main", "A", id}, {"A", "B", id}, {"B", "main", id}};
  const std::vector<std::string> ids{"main", "A", "B"};
  EXPECT_EQ(code_of([&] { build_calibration("main", id, cycle, ids); }), ErrorCode::AmbiguousPath);
  const std::vector<PairwiseCalibration> partial{{"main", "A", id}};
  EXPECT_EQ(code_of([&] { build_calibration("main", id, partial, ids); }), ErrorCode::DisconnectedSensor);
}

// --- persistence ----------------------------------------------------------------------------

class CalibrationFile : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("bodyfuse_calib_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::filesystem::path dir_;
};

TEST_F(CalibrationFile, RoundTrip) {
  Rng rng(131);
  CalibrationSet c;
  c.main_sensor_id = "kinect-0";
  c.world_from_main = rng.transform();
  c.created_at = "2024-05-01T10:00:00Z";
  c.main_from_sensor["kinect-0"] = RigidTransform::identity();
  c.main_from_sensor["kinect-1"] = rng.transform();
  c.main_from_sensor["kinect-2"] = rng.transform();
  c.residuals["kinect-1"] = 0.0123;
  const auto path = dir_ / "calib.yaml";
  save_calibration(c, path);
  const CalibrationSet back = load_calibration(path);
  EXPECT_EQ(back.main_sensor_id, c.main_sensor_id);
  EXPECT_EQ(back.created_at, c.created_at);
  expect_transform_near(back.world_from_main, c.world_from_main, 1e-12);
  ASSERT_EQ(back.main_from_sensor.size(), 3u);
  for (const auto& [id, t] : c.main_from_sensor) expect_transform_near(back.main_from_sensor.at(id), t, 1e-12);
  EXPECT_NEAR(back.residuals.at("kinect-1"), 0.0123, 1e-15);
}

TEST_F(CalibrationFile, NonUnitQuaternionRejected) {
  const std::string text = R"(format: bodyfuse-calibration
version: 1
main_sensor: a
sensors:
  a:
    main_from_sensor: {rotation: {w: 1, x: 0, y: 0, z: 0}, translation: {x: 0, y: 0, z: 0}}
  b:
    main_from_sensor: {rotation: {w: 0.9, x: 0.1, y: 0, z: 0}, translation: {x: 1, y: 0, z: 0}}
)";
  EXPECT_EQ(code_of([&] { parse_calibration(text); }), ErrorCode::InvariantViolation);
}

TEST_F(CalibrationFile, MinimalHandWrittenFile) {
  const auto path = dir_ / "min.yaml";
  std::ofstream(path) << "main_sensor: k0\nsensors:\n  k0:\n    main_from_sensor:\n"
                         "      rotation: {w: 1, x: 0, y: 0, z: 0}\n      translation: [0, 0, 0]\n";
  const CalibrationSet c = load_calibration(path);
  EXPECT_EQ(c.main_sensor_id, "k0");
  expect_transform_near(c.world_from_sensor("k0"), RigidTransform::identity(), 0);
}

TEST_F(CalibrationFile, MalformedYamlIsParseError) {
  EXPECT_EQ(code_of([] { parse_calibration("main_sensor: [unclosed"); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { parse_calibration("format: something-else\nmain_sensor: a\nsensors: {}\n"); }),
            ErrorCode::ParseError);
}

TEST_F(CalibrationFile, SceneRoundTrip) {
  const SceneModel scene = two_screen_scene();
  const auto path = dir_ / "scene.yaml";
  save_scene(scene, path);
  const SceneModel back = load_scene(path);
  ASSERT_EQ(back.screens.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back.screens[i].screen_id, scene.screens[i].screen_id);
    expect_near(back.screens[i].origin, scene.screens[i].origin, 0);
    expect_near(back.screens[i].u_axis, scene.screens[i].u_axis, 0);
    EXPECT_EQ(back.screens[i].width, scene.screens[i].width);
    EXPECT_EQ(back.screens[i].pixel_height, scene.screens[i].pixel_height);
  }
}

}  // namespace
}  // namespace bodyfuse
