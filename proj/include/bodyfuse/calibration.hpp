#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "bodyfuse/geometry.hpp"
#include "bodyfuse/pointcloud.hpp"
#include "bodyfuse/skeleton.hpp"

namespace bodyfuse {

/// Screens in the world frame, whose origin is the bottom-left corner of the first screen.
struct SceneModel {
  std::vector<ScreenRect> screens;

  /// Throws InvariantViolation for an empty scene, duplicate ids or malformed screens.
  void validate() const;
};

struct CalibrationSet {
  std::string main_sensor_id;
  RigidTransform world_from_main;
  std::map<std::string, RigidTransform> main_from_sensor;
  std::string created_at;  // ISO-8601 UTC
  std::map<std::string, double> residuals;  // metres

  RigidTransform world_from_sensor(const std::string& sensor_id) const;
  void validate() const;
};

struct AlignmentResidual {
  double rmse = 0.0;  // +inf when sample_count == 0
  std::size_t sample_count = 0;
};

inline constexpr double kDefaultResidualBand = 0.15;

/// RMSE of point-to-plane distances for the cloud points (moved into the world by
/// `world_from_sensor`) that lie within `band` of a screen plane and inside its rectangle.
AlignmentResidual alignment_residual(const PointCloud& cloud, const RigidTransform& world_from_sensor,
                                     const SceneModel& scene, double band = kDefaultResidualBand);

/// Regular grid over every screen rectangle, edges included.
PointCloud sample_screens(const SceneModel& scene, double pitch);

inline constexpr double kScreenSamplePitch = 0.02;

/// ICP of the near-screen part of the cloud against a 2 cm sampling of the screens.
/// Throws PreconditionViolation when the initial residual is infinite.
IcpResult refine_scene_pose(const PointCloud& cloud, const RigidTransform& init, const SceneModel& scene,
                            const IcpParams& params = {}, double band = kDefaultResidualBand);

struct PersonReferenceParams {
  std::size_t min_samples = 30;
  std::int64_t max_gap_us = kDefaultMaxGapUs;
};

/// Uses a single tracked person seen by two sensors as a moving calibration target. Returns
/// a_from_b. Throws InsufficientOverlap or DegenerateConfiguration.
RigidTransform person_reference_calibration(std::span<const Skeleton> track_a, std::span<const Skeleton> track_b,
                                            const PersonReferenceParams& params = {});

struct PairwiseCalibration {
  std::string sensor_a;
  std::string sensor_b;
  RigidTransform a_from_b;
};

/// Chains pairwise edges to the main sensor. The edges must form a tree spanning `sensor_ids`.
/// Throws DisconnectedSensor or AmbiguousPath.
CalibrationSet build_calibration(const std::string& main_sensor_id, const RigidTransform& world_from_main,
                                 std::span<const PairwiseCalibration> pairwise,
                                 std::span<const std::string> sensor_ids);

/// Throws IoError.
void save_calibration(const CalibrationSet& calib, const std::filesystem::path& path);
/// Throws ParseError or InvariantViolation.
CalibrationSet load_calibration(const std::filesystem::path& path);
CalibrationSet parse_calibration(const std::string& text);
std::string format_calibration(const CalibrationSet& calib);

SceneModel load_scene(const std::filesystem::path& path);
void save_scene(const SceneModel& scene, const std::filesystem::path& path);

std::string utc_timestamp_now();

}  // namespace bodyfuse
