#pragma once

// Calibration of a recorded session: person-reference alignment of every sensor to one already
// calibrated (the main sensor first), refined by ICP between their depth clouds, then the main
// sensor's pose against the screens when an initial guess is given.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bodyfuse/calibration.hpp"
#include "bodyfuse/streams.hpp"

namespace bodyfuse {

struct SessionCalibrationParams {
  PersonReferenceParams person;
  /// The coarse alignment is already within millimetres, and two viewpoints sample the same
  /// surfaces differently, so the cloud-to-cloud step uses a tight rejection radius.
  IcpParams pairwise_icp{.reject_threshold = 0.02};
  bool refine_pairwise = true;
  /// Depth clouds of two sensors pair up when their capture times are this close.
  std::int64_t max_cloud_gap_us = 50'000;
  std::size_t max_cloud_pairs = 4;
  IcpParams scene_icp;
};

struct PairReport {
  std::string sensor;     // b
  std::string reference;  // a
  std::size_t frames_a = 0;
  std::size_t frames_b = 0;
  RigidTransform person_reference;  // a_from_b
  std::size_t cloud_pairs = 0;
  std::optional<IcpResult> icp;
  bool icp_accepted = false;
  RigidTransform a_from_b;  // final
};

struct SessionCalibrationReport {
  std::string main_sensor;
  std::vector<PairReport> pairs;
  std::optional<IcpResult> scene_icp;
  std::optional<AlignmentResidual> scene_before;
  /// Screen residual of each sensor's latest cloud under the final calibration.
  std::map<std::string, AlignmentResidual> residuals;
};

/// Throws UnknownStream without session meta, DisconnectedSensor when a sensor cannot be
/// aligned to any calibrated one, and the person-reference errors of the last attempt.
/// Without `world_from_main_init` the main sensor is placed at the identity.
CalibrationSet calibrate_session(std::span<const Envelope> envelopes,
                                 const std::optional<RigidTransform>& world_from_main_init,
                                 const SessionCalibrationParams& params = {},
                                 SessionCalibrationReport* report = nullptr,
                                 const SceneModel* scene_override = nullptr);

}  // namespace bodyfuse
