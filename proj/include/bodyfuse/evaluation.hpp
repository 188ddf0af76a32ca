#pragma once

// Scores pipeline output against the ground-truth streams a simulated session carries.
// Tracked persons are mapped to scripted persons per tick by nearest pelvis.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bodyfuse/calibration.hpp"
#include "bodyfuse/pipeline.hpp"
#include "bodyfuse/records.hpp"
#include "bodyfuse/streams.hpp"

namespace bodyfuse::eval {

struct SessionTruth {
  SessionMeta meta;
  TruePoses poses;
  std::map<std::int64_t, TruthFrame> frames;  // by tick
};

/// Reads the meta and truth streams. Throws UnknownStream when the session has no truth.
SessionTruth load_truth(std::span<const Envelope> envelopes);
SessionTruth load_truth(const SessionReader& reader);

/// The scripted sensor poses as a calibration rooted at the main sensor.
CalibrationSet truth_calibration(const SessionTruth& truth);

struct Percentiles {
  std::size_t count = 0;
  double p50 = 0.0;
  double p95 = 0.0;
  double max = 0.0;
};
/// Nearest-rank percentiles.
Percentiles percentiles(std::vector<double> values);

struct EvalParams {
  double match_radius_m = 0.3;  // event position to true pelvis
};

struct EvalReport {
  std::size_t ticks = 0;
  std::size_t events = 0;
  std::size_t unmatched_events = 0;
  /// Ticks where the number of events differs from the number of persons some sensor sees.
  std::size_t count_mismatch_ticks = 0;
  std::size_t identity_swaps = 0;
  std::map<std::string, std::vector<std::uint64_t>> person_ids;  // scripted name -> ids used

  Percentiles pointing_error_m;
  std::size_t pointing_missing = 0;
  Percentiles gaze_error_m;
  std::size_t gaze_missing = 0;

  std::size_t gesture_labels = 0;
  std::size_t gesture_correct = 0;
  std::size_t gesture_wrong_person = 0;
  std::size_t identity_labels = 0;
  std::size_t identity_correct = 0;

  /// world_from_sensor against truth, and main_from_sensor against the true relative pose.
  std::map<std::string, TransformError> world_error;
  std::map<std::string, TransformError> relative_error;

  std::string to_json() const;
  std::string to_text() const;
};

/// Scores events against truth. Pointing and gaze are scored on ticks whose neighbouring
/// ticks share the same true target, so gesture onsets do not count. A gesture label is
/// correct when the mapped person's scripted label on that hand equals it at the label's
/// timestamp or one tick either side (the crop comes from the nearest capture).
EvalReport evaluate(const SessionTruth& truth, std::span<const BehaviourEvent> events,
                    const CalibrationSet* calibration = nullptr, const EvalParams& params = {});

}  // namespace bodyfuse::eval
