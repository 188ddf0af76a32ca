#pragma once

// Fusion tick loop: synchronized sensor skeletons are moved into the world frame, matched,
// merged and tracked; each tracked person yields one BehaviourEvent per tick with pointing and
// gaze targets plus the latest recognizer labels. Crops cut at tick T are dispatched at T and
// their results are joined when tick T + 1 is processed, so output depends only on the
// envelope log and never on wall-clock latency below the join window.

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "bodyfuse/calibration.hpp"
#include "bodyfuse/records.hpp"
#include "bodyfuse/skeleton.hpp"
#include "bodyfuse/streams.hpp"
#include "bodyfuse/transport.hpp"
#include "bodyfuse/wire.hpp"

namespace bodyfuse {

enum class Side : std::uint8_t { Left, Right };
enum class PointingMode : std::uint8_t { ElbowHand, HeadHand };

/// At least medium confidence on both joints gives a ray from the elbow (or the head) through
/// the hand.
std::optional<Ray> pointing_ray(const MergedBody& body, Side hand, PointingMode mode = PointingMode::ElbowHand);

/// Ray from the head along the body-forward direction derived from the shoulders and spine.
std::optional<Ray> gaze_ray(const MergedBody& body);

struct CropParams {
  double face_size_m = 0.25;
  double hand_size_m = 0.30;
  int min_side_px = 16;
};

/// One sensor's view of a merged body: its own sensor-frame skeleton and the colour frame
/// closest to the tick (null when the sensor has none).
struct SensorView {
  std::string sensor_id;
  CameraIntrinsics intrinsics;
  Skeleton skeleton;
  const ColourFrame* colour = nullptr;
};

struct CropRequest {
  std::uint64_t person_id = 0;
  std::string sensor_id;
  wire::BodyPart part = wire::BodyPart::Face;
  std::int64_t ts_us = 0;
  int x0 = 0;  // clipped region, pixels
  int y0 = 0;
  int side = 0;  // unclipped side length
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // bgra8, width x height

  wire::CropMessage message() const;
};

JointId part_joint(wire::BodyPart part);

/// Crops for the requested parts, each from the view with the smallest joint depth. Views are
/// skipped when the joint is below medium confidence, behind the camera or outside the image;
/// a part is suppressed when its side would fall below min_side_px.
std::vector<CropRequest> make_crops(std::uint64_t person_id, std::int64_t ts_us, std::span<const SensorView> views,
                                    std::span<const wire::BodyPart> parts, const CropParams& params = {});

// --- recognition ----------------------------------------------------------------------------

struct RecognitionOutcome {
  wire::RequestKey key;
  std::optional<wire::ResultMessage> result;
  std::optional<ErrorCode> error;
  std::chrono::microseconds latency{0};
};

/// Crops go out with submit; collect blocks until every submitted crop has resolved.
class Recognizer {
 public:
  virtual ~Recognizer() = default;
  virtual void submit(std::vector<wire::CropMessage> crops, std::int64_t now_us) = 0;
  virtual std::vector<RecognitionOutcome> collect() = 0;
};

/// Calls a wire handler directly (test mode); latency is the handler's run time.
class InProcessRecognizer : public Recognizer {
 public:
  explicit InProcessRecognizer(transport::Handler handler);
  void submit(std::vector<wire::CropMessage> crops, std::int64_t now_us) override;
  std::vector<RecognitionOutcome> collect() override;

 private:
  transport::Handler handler_;
  std::vector<RecognitionOutcome> done_;
};

/// Sends crops over a RequestClient. While the recognizer is unreachable, crops are dropped
/// without waiting and a single probe request is let through once per `probe_interval_us`
/// of logical time.
class SocketRecognizer : public Recognizer {
 public:
  explicit SocketRecognizer(transport::Endpoint endpoint,
                            std::chrono::milliseconds timeout = std::chrono::milliseconds(300),
                            std::int64_t probe_interval_us = 1'000'000);
  void submit(std::vector<wire::CropMessage> crops, std::int64_t now_us) override;
  std::vector<RecognitionOutcome> collect() override;

  std::uint64_t skipped() const { return skipped_; }
  transport::ClientCounters counters() const { return client_.counters(); }

 private:
  transport::RequestClient client_;
  std::int64_t probe_interval_us_;
  bool reachable_ = true;
  std::int64_t last_probe_us_ = INT64_MIN;
  std::uint64_t skipped_ = 0;
  std::vector<std::pair<wire::RequestKey, std::shared_future<transport::Outcome>>> pending_;
};

// --- identity -------------------------------------------------------------------------------

/// Persistent label <-> person_id bindings plus the claims of live bodies.
class IdentityRegistry {
 public:
  explicit IdentityRegistry(double threshold = 0.8) : threshold_(threshold) {}

  double threshold() const { return threshold_; }
  std::optional<std::uint64_t> bound_to(const std::string& label) const;
  std::optional<std::string> label_of(std::uint64_t person_id) const;

  void bind(const std::string& label, std::uint64_t person_id);
  void unbind(std::uint64_t person_id);

 private:
  double threshold_;
  std::map<std::string, std::uint64_t> by_label_;
  std::map<std::uint64_t, std::string> by_person_;
};

struct IdentityUpdate {
  MergedBody body;
  /// Set when the body took over the id its label was bound to before.
  std::optional<std::uint64_t> rebound_from;
  /// Live body that lost the label in a conflict.
  std::optional<std::uint64_t> reverted;
};

/// Applies a face result. `live` holds the current bodies (including `body`) and
/// `retired` the ids whose tracks ended.
IdentityUpdate attach_identity(const MergedBody& body, const wire::ResultMessage& face_result,
                               IdentityRegistry& registry, std::span<const MergedBody> live,
                               const std::set<std::uint64_t>& retired);

// --- events ---------------------------------------------------------------------------------

struct TargetField {
  std::int64_t ts_us = 0;
  ScreenHit hit;
};

struct LabelField {
  std::int64_t ts_us = 0;
  std::string label;
  double confidence = 0.0;
};

struct BehaviourEvent {
  std::uint64_t person_id = 0;
  std::int64_t ts_us = 0;
  Vec3 position;
  std::vector<BodyRef> contributors;
  std::optional<TargetField> left_pointing;
  std::optional<TargetField> right_pointing;
  std::optional<TargetField> gaze;
  std::optional<LabelField> left_gesture;
  std::optional<LabelField> right_gesture;
  std::optional<LabelField> identity;
};

/// One line of JSON without the trailing newline; keys are sorted, so equal events give
/// equal bytes.
std::string to_json_line(const BehaviourEvent& event);
/// Throws ParseError.
BehaviourEvent parse_event(const std::string& line);

/// FNV-1a 64 over the JSON lines, each followed by '\n'.
class EventHash {
 public:
  void add(const std::string& line);
  std::uint64_t value() const { return h_; }
  std::string hex() const;

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ull;
};

// --- pipeline -------------------------------------------------------------------------------

struct PipelineConfig {
  double match_threshold_m = 0.3;
  std::int64_t max_gap_us = kDefaultMaxGapUs;
  std::int64_t join_window_us = 500'000;
  PointingMode pointing_mode = PointingMode::ElbowHand;
  double identity_threshold = 0.8;
  int hand_crop_every = 3;   // ticks
  int face_crop_every = 15;  // ticks
  CropParams crops;
  TrackerConfig tracker;
  ConfidenceWeights weights;
};

struct PipelineCounters {
  std::uint64_t ticks = 0;
  std::uint64_t events = 0;
  std::uint64_t crops_sent = 0;
  std::uint64_t crops_suppressed = 0;
  std::uint64_t results_joined = 0;
  std::uint64_t results_late = 0;
  std::uint64_t recognition_timeouts = 0;
  std::uint64_t recognition_errors = 0;
  std::uint64_t identity_rebinds = 0;
  std::uint64_t identity_conflicts = 0;
  std::uint64_t late_frames = 0;
  std::uint64_t unknown_sensor_frames = 0;
  /// Largest (emission time - tick) in logical time, the emission time being the
  /// originating time of the envelope that completed the tick.
  std::int64_t max_latency_us = 0;
};

/// Per-tick snapshot for observers such as the gateway.
struct TickOutput {
  std::int64_t tick_us = 0;
  std::vector<MergedBody> bodies;
  std::vector<BehaviourEvent> events;
};

class Pipeline {
 public:
  /// `recognizer` may be null (no recognition) and must outlive the pipeline. The scene
  /// comes from the session meta unless `scene` is given.
  Pipeline(PipelineConfig config, CalibrationSet calibration, Recognizer* recognizer = nullptr,
           std::optional<SceneModel> scene = std::nullopt);

  /// Feeds one envelope in log order and returns the ticks it completed. The "meta" stream
  /// must come first. Throws PreconditionViolation for data before the meta or a sensor
  /// missing from the calibration.
  std::vector<TickOutput> push(const Envelope& envelope);
  /// Processes the ticks still covered by buffered data.
  std::vector<TickOutput> finish();

  void set_calibration(CalibrationSet calibration);
  const CalibrationSet& calibration() const { return calibration_; }
  const SceneModel& scene() const { return scene_; }
  const std::optional<SessionMeta>& meta() const { return meta_; }
  const PipelineCounters& counters() const { return counters_; }

  /// Called with every depth cloud (sensor frame) as it arrives.
  std::function<void(const std::string& sensor_id, std::int64_t time_us, const PointCloud& cloud)> on_cloud;

 private:
  struct Recognized {
    std::int64_t ts_us = 0;
    std::string label;
    double confidence = 0.0;
  };

  TickOutput process_tick(std::int64_t tick_us);
  void join_results(std::int64_t tick_us, std::vector<MergedBody>& live);
  std::uint64_t resolve_alias(std::uint64_t id) const;

  PipelineConfig config_;
  CalibrationSet calibration_;
  Recognizer* recognizer_;
  std::optional<SceneModel> scene_override_;
  SceneModel scene_;
  std::optional<SessionMeta> meta_;
  StreamSynchronizer sync_;
  PersonTracker tracker_;
  IdentityRegistry registry_;
  std::map<std::string, std::vector<ColourFrame>> colour_;
  std::map<std::pair<std::uint64_t, wire::BodyPart>, Recognized> recognized_;
  std::map<std::uint64_t, std::uint64_t> alias_;  // old person id -> rebound id
  std::map<std::uint64_t, LabelField> identities_;
  std::int64_t next_tick_us_ = 0;
  std::int64_t last_time_us_ = INT64_MIN;
  std::uint64_t tick_index_ = 0;
  bool pending_recognition_ = false;
  PipelineCounters counters_;
};

/// Runs a whole envelope log through a fresh pipeline and returns its JSON lines.
std::vector<std::string> run_log(std::span<const Envelope> envelopes, const PipelineConfig& config,
                                 const CalibrationSet& calibration, Recognizer* recognizer = nullptr,
                                 PipelineCounters* counters = nullptr);

}  // namespace bodyfuse
