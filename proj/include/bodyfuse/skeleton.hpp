#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bodyfuse/geometry.hpp"

namespace bodyfuse {

enum class JointId : std::uint8_t {
  Pelvis,
  Spine,
  Chest,
  Neck,
  Head,
  LeftShoulder,
  LeftElbow,
  LeftWrist,
  LeftHand,
  RightShoulder,
  RightElbow,
  RightWrist,
  RightHand,
  LeftHip,
  RightHip,
};
inline constexpr std::size_t kJointCount = 15;

std::string_view joint_name(JointId id);
constexpr std::size_t index_of(JointId id) { return static_cast<std::size_t>(id); }

enum class Confidence : std::uint8_t { None = 0, Low = 1, Medium = 2, High = 3 };

struct Joint {
  Vec3 position;
  Confidence confidence = Confidence::None;
  bool operator==(const Joint&) const = default;
};

using Joints = std::array<Joint, kJointCount>;

enum class Frame : std::uint8_t { Sensor, World };

struct Skeleton {
  std::string sensor_id;
  std::uint32_t body_id = 0;
  std::int64_t timestamp_us = 0;
  Joints joints{};
  Frame frame = Frame::Sensor;

  const Joint& joint(JointId id) const { return joints[index_of(id)]; }
  Joint& joint(JointId id) { return joints[index_of(id)]; }
  bool operator==(const Skeleton&) const = default;
};

struct BodyRef {
  std::string sensor_id;
  std::uint32_t body_id = 0;
  auto operator<=>(const BodyRef&) const = default;
};

struct MergedBody {
  std::uint64_t person_id = 0;  // 0 until the tracker assigns one
  std::int64_t timestamp_us = 0;
  Joints joints{};  // world frame
  std::vector<BodyRef> contributors;  // sorted, unique
  std::optional<std::string> identity_label;
  std::optional<double> identity_confidence;

  const Joint& joint(JointId id) const { return joints[index_of(id)]; }
};

/// Applies `t` to every joint and retags the frame.
Skeleton transformed(const Skeleton& s, const RigidTransform& t, Frame frame);

inline constexpr std::int64_t kDefaultMaxGapUs = 200'000;

/// Per-joint linear interpolation at `t_us`; endpoints return the bracketing sample verbatim.
/// Throws MismatchedBody, TimestampOutOfRange or GapTooLarge.
Skeleton interpolate(const Skeleton& a, const Skeleton& b, std::int64_t t_us, std::int64_t max_gap_us = kDefaultMaxGapUs);

/// Mean Euclidean distance over joints where both sides are at least low confidence;
/// +inf when fewer than 3 joints are shared.
double matching_cost(const Skeleton& a, const Skeleton& b);

/// Index of a skeleton inside the per-sensor groups handed to match_skeletons.
struct GroupIndex {
  std::size_t group = 0;
  std::size_t item = 0;
  auto operator<=>(const GroupIndex&) const = default;
};

/// Partitions world-frame skeletons (one group per sensor) into per-person sets. Each sensor
/// pair is solved by optimal gated assignment; matches are closed transitively.
std::vector<std::vector<GroupIndex>> match_skeleton_indices(std::span<const std::vector<Skeleton>> groups,
                                                            double threshold);
std::vector<std::vector<Skeleton>> match_skeletons(std::span<const std::vector<Skeleton>> groups, double threshold);

struct ConfidenceWeights {
  double none = 0.0;
  double low = 1.0;
  double medium = 2.0;
  double high = 4.0;

  double of(Confidence c) const;
};

/// Confidence-weighted joint average. person_id and identity are inherited from `prev` when
/// given; otherwise person_id stays 0 for the tracker to allocate. Throws EmptySet.
MergedBody merge(std::span<const Skeleton> set, const MergedBody* prev = nullptr, const ConfidenceWeights& weights = {});

/// Position used for association: the pelvis, or the mean of confident joints without one.
std::optional<Vec3> anchor_position(const MergedBody& body);

struct TrackerConfig {
  double gate_m = 0.5;
  double gate_speed_mps = 1.0;
  std::int64_t lost_timeout_us = 2'000'000;
};

/// Greedy nearest-anchor association of `current` to `previous`. `dt_us[j]` is the elapsed time
/// since previous[j] was last seen. Associated candidates inherit person_id and identity;
/// the rest receive ids from `next_id`.
std::vector<MergedBody> track_persons(std::vector<MergedBody> current, std::span<const MergedBody> previous,
                                      std::span<const std::int64_t> dt_us, std::uint64_t& next_id,
                                      const TrackerConfig& config = {});

/// Owns the tracked-person state across fusion ticks.
class PersonTracker {
 public:
  explicit PersonTracker(TrackerConfig config = {}) : config_(config) {}

  /// Associates candidates, retires tracks unseen for longer than lost_timeout, and returns the
  /// bodies observed at `now_us` with stable person ids.
  std::vector<MergedBody> update(std::vector<MergedBody> candidates, std::int64_t now_us);

  /// Replaces a live track's id (identity re-binding). Returns false when `from` is not live or
  /// `to` is held by another live track.
  bool rebind(std::uint64_t from, std::uint64_t to);
  void set_identity(std::uint64_t person_id, std::optional<std::string> label, std::optional<double> confidence);

  bool is_live(std::uint64_t person_id) const;
  std::vector<std::uint64_t> live_ids() const;
  const std::set<std::uint64_t>& retired_ids() const { return retired_; }

 private:
  struct Track {
    MergedBody body;
    std::int64_t last_seen_us = 0;
  };

  TrackerConfig config_;
  std::vector<Track> tracks_;
  std::set<std::uint64_t> retired_;
  std::uint64_t next_id_ = 1;
};

}  // namespace bodyfuse
