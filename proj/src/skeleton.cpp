#include "bodyfuse/skeleton.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <tuple>

#include "bodyfuse/assignment.hpp"
#include "bodyfuse/error.hpp"

namespace bodyfuse {

std::string_view joint_name(JointId id) {
  static constexpr std::array<std::string_view, kJointCount> kNames = {
      "pelvis",      "spine",          "chest",       "neck",       "head",
      "left_shoulder", "left_elbow",   "left_wrist",  "left_hand",  "right_shoulder",
      "right_elbow", "right_wrist",    "right_hand",  "left_hip",   "right_hip"};
  return kNames[index_of(id)];
}

Skeleton transformed(const Skeleton& s, const RigidTransform& t, Frame frame) {
  Skeleton out = s;
  for (auto& j : out.joints) j.position = transform_point(t, j.position);
  out.frame = frame;
  return out;
}

Skeleton interpolate(const Skeleton& a, const Skeleton& b, std::int64_t t_us, std::int64_t max_gap_us) {
  if (a.sensor_id != b.sensor_id || a.body_id != b.body_id)
    throw Error(ErrorCode::MismatchedBody, "interpolating different bodies");
  if (t_us < a.timestamp_us || t_us > b.timestamp_us)
    throw Error(ErrorCode::TimestampOutOfRange, "t outside [a, b]");
  if (b.timestamp_us - a.timestamp_us > max_gap_us) throw Error(ErrorCode::GapTooLarge, "samples too far apart");
  if (t_us == a.timestamp_us) return a;
  if (t_us == b.timestamp_us) return b;

  const double lambda =
      static_cast<double>(t_us - a.timestamp_us) / static_cast<double>(b.timestamp_us - a.timestamp_us);
  Skeleton out = a;
  out.timestamp_us = t_us;
  for (std::size_t i = 0; i < kJointCount; ++i) {
    const Joint& ja = a.joints[i];
    const Joint& jb = b.joints[i];
    out.joints[i].position = ja.position + (jb.position - ja.position) * lambda;
    out.joints[i].confidence = std::min(ja.confidence, jb.confidence);
  }
  return out;
}

double matching_cost(const Skeleton& a, const Skeleton& b) {
  double sum = 0.0;
  int count = 0;
  for (std::size_t i = 0; i < kJointCount; ++i) {
    if (a.joints[i].confidence < Confidence::Low || b.joints[i].confidence < Confidence::Low) continue;
    sum += distance(a.joints[i].position, b.joints[i].position);
    ++count;
  }
  if (count < 3) return std::numeric_limits<double>::infinity();
  return sum / count;
}

namespace {

struct DisjointSets {
  std::vector<std::size_t> parent;
  explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

}  // namespace

std::vector<std::vector<GroupIndex>> match_skeleton_indices(std::span<const std::vector<Skeleton>> groups,
                                                            double threshold) {
  std::vector<std::size_t> offset(groups.size() + 1, 0);
  for (std::size_t g = 0; g < groups.size(); ++g) offset[g + 1] = offset[g] + groups[g].size();
  DisjointSets sets(offset.back());

  for (std::size_t ga = 0; ga < groups.size(); ++ga) {
    for (std::size_t gb = ga + 1; gb < groups.size(); ++gb) {
      const auto& a = groups[ga];
      const auto& b = groups[gb];
      if (a.empty() || b.empty()) continue;
      CostMatrix cost(a.size(), b.size());
      for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j) cost.at(i, j) = matching_cost(a[i], b[j]);
      const auto assignment = solve_gated_assignment(cost, threshold);
      for (std::size_t i = 0; i < assignment.size(); ++i)
        if (assignment[i]) sets.unite(offset[ga] + i, offset[gb] + *assignment[i]);
    }
  }

  std::vector<std::vector<GroupIndex>> out;
  std::vector<std::size_t> slot(offset.back(), std::numeric_limits<std::size_t>::max());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (std::size_t i = 0; i < groups[g].size(); ++i) {
      const std::size_t root = sets.find(offset[g] + i);
      if (slot[root] == std::numeric_limits<std::size_t>::max()) {
        slot[root] = out.size();
        out.emplace_back();
      }
      out[slot[root]].push_back({g, i});
    }
  }
  return out;
}

std::vector<std::vector<Skeleton>> match_skeletons(std::span<const std::vector<Skeleton>> groups, double threshold) {
  std::vector<std::vector<Skeleton>> out;
  for (const auto& set : match_skeleton_indices(groups, threshold)) {
    auto& dst = out.emplace_back();
    for (const auto& gi : set) dst.push_back(groups[gi.group][gi.item]);
  }
  return out;
}

double ConfidenceWeights::of(Confidence c) const {
  switch (c) {
    case Confidence::None: return none;
    case Confidence::Low: return low;
    case Confidence::Medium: return medium;
    case Confidence::High: return high;
  }
  return 0.0;
}

MergedBody merge(std::span<const Skeleton> set, const MergedBody* prev, const ConfidenceWeights& weights) {
  if (set.empty()) throw Error(ErrorCode::EmptySet, "merge of an empty set");
  MergedBody body;
  body.timestamp_us = set.front().timestamp_us;
  if (prev != nullptr) {
    body.person_id = prev->person_id;
    body.identity_label = prev->identity_label;
    body.identity_confidence = prev->identity_confidence;
  }
  for (const auto& s : set) body.contributors.push_back({s.sensor_id, s.body_id});
  std::sort(body.contributors.begin(), body.contributors.end());
  body.contributors.erase(std::unique(body.contributors.begin(), body.contributors.end()), body.contributors.end());

  if (set.size() == 1) {
    body.joints = set.front().joints;
    return body;
  }
  for (std::size_t i = 0; i < kJointCount; ++i) {
    Vec3 acc;
    double wsum = 0.0;
    Confidence best = Confidence::None;
    for (const auto& s : set) {
      const Joint& j = s.joints[i];
      const double w = weights.of(j.confidence);
      if (w <= 0.0) continue;
      acc += j.position * w;
      wsum += w;
      best = std::max(best, j.confidence);
    }
    if (wsum > 0.0) {
      body.joints[i] = {acc / wsum, best};
    } else {
      body.joints[i] = {set.front().joints[i].position, Confidence::None};
    }
  }
  return body;
}

std::optional<Vec3> anchor_position(const MergedBody& body) {
  const Joint& pelvis = body.joint(JointId::Pelvis);
  if (pelvis.confidence >= Confidence::Low) return pelvis.position;
  Vec3 acc;
  int n = 0;
  for (const auto& j : body.joints) {
    if (j.confidence < Confidence::Low) continue;
    acc += j.position;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return acc / static_cast<double>(n);
}

std::vector<MergedBody> track_persons(std::vector<MergedBody> current, std::span<const MergedBody> previous,
                                      std::span<const std::int64_t> dt_us, std::uint64_t& next_id,
                                      const TrackerConfig& config) {
  if (dt_us.size() != previous.size()) throw Error(ErrorCode::LengthMismatch, "one dt per previous body");

  std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
  for (std::size_t c = 0; c < current.size(); ++c) {
    const auto pc = anchor_position(current[c]);
    if (!pc) continue;
    for (std::size_t p = 0; p < previous.size(); ++p) {
      const auto pp = anchor_position(previous[p]);
      if (!pp) continue;
      const double gate = config.gate_m + config.gate_speed_mps * static_cast<double>(dt_us[p]) * 1e-6;
      const double d = distance(*pc, *pp);
      if (d <= gate) pairs.emplace_back(d, c, p);
    }
  }
  std::sort(pairs.begin(), pairs.end());

  std::vector<char> cand_used(current.size(), 0), prev_used(previous.size(), 0);
  for (const auto& [d, c, p] : pairs) {
    if (cand_used[c] || prev_used[p]) continue;
    cand_used[c] = prev_used[p] = 1;
    current[c].person_id = previous[p].person_id;
    current[c].identity_label = previous[p].identity_label;
    current[c].identity_confidence = previous[p].identity_confidence;
  }
  for (std::size_t c = 0; c < current.size(); ++c) {
    if (cand_used[c]) continue;
    current[c].person_id = next_id++;
    current[c].identity_label.reset();
    current[c].identity_confidence.reset();
  }
  return current;
}

std::vector<MergedBody> PersonTracker::update(std::vector<MergedBody> candidates, std::int64_t now_us) {
  std::erase_if(tracks_, [&](const Track& t) {
    if (now_us - t.last_seen_us > config_.lost_timeout_us) {
      retired_.insert(t.body.person_id);
      return true;
    }
    return false;
  });

  std::vector<MergedBody> previous;
  std::vector<std::int64_t> dt;
  for (const auto& t : tracks_) {
    previous.push_back(t.body);
    dt.push_back(now_us - t.last_seen_us);
  }
  auto tracked = track_persons(std::move(candidates), previous, dt, next_id_, config_);

  for (const auto& body : tracked) {
    auto it = std::find_if(tracks_.begin(), tracks_.end(),
                           [&](const Track& t) { return t.body.person_id == body.person_id; });
    if (it == tracks_.end()) {
      tracks_.push_back({body, now_us});
    } else {
      it->body = body;
      it->last_seen_us = now_us;
    }
  }
  return tracked;
}

bool PersonTracker::rebind(std::uint64_t from, std::uint64_t to) {
  if (from == to) return is_live(from);
  if (is_live(to)) return false;
  auto it = std::find_if(tracks_.begin(), tracks_.end(), [&](const Track& t) { return t.body.person_id == from; });
  if (it == tracks_.end()) return false;
  it->body.person_id = to;
  retired_.erase(to);
  retired_.insert(from);
  return true;
}

void PersonTracker::set_identity(std::uint64_t person_id, std::optional<std::string> label,
                                 std::optional<double> confidence) {
  for (auto& t : tracks_) {
    if (t.body.person_id != person_id) continue;
    t.body.identity_label = std::move(label);
    t.body.identity_confidence = confidence;
    return;
  }
}

bool PersonTracker::is_live(std::uint64_t person_id) const {
  return std::any_of(tracks_.begin(), tracks_.end(), [&](const Track& t) { return t.body.person_id == person_id; });
}

std::vector<std::uint64_t> PersonTracker::live_ids() const {
  std::vector<std::uint64_t> ids;
  for (const auto& t : tracks_) ids.push_back(t.body.person_id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace bodyfuse
