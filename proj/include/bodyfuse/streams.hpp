#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bodyfuse/skeleton.hpp"

namespace bodyfuse {

struct Envelope {
  std::string stream;
  std::int64_t originating_time_us = 0;
  std::uint64_t sequence = 0;
  std::vector<std::uint8_t> payload;
  bool operator==(const Envelope&) const = default;
};

inline constexpr std::int64_t kDefaultPeriodUs = 33'333;

struct SensorSchedule {
  std::int64_t period_us = kDefaultPeriodUs;
  std::map<std::string, std::int64_t> slots;  // sensor_id -> offset within the period

  /// Offsets i * period / n in sorted sensor-id order.
  static SensorSchedule evenly_spaced(std::span<const std::string> sensor_ids, std::int64_t period_us = kDefaultPeriodUs);
  /// Throws InvalidArgument for a non-positive period, out-of-range or duplicate offsets.
  void validate() const;
  /// Nominal capture time of the k-th frame of a sensor.
  std::int64_t capture_time(const std::string& sensor_id, std::int64_t k) const;
};

/// Fusion ticks k * period for k >= 1 up to and including `until_us`.
std::vector<std::int64_t> fuse_clock(const SensorSchedule& schedule, std::int64_t until_us);

/// Everything one sensor reported at one capture.
struct SensorFrame {
  std::string sensor_id;
  std::int64_t timestamp_us = 0;
  std::vector<Skeleton> bodies;
  bool operator==(const SensorFrame&) const = default;
};

/// Per-sensor state at a tick: bodies present in both bracketing frames, interpolated, or the
/// exact frame when one lands on the tick. Bodies seen in only one frame are left out.
std::optional<std::vector<Skeleton>> synchronize_one(std::span<const SensorFrame> frames, std::int64_t tick_us,
                                                     std::int64_t max_gap_us = kDefaultMaxGapUs);

/// Buffers sensor frames as they arrive and answers synchronize queries per tick.
class StreamSynchronizer {
 public:
  explicit StreamSynchronizer(std::int64_t max_gap_us = kDefaultMaxGapUs) : max_gap_us_(max_gap_us) {}

  void add_sensor(const std::string& sensor_id);
  /// Frames older than what a future tick could need are discarded. Returns false (and
  /// counts a late drop) when the frame is older than the last synchronized tick.
  bool push(SensorFrame frame);
  /// One entry per known sensor, nullopt when it has nothing usable at this tick.
  std::map<std::string, std::optional<std::vector<Skeleton>>> synchronize(std::int64_t tick_us);

  std::uint64_t late_drops() const { return late_drops_; }

 private:
  std::int64_t max_gap_us_;
  std::map<std::string, std::vector<SensorFrame>> buffers_;
  std::int64_t last_tick_us_ = INT64_MIN;
  std::uint64_t late_drops_ = 0;
};

// --- session store --------------------------------------------------------------------------
//
// A session is a directory with `manifest.txt` and one `<stream>.fses` file per stream (with
// '/' in the name mapped to '.'). Each stream file starts with the 5 magic bytes "FSES1",
// followed by records: u32 LE payload length, u32 LE CRC32 of the payload, payload. The
// payload is a MessagePack map {t: originating time in µs, seq: sequence, data: bin}.

class SessionWriter {
 public:
  /// Creates (or empties) the session directory. Throws IoError.
  explicit SessionWriter(std::filesystem::path dir);
  ~SessionWriter();

  /// Opens a stream without records so its manifest position is fixed up front.
  void declare(const std::string& stream);
  /// Appends with the next sequence number. Throws OrderViolation when time goes backwards.
  void append(const std::string& stream, std::int64_t time_us, std::span<const std::uint8_t> data);
  /// Writes the manifest and closes the stream files. Called by the destructor if needed.
  void close();

 private:
  struct Stream {
    std::string file;
    std::ofstream out;
    std::uint64_t next_seq = 0;
    std::int64_t last_time = INT64_MIN;
  };
  std::filesystem::path dir_;
  std::map<std::string, Stream> streams_;
  std::vector<std::string> order_;
  bool closed_ = false;
};

class SessionReader {
 public:
  /// Reads the manifest. Throws IoError or CorruptRecord.
  explicit SessionReader(std::filesystem::path dir);

  const std::vector<std::string>& streams() const { return order_; }
  bool has_stream(const std::string& name) const;
  /// All envelopes of a stream in recorded order. Throws UnknownStream or CorruptRecord.
  std::vector<Envelope> read(const std::string& stream) const;
  /// All streams merged by (time, manifest order, sequence).
  std::vector<Envelope> read_all() const;

 private:
  std::filesystem::path dir_;
  std::vector<std::string> order_;
  std::map<std::string, std::string> files_;
};

/// Feeds envelopes in order. speed <= 0 means as fast as possible; otherwise originating
/// times are paced against the wall clock scaled by `speed`. The callback may return false to stop.
void replay(std::span<const Envelope> envelopes, double speed, const std::function<bool(const Envelope&)>& sink);

/// Merges per-stream envelope lists the same way read_all does.
std::vector<Envelope> merge_streams(std::vector<std::vector<Envelope>> streams);

}  // namespace bodyfuse
