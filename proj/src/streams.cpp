#include "bodyfuse/streams.hpp"

#include <zlib.h>

#include <algorithm>
#include <chrono>
#include <set>
#include <sstream>
#include <thread>

#include "bodyfuse/error.hpp"
#include "bodyfuse/msgpack.hpp"

namespace bodyfuse {

SensorSchedule SensorSchedule::evenly_spaced(std::span<const std::string> sensor_ids, std::int64_t period_us) {
  std::vector<std::string> ids(sensor_ids.begin(), sensor_ids.end());
  std::sort(ids.begin(), ids.end());
  SensorSchedule s;
  s.period_us = period_us;
  const auto n = static_cast<std::int64_t>(ids.size());
  for (std::int64_t i = 0; i < n; ++i) s.slots[ids[static_cast<std::size_t>(i)]] = i * period_us / n;
  return s;
}

void SensorSchedule::validate() const {
  if (period_us <= 0) throw Error(ErrorCode::InvalidArgument, "schedule period must be positive");
  std::set<std::int64_t> seen;
  for (const auto& [id, offset] : slots) {
    if (offset < 0 || offset >= period_us)
      throw Error(ErrorCode::InvalidArgument, "slot offset of '" + id + "' outside [0, period)");
    if (!seen.insert(offset).second) throw Error(ErrorCode::InvalidArgument, "two sensors share a time slot");
  }
}

std::int64_t SensorSchedule::capture_time(const std::string& sensor_id, std::int64_t k) const {
  const auto it = slots.find(sensor_id);
  if (it == slots.end()) throw Error(ErrorCode::InvalidArgument, "no slot for sensor '" + sensor_id + "'");
  return k * period_us + it->second;
}

std::vector<std::int64_t> fuse_clock(const SensorSchedule& schedule, std::int64_t until_us) {
  if (schedule.period_us <= 0) throw Error(ErrorCode::InvalidArgument, "schedule period must be positive");
  std::vector<std::int64_t> ticks;
  for (std::int64_t t = schedule.period_us; t <= until_us; t += schedule.period_us) ticks.push_back(t);
  return ticks;
}

std::optional<std::vector<Skeleton>> synchronize_one(std::span<const SensorFrame> frames, std::int64_t tick_us,
                                                     std::int64_t max_gap_us) {
  // frames are time-ordered; find the last at or before and the first at or after the tick.
  const auto after = std::lower_bound(frames.begin(), frames.end(), tick_us,
                                      [](const SensorFrame& f, std::int64_t t) { return f.timestamp_us < t; });
  if (after != frames.end() && after->timestamp_us == tick_us) return after->bodies;
  if (after == frames.begin() || after == frames.end()) return std::nullopt;
  const SensorFrame& f0 = *(after - 1);
  const SensorFrame& f1 = *after;
  if (f1.timestamp_us - f0.timestamp_us > max_gap_us) return std::nullopt;
  std::vector<Skeleton> out;
  for (const Skeleton& a : f0.bodies) {
    const auto b = std::find_if(f1.bodies.begin(), f1.bodies.end(),
                                [&](const Skeleton& s) { return s.body_id == a.body_id; });
    if (b == f1.bodies.end()) continue;
    out.push_back(interpolate(a, *b, tick_us, max_gap_us));
  }
  return out;
}

void StreamSynchronizer::add_sensor(const std::string& sensor_id) { buffers_[sensor_id]; }

bool StreamSynchronizer::push(SensorFrame frame) {
  if (frame.timestamp_us <= last_tick_us_) {
    ++late_drops_;
    return false;
  }
  auto& buf = buffers_[frame.sensor_id];
  if (!buf.empty() && frame.timestamp_us <= buf.back().timestamp_us) {
    ++late_drops_;
    return false;
  }
  buf.push_back(std::move(frame));
  return true;
}

std::map<std::string, std::optional<std::vector<Skeleton>>> StreamSynchronizer::synchronize(std::int64_t tick_us) {
  std::map<std::string, std::optional<std::vector<Skeleton>>> out;
  for (auto& [id, buf] : buffers_) {
    out[id] = synchronize_one(buf, tick_us, max_gap_us_);
    // Keep the newest frame at or before the tick; older ones cannot bracket a later tick.
    const auto after = std::upper_bound(buf.begin(), buf.end(), tick_us,
                                        [](std::int64_t t, const SensorFrame& f) { return t < f.timestamp_us; });
    if (after - buf.begin() > 1) buf.erase(buf.begin(), after - 1);
  }
  last_tick_us_ = std::max(last_tick_us_, tick_us);
  return out;
}

// --- session store --------------------------------------------------------------------------

namespace {

constexpr char kMagic[5] = {'F', 'S', 'E', 'S', '1'};
constexpr const char* kManifestName = "manifest.txt";
constexpr const char* kManifestHeader = "bodyfuse-session 1";

std::uint32_t crc_of(std::span<const std::uint8_t> data) {
  return static_cast<std::uint32_t>(crc32(0L, data.data(), static_cast<uInt>(data.size())));
}

void put_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 24)};
  out.write(b, 4);
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 | std::uint32_t{p[3]} << 24;
}

std::string file_for(const std::string& stream) {
  std::string f = stream;
  std::replace(f.begin(), f.end(), '/', '.');
  return f + ".fses";
}

bool valid_stream_name(const std::string& s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '/' || c == '_' || c == '-';
  });
}

}  // namespace

SessionWriter::SessionWriter(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create session directory " + dir_.string() + ": " + ec.message());
  for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
    if (entry.path().extension() == ".fses" || entry.path().filename() == kManifestName)
      std::filesystem::remove(entry.path());
  }
}

SessionWriter::~SessionWriter() {
  try {
    close();
  } catch (...) {
  }
}

void SessionWriter::declare(const std::string& stream) {
  if (closed_) throw Error(ErrorCode::IoError, "session already closed");
  if (streams_.count(stream)) return;
  if (!valid_stream_name(stream)) throw Error(ErrorCode::InvalidArgument, "bad stream name '" + stream + "'");
  Stream s;
  s.file = file_for(stream);
  s.out.open(dir_ / s.file, std::ios::binary | std::ios::trunc);
  if (!s.out) throw Error(ErrorCode::IoError, "cannot open " + (dir_ / s.file).string());
  s.out.write(kMagic, sizeof kMagic);
  streams_.emplace(stream, std::move(s));
  order_.push_back(stream);
}

void SessionWriter::append(const std::string& stream, std::int64_t time_us, std::span<const std::uint8_t> data) {
  if (closed_) throw Error(ErrorCode::IoError, "session already closed");
  auto it = streams_.find(stream);
  if (it == streams_.end()) {
    declare(stream);
    it = streams_.find(stream);
  }
  Stream& s = it->second;
  if (time_us < s.last_time)
    throw Error(ErrorCode::OrderViolation, "stream '" + stream + "' time went backwards");
  const auto payload = msgpack::encode(msgpack::Map{
      {"t", time_us}, {"seq", s.next_seq}, {"data", msgpack::Binary(data.begin(), data.end())}});
  put_u32(s.out, static_cast<std::uint32_t>(payload.size()));
  put_u32(s.out, crc_of(payload));
  s.out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!s.out) throw Error(ErrorCode::IoError, "write failed on stream '" + stream + "'");
  ++s.next_seq;
  s.last_time = time_us;
}

void SessionWriter::close() {
  if (closed_) return;
  closed_ = true;
  std::ofstream manifest(dir_ / kManifestName, std::ios::trunc);
  manifest << kManifestHeader << '\n';
  for (const auto& name : order_) {
    auto& s = streams_.at(name);
    s.out.close();
    manifest << "stream " << name << ' ' << s.file << ' ' << s.next_seq << '\n';
  }
  if (!manifest) throw Error(ErrorCode::IoError, "cannot write manifest in " + dir_.string());
}

SessionReader::SessionReader(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::ifstream in(dir_ / kManifestName);
  if (!in) throw Error(ErrorCode::IoError, "no session manifest in " + dir_.string());
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader)
    throw Error(ErrorCode::CorruptRecord, "unrecognised manifest header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kw, name, file;
    std::uint64_t count = 0;
    if (!(ls >> kw >> name >> file >> count) || kw != "stream")
      throw Error(ErrorCode::CorruptRecord, "bad manifest line: " + line);
    files_[name] = file;
    order_.push_back(name);
  }
}

bool SessionReader::has_stream(const std::string& name) const { return files_.count(name) > 0; }

std::vector<Envelope> SessionReader::read(const std::string& stream) const {
  const auto it = files_.find(stream);
  if (it == files_.end()) throw Error(ErrorCode::UnknownStream, "no stream '" + stream + "'");
  std::ifstream in(dir_ / it->second, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + (dir_ / it->second).string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof kMagic || !std::equal(kMagic, kMagic + sizeof kMagic, bytes.begin()))
    throw Error(ErrorCode::CorruptRecord, "stream '" + stream + "' has a bad magic");
  std::vector<Envelope> out;
  std::size_t pos = sizeof kMagic;
  while (pos < bytes.size()) {
    const std::string where = "stream '" + stream + "' record " + std::to_string(out.size());
    if (bytes.size() - pos < 8) throw Error(ErrorCode::CorruptRecord, where + ": truncated header");
    const std::uint32_t len = get_u32(&bytes[pos]);
    const std::uint32_t crc = get_u32(&bytes[pos + 4]);
    pos += 8;
    if (bytes.size() - pos < len) throw Error(ErrorCode::CorruptRecord, where + ": truncated payload");
    const std::span<const std::uint8_t> payload(&bytes[pos], len);
    if (crc_of(payload) != crc) throw Error(ErrorCode::CorruptRecord, where + ": checksum mismatch");
    pos += len;
    Envelope e;
    e.stream = stream;
    try {
      const auto value = msgpack::decode(payload);
      const auto& m = value.as_map();
      e.originating_time_us = msgpack::at(m, "t").as_int();
      e.sequence = msgpack::at(m, "seq").as_uint();
      e.payload = msgpack::at(m, "data").as_binary();
    } catch (const Error& err) {
      throw Error(ErrorCode::CorruptRecord, where + ": " + err.what());
    }
    if (e.sequence != out.size()) throw Error(ErrorCode::CorruptRecord, where + ": sequence gap");
    if (!out.empty() && e.originating_time_us < out.back().originating_time_us)
      throw Error(ErrorCode::CorruptRecord, where + ": time went backwards");
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<Envelope> merge_streams(std::vector<std::vector<Envelope>> streams) {
  struct Key {
    std::int64_t t;
    std::size_t stream;
    std::uint64_t seq;
    std::size_t idx;
  };
  std::vector<Key> keys;
  for (std::size_t s = 0; s < streams.size(); ++s)
    for (std::size_t i = 0; i < streams[s].size(); ++i)
      keys.push_back({streams[s][i].originating_time_us, s, streams[s][i].sequence, i});
  std::sort(keys.begin(), keys.end(), [](const Key& a, const Key& b) {
    return std::tie(a.t, a.stream, a.seq) < std::tie(b.t, b.stream, b.seq);
  });
  std::vector<Envelope> out;
  out.reserve(keys.size());
  for (const Key& k : keys) out.push_back(std::move(streams[k.stream][k.idx]));
  return out;
}

std::vector<Envelope> SessionReader::read_all() const {
  std::vector<std::vector<Envelope>> all;
  for (const auto& name : order_) all.push_back(read(name));
  return merge_streams(std::move(all));
}

void replay(std::span<const Envelope> envelopes, double speed, const std::function<bool(const Envelope&)>& sink) {
  if (envelopes.empty()) return;
  const auto start = std::chrono::steady_clock::now();
  const std::int64_t t0 = envelopes.front().originating_time_us;
  for (const Envelope& e : envelopes) {
    if (speed > 0) {
      const auto due = start + std::chrono::microseconds(
                                   static_cast<std::int64_t>(static_cast<double>(e.originating_time_us - t0) / speed));
      std::this_thread::sleep_until(due);
    }
    if (!sink(e)) return;
  }
}

}  // namespace bodyfuse
