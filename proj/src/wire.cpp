#include "bodyfuse/wire.hpp"

#include <cmath>

#include "bodyfuse/error.hpp"

namespace bodyfuse::wire {

std::string_view part_name(BodyPart part) {
  switch (part) {
    case BodyPart::LeftHand: return "left_hand";
    case BodyPart::RightHand: return "right_hand";
    case BodyPart::Face: return "face";
  }
  return "?";
}

BodyPart parse_part(std::string_view name) {
  for (const BodyPart p : kAllParts)
    if (part_name(p) == name) return p;
  throw Error(ErrorCode::SchemaViolation, "unknown part '" + std::string(name) + "'");
}

std::string_view format_name(PixelFormat format) { return format == PixelFormat::Bgra8 ? "bgra8" : "jpeg"; }

PixelFormat parse_format(std::string_view name) {
  if (name == "bgra8") return PixelFormat::Bgra8;
  if (name == "jpeg") return PixelFormat::Jpeg;
  throw Error(ErrorCode::SchemaViolation, "unknown pixel format '" + std::string(name) + "'");
}

void CropMessage::validate() const {
  if (person_id.empty()) throw Error(ErrorCode::SchemaViolation, "crop without person_id");
  if (width <= 0 || height <= 0) throw Error(ErrorCode::SchemaViolation, "crop size must be positive");
  if (format == PixelFormat::Bgra8 &&
      pixels.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 4)
    throw Error(ErrorCode::SchemaViolation, "bgra8 crop of " + std::to_string(width) + "x" + std::to_string(height) +
                                                " carries " + std::to_string(pixels.size()) + " bytes");
}

void ResultMessage::validate() const {
  if (person_id.empty()) throw Error(ErrorCode::SchemaViolation, "result without person_id");
  if (!(confidence >= 0.0 && confidence <= 1.0)) throw Error(ErrorCode::SchemaViolation, "confidence outside [0, 1]");
}

msgpack::Value to_value(const CropMessage& m) {
  return msgpack::Map{{"type", "crop"},
                      {"ts_us", m.ts_us},
                      {"person_id", m.person_id},
                      {"part", std::string(part_name(m.part))},
                      {"width", m.width},
                      {"height", m.height},
                      {"format", std::string(format_name(m.format))},
                      {"pixels", m.pixels}};
}

msgpack::Value to_value(const ResultMessage& m) {
  return msgpack::Map{{"type", "result"},
                      {"ts_us", m.ts_us},
                      {"person_id", m.person_id},
                      {"part", std::string(part_name(m.part))},
                      {"label", m.label},
                      {"confidence", m.confidence}};
}

msgpack::Value to_value(const ErrorMessage& m) {
  return msgpack::Map{{"type", "error"}, {"code", m.code}, {"message", m.message}};
}

std::vector<std::uint8_t> encode(const CropMessage& m) {
  m.validate();
  return msgpack::encode(to_value(m));
}

std::vector<std::uint8_t> encode(const ResultMessage& m) {
  m.validate();
  return msgpack::encode(to_value(m));
}

std::vector<std::uint8_t> encode(const ErrorMessage& m) { return msgpack::encode(to_value(m)); }

namespace {

std::int32_t as_i32(const msgpack::Value& v, const char* what) {
  const std::int64_t x = v.as_int();
  if (x < 0 || x > INT32_MAX) throw Error(ErrorCode::SchemaViolation, std::string(what) + " out of range");
  return static_cast<std::int32_t>(x);
}

const std::string& type_of(const msgpack::Map& m) { return msgpack::at(m, "type").as_string(); }

CropMessage crop_from(const msgpack::Map& m) {
  CropMessage c;
  c.ts_us = msgpack::at(m, "ts_us").as_int();
  c.person_id = msgpack::at(m, "person_id").as_string();
  c.part = parse_part(msgpack::at(m, "part").as_string());
  c.width = as_i32(msgpack::at(m, "width"), "width");
  c.height = as_i32(msgpack::at(m, "height"), "height");
  c.format = parse_format(msgpack::at(m, "format").as_string());
  c.pixels = msgpack::at(m, "pixels").as_binary();
  c.validate();
  return c;
}

ResultMessage result_from(const msgpack::Map& m) {
  ResultMessage r;
  r.ts_us = msgpack::at(m, "ts_us").as_int();
  r.person_id = msgpack::at(m, "person_id").as_string();
  r.part = parse_part(msgpack::at(m, "part").as_string());
  r.label = msgpack::at(m, "label").as_string();
  r.confidence = msgpack::at(m, "confidence").as_double();
  r.validate();
  return r;
}

const msgpack::Map& top_map(const msgpack::Value& v) {
  if (!v.is_map()) throw Error(ErrorCode::SchemaViolation, "message must be a map");
  return v.as_map();
}

}  // namespace

CropMessage decode_crop(std::span<const std::uint8_t> bytes) {
  const msgpack::Value v = msgpack::decode(bytes);
  const auto& m = top_map(v);
  if (type_of(m) != "crop") throw Error(ErrorCode::SchemaViolation, "expected a crop message");
  return crop_from(m);
}

ResultMessage decode_result(std::span<const std::uint8_t> bytes) {
  const msgpack::Value v = msgpack::decode(bytes);
  const auto& m = top_map(v);
  if (type_of(m) != "result") throw Error(ErrorCode::SchemaViolation, "expected a result message");
  return result_from(m);
}

AnyMessage decode_any(std::span<const std::uint8_t> bytes) {
  const msgpack::Value v = msgpack::decode(bytes);
  const auto& m = top_map(v);
  const std::string& type = type_of(m);
  if (type == "crop") return crop_from(m);
  if (type == "result") return result_from(m);
  if (type == "error") return ErrorMessage{msgpack::at(m, "code").as_string(), msgpack::at(m, "message").as_string()};
  throw Error(ErrorCode::SchemaViolation, "unknown message type '" + type + "'");
}

std::vector<std::uint8_t> encode_frame(const WireMessage& msg) {
  if (msg.topic.size() > 255) throw Error(ErrorCode::SchemaViolation, "topic longer than 255 bytes");
  const std::size_t body = 1 + msg.topic.size() + msg.payload.size();
  if (body > kMaxFrameBytes) throw Error(ErrorCode::SchemaViolation, "frame too large");
  std::vector<std::uint8_t> out;
  out.reserve(4 + body);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(body >> (8 * i)));
  out.push_back(static_cast<std::uint8_t>(msg.topic.size()));
  out.insert(out.end(), msg.topic.begin(), msg.topic.end());
  out.insert(out.end(), msg.payload.begin(), msg.payload.end());
  return out;
}

WireMessage decode_frame_body(std::span<const std::uint8_t> body) {
  if (body.empty()) throw Error(ErrorCode::TruncatedPayload, "empty frame");
  const std::size_t topic_len = body[0];
  if (body.size() < 1 + topic_len) throw Error(ErrorCode::TruncatedPayload, "frame shorter than its topic");
  WireMessage m;
  m.topic.assign(body.begin() + 1, body.begin() + 1 + static_cast<std::ptrdiff_t>(topic_len));
  m.payload.assign(body.begin() + 1 + static_cast<std::ptrdiff_t>(topic_len), body.end());
  return m;
}

}  // namespace bodyfuse::wire
