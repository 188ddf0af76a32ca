#pragma once

// Message schemas for recognizer traffic and the frame layout used on the socket.
//
// crop:   {type: "crop", ts_us: int, person_id: str, part: "left_hand"|"right_hand"|"face",
//          width: int, height: int, format: "bgra8"|"jpeg", pixels: bin}
// result: {type: "result", ts_us: int, person_id: str, part: str, label: str, confidence: float}
// error:  {type: "error", code: str, message: str}
//
// Frame: u32 little-endian body length, then body = u8 topic length, topic bytes, payload.

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "bodyfuse/msgpack.hpp"

namespace bodyfuse::wire {

enum class BodyPart : std::uint8_t { LeftHand, RightHand, Face };
inline constexpr BodyPart kAllParts[] = {BodyPart::LeftHand, BodyPart::RightHand, BodyPart::Face};

std::string_view part_name(BodyPart part);
/// Throws SchemaViolation for an unknown name.
BodyPart parse_part(std::string_view name);

enum class PixelFormat : std::uint8_t { Bgra8, Jpeg };
std::string_view format_name(PixelFormat format);
PixelFormat parse_format(std::string_view name);

struct CropMessage {
  std::int64_t ts_us = 0;
  std::string person_id;
  BodyPart part = BodyPart::Face;
  std::int32_t width = 0;
  std::int32_t height = 0;
  PixelFormat format = PixelFormat::Bgra8;
  std::vector<std::uint8_t> pixels;

  /// Throws SchemaViolation (non-positive size, bgra8 length != w*h*4, empty person id).
  void validate() const;
  bool operator==(const CropMessage&) const = default;
};

struct ResultMessage {
  std::int64_t ts_us = 0;
  std::string person_id;
  BodyPart part = BodyPart::Face;
  std::string label;
  double confidence = 0.0;

  void validate() const;
  bool operator==(const ResultMessage&) const = default;
};

struct ErrorMessage {
  std::string code;
  std::string message;
  bool operator==(const ErrorMessage&) const = default;
};

/// Correlation key shared by a crop and its result.
struct RequestKey {
  std::int64_t ts_us = 0;
  std::string person_id;
  BodyPart part = BodyPart::Face;
  auto operator<=>(const RequestKey&) const = default;
};

inline RequestKey key_of(const CropMessage& m) { return {m.ts_us, m.person_id, m.part}; }
inline RequestKey key_of(const ResultMessage& m) { return {m.ts_us, m.person_id, m.part}; }

msgpack::Value to_value(const CropMessage& m);
msgpack::Value to_value(const ResultMessage& m);
msgpack::Value to_value(const ErrorMessage& m);

std::vector<std::uint8_t> encode(const CropMessage& m);
std::vector<std::uint8_t> encode(const ResultMessage& m);
std::vector<std::uint8_t> encode(const ErrorMessage& m);

/// Decoders validate the schema; unknown keys are ignored.
/// Throw SchemaViolation, TruncatedPayload or MalformedMessage.
CropMessage decode_crop(std::span<const std::uint8_t> bytes);
ResultMessage decode_result(std::span<const std::uint8_t> bytes);
using AnyMessage = std::variant<CropMessage, ResultMessage, ErrorMessage>;
AnyMessage decode_any(std::span<const std::uint8_t> bytes);

inline constexpr std::string_view kCropTopic = "crop";
inline constexpr std::string_view kResultTopic = "result";
inline constexpr std::string_view kErrorTopic = "error";
inline constexpr std::uint32_t kMaxFrameBytes = 64u << 20;

struct WireMessage {
  std::string topic;
  std::vector<std::uint8_t> payload;
  bool operator==(const WireMessage&) const = default;
};

std::vector<std::uint8_t> encode_frame(const WireMessage& msg);
/// Decodes a frame body (without the length prefix). Throws TruncatedPayload.
WireMessage decode_frame_body(std::span<const std::uint8_t> body);

}  // namespace bodyfuse::wire
