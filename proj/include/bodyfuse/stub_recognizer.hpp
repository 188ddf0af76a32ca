#pragma once

// Deterministic stand-in for the gesture and face models. It reads the machine-readable tag
// the simulator paints into colour frames and echoes its label. Message handling goes through
// nlohmann::json's MessagePack support rather than the pipeline's own codec, so the two sides
// check each other.
//
// Tag layout (BGRA pixels, row-major block of `block` columns starting at the header):
//   header:  B = 0x5A, G = 0xC3, R = label length, A = block width
//   char i:  B = 0xA5, G = label[i], R = i, A = 0xFF, at block offset i + 1
// Background pixels always have B < 0x40, so a header cannot occur by accident.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bodyfuse/wire.hpp"

namespace bodyfuse::stub {

inline constexpr std::uint8_t kTagMagicB = 0x5A;
inline constexpr std::uint8_t kTagMagicG = 0xC3;
inline constexpr std::uint8_t kTagCharB = 0xA5;
inline constexpr std::size_t kMaxLabelLength = 48;

/// Writes a tag whose header sits at (x, y); pixels falling outside the image are skipped.
/// Throws InvalidArgument for empty or overlong labels.
void paint_tag(std::span<std::uint8_t> bgra, int width, int height, int x, int y, std::string_view label);

/// Width of the square-ish block a label occupies.
int tag_block_width(std::size_t label_length);

/// The complete tag nearest the image centre, if any.
std::optional<std::string> decode_tag(std::span<const std::uint8_t> bgra, int width, int height);

/// Full request handling: crop payload bytes in, result payload bytes out.
/// Throws MalformedMessage when the payload is not a well-formed crop.
std::vector<std::uint8_t> handle_crop_payload(std::span<const std::uint8_t> payload);

/// Wire-level handler suitable for transport::RequestServer.
wire::WireMessage handle(const wire::WireMessage& request);

/// Re-encodes a crop payload through nlohmann::json (decode + to_msgpack). Used by the
/// cross-implementation check: the output must equal the input byte for byte.
std::vector<std::uint8_t> reencode(std::span<const std::uint8_t> payload);

}  // namespace bodyfuse::stub
