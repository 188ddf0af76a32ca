#include "bodyfuse/stub_recognizer.hpp"

#include <json.hpp>

#include "bodyfuse/error.hpp"

namespace bodyfuse::stub {

using nlohmann::json;

int tag_block_width(std::size_t label_length) {
  int w = 1;
  while (static_cast<std::size_t>(w) * w < label_length + 1) ++w;
  return w;
}

void paint_tag(std::span<std::uint8_t> bgra, int width, int height, int x, int y, std::string_view label) {
  if (label.empty() || label.size() > kMaxLabelLength) throw Error(ErrorCode::InvalidArgument, "tag label length");
  const int block = tag_block_width(label.size());
  auto put = [&](int px, int py, std::uint8_t b, std::uint8_t g, std::uint8_t r, std::uint8_t a) {
    if (px < 0 || py < 0 || px >= width || py >= height) return;
    auto* p = bgra.data() + (static_cast<std::size_t>(py) * width + px) * 4;
    p[0] = b;
    p[1] = g;
    p[2] = r;
    p[3] = a;
  };
  put(x, y, kTagMagicB, kTagMagicG, static_cast<std::uint8_t>(label.size()), static_cast<std::uint8_t>(block));
  for (std::size_t i = 0; i < label.size(); ++i) {
    const int k = static_cast<int>(i) + 1;
    put(x + k % block, y + k / block, kTagCharB, static_cast<std::uint8_t>(label[i]), static_cast<std::uint8_t>(i), 0xFF);
  }
}

std::optional<std::string> decode_tag(std::span<const std::uint8_t> bgra, int width, int height) {
  if (width <= 0 || height <= 0 || bgra.size() < static_cast<std::size_t>(width) * height * 4) return std::nullopt;
  auto px = [&](int x, int y) { return bgra.subspan((static_cast<std::size_t>(y) * width + x) * 4, 4); };
  std::optional<std::string> best;
  double best_d2 = 0.0;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const auto h = px(x, y);
      if (h[0] != kTagMagicB || h[1] != kTagMagicG) continue;
      const int len = h[2];
      const int block = h[3];
      if (len == 0 || block == 0 || static_cast<std::size_t>(len) > kMaxLabelLength) continue;
      std::string label;
      for (int i = 0; i < len; ++i) {
        const int cx = x + (i + 1) % block;
        const int cy = y + (i + 1) / block;
        if (cx >= width || cy >= height) break;
        const auto c = px(cx, cy);
        if (c[0] != kTagCharB || c[2] != i) break;
        label.push_back(static_cast<char>(c[1]));
      }
      if (static_cast<int>(label.size()) != len) continue;
      // Several tags can share a crop; the one nearest the centre is the subject.
      const double dx = x + block * 0.5 - width * 0.5, dy = y + block * 0.5 - height * 0.5;
      const double d2 = dx * dx + dy * dy;
      if (!best || d2 < best_d2) {
        best = std::move(label);
        best_d2 = d2;
      }
    }
  }
  return best;
}

namespace {

json parse_crop(std::span<const std::uint8_t> payload) {
  json msg;
  try {
    msg = json::from_msgpack(payload.begin(), payload.end());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedMessage, std::string("not msgpack: ") + e.what());
  }
  auto require = [&](const char* key, bool ok) {
    if (!ok) throw Error(ErrorCode::MalformedMessage, std::string("crop field '") + key + "' missing or mistyped");
  };
  require("<map>", msg.is_object());
  require("type", msg.contains("type") && msg["type"] == "crop");
  require("ts_us", msg.contains("ts_us") && msg["ts_us"].is_number_integer());
  require("person_id", msg.contains("person_id") && msg["person_id"].is_string());
  require("part", msg.contains("part") && msg["part"].is_string());
  require("width", msg.contains("width") && msg["width"].is_number_integer());
  require("height", msg.contains("height") && msg["height"].is_number_integer());
  require("format", msg.contains("format") && msg["format"].is_string());
  require("pixels", msg.contains("pixels") && msg["pixels"].is_binary());
  const auto part = msg["part"].get<std::string>();
  require("part", part == "left_hand" || part == "right_hand" || part == "face");
  const auto w = msg["width"].get<std::int64_t>(), h = msg["height"].get<std::int64_t>();
  require("width/height", w > 0 && h > 0);
  if (msg["format"] == "bgra8")
    require("pixels", msg["pixels"].get_binary().size() == static_cast<std::size_t>(w * h * 4));
  return msg;
}

}  // namespace

std::vector<std::uint8_t> handle_crop_payload(std::span<const std::uint8_t> payload) {
  const json crop = parse_crop(payload);
  std::optional<std::string> label;
  if (crop["format"] == "bgra8") {
    const auto& px = crop["pixels"].get_binary();
    label = decode_tag(px, crop["width"].get<int>(), crop["height"].get<int>());
  }
  json result;
  result["type"] = "result";
  result["ts_us"] = crop["ts_us"];
  result["person_id"] = crop["person_id"];
  result["part"] = crop["part"];
  result["label"] = label.value_or("unknown");
  result["confidence"] = label ? 1.0 : 0.0;
  return json::to_msgpack(result);
}

wire::WireMessage handle(const wire::WireMessage& request) {
  if (request.topic != wire::kCropTopic)
    throw Error(ErrorCode::MalformedMessage, "stub only answers '" + std::string(wire::kCropTopic) + "' requests");
  return {std::string(wire::kResultTopic), handle_crop_payload(request.payload)};
}

std::vector<std::uint8_t> reencode(std::span<const std::uint8_t> payload) {
  return json::to_msgpack(parse_crop(payload));
}

}  // namespace bodyfuse::stub
