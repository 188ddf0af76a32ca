#pragma once

// Minimal MessagePack value model and canonical codec. Canonical means: map keys are strings
// in sorted order, integers use the smallest encoding, floats are written as float32 when
// that is lossless and float64 otherwise, binary data uses the bin family.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace bodyfuse::msgpack {

struct Value;

using Array = std::vector<Value>;
using Map = std::map<std::string, Value>;
using Binary = std::vector<std::uint8_t>;

struct Value {
  std::variant<std::monostate, bool, std::int64_t, std::uint64_t, double, std::string, Binary, Array, Map> v;

  Value() = default;
  Value(std::nullptr_t) {}
  Value(bool b) : v(b) {}
  Value(int i) : v(static_cast<std::int64_t>(i)) {}
  Value(std::int64_t i) : v(i) {}
  Value(std::uint32_t u) : v(static_cast<std::uint64_t>(u)) {}
  Value(std::uint64_t u) : v(u) {}
  Value(double d) : v(d) {}
  Value(const char* s) : v(std::string(s)) {}
  Value(std::string s) : v(std::move(s)) {}
  Value(Binary b) : v(std::move(b)) {}
  Value(Array a) : v(std::move(a)) {}
  Value(Map m) : v(std::move(m)) {}

  bool is_nil() const { return std::holds_alternative<std::monostate>(v); }
  bool is_map() const { return std::holds_alternative<Map>(v); }

  // Typed accessors throw SchemaViolation on a type mismatch.
  bool as_bool() const;
  std::int64_t as_int() const;  // accepts either integer family when in range
  std::uint64_t as_uint() const;
  double as_double() const;     // accepts integers too
  const std::string& as_string() const;
  const Binary& as_binary() const;
  const Array& as_array() const;
  const Map& as_map() const;

  bool operator==(const Value& other) const;
};

/// Map lookups that throw SchemaViolation naming the missing key.
const Value& at(const Map& m, const std::string& key);
const Value* find(const Map& m, const std::string& key);

void encode(const Value& value, std::vector<std::uint8_t>& out);
std::vector<std::uint8_t> encode(const Value& value);

/// Decodes exactly one value spanning the whole buffer. Throws TruncatedPayload when the
/// data ends early and MalformedMessage for bad tags, trailing bytes or non-string keys.
Value decode(std::span<const std::uint8_t> bytes);

}  // namespace bodyfuse::msgpack
