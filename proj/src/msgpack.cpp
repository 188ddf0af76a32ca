#include "bodyfuse/msgpack.hpp"

#include <cmath>
#include <cstring>
#include <limits>

#include "bodyfuse/error.hpp"

namespace bodyfuse::msgpack {

namespace {

[[noreturn]] void type_error(const char* want) { throw Error(ErrorCode::SchemaViolation, std::string("expected ") + want); }

}  // namespace

bool Value::as_bool() const {
  if (const auto* b = std::get_if<bool>(&v)) return *b;
  type_error("bool");
}

std::int64_t Value::as_int() const {
  if (const auto* i = std::get_if<std::int64_t>(&v)) return *i;
  if (const auto* u = std::get_if<std::uint64_t>(&v)) {
    if (*u <= static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max())) return static_cast<std::int64_t>(*u);
  }
  type_error("integer");
}

std::uint64_t Value::as_uint() const {
  if (const auto* u = std::get_if<std::uint64_t>(&v)) return *u;
  if (const auto* i = std::get_if<std::int64_t>(&v)) {
    if (*i >= 0) return static_cast<std::uint64_t>(*i);
  }
  type_error("unsigned integer");
}

double Value::as_double() const {
  if (const auto* d = std::get_if<double>(&v)) return *d;
  if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  if (const auto* u = std::get_if<std::uint64_t>(&v)) return static_cast<double>(*u);
  type_error("number");
}

const std::string& Value::as_string() const {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  type_error("string");
}

const Binary& Value::as_binary() const {
  if (const auto* b = std::get_if<Binary>(&v)) return *b;
  type_error("binary");
}

const Array& Value::as_array() const {
  if (const auto* a = std::get_if<Array>(&v)) return *a;
  type_error("array");
}

const Map& Value::as_map() const {
  if (const auto* m = std::get_if<Map>(&v)) return *m;
  type_error("map");
}

bool Value::operator==(const Value& other) const {
  // Integers compare by value regardless of signedness; this matches what the wire carries.
  const auto* ai = std::get_if<std::int64_t>(&v);
  const auto* au = std::get_if<std::uint64_t>(&v);
  const auto* bi = std::get_if<std::int64_t>(&other.v);
  const auto* bu = std::get_if<std::uint64_t>(&other.v);
  if ((ai || au) && (bi || bu)) {
    if (ai && bi) return *ai == *bi;
    if (au && bu) return *au == *bu;
    const std::int64_t s = ai ? *ai : *bi;
    const std::uint64_t u = au ? *au : *bu;
    return s >= 0 && static_cast<std::uint64_t>(s) == u;
  }
  return v == other.v;
}

const Value& at(const Map& m, const std::string& key) {
  const auto it = m.find(key);
  if (it == m.end()) throw Error(ErrorCode::SchemaViolation, "missing key '" + key + "'");
  return it->second;
}

const Value* find(const Map& m, const std::string& key) {
  const auto it = m.find(key);
  return it == m.end() ? nullptr : &it->second;
}

// --- encoding ------------------------------------------------------------------------------

namespace {

void put_be(std::vector<std::uint8_t>& out, std::uint64_t x, int bytes) {
  for (int i = bytes - 1; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(x >> (8 * i)));
}

void put_uint(std::vector<std::uint8_t>& out, std::uint64_t u) {
  if (u <= 0x7f) {
    out.push_back(static_cast<std::uint8_t>(u));
  } else if (u <= 0xff) {
    out.push_back(0xcc);
    put_be(out, u, 1);
  } else if (u <= 0xffff) {
    out.push_back(0xcd);
    put_be(out, u, 2);
  } else if (u <= 0xffffffffULL) {
    out.push_back(0xce);
    put_be(out, u, 4);
  } else {
    out.push_back(0xcf);
    put_be(out, u, 8);
  }
}

void put_int(std::vector<std::uint8_t>& out, std::int64_t i) {
  if (i >= 0) return put_uint(out, static_cast<std::uint64_t>(i));
  if (i >= -32) {
    out.push_back(static_cast<std::uint8_t>(i));
  } else if (i >= std::numeric_limits<std::int8_t>::min()) {
    out.push_back(0xd0);
    put_be(out, static_cast<std::uint8_t>(i), 1);
  } else if (i >= std::numeric_limits<std::int16_t>::min()) {
    out.push_back(0xd1);
    put_be(out, static_cast<std::uint16_t>(i), 2);
  } else if (i >= std::numeric_limits<std::int32_t>::min()) {
    out.push_back(0xd2);
    put_be(out, static_cast<std::uint32_t>(i), 4);
  } else {
    out.push_back(0xd3);
    put_be(out, static_cast<std::uint64_t>(i), 8);
  }
}

void put_double(std::vector<std::uint8_t>& out, double d) {
  const bool fits = d >= std::numeric_limits<float>::lowest() && d <= std::numeric_limits<float>::max() &&
                    static_cast<double>(static_cast<float>(d)) == d;
  if (fits) {
    const float f = static_cast<float>(d);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    out.push_back(0xca);
    put_be(out, bits, 4);
  } else {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    out.push_back(0xcb);
    put_be(out, bits, 8);
  }
}

void put_str(std::vector<std::uint8_t>& out, const std::string& s) {
  const std::size_t n = s.size();
  if (n <= 31) {
    out.push_back(static_cast<std::uint8_t>(0xa0 | n));
  } else if (n <= 0xff) {
    out.push_back(0xd9);
    put_be(out, n, 1);
  } else if (n <= 0xffff) {
    out.push_back(0xda);
    put_be(out, n, 2);
  } else {
    out.push_back(0xdb);
    put_be(out, n, 4);
  }
  out.insert(out.end(), s.begin(), s.end());
}

void put_bin(std::vector<std::uint8_t>& out, const Binary& b) {
  const std::size_t n = b.size();
  if (n <= 0xff) {
    out.push_back(0xc4);
    put_be(out, n, 1);
  } else if (n <= 0xffff) {
    out.push_back(0xc5);
    put_be(out, n, 2);
  } else {
    out.push_back(0xc6);
    put_be(out, n, 4);
  }
  out.insert(out.end(), b.begin(), b.end());
}

void put_container_header(std::vector<std::uint8_t>& out, std::size_t n, std::uint8_t fix, std::uint8_t b16) {
  if (n <= 15) {
    out.push_back(static_cast<std::uint8_t>(fix | n));
  } else if (n <= 0xffff) {
    out.push_back(b16);
    put_be(out, n, 2);
  } else {
    out.push_back(static_cast<std::uint8_t>(b16 + 1));
    put_be(out, n, 4);
  }
}

}  // namespace

void encode(const Value& value, std::vector<std::uint8_t>& out) {
  std::visit(
      [&](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, std::monostate>) {
          out.push_back(0xc0);
        } else if constexpr (std::is_same_v<T, bool>) {
          out.push_back(x ? 0xc3 : 0xc2);
        } else if constexpr (std::is_same_v<T, std::int64_t>) {
          put_int(out, x);
        } else if constexpr (std::is_same_v<T, std::uint64_t>) {
          put_uint(out, x);
        } else if constexpr (std::is_same_v<T, double>) {
          put_double(out, x);
        } else if constexpr (std::is_same_v<T, std::string>) {
          put_str(out, x);
        } else if constexpr (std::is_same_v<T, Binary>) {
          put_bin(out, x);
        } else if constexpr (std::is_same_v<T, Array>) {
          put_container_header(out, x.size(), 0x90, 0xdc);
          for (const auto& e : x) encode(e, out);
        } else {
          put_container_header(out, x.size(), 0x80, 0xde);
          for (const auto& [k, e] : x) {
            put_str(out, k);
            encode(e, out);
          }
        }
      },
      value.v);
}

std::vector<std::uint8_t> encode(const Value& value) {
  std::vector<std::uint8_t> out;
  encode(value, out);
  return out;
}

// --- decoding ------------------------------------------------------------------------------

namespace {

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  bool done() const { return pos_ == b_.size(); }

  std::uint64_t be(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t x = 0;
    for (int i = 0; i < bytes; ++i) x = (x << 8) | b_[pos_++];
    return x;
  }

  std::span<const std::uint8_t> take(std::uint64_t n) {
    need(n);
    const auto s = b_.subspan(pos_, static_cast<std::size_t>(n));
    pos_ += static_cast<std::size_t>(n);
    return s;
  }

  Value value(int depth) {
    if (depth > 64) throw Error(ErrorCode::MalformedMessage, "nesting too deep");
    const auto tag = static_cast<std::uint8_t>(be(1));
    if (tag <= 0x7f) return Value(static_cast<std::uint64_t>(tag));
    if (tag >= 0xe0) return Value(static_cast<std::int64_t>(static_cast<std::int8_t>(tag)));
    if ((tag & 0xe0) == 0xa0) return str(tag & 0x1f);
    if ((tag & 0xf0) == 0x90) return array(tag & 0x0f, depth);
    if ((tag & 0xf0) == 0x80) return map(tag & 0x0f, depth);
    switch (tag) {
      case 0xc0: return Value();
      case 0xc2: return Value(false);
      case 0xc3: return Value(true);
      case 0xc4: return bin(be(1));
      case 0xc5: return bin(be(2));
      case 0xc6: return bin(be(4));
      case 0xca: {
        const auto bits = static_cast<std::uint32_t>(be(4));
        float f;
        std::memcpy(&f, &bits, 4);
        return Value(static_cast<double>(f));
      }
      case 0xcb: {
        const std::uint64_t bits = be(8);
        double d;
        std::memcpy(&d, &bits, 8);
        return Value(d);
      }
      case 0xcc: return Value(be(1));
      case 0xcd: return Value(be(2));
      case 0xce: return Value(be(4));
      case 0xcf: return Value(be(8));
      case 0xd0: return Value(static_cast<std::int64_t>(static_cast<std::int8_t>(be(1))));
      case 0xd1: return Value(static_cast<std::int64_t>(static_cast<std::int16_t>(be(2))));
      case 0xd2: return Value(static_cast<std::int64_t>(static_cast<std::int32_t>(be(4))));
      case 0xd3: return Value(static_cast<std::int64_t>(be(8)));
      case 0xd9: return str(be(1));
      case 0xda: return str(be(2));
      case 0xdb: return str(be(4));
      case 0xdc: return array(be(2), depth);
      case 0xdd: return array(be(4), depth);
      case 0xde: return map(be(2), depth);
      case 0xdf: return map(be(4), depth);
      default: break;
    }
    throw Error(ErrorCode::MalformedMessage, "unsupported msgpack tag " + std::to_string(tag));
  }

 private:
  void need(std::uint64_t n) const {
    if (n > b_.size() - pos_) throw Error(ErrorCode::TruncatedPayload, "msgpack data ends early");
  }

  Value str(std::uint64_t n) {
    const auto s = take(n);
    return Value(std::string(s.begin(), s.end()));
  }
  Value bin(std::uint64_t n) {
    const auto s = take(n);
    return Value(Binary(s.begin(), s.end()));
  }
  Value array(std::uint64_t n, int depth) {
    need(n);  // every element takes at least one byte
    Array a;
    a.reserve(static_cast<std::size_t>(n));
    for (std::uint64_t i = 0; i < n; ++i) a.push_back(value(depth + 1));
    return Value(std::move(a));
  }
  Value map(std::uint64_t n, int depth) {
    need(n * 2);
    Map m;
    for (std::uint64_t i = 0; i < n; ++i) {
      Value k = value(depth + 1);
      const auto* key = std::get_if<std::string>(&k.v);
      if (key == nullptr) throw Error(ErrorCode::MalformedMessage, "map keys must be strings");
      Value e = value(depth + 1);
      m.insert_or_assign(*key, std::move(e));
    }
    return Value(std::move(m));
  }

  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace

Value decode(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw Error(ErrorCode::TruncatedPayload, "empty msgpack buffer");
  Reader r(bytes);
  Value v = r.value(0);
  if (!r.done()) throw Error(ErrorCode::MalformedMessage, "trailing bytes after msgpack value");
  return v;
}

}  // namespace bodyfuse::msgpack
