#include "bodyfuse/geometry.hpp"

#include <algorithm>
#include <limits>

#include "bodyfuse/error.hpp"

namespace bodyfuse {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::OutOfImageBounds: return "OutOfImageBounds";
    case ErrorCode::BehindCamera: return "BehindCamera";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::EmptyIndex: return "EmptyIndex";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::NoInliers: return "NoInliers";
    case ErrorCode::GapTooLarge: return "GapTooLarge";
    case ErrorCode::MismatchedBody: return "MismatchedBody";
    case ErrorCode::TimestampOutOfRange: return "TimestampOutOfRange";
    case ErrorCode::EmptySet: return "EmptySet";
    case ErrorCode::PreconditionViolation: return "PreconditionViolation";
    case ErrorCode::InsufficientOverlap: return "InsufficientOverlap";
    case ErrorCode::DisconnectedSensor: return "DisconnectedSensor";
    case ErrorCode::AmbiguousPath: return "AmbiguousPath";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::CorruptRecord: return "CorruptRecord";
    case ErrorCode::UnknownStream: return "UnknownStream";
    case ErrorCode::OrderViolation: return "OrderViolation";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::InvalidScript: return "InvalidScript";
    case ErrorCode::MalformedMessage: return "MalformedMessage";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::ConnectionRefused: return "ConnectionRefused";
    case ErrorCode::BindFailure: return "BindFailure";
    case ErrorCode::TransportError: return "TransportError";
  }
  return "Unknown";
}

Vec3 normalized(const Vec3& v) {
  const double n = norm(v);
  if (!(n > 0.0) || !std::isfinite(n)) throw Error(ErrorCode::InvalidArgument, "cannot normalize zero vector");
  return v / n;
}

Quaternion Quaternion::from_axis_angle(const Vec3& axis, double angle_rad) {
  const Vec3 a = bodyfuse::normalized(axis);
  const double s = std::sin(angle_rad / 2.0);
  return {std::cos(angle_rad / 2.0), a.x * s, a.y * s, a.z * s};
}

Quaternion Quaternion::from_matrix(const std::array<double, 9>& m) {
  // Shepperd's method: pick the largest diagonal term for stability.
  const double trace = m[0] + m[4] + m[8];
  Quaternion q;
  if (trace > 0.0) {
    const double s = std::sqrt(trace + 1.0) * 2.0;
    q.w = 0.25 * s;
    q.x = (m[7] - m[5]) / s;
    q.y = (m[2] - m[6]) / s;
    q.z = (m[3] - m[1]) / s;
  } else if (m[0] > m[4] && m[0] > m[8]) {
    const double s = std::sqrt(1.0 + m[0] - m[4] - m[8]) * 2.0;
    q.w = (m[7] - m[5]) / s;
    q.x = 0.25 * s;
    q.y = (m[1] + m[3]) / s;
    q.z = (m[2] + m[6]) / s;
  } else if (m[4] > m[8]) {
    const double s = std::sqrt(1.0 + m[4] - m[0] - m[8]) * 2.0;
    q.w = (m[2] - m[6]) / s;
    q.x = (m[1] + m[3]) / s;
    q.y = 0.25 * s;
    q.z = (m[5] + m[7]) / s;
  } else {
    const double s = std::sqrt(1.0 + m[8] - m[0] - m[4]) * 2.0;
    q.w = (m[3] - m[1]) / s;
    q.x = (m[2] + m[6]) / s;
    q.y = (m[5] + m[7]) / s;
    q.z = 0.25 * s;
  }
  if (q.w < 0.0) q = {-q.w, -q.x, -q.y, -q.z};
  return q.normalized();
}

Quaternion Quaternion::normalized() const {
  const double n = norm();
  if (!(n > 0.0)) throw Error(ErrorCode::InvalidArgument, "zero quaternion");
  return {w / n, x / n, y / n, z / n};
}

Quaternion Quaternion::operator*(const Quaternion& o) const {
  return {w * o.w - x * o.x - y * o.y - z * o.z,
          w * o.x + x * o.w + y * o.z - z * o.y,
          w * o.y - x * o.z + y * o.w + z * o.x,
          w * o.z + x * o.y - y * o.x + z * o.w};
}

Vec3 Quaternion::rotate(const Vec3& v) const {
  // v' = v + 2w (q × v) + 2 q × (q × v)
  const Vec3 q{x, y, z};
  const Vec3 t = cross(q, v) * 2.0;
  return v + t * w + cross(q, t);
}

std::array<double, 9> Quaternion::to_matrix() const {
  const double xx = x * x, yy = y * y, zz = z * z;
  const double xy = x * y, xz = x * z, yz = y * z;
  const double wx = w * x, wy = w * y, wz = w * z;
  return {1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz),       2.0 * (xz + wy),
          2.0 * (xy + wz),       1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx),
          2.0 * (xz - wy),       2.0 * (yz + wx),       1.0 - 2.0 * (xx + yy)};
}

double angle_between(const Quaternion& a, const Quaternion& b) {
  const Quaternion d = a.conjugate() * b;
  const double v = std::sqrt(d.x * d.x + d.y * d.y + d.z * d.z);
  return 2.0 * std::atan2(v, std::abs(d.w));
}

RigidTransform RigidTransform::from_matrix(const std::array<double, 16>& m) {
  RigidTransform t;
  t.rotation = Quaternion::from_matrix({m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]});
  t.translation = {m[3], m[7], m[11]};
  return t;
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform inv;
  inv.rotation = rotation.conjugate();
  inv.translation = -inv.rotation.rotate(translation);
  return inv;
}

std::array<double, 16> RigidTransform::to_matrix() const {
  const auto r = rotation.to_matrix();
  return {r[0], r[1], r[2], translation.x,
          r[3], r[4], r[5], translation.y,
          r[6], r[7], r[8], translation.z,
          0.0,  0.0,  0.0,  1.0};
}

Vec3 transform_point(const RigidTransform& t, const Vec3& p) { return t.rotation.rotate(p) + t.translation; }

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  RigidTransform c;
  c.rotation = (a.rotation * b.rotation).normalized();
  if (c.rotation.w < 0.0) c.rotation = {-c.rotation.w, -c.rotation.x, -c.rotation.y, -c.rotation.z};
  c.translation = a.rotation.rotate(b.translation) + a.translation;
  return c;
}

TransformError transform_error(const RigidTransform& estimate, const RigidTransform& truth) {
  return {distance(estimate.translation, truth.translation),
          angle_between(estimate.rotation, truth.rotation) * 180.0 / M_PI};
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw Error(ErrorCode::InvalidArgument, "focal lengths must be positive");
  if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidArgument, "image size must be positive");
  if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height))
    throw Error(ErrorCode::InvalidArgument, "principal point outside image");
}

Vec3 unproject(const CameraIntrinsics& intr, double u, double v, double depth) {
  if (!(depth > 0.0)) throw Error(ErrorCode::NonPositiveDepth, "depth must be positive");
  if (!(u >= 0.0 && u < intr.width && v >= 0.0 && v < intr.height))
    throw Error(ErrorCode::OutOfImageBounds, "pixel outside image");
  return {(u - intr.cx) / intr.fx * depth, (v - intr.cy) / intr.fy * depth, depth};
}

Vec2 project(const CameraIntrinsics& intr, const Vec3& p) {
  if (!(p.z > 0.0)) throw Error(ErrorCode::BehindCamera, "point behind camera");
  return {intr.fx * p.x / p.z + intr.cx, intr.fy * p.y / p.z + intr.cy};
}

Ray::Ray(const Vec3& origin, const Vec3& direction) : origin_(origin), direction_(bodyfuse::normalized(direction)) {}

Ray transform_ray(const RigidTransform& t, const Ray& ray) {
  return Ray(transform_point(t, ray.origin()), t.rotation.rotate(ray.direction()));
}

void ScreenRect::validate() const {
  if (!(width > 0.0) || !(height > 0.0)) throw Error(ErrorCode::InvalidArgument, "screen size must be positive");
  if (std::abs(norm(u_axis) - 1.0) > 1e-9 || std::abs(norm(v_axis) - 1.0) > 1e-9)
    throw Error(ErrorCode::InvalidArgument, "screen axes must be unit length");
  if (std::abs(dot(u_axis, v_axis)) > 1e-9) throw Error(ErrorCode::InvalidArgument, "screen axes not orthogonal");
  if (pixel_width <= 0 || pixel_height <= 0) throw Error(ErrorCode::InvalidArgument, "screen pixel size must be positive");
}

std::optional<ScreenHit> intersect_screen(const Ray& ray, const ScreenRect& screen) {
  const Vec3 n = screen.normal();
  const double denom = dot(ray.direction(), n);
  if (std::abs(denom) < 1e-9) return std::nullopt;
  const double t = dot(screen.origin - ray.origin(), n) / denom;
  if (!(t > 0.0)) return std::nullopt;
  const Vec3 hit = ray.at(t);
  const Vec3 rel = hit - screen.origin;
  const double a = dot(rel, screen.u_axis);
  const double b = dot(rel, screen.v_axis);
  if (a < 0.0 || a > screen.width || b < 0.0 || b > screen.height) return std::nullopt;
  ScreenHit out;
  out.screen_id = screen.screen_id;
  out.uv = {a / screen.width, b / screen.height};
  out.pixel = {out.uv.x * screen.pixel_width, (1.0 - out.uv.y) * screen.pixel_height};
  out.point = hit;
  out.distance = t;
  return out;
}

std::optional<ScreenHit> intersect_screens(const Ray& ray, std::span<const ScreenRect> screens) {
  std::optional<ScreenHit> best;
  for (const auto& s : screens) {
    auto hit = intersect_screen(ray, s);
    if (hit && (!best || hit->distance < best->distance)) best = std::move(hit);
  }
  return best;
}

}  // namespace bodyfuse
