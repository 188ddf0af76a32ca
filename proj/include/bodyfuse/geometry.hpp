#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>

namespace bodyfuse {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr Vec3() = default;
  constexpr Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

  constexpr Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  constexpr Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  constexpr Vec3 operator-() const { return {-x, -y, -z}; }
  constexpr Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  constexpr Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  constexpr Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  constexpr Vec3& operator-=(const Vec3& o) {
    x -= o.x;
    y -= o.y;
    z -= o.z;
    return *this;
  }
  constexpr bool operator==(const Vec3&) const = default;
};

constexpr Vec3 operator*(double s, const Vec3& v) { return v * s; }
constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
inline double distance(const Vec3& a, const Vec3& b) { return norm(a - b); }
inline bool is_finite(const Vec3& v) {
  return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z);
}
/// Throws InvalidArgument for a zero or non-finite vector.
Vec3 normalized(const Vec3& v);

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  constexpr bool operator==(const Vec2&) const = default;
};

/// Unit quaternion, Hamilton convention, w first.
struct Quaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  static Quaternion identity() { return {}; }
  /// Rotation by `angle_rad` about `axis` (need not be unit length).
  static Quaternion from_axis_angle(const Vec3& axis, double angle_rad);
  static Quaternion from_matrix(const std::array<double, 9>& row_major);

  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
  Quaternion normalized() const;
  Quaternion conjugate() const { return {w, -x, -y, -z}; }
  Quaternion operator*(const Quaternion& o) const;
  Vec3 rotate(const Vec3& v) const;
  std::array<double, 9> to_matrix() const;
  bool operator==(const Quaternion&) const = default;
};

/// Angle in radians of the rotation taking `a` to `b`.
double angle_between(const Quaternion& a, const Quaternion& b);

/// Maps points of a source frame into a target frame: p' = R p + t.
/// Named by convention `target_from_source`.
struct RigidTransform {
  Quaternion rotation;
  Vec3 translation;

  static RigidTransform identity() { return {}; }
  static RigidTransform from_matrix(const std::array<double, 16>& row_major);

  RigidTransform inverse() const;
  std::array<double, 16> to_matrix() const;
  bool operator==(const RigidTransform&) const = default;
};

Vec3 transform_point(const RigidTransform& t, const Vec3& p);
/// (a ∘ b)(p) = a(b(p)).
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
inline RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) { return compose(a, b); }

struct TransformError {
  double translation_m;
  double rotation_deg;
};
TransformError transform_error(const RigidTransform& estimate, const RigidTransform& truth);

struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  /// Throws InvalidArgument when fx, fy or the principal point are out of range.
  void validate() const;
  bool operator==(const CameraIntrinsics&) const = default;
};

/// Pinhole back-projection; camera looks down +z and depth is the z coordinate.
Vec3 unproject(const CameraIntrinsics& intr, double u, double v, double depth);
/// The result may fall outside the image; callers clamp.
Vec2 project(const CameraIntrinsics& intr, const Vec3& p);

/// Ray with a unit direction.
class Ray {
 public:
  /// Normalizes `direction`; throws InvalidArgument for a zero direction.
  Ray(const Vec3& origin, const Vec3& direction);

  const Vec3& origin() const { return origin_; }
  const Vec3& direction() const { return direction_; }
  Vec3 at(double t) const { return origin_ + direction_ * t; }

 private:
  Vec3 origin_;
  Vec3 direction_;
};

Ray transform_ray(const RigidTransform& t, const Ray& ray);

struct ScreenRect {
  std::string screen_id;
  Vec3 origin;  // bottom-left corner, world frame
  Vec3 u_axis{1.0, 0.0, 0.0};
  Vec3 v_axis{0.0, 1.0, 0.0};
  double width = 0.0;
  double height = 0.0;
  int pixel_width = 0;
  int pixel_height = 0;

  Vec3 normal() const { return cross(u_axis, v_axis); }
  /// Throws InvalidArgument when the axes are not orthonormal or a size is non-positive.
  void validate() const;
};

struct ScreenHit {
  std::string screen_id;
  Vec2 uv;     // normalized, v along the screen's v_axis (bottom-up)
  Vec2 pixel;  // top-left pixel origin
  Vec3 point;  // world frame
  double distance = 0.0;  // along the ray
};

/// Ray-plane intersection clipped to the screen rectangle. Parallel rays, hits behind the
/// origin and hits outside the rectangle return nullopt.
std::optional<ScreenHit> intersect_screen(const Ray& ray, const ScreenRect& screen);
/// Nearest hit over all screens.
std::optional<ScreenHit> intersect_screens(const Ray& ray, std::span<const ScreenRect> screens);

}  // namespace bodyfuse
