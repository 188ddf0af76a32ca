#pragma once

// Data-parallel inner loops over structure-of-arrays point buffers. Every kernel has a
// scalar reference (`*_ref`) and optional SIMD variants; the variants are bit-identical to
// the reference (same operation order, no fused multiply-add), so dispatch never changes
// results. The active table is picked once from the CPU and can be overridden with
// BODYFUSE_ISA=scalar|avx2 or kernels::select().

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "bodyfuse/geometry.hpp"

namespace bodyfuse::kernels {

/// out = R·p + t for n points. R is row-major 3x3.
using TransformFn = void (*)(const double* rot, const double* trans, const double* xs, const double* ys,
                             const double* zs, double* out_x, double* out_y, double* out_z, std::size_t n);

/// Index of the point nearest to q (squared Euclidean), lowest index on ties. n >= 1.
using NearestFn = std::size_t (*)(double qx, double qy, double qz, const double* xs, const double* ys,
                                  const double* zs, std::size_t n, double* best_d2);

/// Plane coordinates of each point relative to a frame (origin, u, v, normal):
/// a = (p-o)·u, b = (p-o)·v, d = (p-o)·n.
using PlaneCoordsFn = void (*)(const double* xs, const double* ys, const double* zs, std::size_t n,
                               const double* origin, const double* u, const double* v, const double* normal,
                               double* out_a, double* out_b, double* out_d);

enum class Isa { Scalar, Avx2 };

struct KernelTable {
  Isa isa;
  std::string_view name;
  TransformFn transform;
  NearestFn nearest;
  PlaneCoordsFn plane_coords;
};

void transform_ref(const double* rot, const double* trans, const double* xs, const double* ys, const double* zs,
                   double* out_x, double* out_y, double* out_z, std::size_t n);
std::size_t nearest_ref(double qx, double qy, double qz, const double* xs, const double* ys, const double* zs,
                        std::size_t n, double* best_d2);
void plane_coords_ref(const double* xs, const double* ys, const double* zs, std::size_t n, const double* origin,
                      const double* u, const double* v, const double* normal, double* out_a, double* out_b,
                      double* out_d);

#if defined(__x86_64__)
void transform_avx2(const double* rot, const double* trans, const double* xs, const double* ys, const double* zs,
                    double* out_x, double* out_y, double* out_z, std::size_t n);
std::size_t nearest_avx2(double qx, double qy, double qz, const double* xs, const double* ys, const double* zs,
                         std::size_t n, double* best_d2);
void plane_coords_avx2(const double* xs, const double* ys, const double* zs, std::size_t n, const double* origin,
                       const double* u, const double* v, const double* normal, double* out_a, double* out_b,
                       double* out_d);
#endif

bool supported(Isa isa);
/// Throws InvalidArgument when the ISA is not available on this CPU.
const KernelTable& table(Isa isa);
const KernelTable& active();
void select(Isa isa);

/// Structure-of-arrays copy of a point set.
struct SoaPoints {
  std::vector<double> x, y, z;

  SoaPoints() = default;
  explicit SoaPoints(std::span<const Vec3> points);

  std::size_t size() const { return x.size(); }
  void resize(std::size_t n) {
    x.resize(n);
    y.resize(n);
    z.resize(n);
  }
  Vec3 at(std::size_t i) const { return {x[i], y[i], z[i]}; }
};

/// Applies `t` to every point using the active kernel table.
void transform_points(const RigidTransform& t, const SoaPoints& in, SoaPoints& out);

}  // namespace bodyfuse::kernels
