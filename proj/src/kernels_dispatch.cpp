#include <atomic>
#include <cstdlib>
#include <string>

#include "bodyfuse/error.hpp"
#include "bodyfuse/kernels.hpp"

namespace bodyfuse::kernels {
namespace {

constexpr KernelTable kScalar{Isa::Scalar, "scalar", transform_ref, nearest_ref, plane_coords_ref};
#if defined(__x86_64__)
constexpr KernelTable kAvx2{Isa::Avx2, "avx2", transform_avx2, nearest_avx2, plane_coords_avx2};
#endif

const KernelTable* initial_table() {
  const char* env = std::getenv("BODYFUSE_ISA");
  if (env != nullptr && std::string(env) == "scalar") return &kScalar;
#if defined(__x86_64__)
  if (supported(Isa::Avx2)) return &kAvx2;
#endif
  return &kScalar;
}

std::atomic<const KernelTable*>& active_slot() {
  static std::atomic<const KernelTable*> slot{initial_table()};
  return slot;
}

}  // namespace

bool supported(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return true;
    case Isa::Avx2:
#if defined(__x86_64__)
      return __builtin_cpu_supports("avx2");
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& table(Isa isa) {
  if (!supported(isa)) throw Error(ErrorCode::InvalidArgument, "instruction set not supported on this CPU");
#if defined(__x86_64__)
  if (isa == Isa::Avx2) return kAvx2;
#endif
  return kScalar;
}

const KernelTable& active() { return *active_slot().load(std::memory_order_acquire); }

void select(Isa isa) { active_slot().store(&table(isa), std::memory_order_release); }

SoaPoints::SoaPoints(std::span<const Vec3> points) {
  resize(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    x[i] = points[i].x;
    y[i] = points[i].y;
    z[i] = points[i].z;
  }
}

void transform_points(const RigidTransform& t, const SoaPoints& in, SoaPoints& out) {
  out.resize(in.size());
  const auto rot = t.rotation.to_matrix();
  const double trans[3] = {t.translation.x, t.translation.y, t.translation.z};
  active().transform(rot.data(), trans, in.x.data(), in.y.data(), in.z.data(), out.x.data(), out.y.data(),
                     out.z.data(), in.size());
}

}  // namespace bodyfuse::kernels
