#include "bodyfuse/kernels.hpp"

namespace bodyfuse::kernels {

void transform_ref(const double* rot, const double* trans, const double* xs, const double* ys, const double* zs,
                   double* out_x, double* out_y, double* out_z, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const double x = xs[i], y = ys[i], z = zs[i];
    out_x[i] = ((rot[0] * x + rot[1] * y) + rot[2] * z) + trans[0];
    out_y[i] = ((rot[3] * x + rot[4] * y) + rot[5] * z) + trans[1];
    out_z[i] = ((rot[6] * x + rot[7] * y) + rot[8] * z) + trans[2];
  }
}

std::size_t nearest_ref(double qx, double qy, double qz, const double* xs, const double* ys, const double* zs,
                        std::size_t n, double* best_d2) {
  std::size_t best = 0;
  double best_val = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - qx, dy = ys[i] - qy, dz = zs[i] - qz;
    const double d2 = (dx * dx + dy * dy) + dz * dz;
    if (i == 0 || d2 < best_val) {
      best_val = d2;
      best = i;
    }
  }
  *best_d2 = best_val;
  return best;
}

void plane_coords_ref(const double* xs, const double* ys, const double* zs, std::size_t n, const double* origin,
                      const double* u, const double* v, const double* normal, double* out_a, double* out_b,
                      double* out_d) {
  for (std::size_t i = 0; i < n; ++i) {
    const double rx = xs[i] - origin[0], ry = ys[i] - origin[1], rz = zs[i] - origin[2];
    out_a[i] = (rx * u[0] + ry * u[1]) + rz * u[2];
    out_b[i] = (rx * v[0] + ry * v[1]) + rz * v[2];
    out_d[i] = (rx * normal[0] + ry * normal[1]) + rz * normal[2];
  }
}

}  // namespace bodyfuse::kernels
