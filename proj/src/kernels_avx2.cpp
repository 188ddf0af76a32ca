// Compiled with -mavx2 (no FMA). Only reached through the dispatch table after a CPU check.
#include "bodyfuse/kernels.hpp"

#if defined(__x86_64__)
#include <immintrin.h>

#include <cstdint>

namespace bodyfuse::kernels {

void transform_avx2(const double* rot, const double* trans, const double* xs, const double* ys, const double* zs,
                    double* out_x, double* out_y, double* out_z, std::size_t n) {
  const __m256d r0 = _mm256_set1_pd(rot[0]), r1 = _mm256_set1_pd(rot[1]), r2 = _mm256_set1_pd(rot[2]);
  const __m256d r3 = _mm256_set1_pd(rot[3]), r4 = _mm256_set1_pd(rot[4]), r5 = _mm256_set1_pd(rot[5]);
  const __m256d r6 = _mm256_set1_pd(rot[6]), r7 = _mm256_set1_pd(rot[7]), r8 = _mm256_set1_pd(rot[8]);
  const __m256d t0 = _mm256_set1_pd(trans[0]), t1 = _mm256_set1_pd(trans[1]), t2 = _mm256_set1_pd(trans[2]);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d x = _mm256_loadu_pd(xs + i);
    const __m256d y = _mm256_loadu_pd(ys + i);
    const __m256d z = _mm256_loadu_pd(zs + i);
    __m256d ox = _mm256_add_pd(_mm256_add_pd(_mm256_mul_pd(r0, x), _mm256_mul_pd(r1, y)), _mm256_mul_pd(r2, z));
    __m256d oy = _mm256_add_pd(_mm256_add_pd(_mm256_mul_pd(r3, x), _mm256_mul_pd(r4, y)), _mm256_mul_pd(r5, z));
    __m256d oz = _mm256_add_pd(_mm256_add_pd(_mm256_mul_pd(r6, x), _mm256_mul_pd(r7, y)), _mm256_mul_pd(r8, z));
    _mm256_storeu_pd(out_x + i, _mm256_add_pd(ox, t0));
    _mm256_storeu_pd(out_y + i, _mm256_add_pd(oy, t1));
    _mm256_storeu_pd(out_z + i, _mm256_add_pd(oz, t2));
  }
  if (i < n) transform_ref(rot, trans, xs + i, ys + i, zs + i, out_x + i, out_y + i, out_z + i, n - i);
}

std::size_t nearest_avx2(double qx, double qy, double qz, const double* xs, const double* ys, const double* zs,
                         std::size_t n, double* best_d2) {
  if (n < 8) return nearest_ref(qx, qy, qz, xs, ys, zs, n, best_d2);

  const __m256d vqx = _mm256_set1_pd(qx), vqy = _mm256_set1_pd(qy), vqz = _mm256_set1_pd(qz);
  __m256d best = _mm256_set1_pd(__builtin_inf());
  __m256i best_idx = _mm256_setzero_si256();
  __m256i idx = _mm256_setr_epi64x(0, 1, 2, 3);
  const __m256i step = _mm256_set1_epi64x(4);

  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d dx = _mm256_sub_pd(_mm256_loadu_pd(xs + i), vqx);
    const __m256d dy = _mm256_sub_pd(_mm256_loadu_pd(ys + i), vqy);
    const __m256d dz = _mm256_sub_pd(_mm256_loadu_pd(zs + i), vqz);
    const __m256d d2 =
        _mm256_add_pd(_mm256_add_pd(_mm256_mul_pd(dx, dx), _mm256_mul_pd(dy, dy)), _mm256_mul_pd(dz, dz));
    // strict less-than keeps the earliest index within each lane
    const __m256d lt = _mm256_cmp_pd(d2, best, _CMP_LT_OQ);
    best = _mm256_blendv_pd(best, d2, lt);
    best_idx = _mm256_castpd_si256(
        _mm256_blendv_pd(_mm256_castsi256_pd(best_idx), _mm256_castsi256_pd(idx), lt));
    idx = _mm256_add_epi64(idx, step);
  }

  alignas(32) double lane_d2[4];
  alignas(32) std::int64_t lane_idx[4];
  _mm256_store_pd(lane_d2, best);
  _mm256_store_si256(reinterpret_cast<__m256i*>(lane_idx), best_idx);

  double best_val = lane_d2[0];
  std::size_t best_i = static_cast<std::size_t>(lane_idx[0]);
  for (int l = 1; l < 4; ++l) {
    const auto li = static_cast<std::size_t>(lane_idx[l]);
    if (lane_d2[l] < best_val || (lane_d2[l] == best_val && li < best_i)) {
      best_val = lane_d2[l];
      best_i = li;
    }
  }
  for (; i < n; ++i) {
    const double dx = xs[i] - qx, dy = ys[i] - qy, dz = zs[i] - qz;
    const double d2 = (dx * dx + dy * dy) + dz * dz;
    if (d2 < best_val) {
      best_val = d2;
      best_i = i;
    }
  }
  // All-NaN lanes leave +inf; fall back to the reference scan for exact parity.
  if (!(best_val < __builtin_inf())) return nearest_ref(qx, qy, qz, xs, ys, zs, n, best_d2);
  *best_d2 = best_val;
  return best_i;
}

void plane_coords_avx2(const double* xs, const double* ys, const double* zs, std::size_t n, const double* origin,
                       const double* u, const double* v, const double* normal, double* out_a, double* out_b,
                       double* out_d) {
  const __m256d o0 = _mm256_set1_pd(origin[0]), o1 = _mm256_set1_pd(origin[1]), o2 = _mm256_set1_pd(origin[2]);
  const __m256d u0 = _mm256_set1_pd(u[0]), u1 = _mm256_set1_pd(u[1]), u2 = _mm256_set1_pd(u[2]);
  const __m256d v0 = _mm256_set1_pd(v[0]), v1 = _mm256_set1_pd(v[1]), v2 = _mm256_set1_pd(v[2]);
  const __m256d n0 = _mm256_set1_pd(normal[0]), n1 = _mm256_set1_pd(normal[1]), n2 = _mm256_set1_pd(normal[2]);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d rx = _mm256_sub_pd(_mm256_loadu_pd(xs + i), o0);
    const __m256d ry = _mm256_sub_pd(_mm256_loadu_pd(ys + i), o1);
    const __m256d rz = _mm256_sub_pd(_mm256_loadu_pd(zs + i), o2);
    _mm256_storeu_pd(out_a + i, _mm256_add_pd(_mm256_add_pd(_mm256_mul_pd(rx, u0), _mm256_mul_pd(ry, u1)),
                                              _mm256_mul_pd(rz, u2)));
    _mm256_storeu_pd(out_b + i, _mm256_add_pd(_mm256_add_pd(_mm256_mul_pd(rx, v0), _mm256_mul_pd(ry, v1)),
                                              _mm256_mul_pd(rz, v2)));
    _mm256_storeu_pd(out_d + i, _mm256_add_pd(_mm256_add_pd(_mm256_mul_pd(rx, n0), _mm256_mul_pd(ry, n1)),
                                              _mm256_mul_pd(rz, n2)));
  }
  if (i < n)
    plane_coords_ref(xs + i, ys + i, zs + i, n - i, origin, u, v, normal, out_a + i, out_b + i, out_d + i);
}

}  // namespace bodyfuse::kernels
#endif
