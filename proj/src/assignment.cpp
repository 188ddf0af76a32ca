#include "bodyfuse/assignment.hpp"

#include <cmath>
#include <limits>

namespace bodyfuse {

std::vector<std::optional<std::size_t>> solve_assignment(const CostMatrix& cost) {
  const std::size_t n = std::max(cost.rows, cost.cols);
  std::vector<std::optional<std::size_t>> result(cost.rows);
  if (n == 0) return result;

  // Square padding with zeros; potentials formulation with 1-based indices.
  auto a = [&](std::size_t i, std::size_t j) -> double {
    return (i < cost.rows && j < cost.cols) ? cost.at(i, j) : 0.0;
  };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  for (std::size_t j = 1; j <= n; ++j) {
    const std::size_t row = p[j] - 1;
    if (row < cost.rows && j - 1 < cost.cols) result[row] = j - 1;
  }
  return result;
}

std::vector<std::optional<std::size_t>> solve_gated_assignment(const CostMatrix& cost, double threshold) {
  CostMatrix shifted(cost.rows, cost.cols, 0.0);
  for (std::size_t r = 0; r < cost.rows; ++r)
    for (std::size_t c = 0; c < cost.cols; ++c) {
      const double v = cost.at(r, c);
      shifted.at(r, c) = (std::isfinite(v) && v <= threshold) ? v - threshold : 0.0;
    }
  auto raw = solve_assignment(shifted);
  for (std::size_t r = 0; r < raw.size(); ++r) {
    if (!raw[r]) continue;
    const double v = cost.at(r, *raw[r]);
    if (!(std::isfinite(v) && v <= threshold)) raw[r].reset();
  }
  return raw;
}

}  // namespace bodyfuse
