#pragma once

#include <cstddef>
#include <optional>
#include <vector>

namespace bodyfuse {

/// Dense rows x cols cost matrix, row-major.
struct CostMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  CostMatrix() = default;
  CostMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}
  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

/// Minimum-cost assignment (Hungarian / Kuhn-Munkres, O(n^3)). Every row of the smaller side is
/// assigned; result[r] is the column of row r, or nullopt when rows > cols and r was left over.
std::vector<std::optional<std::size_t>> solve_assignment(const CostMatrix& cost);

/// Gated assignment: pairs with cost > threshold (or non-finite cost) are never matched and
/// unmatched items cost nothing, i.e. minimizes sum(cost - threshold) over allowed pairs.
std::vector<std::optional<std::size_t>> solve_gated_assignment(const CostMatrix& cost, double threshold);

}  // namespace bodyfuse
