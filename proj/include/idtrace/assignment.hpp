#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace idtrace::metrics {

// Non-negative integer weights, rows = predicted side, cols = ground truth.
using WeightMatrix = std::vector<std::vector<long long>>;

struct Assignment {
  // (row, col) pairs with positive weight, sorted by row.
  std::vector<std::pair<int, int>> pairs;
  long long total_weight = 0;
};

// Maximum-weight assignment via the Kuhn-Munkres potentials method.
// Rectangular matrices are padded with zero-weight cells internally;
// zero-weight matches never appear in the result.
Assignment solve_assignment(const WeightMatrix& weights);

// Exhaustive enumeration of injective row->column maps. Exact but factorial;
// refuses matrices with max(rows, cols) > 8. This is the test oracle for
// solve_assignment and must stay independent of it.
Assignment solve_assignment_bruteforce(const WeightMatrix& weights);

}  // namespace idtrace::metrics
