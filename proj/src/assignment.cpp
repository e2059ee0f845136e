#include "idtrace/assignment.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace idtrace::metrics {

namespace {

void check_matrix(const WeightMatrix& weights) {
  const size_t cols = weights.empty() ? 0 : weights.front().size();
  for (const auto& row : weights) {
    if (row.size() != cols) throw std::invalid_argument("assignment: ragged weight matrix");
    for (long long w : row) {
      if (w < 0) throw std::invalid_argument("assignment: negative weight");
    }
  }
}

}  // namespace

Assignment solve_assignment(const WeightMatrix& weights) {
  check_matrix(weights);
  const int rows = static_cast<int>(weights.size());
  const int cols = rows == 0 ? 0 : static_cast<int>(weights.front().size());
  Assignment result;
  if (rows == 0 || cols == 0) return result;

  // Square cost matrix: cost = max_weight - weight, padding cells cost
  // max_weight. Minimizing total cost over a perfect matching maximizes the
  // total weight.
  const int n = std::max(rows, cols);
  long long max_w = 0;
  for (const auto& row : weights) {
    for (long long w : row) max_w = std::max(max_w, w);
  }
  auto cost = [&](int r, int c) -> long long {
    if (r < rows && c < cols) return max_w - weights[r][c];
    return max_w;
  };

  // Kuhn-Munkres with row/column potentials and shortest augmenting paths
  // (1-based internal arrays; p[j] = row matched to column j).
  const long long kInf = std::numeric_limits<long long>::max() / 4;
  std::vector<long long> u(n + 1, 0), v(n + 1, 0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<long long> min_slack(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = 0;
      long long delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const long long cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < min_slack[j]) {
          min_slack[j] = cur;
          way[j] = j0;
        }
        if (min_slack[j] < delta) {
          delta = min_slack[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          min_slack[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  for (int j = 1; j <= n; ++j) {
    const int i = p[j];
    if (i == 0) continue;
    const int r = i - 1;
    const int c = j - 1;
    if (r < rows && c < cols && weights[r][c] > 0) {
      result.pairs.emplace_back(r, c);
      result.total_weight += weights[r][c];
    }
  }
  std::sort(result.pairs.begin(), result.pairs.end());
  return result;
}

namespace {

struct BruteState {
  const WeightMatrix* weights;
  bool transposed;
  int rows, cols;
  long long best_total = -1;
  std::vector<int> current, best;

  long long at(int r, int c) const {
    return transposed ? (*weights)[c][r] : (*weights)[r][c];
  }

  // rows <= cols is guaranteed by the caller (transposition), so every row
  // can be assigned; with non-negative weights that loses no optimum.
  void recurse(int row, uint32_t used_cols, long long total) {
    if (row == rows) {
      if (total > best_total) {
        best_total = total;
        best = current;
      }
      return;
    }
    for (int c = 0; c < cols; ++c) {
      if (used_cols & (1u << c)) continue;
      current[row] = c;
      recurse(row + 1, used_cols | (1u << c), total + at(row, c));
    }
  }
};

}  // namespace

Assignment solve_assignment_bruteforce(const WeightMatrix& weights) {
  check_matrix(weights);
  const int rows = static_cast<int>(weights.size());
  const int cols = rows == 0 ? 0 : static_cast<int>(weights.front().size());
  Assignment result;
  if (rows == 0 || cols == 0) return result;
  if (std::max(rows, cols) > 8) {
    throw std::invalid_argument(
        "solve_assignment_bruteforce: matrix side exceeds the enumeration bound of 8");
  }

  BruteState state;
  state.weights = &weights;
  state.transposed = rows > cols;
  state.rows = state.transposed ? cols : rows;
  state.cols = state.transposed ? rows : cols;
  state.current.assign(state.rows, -1);
  state.recurse(0, 0, 0);

  for (int r = 0; r < state.rows; ++r) {
    const int c = state.best[r];
    if (c < 0) continue;
    const int row = state.transposed ? c : r;
    const int col = state.transposed ? r : c;
    if (weights[row][col] > 0) {
      result.pairs.emplace_back(row, col);
      result.total_weight += weights[row][col];
    }
  }
  std::sort(result.pairs.begin(), result.pairs.end());
  return result;
}

}  // namespace idtrace::metrics
