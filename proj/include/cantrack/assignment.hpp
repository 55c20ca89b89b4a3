#pragma once

// Maximum-weight one-to-one assignment between two identity sets.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

namespace cantrack {

using WeightMatrix = std::vector<std::vector<std::int64_t>>;

struct AssignmentResult {
  std::int64_t total = 0;
  std::vector<int> col_of_row;  // -1 when the row stays unassigned
};

// Shortest augmenting path (Kuhn-Munkres with potentials) on the square
// padding of `w`, minimizing -w. O(n^3).
inline AssignmentResult max_weight_assignment_hungarian(const WeightMatrix& w) {
  const std::size_t rows = w.size();
  const std::size_t cols = rows ? w.front().size() : 0;
  const std::size_t n = std::max(rows, cols);
  AssignmentResult out;
  out.col_of_row.assign(rows, -1);
  if (n == 0) return out;
  auto cost = [&](std::size_t i, std::size_t j) -> std::int64_t {
    return (i < rows && j < cols) ? -w[i][j] : 0;
  };
  constexpr std::int64_t kInf = std::numeric_limits<std::int64_t>::max() / 4;
  // 1-based arrays; index 0 is the virtual source column.
  std::vector<std::int64_t> u(n + 1, 0), v(n + 1, 0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<std::int64_t> minv(n + 1, kInf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      std::int64_t delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const std::int64_t cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
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
    const std::size_t i = p[j] - 1;
    const std::size_t c = j - 1;
    if (i < rows && c < cols && w[i][c] > 0) {
      out.col_of_row[i] = static_cast<int>(c);
      out.total += w[i][c];
    }
  }
  return out;
}

// Enumerates every injection of the smaller side into the larger one.
inline AssignmentResult max_weight_assignment_exhaustive(const WeightMatrix& w) {
  const std::size_t rows = w.size();
  const std::size_t cols = rows ? w.front().size() : 0;
  const std::size_t n = std::max(rows, cols);
  AssignmentResult best;
  best.col_of_row.assign(rows, -1);
  if (n == 0) return best;
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  best.total = -1;
  do {
    std::int64_t total = 0;
    for (std::size_t i = 0; i < rows; ++i) {
      if (perm[i] < cols) total += w[i][perm[i]];
    }
    if (total > best.total) {
      best.total = total;
      for (std::size_t i = 0; i < rows; ++i) {
        best.col_of_row[i] = (perm[i] < cols && w[i][perm[i]] > 0) ? static_cast<int>(perm[i]) : -1;
      }
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

inline constexpr std::size_t kExhaustiveAssignmentLimit = 6;

inline AssignmentResult max_weight_assignment(const WeightMatrix& w) {
  const std::size_t rows = w.size();
  const std::size_t cols = rows ? w.front().size() : 0;
  if (std::max(rows, cols) <= kExhaustiveAssignmentLimit) return max_weight_assignment_exhaustive(w);
  return max_weight_assignment_hungarian(w);
}

}  // namespace cantrack
