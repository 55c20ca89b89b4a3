#include <functional>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "cantrack/assignment.hpp"

using namespace cantrack;

namespace {

// Bitmask dynamic program over columns: best total for rows [i, rows) given
// the set of columns already taken. Independent of both library routes.
std::int64_t dp_best(const WeightMatrix& w) {
  const std::size_t rows = w.size();
  const std::size_t cols = rows ? w.front().size() : 0;
  std::vector<std::vector<std::int64_t>> memo(rows + 1, std::vector<std::int64_t>(std::size_t{1} << cols, -1));
  std::function<std::int64_t(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t mask) -> std::int64_t {
    if (i == rows) return 0;
    auto& m = memo[i][mask];
    if (m >= 0) return m;
    std::int64_t best = go(i + 1, mask);
    for (std::size_t c = 0; c < cols; ++c) {
      if (!(mask >> c & 1)) best = std::max(best, w[i][c] + go(i + 1, mask | (std::size_t{1} << c)));
    }
    return m = best;
  };
  return go(0, 0);
}

void expect_valid(const WeightMatrix& w, const AssignmentResult& r) {
  ASSERT_EQ(r.col_of_row.size(), w.size());
  std::set<int> used;
  std::int64_t total = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const int c = r.col_of_row[i];
    if (c < 0) continue;
    EXPECT_TRUE(used.insert(c).second);
    total += w[i][static_cast<std::size_t>(c)];
  }
  EXPECT_EQ(total, r.total);
}

WeightMatrix random_weights(std::size_t rows, std::size_t cols, std::mt19937_64& rng, int hi) {
  std::uniform_int_distribution<int> u(0, hi);
  WeightMatrix w(rows, std::vector<std::int64_t>(cols));
  for (auto& row : w) {
    for (auto& x : row) x = u(rng);
  }
  return w;
}

}  // namespace

TEST(Assignment, Examples) {
  const WeightMatrix w{{5, 1}, {4, 3}};
  for (const auto& r : {max_weight_assignment_hungarian(w), max_weight_assignment_exhaustive(w)}) {
    EXPECT_EQ(r.total, 8);
    EXPECT_EQ(r.col_of_row, (std::vector<int>{0, 1}));
  }
  // Greedy would take 9 first and end with 9 + 1; the optimum is 8 + 8.
  const WeightMatrix g{{9, 8}, {8, 1}};
  EXPECT_EQ(max_weight_assignment_hungarian(g).total, 16);
  EXPECT_EQ(max_weight_assignment_exhaustive(g).total, 16);
  EXPECT_EQ(max_weight_assignment_hungarian({}).total, 0);
  EXPECT_EQ(max_weight_assignment_exhaustive({}).total, 0);
}

TEST(Assignment, ZeroWeightCellsStayUnassigned) {
  const WeightMatrix w{{0, 0, 0}, {0, 7, 0}};
  for (const auto& r : {max_weight_assignment_hungarian(w), max_weight_assignment_exhaustive(w)}) {
    EXPECT_EQ(r.total, 7);
    EXPECT_EQ(r.col_of_row, (std::vector<int>{-1, 1}));
  }
}

TEST(Assignment, HungarianAgreesWithExhaustiveOnRectangularMatrices) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 400; ++trial) {
    const std::size_t rows = 1 + static_cast<std::size_t>(trial) % 6;
    const std::size_t cols = 1 + static_cast<std::size_t>(trial / 6) % 6;
    const auto w = random_weights(rows, cols, rng, trial % 2 ? 3 : 1000);
    const auto h = max_weight_assignment_hungarian(w);
    const auto e = max_weight_assignment_exhaustive(w);
    expect_valid(w, h);
    expect_valid(w, e);
    EXPECT_EQ(h.total, e.total);
    EXPECT_EQ(h.total, dp_best(w));
  }
}

TEST(Assignment, HungarianMatchesDynamicProgramBeyondExhaustiveLimit) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t rows = 7 + static_cast<std::size_t>(trial) % 8;
    const std::size_t cols = 7 + static_cast<std::size_t>(trial * 3) % 7;
    const auto w = random_weights(rows, cols, rng, 50);
    const auto r = max_weight_assignment(w);
    expect_valid(w, r);
    EXPECT_EQ(r.total, dp_best(w));
  }
}
