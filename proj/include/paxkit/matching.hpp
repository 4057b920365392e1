#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "paxkit/common.hpp"
#include "paxkit/geometry.hpp"
#include "paxkit/losses.hpp"

namespace paxkit {

/// Assignment cost between one prediction and one ground-truth instance:
/// the geometric and axis loss terms plus a class-agreement bonus, sharing
/// the loss weights so matching optimizes what training optimizes.
inline double matching_cost(const PointSetPrediction& pred, const PointAxisTarget& target,
                            int target_class, const LossConfig& cfg) {
  double proj = max_projection_variant(pred.points, target, cfg.variant, cfg.top_k).value;
  double ca = cross_axis_loss(pred.axis_logits, target.axis, cfg.codec.epsilon).value;
  if (target_class < 0 || target_class >= static_cast<int>(pred.class_logits.size()))
    throw IndexOutOfRange("matching_cost: class " + std::to_string(target_class));
  double score = 1.0 / (1.0 + std::exp(-pred.class_logits[static_cast<std::size_t>(target_class)]));
  return cfg.lambda1 * proj + cfg.lambda2 * ca + cfg.cls_weight * (-score);
}

/// Min-total-cost assignment over min(rows, cols) pairs via shortest
/// augmenting paths with potentials. Returns (row, col) pairs in row order.
inline std::vector<std::pair<int, int>> hungarian(const std::vector<std::vector<double>>& costs) {
  int rows = static_cast<int>(costs.size());
  int cols = rows == 0 ? 0 : static_cast<int>(costs[0].size());
  if (rows == 0 || cols == 0) return {};
  for (const auto& row : costs) {
    if (static_cast<int>(row.size()) != cols) throw ShapeMismatch("hungarian: ragged cost matrix");
    for (double c : row)
      if (!std::isfinite(c)) throw NonFiniteCost("hungarian: non-finite cost entry");
  }

  bool transposed = rows > cols;
  int n = transposed ? cols : rows;
  int m = transposed ? rows : cols;
  auto at = [&](int i, int j) { return transposed ? costs[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] : costs[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]; };

  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0), v(static_cast<std::size_t>(m) + 1, 0.0);
  std::vector<int> match(static_cast<std::size_t>(m) + 1, 0), way(static_cast<std::size_t>(m) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(m) + 1, kInf);
    std::vector<char> used(static_cast<std::size_t>(m) + 1, 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      int i0 = match[static_cast<std::size_t>(j0)], j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= m; ++j)
        if (!used[static_cast<std::size_t>(j)]) {
          double cur = at(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
          if (cur < minv[static_cast<std::size_t>(j)]) {
            minv[static_cast<std::size_t>(j)] = cur;
            way[static_cast<std::size_t>(j)] = j0;
          }
          if (minv[static_cast<std::size_t>(j)] < delta) {
            delta = minv[static_cast<std::size_t>(j)];
            j1 = j;
          }
        }
      for (int j = 0; j <= m; ++j)
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(match[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      j0 = j1;
    } while (match[static_cast<std::size_t>(j0)] != 0);
    do {
      int j1 = way[static_cast<std::size_t>(j0)];
      match[static_cast<std::size_t>(j0)] = match[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0);
  }

  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(static_cast<std::size_t>(n));
  for (int j = 1; j <= m; ++j)
    if (match[static_cast<std::size_t>(j)] > 0) {
      int r = match[static_cast<std::size_t>(j)] - 1;
      int c = j - 1;
      if (transposed) std::swap(r, c);
      pairs.push_back({r, c});
    }
  std::sort(pairs.begin(), pairs.end());
  return pairs;
}

}  // namespace paxkit
