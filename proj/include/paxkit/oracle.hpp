#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "paxkit/geometry.hpp"
#include "paxkit/rng.hpp"

// Slow, independent re-derivations of quantities the library computes in
// closed form. Tests and the verify command compare against these; nothing
// here is reused by the implementation proper.

namespace paxkit::oracle {

inline bool point_in_box(Vec2 p, const OrientedBox& box) {
  Vec2 u{std::cos(box.theta), std::sin(box.theta)};
  Vec2 d{p.x - box.cx, p.y - box.cy};
  return std::abs(dot(d, u)) <= box.w / 2.0 && std::abs(dot(d, perp(u))) <= box.h / 2.0;
}

struct McIou {
  double iou = 0.0;
  double inter_area = 0.0;
};

/// Stratified Monte-Carlo IoU over the joint axis-aligned bounding
/// rectangle: one jittered sample per cell of a square grid, which keeps the
/// estimator unbiased while the error shrinks with the boundary cell count.
/// The sample count rounds down to the nearest square.
inline McIou mc_iou(const OrientedBox& a, const OrientedBox& b, int samples, Rng& rng) {
  double lo_x = std::numeric_limits<double>::infinity(), lo_y = lo_x;
  double hi_x = -lo_x, hi_y = -lo_y;
  for (const OrientedBox* box : {&a, &b}) {
    Quad q = obb_to_quad(*box);
    for (Vec2 c : q.corners) {
      lo_x = std::min(lo_x, c.x);
      hi_x = std::max(hi_x, c.x);
      lo_y = std::min(lo_y, c.y);
      hi_y = std::max(hi_y, c.y);
    }
  }
  int side = static_cast<int>(std::sqrt(static_cast<double>(samples)));
  long long in_a = 0, in_b = 0, in_both = 0;
  for (int gy = 0; gy < side; ++gy) {
    for (int gx = 0; gx < side; ++gx) {
      Vec2 p{lo_x + (hi_x - lo_x) * (static_cast<double>(gx) + rng.uniform()) / side,
             lo_y + (hi_y - lo_y) * (static_cast<double>(gy) + rng.uniform()) / side};
      bool pa = point_in_box(p, a);
      bool pb = point_in_box(p, b);
      in_a += pa;
      in_b += pb;
      in_both += pa && pb;
    }
  }
  McIou out;
  double cell = (hi_x - lo_x) * (hi_y - lo_y);
  double total = static_cast<double>(side) * static_cast<double>(side);
  out.inter_area = cell * static_cast<double>(in_both) / total;
  long long uni = in_a + in_b - in_both;
  out.iou = uni > 0 ? static_cast<double>(in_both) / static_cast<double>(uni) : 0.0;
  return out;
}

/// Minimum enclosing-rectangle area over every point-pair direction. The
/// optimal rectangle is flush with a hull edge and every hull edge joins two
/// input points, so the pairwise sweep covers it without building a hull.
inline double min_rect_area_pairs(std::span<const Vec2> pts) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (i == j) continue;
      Vec2 d = pts[j] - pts[i];
      double len = norm(d);
      if (len < 1e-12) continue;
      Vec2 u = (1.0 / len) * d;
      Vec2 v = perp(u);
      double umin = dot(pts[0], u), umax = umin;
      double vmin = dot(pts[0], v), vmax = vmin;
      for (Vec2 p : pts) {
        umin = std::min(umin, dot(p, u));
        umax = std::max(umax, dot(p, u));
        vmin = std::min(vmin, dot(p, v));
        vmax = std::max(vmax, dot(p, v));
      }
      best = std::min(best, (umax - umin) * (vmax - vmin));
    }
  }
  return best;
}

struct FdReport {
  double max_rel = 0.0;       ///< worst relative error over all coordinates
  double max_abs = 0.0;       ///< worst absolute error
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Central-difference check of an analytic gradient. `f` must be a pure
/// function of the parameter vector it is handed.
inline FdReport fd_check(const std::function<double(std::span<const double>)>& f,
                         std::span<const double> x0, std::span<const double> analytic,
                         double h = 1e-5) {
  if (x0.size() != analytic.size()) throw LengthMismatch("fd_check: gradient length != parameter length");
  std::vector<double> x(x0.begin(), x0.end());
  FdReport report;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double keep = x[i];
    x[i] = keep + h;
    double fp = f(x);
    x[i] = keep - h;
    double fm = f(x);
    x[i] = keep;
    double numeric = (fp - fm) / (2.0 * h);
    double abs_err = std::abs(numeric - analytic[i]);
    double rel = abs_err / std::max({1.0, std::abs(numeric), std::abs(analytic[i])});
    if (rel > report.max_rel) {
      report.max_rel = rel;
      report.max_abs = abs_err;
      report.worst_index = i;
      report.worst_analytic = analytic[i];
      report.worst_numeric = numeric;
    }
  }
  return report;
}

/// Exhaustive minimum-cost assignment of rows to columns, rows <= cols.
/// Factorial time; keep n small.
inline std::vector<int> assignment_bruteforce(const std::vector<std::vector<double>>& cost, double* best_total = nullptr) {
  std::size_t rows = cost.size();
  std::size_t cols = rows == 0 ? 0 : cost[0].size();
  std::vector<int> perm(cols);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best(rows, -1);
  double best_sum = std::numeric_limits<double>::infinity();
  do {
    double sum = 0.0;
    for (std::size_t r = 0; r < rows; ++r) sum += cost[r][static_cast<std::size_t>(perm[r])];
    if (sum < best_sum) {
      best_sum = sum;
      for (std::size_t r = 0; r < rows; ++r) best[r] = perm[r];
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  if (best_total) *best_total = best_sum;
  return best;
}

/// Index-triple-loop matrix product, row-major.
inline std::vector<double> matmul_naive(std::span<const double> a, std::span<const double> b,
                                        std::size_t n, std::size_t m, std::size_t k) {
  std::vector<double> out(n * k, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < m; ++t) acc += a[i * m + t] * b[t * k + j];
      out[i * k + j] = acc;
    }
  return out;
}

}  // namespace paxkit::oracle
