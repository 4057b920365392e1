#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "paxkit/axis_codec.hpp"
#include "paxkit/common.hpp"

namespace paxkit {

/// Absolute tolerance on cross products for collinearity and inside tests.
inline constexpr double kGeomEps = 1e-9;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 v) { return {s * v.x, s * v.y}; }
inline Vec2 operator-(Vec2 v) { return {-v.x, -v.y}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm_sq(Vec2 v) { return v.x * v.x + v.y * v.y; }
inline double norm(Vec2 v) { return std::sqrt(norm_sq(v)); }

/// 90-degree counter-clockwise rotation.
inline Vec2 perp(Vec2 v) { return {-v.y, v.x}; }

/// Rotated rectangle: theta is the rotation of the w-axis from the image
/// x-axis, stored canonically in [0, pi).
struct OrientedBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;
  double theta = 0.0;
};

/// Four corners of a simple quadrilateral.
struct Quad {
  std::array<Vec2, 4> corners{};
};

/// Counter-clockwise convex polygon; empty means empty intersection.
struct ConvexPolygon {
  std::vector<Vec2> vertices;
};

/// Ground-truth form of one object: center, four radial vectors to the edge
/// feet of its min-area rectangle, and the circular axis label.
/// Radials satisfy v3 = -v1, v4 = -v2, and v2 = perp(v1).
struct PointAxisTarget {
  Vec2 center{};
  std::array<Vec2, 4> radials{};
  AxisEncoding axis;
};

/// Raw per-query model output: K points (the last one is the center),
/// axis logits over direction bins, and one logit per class.
struct PointSetPrediction {
  std::vector<Vec2> points;
  std::vector<double> axis_logits;
  std::vector<double> class_logits;
};

inline Quad obb_to_quad(const OrientedBox& box) {
  Vec2 c{box.cx, box.cy};
  Vec2 u{std::cos(box.theta), std::sin(box.theta)};
  Vec2 v = perp(u);
  Vec2 du = (box.w / 2.0) * u;
  Vec2 dv = (box.h / 2.0) * v;
  // Counter-clockwise for y-up shoelace orientation.
  return Quad{{c - du - dv, c + du - dv, c + du + dv, c - du + dv}};
}

inline double signed_area(const ConvexPolygon& poly) {
  double twice = 0.0;
  std::size_t n = poly.vertices.size();
  for (std::size_t i = 0; i < n; ++i) twice += cross(poly.vertices[i], poly.vertices[(i + 1) % n]);
  return twice / 2.0;
}

inline double polygon_area(const ConvexPolygon& poly) { return std::abs(signed_area(poly)); }

inline double quad_signed_area(const Quad& q) {
  double twice = 0.0;
  for (std::size_t i = 0; i < 4; ++i) twice += cross(q.corners[i], q.corners[(i + 1) % 4]);
  return twice / 2.0;
}

/// Reverses the corner order when the quad is wound clockwise.
inline Quad ensure_ccw(const Quad& q) {
  if (quad_signed_area(q) >= 0.0) return q;
  return Quad{{q.corners[0], q.corners[3], q.corners[2], q.corners[1]}};
}

inline ConvexPolygon quad_to_polygon(const Quad& q) {
  Quad c = ensure_ccw(q);
  return ConvexPolygon{{c.corners[0], c.corners[1], c.corners[2], c.corners[3]}};
}

/// Sutherland-Hodgman intersection of two counter-clockwise convex polygons.
/// An identical subject and clip come back vertex-for-vertex unchanged, which
/// is what makes self-IoU exact downstream.
inline ConvexPolygon convex_clip(const ConvexPolygon& subject, const ConvexPolygon& clip) {
  std::vector<Vec2> out = subject.vertices;
  std::size_t m = clip.vertices.size();
  for (std::size_t e = 0; e < m && !out.empty(); ++e) {
    Vec2 a = clip.vertices[e];
    Vec2 b = clip.vertices[(e + 1) % m];
    Vec2 dir = b - a;
    std::vector<Vec2> in;
    in.swap(out);
    std::size_t n = in.size();
    for (std::size_t i = 0; i < n; ++i) {
      Vec2 p = in[i];
      Vec2 q = in[(i + 1) % n];
      double dp = cross(dir, p - a);
      double dq = cross(dir, q - a);
      bool p_in = dp >= -kGeomEps;
      bool q_in = dq >= -kGeomEps;
      if (p_in) out.push_back(p);
      if (p_in != q_in && dp != dq) {
        double t = std::clamp(dp / (dp - dq), 0.0, 1.0);
        out.push_back(p + t * (q - p));
      }
    }
  }
  return ConvexPolygon{std::move(out)};
}

inline double rotated_iou(const Quad& a, const Quad& b) {
  ConvexPolygon pa = quad_to_polygon(a);
  ConvexPolygon pb = quad_to_polygon(b);
  double inter = polygon_area(convex_clip(pa, pb));
  double denom = polygon_area(pa) + polygon_area(pb) - inter;
  if (denom <= 0.0) return 0.0;
  return std::clamp(inter / denom, 0.0, 1.0);
}

inline double rotated_iou(const OrientedBox& a, const OrientedBox& b) {
  return rotated_iou(obb_to_quad(a), obb_to_quad(b));
}

namespace detail {

/// Andrew monotone chain; strictly convex output (collinear points dropped).
inline std::vector<Vec2> convex_hull(std::span<const Vec2> pts) {
  std::vector<Vec2> p(pts.begin(), pts.end());
  std::sort(p.begin(), p.end(), [](Vec2 a, Vec2 b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  p.erase(std::unique(p.begin(), p.end(), [](Vec2 a, Vec2 b) { return a.x == b.x && a.y == b.y; }), p.end());
  std::size_t n = p.size();
  if (n < 3) return p;
  std::vector<Vec2> hull(2 * n);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    while (k >= 2 && cross(hull[k - 1] - hull[k - 2], p[i] - hull[k - 2]) <= kGeomEps) --k;
    hull[k++] = p[i];
  }
  for (std::size_t i = n - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 1] - hull[k - 2], p[i] - hull[k - 2]) <= kGeomEps) --k;
    hull[k++] = p[i];
  }
  hull.resize(k - 1);
  return hull;
}

}  // namespace detail

/// Minimum-area enclosing rectangle; one side is flush with a hull edge.
/// Ties between edges keep the first minimal edge, so output is deterministic.
inline OrientedBox min_area_rect(std::span<const Vec2> pts) {
  if (pts.size() < 3) throw DegeneratePointSet("min_area_rect: need at least 3 points, got " + std::to_string(pts.size()));
  std::vector<Vec2> hull = detail::convex_hull(pts);
  if (hull.size() < 3) throw DegeneratePointSet("min_area_rect: points are collinear");

  std::size_t n = hull.size();
  double best_area = std::numeric_limits<double>::infinity();
  Vec2 best_dir{1.0, 0.0};
  for (std::size_t i = 0; i < n; ++i) {
    Vec2 d = hull[(i + 1) % n] - hull[i];
    double len = norm(d);
    if (len < kGeomEps) continue;
    Vec2 u = (1.0 / len) * d;
    Vec2 v = perp(u);
    double umin = dot(hull[0], u), umax = umin;
    double vmin = dot(hull[0], v), vmax = vmin;
    for (std::size_t j = 1; j < n; ++j) {
      double pu = dot(hull[j], u);
      double pv = dot(hull[j], v);
      umin = std::min(umin, pu);
      umax = std::max(umax, pu);
      vmin = std::min(vmin, pv);
      vmax = std::max(vmax, pv);
    }
    double area = (umax - umin) * (vmax - vmin);
    if (area < best_area) {
      best_area = area;
      best_dir = u;
    }
  }

  double theta = canonical_theta(std::atan2(best_dir.y, best_dir.x));
  Vec2 u{std::cos(theta), std::sin(theta)};
  Vec2 v = perp(u);
  double umin = dot(hull[0], u), umax = umin;
  double vmin = dot(hull[0], v), vmax = vmin;
  for (std::size_t j = 1; j < n; ++j) {
    double pu = dot(hull[j], u);
    double pv = dot(hull[j], v);
    umin = std::min(umin, pu);
    umax = std::max(umax, pu);
    vmin = std::min(vmin, pv);
    vmax = std::max(vmax, pv);
  }
  Vec2 c = ((umin + umax) / 2.0) * u + ((vmin + vmax) / 2.0) * v;
  return OrientedBox{c.x, c.y, umax - umin, vmax - vmin, theta};
}

/// Minimum-area box of the quad's corners, canonical theta in [0, pi).
inline OrientedBox quad_to_obb(const Quad& quad) {
  OrientedBox box;
  try {
    box = min_area_rect(std::span<const Vec2>(quad.corners.data(), quad.corners.size()));
  } catch (const DegeneratePointSet&) {
    throw DegenerateQuad("quad_to_obb: corners are collinear");
  }
  if (box.w < kGeomEps || box.h < kGeomEps) throw DegenerateQuad("quad_to_obb: min-area rectangle side below 1e-9");
  return box;
}

/// Converts an annotated quad to the center + radials + axis label form.
/// v1 always points into the [0, 90) degree quadrant, which pins one
/// canonical radial order for every presentation of the same rectangle.
inline PointAxisTarget quad_to_point_axis_target(const Quad& quad, const AxisCodecConfig& cfg) {
  OrientedBox box = quad_to_obb(quad);
  Vec2 u{std::cos(box.theta), std::sin(box.theta)};
  Vec2 candidates[4] = {u, perp(u), -u, -perp(u)};
  double half[4] = {box.w / 2.0, box.h / 2.0, box.w / 2.0, box.h / 2.0};
  int first = 0;
  for (int i = 0; i < 4; ++i) {
    if (candidates[i].x > 0.0 && candidates[i].y >= 0.0) {
      first = i;
      break;
    }
  }
  Vec2 d1 = candidates[first];
  double e1 = half[first];
  double e2 = half[(first + 1) % 4];

  PointAxisTarget target;
  target.center = {box.cx, box.cy};
  target.radials[0] = e1 * d1;
  target.radials[1] = e2 * perp(d1);
  target.radials[2] = -target.radials[0];
  target.radials[3] = -target.radials[1];
  target.axis = encode_axis(std::atan2(d1.y, d1.x), cfg);
  return target;
}

/// Corners of the rectangle a target describes, counter-clockwise.
inline Quad point_axis_corners(const PointAxisTarget& t) {
  Vec2 c = t.center;
  Vec2 a = t.radials[0];
  Vec2 b = t.radials[1];
  return Quad{{c - a - b, c + a - b, c + a + b, c - a + b}};
}

/// Reads a box off a prediction: axis direction from the argmax bin, extents
/// from the boundary points' projections. The K-th point is the center slot
/// and takes no part in the extents.
inline OrientedBox decode_point_axis(const PointSetPrediction& pred, const AxisCodecConfig& cfg) {
  cfg.validate();
  if (pred.points.size() < 5)
    throw InvalidK("decode_point_axis: need K >= 5 points, got " + std::to_string(pred.points.size()));
  if (pred.axis_logits.size() != static_cast<std::size_t>(cfg.n_bins))
    throw ShapeMismatch("decode_point_axis: axis logit length " + std::to_string(pred.axis_logits.size()) +
                        " != n_bins " + std::to_string(cfg.n_bins));
  DecodedAxis dec = decode_axis(std::span<const double>(pred.axis_logits));
  Vec2 u{std::cos(dec.principal_theta), std::sin(dec.principal_theta)};
  Vec2 v = perp(u);
  std::size_t boundary = pred.points.size() - 1;
  double umin = dot(pred.points[0], u), umax = umin;
  double vmin = dot(pred.points[0], v), vmax = vmin;
  for (std::size_t i = 1; i < boundary; ++i) {
    double pu = dot(pred.points[i], u);
    double pv = dot(pred.points[i], v);
    umin = std::min(umin, pu);
    umax = std::max(umax, pu);
    vmin = std::min(vmin, pv);
    vmax = std::max(vmax, pv);
  }
  Vec2 c = ((umin + umax) / 2.0) * u + ((vmin + vmax) / 2.0) * v;
  return OrientedBox{c.x, c.y, umax - umin, vmax - vmin, canonical_theta(dec.principal_theta)};
}

}  // namespace paxkit
