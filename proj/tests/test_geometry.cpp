#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "paxkit/geometry.hpp"
#include "paxkit/oracle.hpp"
#include "paxkit/rng.hpp"
#include "test_util.hpp"

using namespace paxkit;
using testutil::boxes_match_mod_swap;
using testutil::corner_sets_match;

namespace {
OrientedBox random_box(Rng& rng) {
  OrientedBox b;
  b.cx = rng.uniform(-3.0, 3.0);
  b.cy = rng.uniform(-3.0, 3.0);
  b.w = rng.uniform(0.5, 4.0);
  b.h = rng.uniform(0.5, 4.0);
  b.theta = rng.uniform(0.0, kPi);
  return b;
}
}  // namespace

TEST_CASE("axis-aligned box corners come out counter-clockwise from the origin corner") {
  Quad q = obb_to_quad(OrientedBox{1.0, 1.0, 2.0, 2.0, 0.0});
  REQUIRE(q.corners[0].x == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(q.corners[0].y == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(q.corners[1].x == Catch::Approx(2.0).margin(1e-12));
  REQUIRE(q.corners[1].y == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(q.corners[2].x == Catch::Approx(2.0).margin(1e-12));
  REQUIRE(q.corners[2].y == Catch::Approx(2.0).margin(1e-12));
  REQUIRE(q.corners[3].x == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(q.corners[3].y == Catch::Approx(2.0).margin(1e-12));
  REQUIRE(quad_signed_area(q) > 0.0);
}

TEST_CASE("box to quad to box roundtrips up to the side-swap symmetry") {
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    OrientedBox b = random_box(rng);
    OrientedBox back = quad_to_obb(obb_to_quad(b));
    CAPTURE(b.cx, b.cy, b.w, b.h, b.theta);
    REQUIRE(boxes_match_mod_swap(b, back, 1e-9));
    REQUIRE(back.theta >= 0.0);
    REQUIRE(back.theta < kPi);
  }
}

TEST_CASE("quarter-turn box with swapped sides keeps the same vertex set") {
  OrientedBox rotated{0.0, 0.0, 2.0, 1.0, kPi / 2.0};
  OrientedBox back = quad_to_obb(obb_to_quad(rotated));
  REQUIRE(boxes_match_mod_swap(rotated, back, 1e-9));
  REQUIRE(corner_sets_match(obb_to_quad(back), obb_to_quad(rotated), 1e-9));
}

TEST_CASE("clipping a polygon against itself returns it unchanged") {
  ConvexPolygon a = quad_to_polygon(obb_to_quad(OrientedBox{0.3, -0.2, 2.0, 1.0, 0.7}));
  ConvexPolygon c = convex_clip(a, a);
  REQUIRE(c.vertices.size() == a.vertices.size());
  for (std::size_t i = 0; i < a.vertices.size(); ++i) {
    REQUIRE(c.vertices[i].x == a.vertices[i].x);
    REQUIRE(c.vertices[i].y == a.vertices[i].y);
  }
}

TEST_CASE("disjoint polygons clip to the empty polygon") {
  ConvexPolygon a = quad_to_polygon(obb_to_quad(OrientedBox{0.0, 0.0, 1.0, 1.0, 0.0}));
  ConvexPolygon b = quad_to_polygon(obb_to_quad(OrientedBox{5.0, 5.0, 1.0, 1.0, 0.4}));
  ConvexPolygon c = convex_clip(a, b);
  REQUIRE(c.vertices.empty());
  REQUIRE(polygon_area(c) == 0.0);
}

TEST_CASE("half-offset unit squares overlap in a quarter-area square") {
  OrientedBox a{0.5, 0.5, 1.0, 1.0, 0.0};
  OrientedBox b{1.0, 1.0, 1.0, 1.0, 0.0};
  ConvexPolygon inter = convex_clip(quad_to_polygon(obb_to_quad(a)), quad_to_polygon(obb_to_quad(b)));
  REQUIRE(polygon_area(inter) == Catch::Approx(0.25).margin(1e-12));

  Rng rng(77);
  oracle::McIou mc = oracle::mc_iou(a, b, 1000000, rng);
  REQUIRE(polygon_area(inter) == Catch::Approx(mc.inter_area).margin(2e-3));
}

TEST_CASE("intersection area never exceeds either operand") {
  Rng rng(12);
  for (int i = 0; i < 100; ++i) {
    ConvexPolygon a = quad_to_polygon(obb_to_quad(random_box(rng)));
    ConvexPolygon b = quad_to_polygon(obb_to_quad(random_box(rng)));
    double inter = polygon_area(convex_clip(a, b));
    REQUIRE(inter <= polygon_area(a) + 1e-9);
    REQUIRE(inter <= polygon_area(b) + 1e-9);
  }
}

TEST_CASE("self overlap is exactly one") {
  Rng rng(13);
  for (int i = 0; i < 50; ++i) {
    OrientedBox b = random_box(rng);
    REQUIRE(rotated_iou(b, b) == 1.0);
  }
}

TEST_CASE("disjoint boxes overlap exactly zero") {
  REQUIRE(rotated_iou(OrientedBox{0, 0, 1, 1, 0.2}, OrientedBox{10, 10, 1, 1, 1.2}) == 0.0);
}

TEST_CASE("half-offset unit squares have overlap one seventh") {
  OrientedBox a{0.5, 0.5, 1.0, 1.0, 0.0};
  OrientedBox b{1.0, 1.0, 1.0, 1.0, 0.0};
  REQUIRE(rotated_iou(a, b) == Catch::Approx(1.0 / 7.0).margin(1e-12));
}

TEST_CASE("overlap is symmetric and agrees with the sampling estimate") {
  Rng rng(14);
  for (int i = 0; i < 60; ++i) {
    OrientedBox a = random_box(rng);
    OrientedBox b = random_box(rng);
    double ab = rotated_iou(a, b);
    double ba = rotated_iou(b, a);
    REQUIRE(ab == Catch::Approx(ba).margin(1e-12));
    Rng mc_rng = Rng::derive(900, static_cast<std::uint64_t>(i));
    oracle::McIou mc = oracle::mc_iou(a, b, 200000, mc_rng);
    CAPTURE(a.cx, a.cy, a.w, a.h, a.theta, b.cx, b.cy, b.w, b.h, b.theta);
    REQUIRE(ab == Catch::Approx(mc.iou).margin(5e-3));
  }
}

TEST_CASE("translation moves every geometric result rigidly") {
  OrientedBox a{0.5, 0.25, 2.0, 1.0, 0.6};
  OrientedBox b{1.0, 0.5, 1.5, 1.5, 1.9};
  Vec2 t{13.25, -7.5};
  OrientedBox at{a.cx + t.x, a.cy + t.y, a.w, a.h, a.theta};
  OrientedBox bt{b.cx + t.x, b.cy + t.y, b.w, b.h, b.theta};
  REQUIRE(rotated_iou(a, b) == Catch::Approx(rotated_iou(at, bt)).margin(1e-9));

  Quad q = obb_to_quad(a);
  Quad qt = obb_to_quad(at);
  OrientedBox ra = quad_to_obb(q);
  OrientedBox rt = quad_to_obb(qt);
  OrientedBox shifted{ra.cx + t.x, ra.cy + t.y, ra.w, ra.h, ra.theta};
  REQUIRE(boxes_match_mod_swap(shifted, rt, 1e-9));
  REQUIRE(corner_sets_match(obb_to_quad(shifted), obb_to_quad(rt), 1e-9));
}

TEST_CASE("smallest enclosing rectangle recovers a box from its corners") {
  OrientedBox b{0.0, 0.0, 2.0, 1.0, 0.3};
  Quad q = obb_to_quad(b);
  OrientedBox r = min_area_rect(std::span<const Vec2>(q.corners.data(), 4));
  REQUIRE(boxes_match_mod_swap(b, r, 1e-9));
}

TEST_CASE("smallest enclosing rectangle of a square accepts either canonical form") {
  Quad q = obb_to_quad(OrientedBox{1.0, 1.0, 2.0, 2.0, 0.25});
  OrientedBox r = min_area_rect(std::span<const Vec2>(q.corners.data(), 4));
  REQUIRE(boxes_match_mod_swap(OrientedBox{1.0, 1.0, 2.0, 2.0, 0.25}, r, 1e-9));
}

TEST_CASE("smallest enclosing rectangle matches the pairwise direction sweep") {
  Rng rng(15);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Vec2> pts;
    int n = 5 + static_cast<int>(rng.uniform_index(8));
    for (int i = 0; i < n; ++i) pts.push_back({rng.uniform(-4.0, 4.0), rng.uniform(-4.0, 4.0)});
    OrientedBox r = min_area_rect(pts);
    double oracle_area = oracle::min_rect_area_pairs(pts);
    REQUIRE(r.w * r.h == Catch::Approx(oracle_area).epsilon(1e-9));

    // Enclosure: every input point inside the returned box.
    Vec2 u{std::cos(r.theta), std::sin(r.theta)};
    for (Vec2 p : pts) {
      Vec2 d{p.x - r.cx, p.y - r.cy};
      REQUIRE(std::abs(dot(d, u)) <= r.w / 2.0 + 1e-9);
      REQUIRE(std::abs(dot(d, perp(u))) <= r.h / 2.0 + 1e-9);
    }
  }
}

TEST_CASE("enclosing rectangle never beats the axis-aligned bound") {
  Rng rng(16);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Vec2> pts;
    for (int i = 0; i < 12; ++i) pts.push_back({rng.uniform(0.0, 9.0), rng.uniform(0.0, 9.0)});
    OrientedBox r = min_area_rect(pts);
    double xmin = pts[0].x, xmax = pts[0].x, ymin = pts[0].y, ymax = pts[0].y;
    for (Vec2 p : pts) {
      xmin = std::min(xmin, p.x);
      xmax = std::max(xmax, p.x);
      ymin = std::min(ymin, p.y);
      ymax = std::max(ymax, p.y);
    }
    REQUIRE(r.w * r.h <= (xmax - xmin) * (ymax - ymin) + 1e-9);
  }
}

TEST_CASE("degenerate point sets are rejected") {
  std::vector<Vec2> two{{0.0, 0.0}, {1.0, 1.0}};
  REQUIRE_THROWS_AS(min_area_rect(two), DegeneratePointSet);
  std::vector<Vec2> line{{0.0, 0.0}, {1.0, 1.0}, {2.0, 2.0}, {3.0, 3.0}};
  REQUIRE_THROWS_AS(min_area_rect(line), DegeneratePointSet);
  Quad collinear{{Vec2{0.0, 0.0}, Vec2{1.0, 0.0}, Vec2{2.0, 0.0}, Vec2{3.0, 0.0}}};
  REQUIRE_THROWS_AS(quad_to_obb(collinear), DegenerateQuad);
}

TEST_CASE("non-rectangular quad gets its smallest enclosing box") {
  Quad q{{Vec2{0.0, 0.0}, Vec2{3.0, 0.0}, Vec2{3.2, 1.0}, Vec2{0.0, 1.0}}};
  OrientedBox r = quad_to_obb(q);
  double oracle_area = oracle::min_rect_area_pairs(std::span<const Vec2>(q.corners.data(), 4));
  REQUIRE(r.w * r.h == Catch::Approx(oracle_area).epsilon(1e-9));
}

TEST_CASE("square quad maps to unit radials in canonical order") {
  Quad q{{Vec2{0.0, 0.0}, Vec2{2.0, 0.0}, Vec2{2.0, 2.0}, Vec2{0.0, 2.0}}};
  AxisCodecConfig cfg;
  PointAxisTarget t = quad_to_point_axis_target(q, cfg);
  REQUIRE(t.center.x == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(t.center.y == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(t.radials[0].x == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(t.radials[0].y == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(t.radials[1].x == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(t.radials[1].y == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(t.radials[2].x == Catch::Approx(-1.0).margin(1e-12));
  REQUIRE(t.radials[3].y == Catch::Approx(-1.0).margin(1e-12));
  REQUIRE(t.axis.values.size() == 360);
  REQUIRE(t.axis.values[0] == 1.0);
}

TEST_CASE("rotating a square rotates its radials and keeps the center") {
  AxisCodecConfig cfg;
  Quad q = obb_to_quad(OrientedBox{1.0, 1.0, 2.0, 2.0, kPi / 4.0});
  PointAxisTarget t = quad_to_point_axis_target(q, cfg);
  REQUIRE(t.center.x == Catch::Approx(1.0).margin(1e-9));
  REQUIRE(t.center.y == Catch::Approx(1.0).margin(1e-9));
  double c = std::sqrt(0.5);
  REQUIRE(t.radials[0].x == Catch::Approx(c).margin(1e-9));
  REQUIRE(t.radials[0].y == Catch::Approx(c).margin(1e-9));
  REQUIRE(norm(t.radials[1] - Vec2{-c, c}) < 1e-9);
}

TEST_CASE("long quad produces radials with the half-side norms") {
  Quad q{{Vec2{0.0, 0.0}, Vec2{4.0, 0.0}, Vec2{4.0, 1.0}, Vec2{0.0, 1.0}}};
  AxisCodecConfig cfg;
  PointAxisTarget t = quad_to_point_axis_target(q, cfg);
  REQUIRE(norm(t.radials[0]) == Catch::Approx(2.0).margin(1e-9));
  REQUIRE(norm(t.radials[1]) == Catch::Approx(0.5).margin(1e-9));
  REQUIRE(norm(t.radials[2]) == Catch::Approx(2.0).margin(1e-9));
  REQUIRE(norm(t.radials[3]) == Catch::Approx(0.5).margin(1e-9));
}

TEST_CASE("radial pairs oppose exactly and stay perpendicular") {
  AxisCodecConfig cfg;
  Rng rng(17);
  for (int i = 0; i < 50; ++i) {
    OrientedBox b = random_box(rng);
    PointAxisTarget t = quad_to_point_axis_target(obb_to_quad(b), cfg);
    REQUIRE(t.radials[2].x == -t.radials[0].x);
    REQUIRE(t.radials[2].y == -t.radials[0].y);
    REQUIRE(t.radials[3].x == -t.radials[1].x);
    REQUIRE(t.radials[3].y == -t.radials[1].y);
    double rel = std::abs(dot(t.radials[0], t.radials[1])) /
                 std::max(1e-12, norm(t.radials[0]) * norm(t.radials[1]));
    REQUIRE(rel < 1e-6);
    // First radial always points into the first quadrant sector.
    REQUIRE(t.radials[0].x > 0.0);
    REQUIRE(t.radials[0].y >= 0.0);

    // Rebuilding corners from center and radials recovers the box.
    Quad rebuilt = point_axis_corners(t);
    REQUIRE(corner_sets_match(rebuilt, obb_to_quad(quad_to_obb(obb_to_quad(b))), 1e-6));
  }
}

TEST_CASE("swapped-side presentations give one canonical target") {
  AxisCodecConfig cfg;
  for (int deg = 0; deg < 90; deg += 3) {
    double theta = deg * (2.0 * kPi / 360.0);
    OrientedBox square{5.0, 4.0, 2.0, 2.0, theta};
    OrientedBox swapped{5.0, 4.0, 2.0, 2.0, canonical_theta(theta + kPi / 2.0)};
    PointAxisTarget ta = quad_to_point_axis_target(obb_to_quad(square), cfg);
    PointAxisTarget tb = quad_to_point_axis_target(obb_to_quad(swapped), cfg);
    CAPTURE(deg);
    REQUIRE(ta.axis.values == tb.axis.values);
    REQUIRE(norm(ta.radials[0] - tb.radials[0]) < 1e-9);
    REQUIRE(norm(ta.radials[1] - tb.radials[1]) < 1e-9);
  }
}

TEST_CASE("decoding edge-midpoint predictions recovers the box") {
  AxisCodecConfig cfg;
  PointSetPrediction pred;
  pred.points = {{0.0, 1.0}, {2.0, 1.0}, {1.0, 0.0}, {1.0, 2.0}, {1.0, 1.0}};
  pred.axis_logits.assign(360, 0.0);
  pred.axis_logits[0] = 5.0;
  OrientedBox box = decode_point_axis(pred, cfg);
  REQUIRE(box.cx == Catch::Approx(1.0).margin(1e-9));
  REQUIRE(box.cy == Catch::Approx(1.0).margin(1e-9));
  REQUIRE(box.w == Catch::Approx(2.0).margin(1e-9));
  REQUIRE(box.h == Catch::Approx(2.0).margin(1e-9));
  REQUIRE(box.theta == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("a diagonal axis peak tilts the decoded box through the same points") {
  AxisCodecConfig cfg;
  PointSetPrediction pred;
  pred.points = {{0.0, 1.0}, {2.0, 1.0}, {1.0, 0.0}, {1.0, 2.0}, {1.0, 1.0}};
  pred.axis_logits.assign(360, 0.0);
  pred.axis_logits[45] = 5.0;
  OrientedBox box = decode_point_axis(pred, cfg);
  REQUIRE(box.cx == Catch::Approx(1.0).margin(1e-9));
  REQUIRE(box.cy == Catch::Approx(1.0).margin(1e-9));
  REQUIRE(box.w == Catch::Approx(std::sqrt(2.0)).margin(1e-9));
  REQUIRE(box.h == Catch::Approx(std::sqrt(2.0)).margin(1e-9));
  REQUIRE(box.theta == Catch::Approx(kPi / 4.0).margin(1e-9));
}

TEST_CASE("elliptical point sets decode to the major-axis extent") {
  AxisCodecConfig cfg;
  double phi = 30.0 * kPi / 180.0;
  Vec2 u{std::cos(phi), std::sin(phi)};
  Vec2 v = perp(u);
  Vec2 c{2.0, -1.0};
  PointSetPrediction pred;
  for (int i = 0; i < 12; ++i) {
    double t = 2.0 * kPi * i / 12.0;
    pred.points.push_back(c + (3.0 * std::cos(t)) * u + (1.0 * std::sin(t)) * v);
  }
  pred.points.push_back(c);
  pred.axis_logits.assign(360, 0.0);
  pred.axis_logits[30] = 5.0;
  OrientedBox box = decode_point_axis(pred, cfg);
  REQUIRE(box.w == Catch::Approx(6.0).margin(1e-9));
  REQUIRE(box.h == Catch::Approx(2.0).margin(1e-9));
  REQUIRE(box.cx == Catch::Approx(c.x).margin(1e-9));
  REQUIRE(box.cy == Catch::Approx(c.y).margin(1e-9));
  REQUIRE(box.theta == Catch::Approx(phi).margin(1e-9));
}

TEST_CASE("decode rejects too few points and mismatched logits") {
  AxisCodecConfig cfg;
  PointSetPrediction pred;
  pred.points = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
  pred.axis_logits.assign(360, 0.0);
  REQUIRE_THROWS_AS(decode_point_axis(pred, cfg), InvalidK);
  pred.points.push_back({0.5, 0.5});
  pred.axis_logits.resize(100);
  REQUIRE_THROWS_AS(decode_point_axis(pred, cfg), ShapeMismatch);
}
