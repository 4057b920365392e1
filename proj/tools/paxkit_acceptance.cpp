#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "paxkit/axis_codec.hpp"
#include "paxkit/config.hpp"
#include "paxkit/dota.hpp"
#include "paxkit/eval.hpp"
#include "paxkit/geometry.hpp"
#include "paxkit/losses.hpp"
#include "paxkit/matching.hpp"
#include "paxkit/model.hpp"
#include "paxkit/nn.hpp"
#include "paxkit/oracle.hpp"
#include "paxkit/rng.hpp"
#include "paxkit/synth.hpp"
#include "paxkit/tensor.hpp"
#include "paxkit/train.hpp"
#include "test_util.hpp"

namespace {

using namespace paxkit;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

PointAxisTarget unit_square_target(Vec2 center = {0.0, 0.0}) {
  PointAxisTarget t;
  t.center = center;
  t.radials = {Vec2{1.0, 0.0}, Vec2{0.0, 1.0}, Vec2{-1.0, 0.0}, Vec2{0.0, -1.0}};
  t.axis = encode_axis(0.0, AxisCodecConfig{});
  return t;
}

std::vector<Vec2> edge_midpoints_plus_center(const PointAxisTarget& t) {
  std::vector<Vec2> pts;
  for (const Vec2& r : t.radials) pts.push_back(t.center + r);
  pts.push_back(t.center);
  return pts;
}

PointAxisTarget random_target(Rng& rng, const AxisCodecConfig& codec) {
  OrientedBox box;
  box.cx = rng.uniform(-0.5, 0.5);
  box.cy = rng.uniform(-0.5, 0.5);
  box.w = rng.uniform(0.3, 1.2);
  box.h = rng.uniform(0.2, 1.0);
  box.theta = rng.uniform(0.0, kPi);
  return quad_to_point_axis_target(obb_to_quad(box), codec);
}

// ---------------------------------------------------------------------------
// criterion 1: finite-difference gradient oracle, 100 seeded configurations

double fd_points_loss(Rng& rng, const AxisCodecConfig& codec, ProjectionVariant variant) {
  PointAxisTarget target = random_target(rng, codec);
  int k = 5 + static_cast<int>(rng.uniform_index(5));
  std::vector<double> x0(static_cast<std::size_t>(2 * k));
  for (double& c : x0) c = rng.uniform(-1.5, 1.5);
  auto to_points = [&](std::span<const double> x) {
    std::vector<Vec2> pts(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) pts[static_cast<std::size_t>(i)] = {x[2 * i], x[2 * i + 1]};
    return pts;
  };
  LossOutput out = max_projection_variant(to_points(x0), target, variant, 2);
  std::vector<double> analytic;
  for (const Vec2& g : out.point_grads) {
    analytic.push_back(g.x);
    analytic.push_back(g.y);
  }
  auto f = [&](std::span<const double> x) { return max_projection_variant(to_points(x), target, variant, 2).value; };
  return oracle::fd_check(f, x0, analytic, 1e-6).max_rel;
}

double fd_cross_axis(Rng& rng) {
  AxisCodecConfig codec;
  codec.n_bins = 24;
  codec.sigma = 2.0;
  AxisEncoding target = encode_axis(rng.uniform(0.0, 2.0 * kPi), codec);
  std::vector<double> x0(static_cast<std::size_t>(codec.n_bins));
  for (double& v : x0) v = rng.uniform(-3.0, 3.0);
  LossOutput out = cross_axis_loss(x0, target, codec.epsilon);
  auto f = [&](std::span<const double> x) { return cross_axis_loss(x, target, codec.epsilon).value; };
  return oracle::fd_check(f, x0, out.axis_logit_grads, 1e-6).max_rel;
}

double fd_classification(Rng& rng) {
  int n_query = 2 + static_cast<int>(rng.uniform_index(3));
  int n_class = 2 + static_cast<int>(rng.uniform_index(3));
  std::vector<double> x0(static_cast<std::size_t>(n_query * n_class));
  for (double& v : x0) v = rng.uniform(-2.0, 2.0);
  std::vector<int> targets(static_cast<std::size_t>(n_query));
  for (int& t : targets) t = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n_class + 1))) - 1;
  auto to_rows = [&](std::span<const double> x) {
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(n_query));
    for (int q = 0; q < n_query; ++q)
      rows[static_cast<std::size_t>(q)].assign(x.begin() + q * n_class, x.begin() + (q + 1) * n_class);
    return rows;
  };
  LossOutput out = classification_loss(to_rows(x0), targets);
  auto f = [&](std::span<const double> x) { return classification_loss(to_rows(x), targets).value; };
  return oracle::fd_check(f, x0, out.class_logit_grads, 1e-6).max_rel;
}

std::vector<Tensor> with_input(const NamedParams& named, std::initializer_list<Tensor> inputs) {
  std::vector<Tensor> leaves;
  for (const auto& [name, t] : named) leaves.push_back(t);
  for (const Tensor& t : inputs) leaves.push_back(t);
  return leaves;
}

Tensor random_tensor(int rows, int cols, Rng& rng, bool needs_grad) {
  std::vector<double> v(static_cast<std::size_t>(rows) * cols);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return make_tensor(rows, cols, v, needs_grad);
}

double fd_block(int kind, std::uint64_t seed) {
  Rng rng(seed);
  NamedParams named;
  switch (kind) {
    case 0: {
      Mlp mlp = Mlp::init({5, 9, 3}, rng);
      Tensor x = random_tensor(4, 5, rng, true);
      mlp.collect("mlp", named);
      return testutil::graph_fd(with_input(named, {x}), [&] { return mlp_forward(x, mlp); }).max_rel;
    }
    case 1: {
      auto mha = MultiHeadSelfAttention::init(8, 2, rng);
      Tensor x = random_tensor(4, 8, rng, true);
      mha.collect("mha", named);
      return testutil::graph_fd(with_input(named, {x}), [&] { return mha(x); }).max_rel;
    }
    case 2: {
      AttentionConfig cfg;
      cfg.dim = 8;
      cfg.n_heads = 2;
      cfg.n_sample_points = 3;
      auto dca = DeformableCrossAttention::init(cfg, rng);
      Tensor fmap = random_tensor(12, 8, rng, true);
      Tensor q = random_tensor(2, 8, rng, true);
      std::vector<Vec2> refs = {{rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)},
                                {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)}};
      dca.collect("dca", named);
      return testutil::graph_fd(with_input(named, {fmap, q}), [&] { return dca(q, refs, fmap, 3, 4); }).max_rel;
    }
    default: {
      Tensor map = random_tensor(12, 2, rng, true);
      Tensor w = random_tensor(1, 3, rng, true);
      Tensor pos = make_tensor(3, 2,
                               {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95),
                                rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)},
                               true);
      return testutil::graph_fd({map, pos, w}, [&] { return deform_sample(map, 3, 4, pos, w); }).max_rel;
    }
  }
}

double fd_end_to_end(std::uint64_t seed) {
  RunConfig cfg;
  cfg.model.k_points = 5;
  cfg.model.n_queries = 2;
  cfg.model.dim = 8;
  cfg.model.n_layers = 1;
  cfg.model.n_classes = 2;
  cfg.model.n_bins = 8;
  cfg.model.patch = 2;
  cfg.model.attention.dim = 8;
  cfg.model.attention.n_heads = 2;
  cfg.model.attention.n_sample_points = 2;
  cfg.loss.codec.n_bins = 8;
  cfg.loss.codec.sigma = 1.0;
  cfg.optim.grad_clip = 0.0;
  cfg.seed = 17 + seed;
  Trainer trainer = Trainer::init(cfg);
  // Zero-initialized conversion heads put all boundary points on a tied
  // argmax of the projection loss; perturbing moves to a generic point.
  Rng noise(321 + seed);
  for (const Tensor& p : trainer.params)
    for (double& v : p->data) v += noise.uniform(-0.02, 0.02);

  SyntheticParams sp;
  sp.n_images = 1;
  sp.height = 16;
  sp.width = 16;
  sp.max_objects = 2;
  sp.min_size = 5.0;
  sp.max_size = 8.0;
  sp.classes = {"alpha", "beta"};
  std::vector<SyntheticScene> raw = generate_synthetic(21 + seed, sp);
  TrainScene scene = make_train_scene(raw[0].image, raw[0].annotations, {"alpha", "beta"}, cfg.loss.codec);

  trainer.train_step(scene, 0.0);
  std::vector<double> x0, analytic;
  for (const Tensor& p : trainer.params) {
    x0.insert(x0.end(), p->data.begin(), p->data.end());
    analytic.insert(analytic.end(), p->grad.begin(), p->grad.end());
  }
  auto f = [&](std::span<const double> x) {
    std::size_t off = 0;
    for (const Tensor& p : trainer.params) {
      std::copy(x.begin() + static_cast<std::ptrdiff_t>(off),
                x.begin() + static_cast<std::ptrdiff_t>(off + p->data.size()), p->data.begin());
      off += p->data.size();
    }
    return trainer.eval_loss(scene).total;
  };
  return oracle::fd_check(f, x0, analytic, 1e-6).max_rel;
}

bool criterion1(std::string& detail) {
  AxisCodecConfig codec;
  double worst_unit = 0.0;
  const ProjectionVariant variants[] = {ProjectionVariant::kMax, ProjectionVariant::kWithPenalty,
                                        ProjectionVariant::kTopK};
  int configs = 0;
  for (int v = 0; v < 3; ++v)
    for (int trial = 0; trial < 12; ++trial, ++configs) {
      Rng rng = Rng::derive(8101, static_cast<std::uint64_t>(configs));
      worst_unit = std::max(worst_unit, fd_points_loss(rng, codec, variants[v]));
    }
  for (int trial = 0; trial < 12; ++trial, ++configs) {
    Rng rng = Rng::derive(8102, static_cast<std::uint64_t>(trial));
    worst_unit = std::max(worst_unit, fd_cross_axis(rng));
  }
  for (int trial = 0; trial < 12; ++trial, ++configs) {
    Rng rng = Rng::derive(8103, static_cast<std::uint64_t>(trial));
    worst_unit = std::max(worst_unit, fd_classification(rng));
  }
  for (int kind = 0; kind < 4; ++kind)
    for (int trial = 0; trial < 5; ++trial, ++configs)
      worst_unit = std::max(worst_unit, fd_block(kind, 9000 + static_cast<std::uint64_t>(kind * 10 + trial)));

  double worst_e2e = 0.0;
  for (int trial = 0; trial < 20; ++trial, ++configs)
    worst_e2e = std::max(worst_e2e, fd_end_to_end(static_cast<std::uint64_t>(trial)));

  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "%d seeded configurations, worst unit rel err %.3g (tol 1e-4), worst end-to-end %.3g (tol 1e-3)",
                configs, worst_unit, worst_e2e);
  detail = buf;
  return configs == 100 && worst_unit <= 1e-4 && worst_e2e <= 1e-3;
}

// ---------------------------------------------------------------------------
// criterion 2: rotated IoU vs Monte-Carlo oracle plus exact fixtures

bool criterion2(std::string& detail) {
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    Rng rng = Rng::derive(8201, static_cast<std::uint64_t>(trial));
    auto random_box = [&]() {
      OrientedBox b;
      b.cx = rng.uniform(0.2, 0.8);
      b.cy = rng.uniform(0.2, 0.8);
      b.w = rng.uniform(0.1, 0.5);
      b.h = rng.uniform(0.1, 0.5);
      b.theta = rng.uniform(0.0, kPi);
      return b;
    };
    OrientedBox a = random_box(), b = random_box();
    oracle::McIou mc = oracle::mc_iou(a, b, 1000000, rng);
    worst = std::max(worst, std::abs(rotated_iou(a, b) - mc.iou));
  }

  Rng rng(8202);
  bool identical_ok = true;
  for (int i = 0; i < 20; ++i) {
    OrientedBox b{rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0), rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0),
                  rng.uniform(0.0, kPi)};
    identical_ok = identical_ok && rotated_iou(b, b) == 1.0;
  }
  double sevenths = std::abs(rotated_iou(OrientedBox{0.5, 0.5, 1.0, 1.0, 0.0}, OrientedBox{1.0, 1.0, 1.0, 1.0, 0.0}) -
                             1.0 / 7.0);

  char buf[160];
  std::snprintf(buf, sizeof(buf), "max |IoU - MC(1e6)| %.3g over 1000 pairs (tol 1e-3), identical %s, 1/7 fixture err %.3g",
                worst, identical_ok ? "exact" : "WRONG", sevenths);
  detail = buf;
  return worst <= 1e-3 && identical_ok && sevenths <= 1e-9;
}

// ---------------------------------------------------------------------------
// criterion 3: min-area rectangle vs brute-force oracle

bool criterion3(std::string& detail) {
  double worst = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    Rng rng = Rng::derive(8301, static_cast<std::uint64_t>(trial));
    int n = 3 + static_cast<int>(rng.uniform_index(38));
    std::vector<Vec2> pts(static_cast<std::size_t>(n));
    for (Vec2& p : pts) p = {rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)};
    OrientedBox rect = min_area_rect(pts);
    double brute = oracle::min_rect_area_pairs(pts);
    worst = std::max(worst, std::abs(rect.w * rect.h - brute) / std::max(1e-12, brute));
  }
  char buf[128];
  std::snprintf(buf, sizeof(buf), "max relative area error %.3g over 500 point sets (tol 1e-9)", worst);
  detail = buf;
  return worst <= 1e-9;
}

// ---------------------------------------------------------------------------
// criterion 4: axis codec roundtrip, 90-degree invariance, seam, square swap

bool criterion4(std::string& detail) {
  AxisCodecConfig codec;
  double half_bin = 0.5 * 360.0 / codec.n_bins;

  double worst_round = 0.0;
  for (int i = 0; i < 720; ++i) {
    double theta_deg = 0.25 * i;
    DecodedAxis dec = decode_axis(encode_axis(theta_deg * kPi / 180.0, codec));
    double got = dec.principal_theta * 180.0 / kPi;
    double want = std::fmod(theta_deg, 90.0);
    double diff = std::abs(got - want);
    worst_round = std::max(worst_round, std::min(diff, 90.0 - diff));
  }

  // The exact invariances: any encoding equals itself shifted a quarter turn
  // in bin space, and grid angles give bitwise equal labels a quarter turn up.
  int shift_mismatches = 0;
  Rng rng(8401);
  int quarter = codec.n_bins / 4;
  for (int trial = 0; trial < 100; ++trial) {
    AxisEncoding enc = encode_axis(rng.uniform(0.0, 2.0 * kPi), codec);
    for (int b = 0; b < codec.n_bins; ++b)
      if (enc.values[static_cast<std::size_t>(b)] != enc.values[static_cast<std::size_t>((b + quarter) % codec.n_bins)])
        ++shift_mismatches;
  }
  for (int b = 0; b < 2 * codec.n_bins; ++b) {
    double theta = b * (kPi / codec.n_bins);
    if (encode_axis(theta, codec).values != encode_axis(theta + kPi / 2.0, codec).values) ++shift_mismatches;
  }

  double worst_seam = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    Rng lr = Rng::derive(8402, static_cast<std::uint64_t>(trial));
    std::vector<double> logits(static_cast<std::size_t>(codec.n_bins));
    for (double& v : logits) v = lr.uniform(-3.0, 3.0);
    double lo = cross_axis_loss(logits, encode_axis(1e-9, codec), codec.epsilon).value;
    double hi = cross_axis_loss(logits, encode_axis(2.0 * kPi - 1e-9, codec), codec.epsilon).value;
    worst_seam = std::max(worst_seam, std::abs(lo - hi));
  }

  int swap_mismatches = 0;
  Rng sq_rng(8403);
  for (int trial = 0; trial < 50; ++trial) {
    OrientedBox sq{sq_rng.uniform(-1.0, 1.0), sq_rng.uniform(-1.0, 1.0), 2.0, 2.0, sq_rng.uniform(0.0, kPi)};
    Quad q = obb_to_quad(sq);
    Quad rot;
    for (int c = 0; c < 4; ++c) rot.corners[static_cast<std::size_t>(c)] = q.corners[static_cast<std::size_t>((c + 1) % 4)];
    PointAxisTarget a = quad_to_point_axis_target(q, codec);
    PointAxisTarget b = quad_to_point_axis_target(rot, codec);
    if (a.axis.values != b.axis.values) ++swap_mismatches;
  }

  char buf[192];
  std::snprintf(buf, sizeof(buf),
                "roundtrip %.9f deg (tol %.2f), quarter-turn mismatches %d, seam jump %.3g (tol 1e-6), square-swap mismatches %d",
                worst_round, half_bin, shift_mismatches, worst_seam, swap_mismatches);
  detail = buf;
  return worst_round <= half_bin + 1e-9 && shift_mismatches == 0 && worst_seam <= 1e-6 && swap_mismatches == 0;
}

// ---------------------------------------------------------------------------
// criterion 5: Hungarian vs permutation brute force

bool criterion5(std::string& detail) {
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    Rng rng = Rng::derive(8501, static_cast<std::uint64_t>(trial));
    int rows = 1 + static_cast<int>(rng.uniform_index(7));
    int cols = 1 + static_cast<int>(rng.uniform_index(7));
    std::vector<std::vector<double>> costs(static_cast<std::size_t>(rows),
                                           std::vector<double>(static_cast<std::size_t>(cols)));
    for (auto& row : costs)
      for (double& v : row) v = rng.uniform(0.0, 10.0);
    double total = 0.0;
    for (auto [r, c] : hungarian(costs)) total += costs[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
    std::vector<std::vector<double>> brute = costs;
    if (rows > cols) {
      brute.assign(static_cast<std::size_t>(cols), std::vector<double>(static_cast<std::size_t>(rows)));
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
          brute[static_cast<std::size_t>(c)][static_cast<std::size_t>(r)] = costs[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
    }
    double best = 0.0;
    oracle::assignment_bruteforce(brute, &best);
    worst = std::max(worst, std::abs(total - best));
  }
  char buf[128];
  std::snprintf(buf, sizeof(buf), "max assignment cost gap %.3g over 1000 matrices up to 7x7 (tol 1e-9)", worst);
  detail = buf;
  return worst <= 1e-9;
}

// ---------------------------------------------------------------------------
// criterion 6: AP fixtures

bool criterion6(std::string& detail) {
  Quad ga = obb_to_quad({10.0, 10.0, 8.0, 4.0, 0.0});
  Quad gb = obb_to_quad({30.0, 30.0, 8.0, 4.0, 0.0});
  Quad far = obb_to_quad({50.0, 50.0, 8.0, 4.0, 0.0});
  std::vector<GroundTruthRecord> gts = {{"img", "c", ga, false}, {"img", "c", gb, false}};
  std::vector<DetectionRecord> dets = {{"img", "c", 0.9, ga}, {"img", "c", 0.8, far}, {"img", "c", 0.7, gb}};
  double fixture_err = std::abs(average_precision(dets, gts, 0.5, ApProtocol::kVoc12).map - 5.0 / 6.0);

  std::vector<DetectionRecord> perfect = {{"img", "c", 0.9, ga}, {"img", "c", 0.8, gb}};
  double ap_one = average_precision(perfect, gts, 0.5, ApProtocol::kVoc12).map;
  std::vector<DetectionRecord> wrong = {{"img", "c", 0.9, far}};
  double ap_zero = average_precision(wrong, gts, 0.5, ApProtocol::kVoc12).map;

  char buf[128];
  std::snprintf(buf, sizeof(buf), "voc12 fixture err %.3g (tol 1e-6), perfect AP %g, hopeless AP %g", fixture_err,
                ap_one, ap_zero);
  detail = buf;
  return fixture_err <= 1e-6 && ap_one == 1.0 && ap_zero == 0.0;
}

// ---------------------------------------------------------------------------
// criterion 7: max-projection loss semantics

bool criterion7(std::string& detail) {
  PointAxisTarget t = unit_square_target();
  double zero_val = max_projection_loss(edge_midpoints_plus_center(t), t).value;

  std::vector<Vec2> slack = edge_midpoints_plus_center(t);
  slack[0] = t.center + 0.9 * t.radials[0];
  double slack_val = max_projection_loss(slack, t).value;
  std::vector<Vec2> stick = edge_midpoints_plus_center(t);
  stick[0] = t.center + 1.1 * t.radials[0];
  double stick_val = max_projection_loss(stick, t).value;

  PointAxisTarget off = unit_square_target({3.0, -1.0});
  std::vector<Vec2> collapsed(5, off.center);
  double center_fixture = std::abs(max_projection_loss(collapsed, off).value - 4.0);

  double worst_rot = 0.0;
  Rng rng(8701);
  AxisCodecConfig codec;
  for (int trial = 0; trial < 30; ++trial) {
    PointAxisTarget rt = random_target(rng, codec);
    std::vector<Vec2> pts;
    for (int i = 0; i < 9; ++i) pts.push_back({rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)});
    double base = max_projection_loss(pts, rt).value;
    double ang = rng.uniform(0.0, 2.0 * kPi);
    double c = std::cos(ang), s = std::sin(ang);
    auto rot = [&](Vec2 v) { return Vec2{c * v.x - s * v.y, s * v.x + c * v.y}; };
    PointAxisTarget moved = rt;
    moved.center = rot(rt.center);
    for (std::size_t j = 0; j < 4; ++j) moved.radials[j] = rot(rt.radials[j]);
    std::vector<Vec2> rp;
    for (Vec2 p : pts) rp.push_back(rot(p));
    worst_rot = std::max(worst_rot, std::abs(max_projection_loss(rp, moved).value - base));
  }

  char buf[192];
  std::snprintf(buf, sizeof(buf),
                "zero fixture %.3g, perturbed fixtures %.3g/%.3g, center fixture err %.3g, rotation drift %.3g (tol 1e-9)",
                zero_val, slack_val, stick_val, center_fixture, worst_rot);
  detail = buf;
  return std::abs(zero_val) <= 1e-12 && slack_val > 1e-3 && stick_val > 1e-3 && center_fixture <= 1e-12 &&
         worst_rot <= 1e-9;
}

// ---------------------------------------------------------------------------
// criterion 8: desk-scale learning

struct LearningResult {
  bool reached = false;
  int epoch = 0;
  double map50 = 0.0;
  double map75 = 0.0;
  double wall_s = 0.0;
};

LearningResult run_learning(std::uint64_t data_seed, int n_train, int n_val, double goal50, double goal75,
                            int max_epochs) {
  auto t0 = Clock::now();
  RunConfig cfg;
  SyntheticParams sp;
  sp.n_images = n_train;
  std::vector<SyntheticScene> raw = generate_synthetic(data_seed, sp);
  std::vector<std::string> classes = sp.classes;
  std::vector<TrainScene> train_scenes;
  for (const SyntheticScene& s : raw) train_scenes.push_back(make_train_scene(s.image, s.annotations, classes, cfg.loss.codec));

  std::vector<TrainScene> eval_scenes = train_scenes;
  std::vector<std::string> eval_ids = scene_ids(train_scenes.size());
  if (n_val > 0) {
    SyntheticParams vp = sp;
    vp.n_images = n_val;
    std::vector<SyntheticScene> vraw = generate_synthetic(data_seed + 1, vp);
    eval_scenes.clear();
    for (const SyntheticScene& s : vraw) eval_scenes.push_back(make_train_scene(s.image, s.annotations, classes, cfg.loss.codec));
    eval_ids = scene_ids(eval_scenes.size());
  }

  Trainer trainer = Trainer::init(cfg);
  LearningResult res;
  for (int epoch = 1; epoch <= max_epochs; ++epoch) {
    double lr = trainer.learning_rate(epoch);
    for (const TrainScene& s : train_scenes) trainer.train_step(s, lr);
    if (epoch % cfg.optim.eval_every == 0 || epoch == max_epochs) {
      res.map50 = evaluate_model(trainer.model, eval_scenes, eval_ids, classes, cfg.loss.codec, 0.5,
                                 ApProtocol::kVoc12, 1).map;
      res.map75 = goal75 > 0.0 ? evaluate_model(trainer.model, eval_scenes, eval_ids, classes, cfg.loss.codec,
                                                0.75, ApProtocol::kVoc12, 1).map
                               : 0.0;
      res.epoch = epoch;
      if (res.map50 >= goal50 && res.map75 >= goal75) {
        res.reached = true;
        break;
      }
    }
  }
  res.wall_s = seconds_since(t0);
  return res;
}

bool criterion8(std::string& detail) {
  LearningResult overfit = run_learning(101, 8, 0, 0.9, 0.5, 300);
  bool pass_a = overfit.reached && overfit.wall_s <= 900.0;

  LearningResult gen = run_learning(201, 64, 16, 0.6, 0.0, 300);
  bool pass_b = gen.reached && gen.wall_s <= 2700.0;

  char buf[224];
  std::snprintf(buf, sizeof(buf),
                "overfit mAP50 %.3f mAP75 %.3f at epoch %d (%.0fs, limit 900s); val mAP50 %.3f at epoch %d (%.0fs, limit 2700s)",
                overfit.map50, overfit.map75, overfit.epoch, overfit.wall_s, gen.map50, gen.epoch, gen.wall_s);
  detail = buf;
  return pass_a && pass_b;
}

// ---------------------------------------------------------------------------
// criterion 9: ablation wiring

bool criterion9(std::string& detail) {
  struct Switches {
    bool point_queries, group_attn, decoupled;
  };
  const Switches table[4] = {{false, false, false}, {true, false, false}, {true, true, false}, {true, true, true}};

  SyntheticParams sp;
  std::vector<SyntheticScene> raw = generate_synthetic(101, sp);

  double losses[4] = {0.0, 0.0, 0.0, 0.0};
  for (int i = 0; i < 4; ++i) {
    RunConfig cfg;
    cfg.model.use_point_queries = table[i].point_queries;
    cfg.model.use_group_self_attention = table[i].group_attn;
    cfg.model.use_decoupled_cross_attention = table[i].decoupled;
    std::vector<TrainScene> scenes;
    for (const SyntheticScene& s : raw) scenes.push_back(make_train_scene(s.image, s.annotations, sp.classes, cfg.loss.codec));
    Trainer trainer = Trainer::init(cfg);
    double mean = 0.0;
    for (int epoch = 1; epoch <= 5; ++epoch) {
      double lr = trainer.learning_rate(epoch);
      mean = 0.0;
      for (const TrainScene& s : scenes) mean += trainer.train_step(s, lr).total;
      mean /= static_cast<double>(scenes.size());
      if (!std::isfinite(mean)) {
        detail = "non-finite loss in configuration " + std::to_string(i);
        return false;
      }
    }
    losses[i] = mean;
  }

  char buf[160];
  std::snprintf(buf, sizeof(buf), "epoch-5 losses: baseline %.4f, +points %.4f, +group %.4f, full %.4f", losses[0],
                losses[1], losses[2], losses[3]);
  detail = buf;
  return losses[3] <= losses[0];
}

// ---------------------------------------------------------------------------
// criterion 10: format fidelity

bool criterion10(std::string& detail) {
  const char* goldens[] = {"tests/data/golden_integer.txt", "tests/data/golden_headers.txt",
                           "tests/data/golden_fractional.txt"};
  int fixpoint_failures = 0;
  for (const char* rel : goldens) {
    std::string text = read_text_file(std::string(PAXKIT_SOURCE_DIR) + "/" + rel);
    DotaFile once = parse_dota(text);
    if (serialize_dota(once) != text) {
      ++fixpoint_failures;
      continue;
    }
    DotaFile twice = parse_dota(serialize_dota(once));
    if (serialize_dota(twice) != text) ++fixpoint_failures;
  }

  Rng rng(8901);
  std::vector<GroundTruthRecord> gts;
  std::vector<DetectionRecord> dets;
  for (int i = 0; i < 40; ++i) {
    std::string image = "scene_" + std::to_string(i % 5);
    std::string cls = i % 3 == 0 ? "alpha" : (i % 3 == 1 ? "beta" : "gamma");
    OrientedBox box{rng.uniform(10.0, 50.0), rng.uniform(10.0, 50.0), rng.uniform(6.0, 14.0),
                    rng.uniform(4.0, 10.0), rng.uniform(0.0, kPi)};
    gts.push_back({image, cls, obb_to_quad(box), false});
    OrientedBox jit = box;
    jit.cx += rng.uniform(-2.0, 2.0);
    jit.cy += rng.uniform(-2.0, 2.0);
    dets.push_back({image, cls, rng.uniform(0.1, 0.99), obb_to_quad(jit)});
  }
  ApResult direct = average_precision(dets, gts, 0.5, ApProtocol::kVoc12);
  std::vector<DetectionRecord> reread = read_detections(write_detections(dets));
  ApResult rescored = average_precision(reread, gts, 0.5, ApProtocol::kVoc12);
  bool bit_exact = direct.map == rescored.map && direct.per_class_ap == rescored.per_class_ap;

  char buf[160];
  std::snprintf(buf, sizeof(buf), "golden fixpoint failures %d of 3, dump re-evaluation %s (mAP %.6f)",
                fixpoint_failures, bit_exact ? "bit-exact" : "DIVERGED", rescored.map);
  detail = buf;
  return fixpoint_failures == 0 && bit_exact;
}

using CriterionFn = bool (*)(std::string&);

struct Criterion {
  int id;
  CriterionFn run;
};

const Criterion kCriteria[] = {
    {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4}, {5, criterion5},
    {6, criterion6}, {7, criterion7}, {8, criterion8}, {9, criterion9}, {10, criterion10},
};

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) {
    int id = std::atoi(argv[i]);
    if (id < 1 || id > 10) {
      std::fprintf(stderr, "usage: %s [criterion numbers 1-10]\n", argv[0]);
      return 2;
    }
    selected.insert(id);
  }

  bool all_pass = true;
  for (const Criterion& c : kCriteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    auto t0 = Clock::now();
    std::string detail;
    bool ok = false;
    try {
      ok = c.run(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    std::printf("criterion %d: %s  (%s; %.1fs)\n", c.id, ok ? "PASS" : "FAIL", detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
    all_pass = all_pass && ok;
  }
  return all_pass ? 0 : 1;
}
