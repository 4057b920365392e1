#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "paxkit/nn.hpp"
#include "paxkit/oracle.hpp"
#include "paxkit/rng.hpp"
#include "paxkit/tensor.hpp"
#include "test_util.hpp"

using namespace paxkit;

namespace {

std::vector<double> random_values(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> out(n);
  for (double& v : out) v = rng.uniform(lo, hi);
  return out;
}

Tensor random_tensor(int rows, int cols, Rng& rng, bool needs_grad = false) {
  return make_tensor(rows, cols, random_values(static_cast<std::size_t>(rows) * cols, rng), needs_grad);
}

void check_grad(const std::vector<Tensor>& leaves, const std::function<Tensor()>& fwd,
                double tol = 1e-4) {
  auto report = testutil::graph_fd(leaves, fwd);
  CAPTURE(report.max_rel, report.worst_index, report.worst_analytic, report.worst_numeric);
  CHECK(report.max_rel <= tol);
}

std::vector<Tensor> param_tensors(const NamedParams& named) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : named) out.push_back(t);
  return out;
}

}  // namespace

TEST_CASE("tensor shape errors name the offending shapes") {
  CHECK_THROWS_AS(make_tensor(2, 3, std::vector<double>{1.0, 2.0}), ShapeMismatch);
  Tensor a = make_tensor(2, 3, 1.0);
  Tensor b = make_tensor(3, 2, 1.0);
  CHECK_THROWS_AS(add(a, b), ShapeMismatch);
  CHECK_THROWS_AS(matmul(a, a), ShapeMismatch);
  CHECK_THROWS_AS(reshape(a, 4, 2), ShapeMismatch);
  CHECK_THROWS_AS(slice_rows(a, 0, 3), ShapeMismatch);
  CHECK_THROWS_AS(slice_cols(a, 2, 2), ShapeMismatch);
  CHECK_THROWS_AS(select_rows(a, {0, 2}), IndexOutOfRange);
  CHECK_THROWS_AS(attn_mix(a, a), ShapeMismatch);
  try {
    matmul(a, a);
    FAIL("expected throw");
  } catch (const ShapeMismatch& e) {
    CHECK(std::string(e.what()).find("2x3") != std::string::npos);
  }
}

TEST_CASE("softmax of zeros is uniform") {
  Tensor z = make_tensor(1, 4, 0.0);
  Tensor s = softmax_rows(z);
  for (int c = 0; c < 4; ++c) CHECK(s->at(0, c) == 0.25);
}

TEST_CASE("softmax rows each sum to one") {
  Rng rng(31);
  Tensor x = random_tensor(6, 9, rng);
  for (double& v : x->data) v *= 7.0;
  Tensor s = softmax_rows(x);
  for (int r = 0; r < 6; ++r) {
    double sum = 0.0;
    for (int c = 0; c < 9; ++c) sum += s->at(r, c);
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("layer norm of a constant vector is zero before affine") {
  Tensor x = make_tensor(2, 5, 3.7);
  LayerNorm ln = LayerNorm::init(5);
  Tensor y = ln(x);
  for (std::size_t i = 0; i < y->size(); ++i) CHECK(y->data[i] == 0.0);
}

TEST_CASE("matmul matches the naive triple-loop oracle") {
  Rng rng(57);
  for (auto [n, m, k] : {std::array<int, 3>{2, 3, 2}, std::array<int, 3>{7, 5, 4}}) {
    Tensor a = random_tensor(n, m, rng);
    Tensor b = random_tensor(m, k, rng);
    Tensor c = matmul(a, b);
    std::vector<double> expect = oracle::matmul_naive(a->data, b->data, static_cast<std::size_t>(n),
                                                      static_cast<std::size_t>(m), static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < c->size(); ++i) CHECK(std::abs(c->data[i] - expect[i]) <= 1e-12);
  }
}

TEST_CASE("sinusoidal pe fixtures") {
  std::vector<double> at_zero = sinusoidal_pe(0.0, 6);
  for (int p = 0; p < 3; ++p) {
    CHECK(at_zero[static_cast<std::size_t>(2 * p)] == 0.0);
    CHECK(at_zero[static_cast<std::size_t>(2 * p + 1)] == 1.0);
  }

  std::vector<double> pe = sinusoidal_pe(0.25, 4);
  double x = 0.25 * 2.0 * kPi;
  double f1 = std::pow(10000.0, -2.0 / 4.0);
  CHECK(pe[0] == Catch::Approx(std::sin(x)).margin(1e-15));
  CHECK(pe[1] == Catch::Approx(std::cos(x)).margin(1e-15));
  CHECK(pe[2] == Catch::Approx(std::sin(x * f1)).margin(1e-15));
  CHECK(pe[3] == Catch::Approx(std::cos(x * f1)).margin(1e-15));

  CHECK_THROWS_AS(sinusoidal_pe(0.5, 3), OddDimension);
  CHECK_THROWS_AS(sinusoidal_pe(0.5, 0), OddDimension);
  CHECK_THROWS_AS(sinusoidal_pe_2d(make_tensor(1, 2, 0.5), 6), OddDimension);

  CHECK(sinusoidal_pe(0.37, 8) == sinusoidal_pe(0.37, 8));
}

TEST_CASE("2d pe concatenates the per-coordinate encodings") {
  Tensor coords = make_tensor(2, 2, {0.3, 0.7, 0.05, 0.95});
  Tensor pe = sinusoidal_pe_2d(coords, 8);
  for (int r = 0; r < 2; ++r) {
    std::vector<double> px = sinusoidal_pe(coords->at(r, 0), 4);
    std::vector<double> py = sinusoidal_pe(coords->at(r, 1), 4);
    for (int c = 0; c < 4; ++c) {
      CHECK(pe->at(r, c) == px[static_cast<std::size_t>(c)]);
      CHECK(pe->at(r, 4 + c) == py[static_cast<std::size_t>(c)]);
    }
  }
}

TEST_CASE("single-token attention reduces to the output-projected value") {
  Rng rng(91);
  auto mha = MultiHeadSelfAttention::init(8, 2, rng);
  Tensor x = random_tensor(1, 8, rng);
  Tensor out = mha(x);
  Tensor expect = mha.wo(mha.wv(x));
  for (std::size_t i = 0; i < out->size(); ++i) CHECK(out->data[i] == expect->data[i]);
}

TEST_CASE("self-attention is exactly permutation equivariant") {
  Rng rng(92);
  auto mha = MultiHeadSelfAttention::init(8, 2, rng);
  Tensor x = random_tensor(5, 8, rng);
  const std::vector<int> perm = {3, 0, 4, 2, 1};
  Tensor xp = make_tensor(5, 8);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 8; ++c) xp->at(r, c) = x->at(perm[static_cast<std::size_t>(r)], c);
  Tensor y = mha(x);
  Tensor yp = mha(xp);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 8; ++c) CHECK(yp->at(r, c) == y->at(perm[static_cast<std::size_t>(r)], c));
}

TEST_CASE("three-token attention matches a step-by-step scalar oracle") {
  Rng rng(93);
  const int dim = 4, heads = 2, n = 3, dh = dim / heads;
  auto mha = MultiHeadSelfAttention::init(dim, heads, rng);
  Tensor x = random_tensor(n, dim, rng);
  Tensor out = mha(x);

  auto project = [&](const Linear& lin) {
    std::vector<std::vector<double>> rows(n, std::vector<double>(dim, 0.0));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < dim; ++j) {
        double acc = lin.b->at(0, j);
        for (int t = 0; t < dim; ++t) acc += x->at(i, t) * lin.w->at(t, j);
        rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = acc;
      }
    return rows;
  };
  auto q = project(mha.wq), k = project(mha.wk), v = project(mha.wv);
  std::vector<std::vector<double>> mixed(n, std::vector<double>(dim, 0.0));
  for (int h = 0; h < heads; ++h)
    for (int i = 0; i < n; ++i) {
      std::vector<double> score(n, 0.0);
      for (int j = 0; j < n; ++j)
        for (int t = 0; t < dh; ++t)
          score[static_cast<std::size_t>(j)] += q[static_cast<std::size_t>(i)][static_cast<std::size_t>(h * dh + t)] *
                                                k[static_cast<std::size_t>(j)][static_cast<std::size_t>(h * dh + t)];
      double denom = 0.0;
      for (double& s : score) {
        s = std::exp(s / std::sqrt(static_cast<double>(dh)));
        denom += s;
      }
      for (int j = 0; j < n; ++j)
        for (int t = 0; t < dh; ++t)
          mixed[static_cast<std::size_t>(i)][static_cast<std::size_t>(h * dh + t)] +=
              score[static_cast<std::size_t>(j)] / denom * v[static_cast<std::size_t>(j)][static_cast<std::size_t>(h * dh + t)];
    }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < dim; ++j) {
      double acc = mha.wo.b->at(0, j);
      for (int t = 0; t < dim; ++t) acc += mixed[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)] * mha.wo.w->at(t, j);
      CHECK(out->at(i, j) == Catch::Approx(acc).margin(1e-10));
    }
}

TEST_CASE("bilinear sampling hits grid nodes exactly and averages at midpoints") {
  // 2x2 map, two channels; channel 0 holds {0,1,2,3} row-major.
  Tensor map = make_tensor(4, 2, {0.0, 10.0, 1.0, 11.0, 2.0, 12.0, 3.0, 13.0});
  Tensor w1 = make_tensor(1, 1, 1.0);

  Tensor at_node = deform_sample(map, 2, 2, make_tensor(1, 2, {1.0, 0.0}), w1);
  CHECK(at_node->at(0, 0) == 1.0);
  CHECK(at_node->at(0, 1) == 11.0);

  Tensor mid = deform_sample(map, 2, 2, make_tensor(1, 2, {0.5, 0.5}), w1);
  CHECK(mid->at(0, 0) == Catch::Approx(1.5).margin(1e-15));
  CHECK(mid->at(0, 1) == Catch::Approx(11.5).margin(1e-15));

  Tensor outside = deform_sample(map, 2, 2, make_tensor(1, 2, {-2.0, -2.0}), w1);
  CHECK(outside->at(0, 0) == 0.0);
  CHECK(outside->at(0, 1) == 0.0);
}

TEST_CASE("constant feature map makes cross-attention position independent") {
  Rng rng(94);
  AttentionConfig cfg;
  cfg.dim = 8;
  cfg.n_heads = 2;
  cfg.n_sample_points = 3;
  auto dca = DeformableCrossAttention::init(cfg, rng);
  Tensor fmap = make_tensor(9, 8);
  for (int r = 0; r < 9; ++r)
    for (int c = 0; c < 8; ++c) fmap->at(r, c) = 0.1 * (c + 1);
  Tensor q = random_tensor(1, 8, rng);
  Tensor a = dca(q, {{0.5, 0.5}}, fmap, 3, 3);
  Tensor b = dca(q, {{0.4, 0.6}}, fmap, 3, 3);
  for (std::size_t i = 0; i < a->size(); ++i) CHECK(a->data[i] == Catch::Approx(b->data[i]).margin(1e-12));
}

TEST_CASE("zero offsets sample the reference grid node") {
  Rng rng(95);
  AttentionConfig cfg;
  cfg.dim = 8;
  cfg.n_heads = 2;
  cfg.n_sample_points = 3;
  auto dca = DeformableCrossAttention::init(cfg, rng);
  std::fill(dca.offset_head.w->data.begin(), dca.offset_head.w->data.end(), 0.0);
  std::fill(dca.offset_head.b->data.begin(), dca.offset_head.b->data.end(), 0.0);
  Tensor fmap = random_tensor(9, 8, rng);
  Tensor q = random_tensor(1, 8, rng);
  Tensor out = dca(q, {{0.5, 0.5}}, fmap, 3, 3);

  // By hand: value projection of the center cell (row 4), output projection.
  Tensor vrow = dca.value_proj(slice_rows(fmap, 4, 5));
  Tensor expect = dca.output_proj(vrow);
  for (std::size_t i = 0; i < out->size(); ++i) CHECK(out->data[i] == Catch::Approx(expect->data[i]).margin(1e-12));
}

TEST_CASE("reference points outside the unit square are rejected") {
  Rng rng(96);
  AttentionConfig cfg;
  cfg.dim = 8;
  cfg.n_heads = 2;
  auto dca = DeformableCrossAttention::init(cfg, rng);
  Tensor fmap = make_tensor(9, 8, 0.0);
  Tensor q = make_tensor(1, 8, 0.1);
  CHECK_THROWS_AS(dca(q, {{1.2, 0.5}}, fmap, 3, 3), RefPointOutOfRange);
  CHECK_THROWS_AS(dca(q, {{0.5, -0.01}}, fmap, 3, 3), RefPointOutOfRange);
}

TEST_CASE("attention config validation") {
  AttentionConfig cfg;
  cfg.dim = 10;
  cfg.n_heads = 4;
  CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
  cfg.n_heads = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
  cfg.dim = 64;
  cfg.n_heads = 4;
  cfg.n_sample_points = 4;
  CHECK_NOTHROW(cfg.validate());
  Rng rng(1);
  CHECK_THROWS_AS(Mlp::init({8}, rng), InvalidConfig);
}

TEST_CASE("mlp composition and zero-initialized last layer") {
  Rng rng(97);
  Mlp mlp = Mlp::init({4, 8, 2}, rng);
  Tensor x = random_tensor(3, 4, rng);
  Tensor y = mlp_forward(x, mlp);
  Tensor manual = mlp.layers[1](relu(mlp.layers[0](x)));
  for (std::size_t i = 0; i < y->size(); ++i) CHECK(y->data[i] == manual->data[i]);

  Mlp zl = Mlp::init({4, 8, 2}, rng, true);
  Tensor z = mlp_forward(x, zl);
  for (double v : z->data) CHECK(v == 0.0);
}

TEST_CASE("elementwise and structural op gradients pass finite differences") {
  Rng rng(0xA11);

  SECTION("add, same shape and row broadcast") {
    Tensor a = random_tensor(3, 4, rng, true);
    Tensor b = random_tensor(3, 4, rng, true);
    Tensor row = random_tensor(1, 4, rng, true);
    check_grad({a, b}, [&] { return add(a, b); });
    check_grad({a, row}, [&] { return add(a, row); });
  }
  SECTION("scale and transpose") {
    Tensor a = random_tensor(3, 4, rng, true);
    check_grad({a}, [&] { return scale(a, -2.3); });
    check_grad({a}, [&] { return transpose(a); });
  }
  SECTION("matmul") {
    Tensor a = random_tensor(3, 4, rng, true);
    Tensor b = random_tensor(4, 2, rng, true);
    check_grad({a, b}, [&] { return matmul(a, b); });
  }
  SECTION("attn_mix") {
    Tensor a = random_tensor(3, 5, rng, true);
    Tensor v = random_tensor(5, 2, rng, true);
    check_grad({a, v}, [&] { return attn_mix(a, v); });
  }
  SECTION("relu off the kink") {
    Tensor a = make_tensor(2, 6, 0.0, true);
    for (double& v : a->data) {
      double m = rng.uniform(0.2, 1.0);
      v = rng.uniform() < 0.5 ? -m : m;
    }
    check_grad({a}, [&] { return relu(a); });
  }
  SECTION("sigmoid") {
    Tensor a = random_tensor(2, 6, rng, true);
    check_grad({a}, [&] { return sigmoid(a); });
  }
  SECTION("softmax") {
    Tensor a = random_tensor(3, 6, rng, true);
    check_grad({a}, [&] { return softmax_rows(a); });
  }
  SECTION("layer norm with affine") {
    Tensor a = random_tensor(3, 6, rng, true);
    Tensor g = random_tensor(1, 6, rng, true);
    Tensor b = random_tensor(1, 6, rng, true);
    check_grad({a, g, b}, [&] { return layer_norm_rows(a, g, b); });
  }
  SECTION("slicing, concatenation, selection") {
    Tensor a = random_tensor(4, 5, rng, true);
    Tensor b = random_tensor(2, 5, rng, true);
    check_grad({a}, [&] { return slice_rows(a, 1, 3); });
    check_grad({a}, [&] { return slice_cols(a, 2, 5); });
    check_grad({a, b}, [&] { return concat_rows({a, b}); });
    check_grad({a}, [&] { return concat_cols({a, a}); });
    check_grad({a}, [&] { return select_rows(a, {3, 0, 0, 2}); });
    check_grad({a, b}, [&] { return scatter_replace_rows(a, {2, 0}, b); });
    check_grad({a}, [&] { return mean_rows(a); });
    check_grad({a}, [&] { return reshape(a, 2, 10); });
  }
  SECTION("sinusoidal pe 2d") {
    Tensor c = make_tensor(3, 2, {0.31, 0.77, 0.12, 0.54, 0.68, 0.23}, true);
    check_grad({c}, [&] { return sinusoidal_pe_2d(c, 8); });
  }
}

TEST_CASE("deformable sampling gradients pass finite differences off grid lines") {
  Rng rng(0xA12);
  Tensor map = random_tensor(12, 2, rng, true);  // 3 rows x 4 cols
  Tensor pos = make_tensor(3, 2, {0.21, 0.37, 0.55, 0.81, 0.44, 0.12}, true);
  Tensor w = random_tensor(1, 3, rng, true);
  check_grad({map, pos, w}, [&] { return deform_sample(map, 3, 4, pos, w); });
}

TEST_CASE("attention block gradients pass finite differences") {
  Rng rng(0xA13);
  auto mha = MultiHeadSelfAttention::init(8, 2, rng);
  Tensor x = random_tensor(4, 8, rng, true);
  NamedParams named;
  mha.collect("mha", named);
  std::vector<Tensor> leaves = param_tensors(named);
  leaves.push_back(x);
  check_grad(leaves, [&] { return mha(x); });
}

TEST_CASE("deformable cross-attention gradients pass finite differences") {
  Rng rng(0xA14);
  AttentionConfig cfg;
  cfg.dim = 8;
  cfg.n_heads = 2;
  cfg.n_sample_points = 3;
  auto dca = DeformableCrossAttention::init(cfg, rng);
  Tensor fmap = random_tensor(12, 8, rng, true);  // 3 x 4 grid
  Tensor q = random_tensor(2, 8, rng, true);
  std::vector<Vec2> refs = {{0.31, 0.47}, {0.58, 0.62}};
  NamedParams named;
  dca.collect("dca", named);
  std::vector<Tensor> leaves = param_tensors(named);
  leaves.push_back(fmap);
  leaves.push_back(q);
  check_grad(leaves, [&] { return dca(q, refs, fmap, 3, 4); });
}

TEST_CASE("mlp gradients pass finite differences") {
  Rng rng(0xA15);
  Mlp mlp = Mlp::init({5, 9, 3}, rng);
  Tensor x = random_tensor(4, 5, rng, true);
  NamedParams named;
  mlp.collect("mlp", named);
  std::vector<Tensor> leaves = param_tensors(named);
  leaves.push_back(x);
  check_grad(leaves, [&] { return mlp_forward(x, mlp); });
}

TEST_CASE("identical seeds give bit-identical forward and backward") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    auto mha = MultiHeadSelfAttention::init(8, 2, rng);
    Tensor x = random_tensor(5, 8, rng, true);
    Tensor out = mha(x);
    std::fill(out->grad.begin(), out->grad.end(), 1.0);
    backward({out});
    NamedParams named;
    mha.collect("m", named);
    std::vector<double> dump = out->data;
    dump.insert(dump.end(), x->grad.begin(), x->grad.end());
    for (const auto& [name, t] : named) dump.insert(dump.end(), t->grad.begin(), t->grad.end());
    return dump;
  };
  std::vector<double> a = run(0xDE7E12);
  std::vector<double> b = run(0xDE7E12);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("multi-root backward accumulates through shared subgraphs") {
  // y1 = 2x, y2 = x*x (via attn-free path); d(sum y1 + sum y2)/dx = 2 + 2x.
  Rng rng(0xA16);
  Tensor x = random_tensor(1, 4, rng, true);
  Tensor y1 = scale(x, 2.0);
  Tensor hidden = sigmoid(x);
  Tensor y2 = add(y1, hidden);
  std::fill(y1->grad.begin(), y1->grad.end(), 1.0);
  std::fill(y2->grad.begin(), y2->grad.end(), 1.0);
  backward({y1, y2});
  for (int c = 0; c < 4; ++c) {
    double s = 1.0 / (1.0 + std::exp(-x->at(0, c)));
    double expect = 2.0 + 2.0 + s * (1.0 - s);
    CHECK(x->grad[static_cast<std::size_t>(c)] == Catch::Approx(expect).margin(1e-12));
  }
}
