#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "paxkit/common.hpp"
#include "paxkit/geometry.hpp"
#include "paxkit/rng.hpp"
#include "paxkit/tensor.hpp"

namespace paxkit {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

/// Attention geometry shared by self- and cross-attention blocks.
struct AttentionConfig {
  int dim = 64;
  int n_heads = 4;
  int n_sample_points = 4;

  void validate() const {
    if (dim <= 0 || n_heads <= 0 || n_sample_points <= 0)
      throw InvalidConfig("attention: dim, n_heads, n_sample_points must be positive");
    if (dim % n_heads != 0)
      throw InvalidConfig("attention: dim " + std::to_string(dim) + " not divisible by n_heads " + std::to_string(n_heads));
  }
};

struct Linear {
  Tensor w;  // in x out
  Tensor b;  // 1 x out

  static Linear init(int in, int out, Rng& rng) {
    Linear l;
    l.w = make_param(in, out, rng);
    l.b = make_param(1, out, rng, static_cast<double>(in));
    return l;
  }

  /// All-zero weights; used for heads whose first update must start from
  /// an identity-like mapping (offsets, refinement deltas).
  static Linear zeros(int in, int out) {
    Linear l;
    l.w = make_tensor(in, out, 0.0, true);
    l.b = make_tensor(1, out, 0.0, true);
    return l;
  }

  Tensor operator()(const Tensor& x) const { return add(matmul(x, w), b); }

  void collect(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".b", b);
  }
};

/// Fully connected stack with ReLU between layers, none after the last.
struct Mlp {
  std::vector<Linear> layers;

  static Mlp init(const std::vector<int>& dims, Rng& rng, bool zero_last = false) {
    if (dims.size() < 2) throw InvalidConfig("mlp: need at least input and output dims");
    Mlp m;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
      bool last = i + 2 == dims.size();
      if (last && zero_last)
        m.layers.push_back(Linear::zeros(dims[i], dims[i + 1]));
      else
        m.layers.push_back(Linear::init(dims[i], dims[i + 1], rng));
    }
    return m;
  }

  Tensor operator()(Tensor x) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      x = layers[i](x);
      if (i + 1 < layers.size()) x = relu(x);
    }
    return x;
  }

  void collect(const std::string& prefix, NamedParams& out) const {
    for (std::size_t i = 0; i < layers.size(); ++i)
      layers[i].collect(prefix + ".l" + std::to_string(i), out);
  }
};

inline Tensor mlp_forward(const Tensor& x, const Mlp& mlp) { return mlp(x); }

struct LayerNorm {
  Tensor gain;
  Tensor bias;

  static LayerNorm init(int dim) {
    LayerNorm n;
    n.gain = make_tensor(1, dim, 1.0, true);
    n.bias = make_tensor(1, dim, 0.0, true);
    return n;
  }

  Tensor operator()(const Tensor& x) const { return layer_norm_rows(x, gain, bias); }

  void collect(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".gain", gain);
    out.emplace_back(prefix + ".bias", bias);
  }
};

/// Standard scaled dot-product self-attention over token rows.
struct MultiHeadSelfAttention {
  int n_heads = 1;
  Linear wq, wk, wv, wo;

  static MultiHeadSelfAttention init(int dim, int n_heads, Rng& rng) {
    if (dim % n_heads != 0) throw InvalidConfig("self-attention: dim not divisible by n_heads");
    MultiHeadSelfAttention a;
    a.n_heads = n_heads;
    a.wq = Linear::init(dim, dim, rng);
    a.wk = Linear::init(dim, dim, rng);
    a.wv = Linear::init(dim, dim, rng);
    a.wo = Linear::init(dim, dim, rng);
    return a;
  }

  Tensor operator()(const Tensor& x) const {
    int dim = wq.w->cols;
    if (x->cols != dim) throw ShapeMismatch("self-attention: token dim " + std::to_string(x->cols));
    int dh = dim / n_heads;
    Tensor q = wq(x), k = wk(x), v = wv(x);
    std::vector<Tensor> heads;
    heads.reserve(static_cast<std::size_t>(n_heads));
    double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int h = 0; h < n_heads; ++h) {
      Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
      Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
      Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
      Tensor attn = softmax_rows(scale(matmul(qh, transpose(kh)), inv_scale));
      heads.push_back(attn_mix(attn, vh));
    }
    return wo(concat_cols(heads));
  }

  void collect(const std::string& prefix, NamedParams& out) const {
    wq.collect(prefix + ".wq", out);
    wk.collect(prefix + ".wk", out);
    wv.collect(prefix + ".wv", out);
    wo.collect(prefix + ".wo", out);
  }
};

/// Deformable cross-attention: each query predicts per-head sample offsets
/// and mixture weights, samples the value-projected feature map bilinearly
/// around its reference point, and mixes the samples per head.
struct DeformableCrossAttention {
  int dim = 0;
  int n_heads = 1;
  int n_points = 4;
  Linear value_proj, offset_head, weight_head, output_proj;

  static DeformableCrossAttention init(const AttentionConfig& cfg, Rng& rng) {
    cfg.validate();
    DeformableCrossAttention a;
    a.dim = cfg.dim;
    a.n_heads = cfg.n_heads;
    a.n_points = cfg.n_sample_points;
    a.value_proj = Linear::init(cfg.dim, cfg.dim, rng);
    int s = cfg.n_heads * cfg.n_sample_points;
    // Small spread around the reference: tiny weights, biases on a ring so
    // the heads start looking in distinct directions.
    a.offset_head = Linear::init(cfg.dim, s * 2, rng);
    for (double& v : a.offset_head.w->data) v *= 0.01;
    for (int i = 0; i < s; ++i) {
      double ang = 2.0 * kPi * i / s;
      a.offset_head.b->data[static_cast<std::size_t>(2 * i)] = 0.02 * std::cos(ang);
      a.offset_head.b->data[static_cast<std::size_t>(2 * i + 1)] = 0.02 * std::sin(ang);
    }
    a.weight_head = Linear::init(cfg.dim, s, rng);
    a.output_proj = Linear::init(cfg.dim, cfg.dim, rng);
    return a;
  }

  /// queries: nq x dim, refs: nq x 2 normalized points (gradients flow into
  /// them when attached), feature_map: (H*W) x dim.
  Tensor operator()(const Tensor& queries, const Tensor& refs, const Tensor& feature_map,
                    int height, int width) const {
    int nq = queries->rows;
    if (queries->cols != dim) throw ShapeMismatch("cross-attention: query dim " + std::to_string(queries->cols));
    if (refs->rows != nq || refs->cols != 2) throw ShapeMismatch("cross-attention: refs " + detail::shape_str(refs));
    if (feature_map->rows != height * width || feature_map->cols != dim)
      throw ShapeMismatch("cross-attention: feature map " + detail::shape_str(feature_map));
    for (std::size_t i = 0; i < refs->size(); ++i)
      if (!(refs->data[i] >= 0.0 && refs->data[i] <= 1.0))
        throw RefPointOutOfRange("cross-attention: reference " + std::to_string(refs->data[i]));

    int s = n_heads * n_points;
    int dh = dim / n_heads;
    Tensor offsets = reshape(offset_head(queries), nq * s, 2);
    std::vector<int> rep(static_cast<std::size_t>(nq) * s);
    for (int i = 0; i < nq; ++i)
      for (int j = 0; j < s; ++j) rep[static_cast<std::size_t>(i) * s + j] = i;
    Tensor positions = add(offsets, select_rows(refs, rep));
    Tensor mix = softmax_rows(reshape(weight_head(queries), nq * n_heads, n_points));
    Tensor value = value_proj(feature_map);

    std::vector<Tensor> value_heads;
    value_heads.reserve(static_cast<std::size_t>(n_heads));
    for (int h = 0; h < n_heads; ++h) value_heads.push_back(slice_cols(value, h * dh, (h + 1) * dh));

    std::vector<Tensor> rows;
    rows.reserve(static_cast<std::size_t>(nq));
    for (int i = 0; i < nq; ++i) {
      std::vector<Tensor> head_outs;
      head_outs.reserve(static_cast<std::size_t>(n_heads));
      for (int h = 0; h < n_heads; ++h) {
        int base = i * s + h * n_points;
        Tensor pos = slice_rows(positions, base, base + n_points);
        Tensor w = slice_rows(mix, i * n_heads + h, i * n_heads + h + 1);
        head_outs.push_back(deform_sample(value_heads[static_cast<std::size_t>(h)], height, width, pos, w));
      }
      rows.push_back(concat_cols(head_outs));
    }
    return output_proj(concat_rows(rows));
  }

  Tensor operator()(const Tensor& queries, const std::vector<Vec2>& refs, const Tensor& feature_map,
                    int height, int width) const {
    Tensor ref_t = make_tensor(static_cast<int>(refs.size()), 2);
    for (std::size_t i = 0; i < refs.size(); ++i) {
      ref_t->at(static_cast<int>(i), 0) = refs[i].x;
      ref_t->at(static_cast<int>(i), 1) = refs[i].y;
    }
    return (*this)(queries, ref_t, feature_map, height, width);
  }

  void collect(const std::string& prefix, NamedParams& out) const {
    value_proj.collect(prefix + ".value", out);
    offset_head.collect(prefix + ".offset", out);
    weight_head.collect(prefix + ".weight", out);
    output_proj.collect(prefix + ".out", out);
  }
};

}  // namespace paxkit
