#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "paxkit/axis_codec.hpp"
#include "paxkit/common.hpp"
#include "paxkit/geometry.hpp"
#include "paxkit/image.hpp"
#include "paxkit/nn.hpp"
#include "paxkit/rng.hpp"
#include "paxkit/tensor.hpp"

namespace paxkit {

struct ModelConfig {
  int k_points = 13;
  int n_queries = 30;
  int dim = 64;
  int n_layers = 2;
  int n_classes = 3;
  int n_bins = 360;
  int patch = 8;
  AttentionConfig attention;
  bool use_point_queries = true;
  bool use_group_self_attention = true;
  bool use_decoupled_cross_attention = true;
  bool fixed_axis_mode = false;
  bool use_encoder_layer = false;

  void validate() const {
    if (k_points < 5) throw InvalidConfig("model: k_points must be >= 5, got " + std::to_string(k_points));
    if (n_queries < 1) throw InvalidConfig("model: n_queries must be >= 1");
    if (n_layers < 1) throw InvalidConfig("model: n_layers must be >= 1");
    if (n_classes < 1) throw InvalidConfig("model: n_classes must be >= 1");
    if (dim <= 0 || dim % 4 != 0) throw InvalidConfig("model: dim must be a positive multiple of 4");
    if (patch <= 0) throw InvalidConfig("model: patch must be positive");
    if (n_bins < 8 || n_bins % 4 != 0) throw InvalidConfig("model: n_bins must be >= 8 and divisible by 4");
    if (use_group_self_attention && !use_point_queries)
      throw InvalidConfig("model: group self-attention requires point queries");
    if (use_decoupled_cross_attention && !use_point_queries)
      throw InvalidConfig("model: decoupled cross-attention requires point queries");
    AttentionConfig a = attention;
    a.dim = dim;
    a.validate();
  }
};

/// Per-instance prediction with live graph handles; grads seeded on these
/// tensors reach every parameter through backward().
struct PointSetPredictionGraph {
  Tensor points;        // K x 2, normalized
  Tensor axis_logits;   // 1 x n_bins
  Tensor class_logits;  // 1 x n_classes
};

struct LayerPredictions {
  std::vector<PointSetPredictionGraph> preds;
};

struct ModelOutput {
  std::vector<LayerPredictions> layers;  // one entry per decoder layer
  Tensor encoder_scores;                 // (feat_h*feat_w) x 1
  std::vector<int> selected_cells;
  std::vector<Vec2> selected_centers;
  int feat_h = 0;
  int feat_w = 0;
};

/// Value-level view for matching, losses, and decoding.
inline PointSetPrediction to_value_prediction(const PointSetPredictionGraph& g) {
  PointSetPrediction p;
  p.points.reserve(static_cast<std::size_t>(g.points->rows));
  for (int r = 0; r < g.points->rows; ++r) p.points.push_back({g.points->at(r, 0), g.points->at(r, 1)});
  p.axis_logits = g.axis_logits->data;
  p.class_logits = g.class_logits->data;
  return p;
}

struct DecoderLayer {
  MultiHeadSelfAttention self_attn;
  LayerNorm ln_self;
  bool has_o2o = false;
  MultiHeadSelfAttention o2o;
  LayerNorm ln_o2o;
  DeformableCrossAttention cross;  // sole module, or the center one when decoupled
  bool has_boundary_cross = false;
  DeformableCrossAttention cross_boundary;
  LayerNorm ln_cross;
  Mlp ffn;
  LayerNorm ln_ffn;

  void collect(const std::string& prefix, NamedParams& out) const {
    self_attn.collect(prefix + ".self", out);
    ln_self.collect(prefix + ".ln_self", out);
    if (has_o2o) {
      o2o.collect(prefix + ".o2o", out);
      ln_o2o.collect(prefix + ".ln_o2o", out);
    }
    cross.collect(prefix + ".cross", out);
    if (has_boundary_cross) cross_boundary.collect(prefix + ".cross_b", out);
    ln_cross.collect(prefix + ".ln_cross", out);
    ffn.collect(prefix + ".ffn", out);
    ln_ffn.collect(prefix + ".ln_ffn", out);
  }
};

struct Model {
  ModelConfig cfg;
  Linear patch_embed;  // (patch*patch*3) -> dim
  bool has_encoder = false;
  MultiHeadSelfAttention enc_attn;
  LayerNorm enc_ln1;
  Mlp enc_ffn;
  LayerNorm enc_ln2;
  Linear score_head;  // dim -> 1
  Mlp center_offset;     // dim -> dim -> 2
  Mlp boundary_radii;    // dim -> dim -> K-1
  std::vector<DecoderLayer> layers;
  Mlp point_offset;      // dim -> dim -> 2
  Mlp baseline_points;   // dim -> dim -> 2K (baseline wiring only)
  Mlp axis_head;         // dim -> dim -> n_bins
  Mlp class_head;        // dim -> dim -> n_classes

  static Model init(const ModelConfig& config, std::uint64_t seed);

  NamedParams params() const {
    NamedParams out;
    patch_embed.collect("backbone.embed", out);
    if (has_encoder) {
      enc_attn.collect("backbone.enc", out);
      enc_ln1.collect("backbone.enc_ln1", out);
      enc_ffn.collect("backbone.enc_ffn", out);
      enc_ln2.collect("backbone.enc_ln2", out);
    }
    score_head.collect("select.score", out);
    if (cfg.use_point_queries) {
      center_offset.collect("convert.center", out);
      boundary_radii.collect("convert.radii", out);
      point_offset.collect("head.point", out);
    } else {
      baseline_points.collect("head.baseline", out);
    }
    for (std::size_t l = 0; l < layers.size(); ++l)
      layers[l].collect("layer." + std::to_string(l), out);
    if (!cfg.fixed_axis_mode) axis_head.collect("head.axis", out);
    class_head.collect("head.class", out);
    return out;
  }

  std::vector<Tensor> param_tensors() const {
    std::vector<Tensor> out;
    for (const auto& [name, t] : params()) out.push_back(t);
    return out;
  }

  // ---- pipeline stages ----

  struct FeatureMap {
    Tensor map;  // (h*w) x dim
    int h = 0;
    int w = 0;
  };

  FeatureMap backbone_stub(const Image& image) const {
    if (image.height < cfg.patch || image.width < cfg.patch)
      throw TooSmallInput("backbone: image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                          " smaller than patch " + std::to_string(cfg.patch));
    if (image.channels != 3) throw ShapeMismatch("backbone: expected 3 channels, got " + std::to_string(image.channels));
    int p = cfg.patch;
    int h = image.height / p;
    int w = image.width / p;
    Tensor patches = make_tensor(h * w, p * p * 3);
    for (int cy = 0; cy < h; ++cy)
      for (int cx = 0; cx < w; ++cx) {
        int row = cy * w + cx;
        int k = 0;
        for (int py = 0; py < p; ++py)
          for (int px = 0; px < p; ++px)
            for (int c = 0; c < 3; ++c) patches->at(row, k++) = image.at(cy * p + py, cx * p + px, c);
      }
    Tensor fmap = add(matmul(patches, patch_embed.w), patch_embed.b);
    Tensor pe = make_tensor(h * w, cfg.dim);
    for (int cy = 0; cy < h; ++cy)
      for (int cx = 0; cx < w; ++cx) {
        std::vector<double> px = sinusoidal_pe((cx + 0.5) / w, cfg.dim / 2);
        std::vector<double> py = sinusoidal_pe((cy + 0.5) / h, cfg.dim / 2);
        int row = cy * w + cx;
        for (int c = 0; c < cfg.dim / 2; ++c) {
          pe->at(row, c) = px[static_cast<std::size_t>(c)];
          pe->at(row, cfg.dim / 2 + c) = py[static_cast<std::size_t>(c)];
        }
      }
    fmap = add(fmap, pe);
    if (has_encoder) {
      fmap = enc_ln1(add(fmap, enc_attn(fmap)));
      fmap = enc_ln2(add(fmap, enc_ffn(fmap)));
    }
    return {fmap, h, w};
  }

  struct Selection {
    Tensor content;  // N x dim
    Tensor refs;     // N x 2, constant
    std::vector<int> cells;
    std::vector<Vec2> centers;
    Tensor all_scores;  // (h*w) x 1
  };

  Selection select_object_queries(const FeatureMap& fm) const {
    int cells = fm.h * fm.w;
    if (cells < cfg.n_queries)
      throw NotEnoughCells("select: " + std::to_string(cells) + " cells for " + std::to_string(cfg.n_queries) + " queries");
    Tensor scores = score_head(fm.map);
    std::vector<int> order(static_cast<std::size_t>(cells));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return scores->at(a, 0) > scores->at(b, 0); });
    order.resize(static_cast<std::size_t>(cfg.n_queries));
    Selection sel;
    sel.cells = order;
    sel.content = select_rows(fm.map, order);
    sel.refs = make_tensor(cfg.n_queries, 2);
    for (int i = 0; i < cfg.n_queries; ++i) {
      int cy = order[static_cast<std::size_t>(i)] / fm.w;
      int cx = order[static_cast<std::size_t>(i)] % fm.w;
      Vec2 center{(cx + 0.5) / fm.w, (cy + 0.5) / fm.h};
      sel.centers.push_back(center);
      sel.refs->at(i, 0) = center.x;
      sel.refs->at(i, 1) = center.y;
    }
    sel.all_scores = scores;
    return sel;
  }

  struct PointQueryBatch {
    Tensor content;     // (N*K) x dim
    Tensor positional;  // (N*K) x dim
    Tensor refs;        // (N*K) x 2 in [0,1]; graph-attached right after conversion
  };

  /// Slot layout per owner: boundary slots 0..K-2 at fixed equidistant
  /// angles, center slot K-1. Gradients flow from every positional embedding
  /// and reference back into the owner content.
  PointQueryBatch object_to_point_conversion(const Selection& sel) const {
    int n = cfg.n_queries, k = cfg.k_points;
    Tensor deltas = center_offset(sel.content);             // N x 2
    Tensor center_coords = add(deltas, sel.refs);           // N x 2
    Tensor radii = reshape(boundary_radii(sel.content), n * (k - 1), 1);
    Tensor dirs = make_tensor(n * (k - 1), 2);
    Tensor ref_rep = make_tensor(n * (k - 1), 2);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < k - 1; ++j) {
        double theta = 2.0 * kPi * j / (k - 1);
        int row = i * (k - 1) + j;
        dirs->at(row, 0) = std::cos(theta);
        dirs->at(row, 1) = std::sin(theta);
        ref_rep->at(row, 0) = sel.refs->at(i, 0);
        ref_rep->at(row, 1) = sel.refs->at(i, 1);
      }
    Tensor boundary_coords = add(mul(dirs, radii), ref_rep);
    std::vector<Tensor> parts;
    parts.reserve(static_cast<std::size_t>(2 * n));
    for (int i = 0; i < n; ++i) {
      parts.push_back(slice_rows(boundary_coords, i * (k - 1), (i + 1) * (k - 1)));
      parts.push_back(slice_rows(center_coords, i, i + 1));
    }
    Tensor coords = concat_rows(parts);  // (N*K) x 2
    std::vector<int> owner(static_cast<std::size_t>(n) * k);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < k; ++j) owner[static_cast<std::size_t>(i) * k + j] = i;
    PointQueryBatch batch;
    batch.content = select_rows(sel.content, owner);
    batch.positional = sinusoidal_pe_2d(coords, cfg.dim);
    batch.refs = clamp01(coords);
    return batch;
  }

  /// One decoder layer over owner-major token rows; group_k is the tokens
  /// per owner (1 in the object-query baseline).
  Tensor decoder_layer_forward(const DecoderLayer& layer, Tensor content, const Tensor& positional,
                               const Tensor& refs, const FeatureMap& fm, int group_k) const {
    int n_tokens = content->rows;
    if (group_k <= 0 || n_tokens % group_k != 0)
      throw GroupSizeMismatch("decoder layer: " + std::to_string(n_tokens) + " tokens with group size " +
                              std::to_string(group_k));
    int n_owner = n_tokens / group_k;

    // (1) self-attention: parameter-shared per owner group, or one joint
    // block when grouping is off.
    Tensor x = add(content, positional);
    Tensor attn;
    if (cfg.use_group_self_attention && group_k > 1) {
      std::vector<Tensor> parts;
      parts.reserve(static_cast<std::size_t>(n_owner));
      for (int i = 0; i < n_owner; ++i)
        parts.push_back(layer.self_attn(slice_rows(x, i * group_k, (i + 1) * group_k)));
      attn = concat_rows(parts);
    } else {
      attn = layer.self_attn(x);
    }
    content = layer.ln_self(add(content, attn));

    // (2) object-to-object over the center slots, scattered back.
    if (layer.has_o2o && group_k > 1) {
      std::vector<int> cidx(static_cast<std::size_t>(n_owner));
      for (int i = 0; i < n_owner; ++i) cidx[static_cast<std::size_t>(i)] = i * group_k + group_k - 1;
      Tensor cc = select_rows(content, cidx);
      Tensor xc = add(cc, select_rows(positional, cidx));
      Tensor yc = layer.ln_o2o(add(cc, layer.o2o(xc)));
      content = scatter_replace_rows(content, cidx, yc);
    }

    // (3) deformable cross-attention at the current reference positions.
    Tensor xq = add(content, positional);
    Tensor cross_out;
    if (layer.has_boundary_cross && group_k > 1) {
      std::vector<int> bidx, cidx, back;
      back.resize(static_cast<std::size_t>(n_tokens));
      for (int i = 0; i < n_owner; ++i)
        for (int j = 0; j < group_k; ++j) {
          int t = i * group_k + j;
          if (j == group_k - 1)
            cidx.push_back(t);
          else
            bidx.push_back(t);
        }
      for (std::size_t p = 0; p < bidx.size(); ++p) back[static_cast<std::size_t>(bidx[p])] = static_cast<int>(p);
      for (std::size_t p = 0; p < cidx.size(); ++p)
        back[static_cast<std::size_t>(cidx[p])] = static_cast<int>(bidx.size() + p);
      Tensor ab = layer.cross_boundary(select_rows(xq, bidx), select_rows(refs, bidx), fm.map, fm.h, fm.w);
      Tensor ac = layer.cross(select_rows(xq, cidx), select_rows(refs, cidx), fm.map, fm.h, fm.w);
      cross_out = select_rows(concat_rows({ab, ac}), back);
    } else {
      cross_out = layer.cross(xq, refs, fm.map, fm.h, fm.w);
    }
    content = layer.ln_cross(add(content, cross_out));

    // (4) feed-forward.
    content = layer.ln_ffn(add(content, layer.ffn(content)));
    return content;
  }

  LayerPredictions prediction_head(const Tensor& content, const Tensor& refs) const {
    int k = cfg.k_points, n = content->rows / (cfg.use_point_queries ? k : 1);
    LayerPredictions out;
    out.preds.reserve(static_cast<std::size_t>(n));
    Tensor points_all;
    if (cfg.use_point_queries) {
      points_all = sigmoid(add(point_offset(content), inv_sigmoid(refs)));
    } else {
      Tensor raw = reshape(baseline_points(content), n * k, 2);
      std::vector<int> rep(static_cast<std::size_t>(n) * k);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j) rep[static_cast<std::size_t>(i) * k + j] = i;
      points_all = sigmoid(add(raw, inv_sigmoid(select_rows(refs, rep))));
    }
    for (int i = 0; i < n; ++i) {
      PointSetPredictionGraph p;
      p.points = slice_rows(points_all, i * k, (i + 1) * k);
      Tensor pooled = cfg.use_point_queries ? mean_rows(slice_rows(content, i * k, (i + 1) * k))
                                            : slice_rows(content, i, i + 1);
      if (cfg.fixed_axis_mode) {
        AxisCodecConfig codec;
        codec.n_bins = cfg.n_bins;
        p.axis_logits = make_tensor(1, cfg.n_bins, encode_fixed_horizontal(codec).values);
      } else {
        p.axis_logits = axis_head(pooled);
      }
      p.class_logits = class_head(pooled);
      out.preds.push_back(std::move(p));
    }
    return out;
  }

  ModelOutput forward(const Image& image) const {
    cfg.validate();
    FeatureMap fm = backbone_stub(image);
    Selection sel = select_object_queries(fm);
    ModelOutput out;
    out.encoder_scores = sel.all_scores;
    out.selected_cells = sel.cells;
    out.selected_centers = sel.centers;
    out.feat_h = fm.h;
    out.feat_w = fm.w;

    int k = cfg.use_point_queries ? cfg.k_points : 1;
    Tensor content, positional, refs;
    if (cfg.use_point_queries) {
      PointQueryBatch batch = object_to_point_conversion(sel);
      content = batch.content;
      positional = batch.positional;
      refs = batch.refs;
    } else {
      content = sel.content;
      positional = sinusoidal_pe_2d(sel.refs, cfg.dim);
      refs = sel.refs;
    }

    for (int l = 0; l < cfg.n_layers; ++l) {
      content = decoder_layer_forward(layers[static_cast<std::size_t>(l)], content, positional, refs, fm, k);
      LayerPredictions preds = prediction_head(content, refs);

      if (l + 1 < cfg.n_layers) {
        // Refinement: next layer's references are this layer's predicted
        // points, detached; positional embeddings recomputed from them.
        Tensor next_refs = make_tensor(content->rows, 2);
        if (cfg.use_point_queries) {
          for (int i = 0; i < cfg.n_queries; ++i)
            for (int j = 0; j < cfg.k_points; ++j) {
              int row = i * cfg.k_points + j;
              next_refs->at(row, 0) = preds.preds[static_cast<std::size_t>(i)].points->at(j, 0);
              next_refs->at(row, 1) = preds.preds[static_cast<std::size_t>(i)].points->at(j, 1);
            }
        } else {
          for (int i = 0; i < cfg.n_queries; ++i) {
            next_refs->at(i, 0) = preds.preds[static_cast<std::size_t>(i)].points->at(cfg.k_points - 1, 0);
            next_refs->at(i, 1) = preds.preds[static_cast<std::size_t>(i)].points->at(cfg.k_points - 1, 1);
          }
        }
        refs = next_refs;
        positional = sinusoidal_pe_2d(refs, cfg.dim);
      }
      out.layers.push_back(std::move(preds));
    }
    return out;
  }
};

inline Model Model::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.cfg = config;
  AttentionConfig attn = config.attention;
  attn.dim = config.dim;

  Rng backbone_rng = Rng::derive(seed, 1);
  m.patch_embed = Linear::init(config.patch * config.patch * 3, config.dim, backbone_rng);
  m.has_encoder = config.use_encoder_layer;
  if (m.has_encoder) {
    m.enc_attn = MultiHeadSelfAttention::init(config.dim, attn.n_heads, backbone_rng);
    m.enc_ln1 = LayerNorm::init(config.dim);
    m.enc_ffn = Mlp::init({config.dim, 2 * config.dim, config.dim}, backbone_rng);
    m.enc_ln2 = LayerNorm::init(config.dim);
  }

  Rng select_rng = Rng::derive(seed, 2);
  m.score_head = Linear::init(config.dim, 1, select_rng);

  Rng convert_rng = Rng::derive(seed, 3);
  if (config.use_point_queries) {
    m.center_offset = Mlp::init({config.dim, config.dim, 2}, convert_rng, true);
    m.boundary_radii = Mlp::init({config.dim, config.dim, config.k_points - 1}, convert_rng, true);
  }

  for (int l = 0; l < config.n_layers; ++l) {
    Rng layer_rng = Rng::derive(seed, 10 + static_cast<std::uint64_t>(l));
    DecoderLayer layer;
    layer.self_attn = MultiHeadSelfAttention::init(config.dim, attn.n_heads, layer_rng);
    layer.ln_self = LayerNorm::init(config.dim);
    layer.has_o2o = config.use_point_queries && config.use_group_self_attention;
    if (layer.has_o2o) {
      layer.o2o = MultiHeadSelfAttention::init(config.dim, attn.n_heads, layer_rng);
      layer.ln_o2o = LayerNorm::init(config.dim);
    }
    layer.cross = DeformableCrossAttention::init(attn, layer_rng);
    layer.has_boundary_cross = config.use_point_queries && config.use_decoupled_cross_attention;
    if (layer.has_boundary_cross) layer.cross_boundary = DeformableCrossAttention::init(attn, layer_rng);
    layer.ln_cross = LayerNorm::init(config.dim);
    layer.ffn = Mlp::init({config.dim, 2 * config.dim, config.dim}, layer_rng);
    layer.ln_ffn = LayerNorm::init(config.dim);
    m.layers.push_back(std::move(layer));
  }

  Rng head_rng = Rng::derive(seed, 100);
  if (config.use_point_queries)
    m.point_offset = Mlp::init({config.dim, config.dim, 2}, head_rng, true);
  else
    m.baseline_points = Mlp::init({config.dim, config.dim, 2 * config.k_points}, head_rng, true);
  if (!config.fixed_axis_mode) m.axis_head = Mlp::init({config.dim, config.dim, config.n_bins}, head_rng);
  m.class_head = Mlp::init({config.dim, config.dim, config.n_classes}, head_rng);
  return m;
}

}  // namespace paxkit
