#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "paxkit/common.hpp"
#include "paxkit/rng.hpp"

namespace paxkit {

/// Dense row-major f64 matrix with reverse-mode gradient support. Vectors are
/// single-row matrices. The graph is define-by-run: each op stores its parent
/// handles and a closure that pulls this node's grad into the parents.
struct TensorNode {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;
  std::vector<double> grad;
  bool needs_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backprop;

  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  void ensure_grad() {
    if (grad.size() != size()) grad.assign(size(), 0.0);
  }
};

using Tensor = std::shared_ptr<TensorNode>;

inline Tensor make_tensor(int rows, int cols, double fill = 0.0, bool needs_grad = false) {
  auto t = std::make_shared<TensorNode>();
  t->rows = rows;
  t->cols = cols;
  t->data.assign(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), fill);
  t->needs_grad = needs_grad;
  if (needs_grad) t->ensure_grad();
  return t;
}

inline Tensor make_tensor(int rows, int cols, std::vector<double> values, bool needs_grad = false) {
  if (values.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols))
    throw ShapeMismatch("make_tensor: " + std::to_string(values.size()) + " values for " +
                        std::to_string(rows) + "x" + std::to_string(cols));
  auto t = std::make_shared<TensorNode>();
  t->rows = rows;
  t->cols = cols;
  t->data = std::move(values);
  t->needs_grad = needs_grad;
  if (needs_grad) t->ensure_grad();
  return t;
}

/// Learnable parameter, uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
inline Tensor make_param(int rows, int cols, Rng& rng, double fan_in_override = 0.0) {
  double fan_in = fan_in_override > 0.0 ? fan_in_override : static_cast<double>(rows);
  double bound = 1.0 / std::sqrt(fan_in);
  Tensor t = make_tensor(rows, cols, 0.0, true);
  for (double& v : t->data) v = rng.uniform(-bound, bound);
  return t;
}

namespace detail {

inline std::string shape_str(const Tensor& t) {
  return std::to_string(t->rows) + "x" + std::to_string(t->cols);
}

inline Tensor op_result(int rows, int cols, std::vector<Tensor> parents) {
  Tensor out = make_tensor(rows, cols);
  for (const Tensor& p : parents)
    if (p->needs_grad) out->needs_grad = true;
  if (out->needs_grad) out->ensure_grad();
  out->parents = std::move(parents);
  return out;
}

}  // namespace detail

/// Runs reverse-mode accumulation from the given roots. Root grads must be
/// seeded by the caller before the call. Each reachable node's closure runs
/// exactly once, in reverse topological order; leaf grads accumulate, so
/// zero them between steps.
inline void backward(const std::vector<Tensor>& roots) {
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  for (const Tensor& r : roots) {
    if (!r || !r->needs_grad || seen.count(r.get())) continue;
    stack.push_back({r.get(), 0});
    seen.insert(r.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        TensorNode* p = node->parents[next++].get();
        if (p->needs_grad && !seen.count(p)) {
          seen.insert(p);
          stack.push_back({p, 0});
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backprop) (*it)->backprop();
}

inline void zero_grad(const std::vector<Tensor>& params) {
  for (const Tensor& p : params) {
    p->ensure_grad();
    std::fill(p->grad.begin(), p->grad.end(), 0.0);
  }
}

// ---- primitive ops ----

/// Elementwise sum; a single-row right operand broadcasts across rows.
inline Tensor add(const Tensor& a, const Tensor& b) {
  bool broadcast = b->rows == 1 && a->cols == b->cols && a->rows != 1;
  if (!broadcast && (a->rows != b->rows || a->cols != b->cols))
    throw ShapeMismatch("add: " + detail::shape_str(a) + " vs " + detail::shape_str(b));
  Tensor out = detail::op_result(a->rows, a->cols, {a, b});
  for (int r = 0; r < a->rows; ++r)
    for (int c = 0; c < a->cols; ++c)
      out->at(r, c) = a->at(r, c) + (broadcast ? b->at(0, c) : b->at(r, c));
  if (out->needs_grad) {
    TensorNode* o = out.get();
    Tensor pa = a, pb = b;
    out->backprop = [o, pa, pb, broadcast]() {
      if (pa->needs_grad) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < o->size(); ++i) pa->grad[i] += o->grad[i];
      }
      if (pb->needs_grad) {
        pb->ensure_grad();
        if (broadcast) {
          for (int r = 0; r < o->rows; ++r)
            for (int c = 0; c < o->cols; ++c) pb->grad[static_cast<std::size_t>(c)] += o->grad[static_cast<std::size_t>(r) * o->cols + c];
        } else {
          for (std::size_t i = 0; i < o->size(); ++i) pb->grad[i] += o->grad[i];
        }
      }
    };
  }
  return out;
}

/// Elementwise product; a single-row or single-column right operand
/// broadcasts across the other dimension.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  bool row_bc = b->rows == 1 && a->cols == b->cols && a->rows != 1;
  bool col_bc = b->cols == 1 && a->rows == b->rows && a->cols != 1;
  if (!row_bc && !col_bc && (a->rows != b->rows || a->cols != b->cols))
    throw ShapeMismatch("mul: " + detail::shape_str(a) + " vs " + detail::shape_str(b));
  auto bval = [&](int r, int c) { return row_bc ? b->at(0, c) : col_bc ? b->at(r, 0) : b->at(r, c); };
  Tensor out = detail::op_result(a->rows, a->cols, {a, b});
  for (int r = 0; r < a->rows; ++r)
    for (int c = 0; c < a->cols; ++c) out->at(r, c) = a->at(r, c) * bval(r, c);
  if (out->needs_grad) {
    TensorNode* o = out.get();
    Tensor pa = a, pb = b;
    out->backprop = [o, pa, pb, row_bc, col_bc]() {
      auto bval = [&](int r, int c) { return row_bc ? pb->at(0, c) : col_bc ? pb->at(r, 0) : pb->at(r, c); };
      if (pa->needs_grad) {
        pa->ensure_grad();
        for (int r = 0; r < o->rows; ++r)
          for (int c = 0; c < o->cols; ++c)
            pa->grad[static_cast<std::size_t>(r) * o->cols + c] += o->grad[static_cast<std::size_t>(r) * o->cols + c] * bval(r, c);
      }
      if (pb->needs_grad) {
        pb->ensure_grad();
        for (int r = 0; r < o->rows; ++r)
          for (int c = 0; c < o->cols; ++c) {
            double g = o->grad[static_cast<std::size_t>(r) * o->cols + c] * pa->at(r, c);
            if (row_bc)
              pb->grad[static_cast<std::size_t>(c)] += g;
            else if (col_bc)
              pb->grad[static_cast<std::size_t>(r)] += g;
            else
              pb->grad[static_cast<std::size_t>(r) * o->cols + c] += g;
          }
      }
    };
  }
  return out;
}

inline Tensor scale(const Tensor& a, double s) {
  Tensor out = detail::op_result(a->rows, a->cols, {a});
  for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] * s;
  if (out->needs_grad) {
    TensorNode* o = out.get();
    Tensor pa = a;
    out->backprop = [o, pa, s]() {
      pa->ensure_grad();
      for (std::size_t i = 0; i < o->size(); ++i) pa->grad[i] += o->grad[i] * s;
    };
  }
  return out;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a->cols != b->rows)
    throw ShapeMismatch("matmul: " + detail::shape_str(a) + " * " + detail::shape_str(b));
  Tensor out = detail::op_result(a->rows, b->cols, {a, b});
  int n = a->rows, m = a->cols, k = b->cols;
  for (int i = 0; i < n; ++i) {
    double* orow = &out->data[static_cast<std::size_t>(i) * k];
    const double* arow = &a->data[static_cast<std::size_t>(i) * m];
    for (int t = 0; t < m; ++t) {
      double av = arow[t];
      const double* brow = &b->data[static_cast<std::size_t>(t) * k];
      for (int j = 0; j < k; ++j) orow[j] += av * brow[j];
    }
  }
  if (out->needs_grad) {
    TensorNode* o = out.get();
    Tensor pa = a, pb = b;
    out->backprop = [o, pa, pb, n, m, k]() {
      if (pa->needs_grad) {
        pa->ensure_grad();
        // dA = dOut * B^T
        for (int i = 0; i < n; ++i)
          for (int t = 0; t < m; ++t) {
            double acc = 0.0;
            const double* grow = &o->grad[static_cast<std::size_t>(i) * k];
            const double* brow = &pb->data[static_cast<std::size_t>(t) * k];
            for (int j = 0; j < k; ++j) acc += grow[j] * brow[j];
            pa->grad[static_cast<std::size_t>(i) * m + t] += acc;
          }
      }
      if (pb->needs_grad) {
        pb->ensure_grad();
        // dB = A^T * dOut
        for (int t = 0; t < m; ++t) {
          double* brow = &pb->grad[static_cast<std::size_t>(t) * k];
          for (int i = 0; i < n; ++i) {
            double av = pa->data[static_cast<std::size_t>(i) * m + t];
            const double* grow = &o->grad[static_cast<std::size_t>(i) * k];
            for (int j = 0; j < k; ++j) brow[j] += av * grow[j];
          }
        }
      }
    };
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  Tensor out = detail::op_result(a->cols, a->rows, {a});
  for (int r = 0; r < a->rows; ++r)
    for (int c = 0; c < a->cols; ++c) out->at(c, r) = a->at(r, c);
  if (out->needs_grad) {
    TensorNode* o = out.get();
    Tensor pa = a;
    out->backprop = [o, pa]() {
      pa->ensure_grad();
      for (int r = 0; r < o->rows; ++r)
        for (int c = 0; c < o->cols; ++c) pa->grad[static_cast<std::size_t>(c) * pa->cols + r] += o->grad[static_cast<std::size_t>(r) * o->cols + c];
    };
  }
  return out;
}

inline Tensor relu(const Tensor& a) {
  Tensor out = detail::op_result(a->rows, a->cols, {a});
  for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] > 0.0 ? a->data[i] : 0.0;
  if (out->needs_grad) {
    TensorNode* o = out.get();
    Tensor pa = a;
    out->backprop = [o, pa]() {
      pa->ensure_grad();
      for (std::size_t i = 0; i < o->size(); ++i)
        if (pa->data[i] > 0.0) pa->grad[i] += o->grad[i];
    };
  }
  return out;
}

inline Tensor sigmoid(const Tensor& a) {
  Tensor out = detail::op_result(a->rows, a->cols, {a});
  for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = 1.0 / (1.0 + std::exp(-a->data[i]));
  if (out->needs_grad) {
    TensorNode* o = out.get();
    Tensor pa = a;
    out->backprop = [o, pa]() {
      pa->ensure_grad();
      for (std::size_t i = 0; i < o->size(); ++i)
        pa->grad[i] += o->grad[i] * o->data[i] * (1.0 - o->data[i]);
    };
  }
  return out;
}

/// log(p / (1-p)) with p clamped to [1e-6, 1-1e-6]; zero gradient where
/// the clamp is active.
inline Tensor inv_sigmoid(const Tensor& a) {
  constexpr double kEdge = 1e-6;
  Tensor out = detail::op_result(a->rows, a->cols, {a});
  for (std::size_t i = 0; i < a->size(); ++i) {
    double p = std::clamp(a->data[i], kEdge, 1.0 - kEdge);
    out->data[i] = std::log(p / (1.0 - p));
  }
  if (out->needs_grad) {
    TensorNode* o = out.get();
    Tensor pa = a;
    out->backprop = [o, pa]() {
      pa->ensure_grad();
      for (std::size_t i = 0; i < o->size(); ++i) {
        double p = pa->data[i];
        if (p > kEdge && p < 1.0 - kEdge) pa->grad[i] += o->grad[i] / (p * (1.0 - p));
      }
    };
  }
  return out;
}

/// Clamp to [0,1]; unit gradient strictly inside, zero outside.
inline Tensor clamp01(const Tensor& a) {
  Tensor out = detail::op_result(a->rows, a->cols, {a});
  for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = std::clamp(a->data[i], 0.0, 1.0);
  if (out->needs_grad) {
    TensorNode* o = out.get();
    Tensor pa = a;
    out->backprop = [o, pa]() {
      pa->ensure_grad();
      for (std::size_t i = 0; i < o->size(); ++i)
        if (pa->data[i] > 0.0 && pa->data[i] < 1.0) pa->grad[i] += o->grad[i];
    };
  }
  return out;
}

namespace detail {

/// Sum in ascending value order; invariant under permutation of the inputs.
inline double sorted_sum(std::vector<double>& buf) {
  std::sort(buf.begin(), buf.end());
  double s = 0.0;
  for (double v : buf) s += v;
  return s;
}

}  // namespace detail

/// Row-wise softmax with max subtraction. The denominator is accumulated in
/// sorted order so the result is bitwise invariant under entry permutation.
inline Tensor softmax_rows(const Tensor& a) {
  Tensor out = detail::op_result(a->rows, a->cols, {a});
  std::vector<double> buf;
  for (int r = 0; r < a->rows; ++r) {
    double mx = a->at(r, 0);
    for (int c = 1; c < a->cols; ++c) mx = std::max(mx, a->at(r, c));
    buf.assign(static_cast<std::size_t>(a->cols), 0.0);
    for (int c = 0; c < a->cols; ++c) {
      double e = std::exp(a->at(r, c) - mx);
      out->at(r, c) = e;
      buf[static_cast<std::size_t>(c)] = e;
    }
    double sum = detail::sorted_sum(buf);
    for (int c = 0; c < a->cols; ++c) out->at(r, c) /= sum;
  }
  if (out->needs_grad) {
    TensorNode* o = out.get();
    Tensor pa = a;
    out->backprop = [o, pa]() {
      pa->ensure_grad();
      for (int r = 0; r < o->rows; ++r) {
        double dotv = 0.0;
        for (int c = 0; c < o->cols; ++c) dotv += o->grad[static_cast<std::size_t>(r) * o->cols + c] * o->data[static_cast<std::size_t>(r) * o->cols + c];
        for (int c = 0; c < o->cols; ++c) {
          std::size_t i = static_cast<std::size_t>(r) * o->cols + c;
          pa->grad[i] += o->data[i] * (o->grad[i] - dotv);
        }
      }
    };
  }
  return out;
}

/// Attention-weighted value mix: out = attn * v, with each output element
/// accumulated in sorted order so a joint permutation of attention columns
/// and value rows leaves the result bitwise unchanged.
inline Tensor attn_mix(const Tensor& attn, const Tensor& v) {
  if (attn->cols != v->rows)
    throw ShapeMismatch("attn_mix: " + detail::shape_str(attn) + " * " + detail::shape_str(v));
  Tensor out = detail::op_result(attn->rows, v->cols, {attn, v});
  int n = attn->rows, m = attn->cols, d = v->cols;
  std::vector<double> buf(static_cast<std::size_t>(m));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      for (int t = 0; t < m; ++t) buf[static_cast<std::size_t>(t)] = attn->at(i, t) * v->at(t, j);
      out->at(i, j) = detail::sorted_sum(buf);
    }
  if (out->needs_grad) {
    TensorNode* o = out.get();
    Tensor pa = attn, pv = v;
    out->backprop = [o, pa, pv, n, m, d]() {
      if (pa->needs_grad) {
        pa->ensure_grad();
        for (int i = 0; i < n; ++i)
          for (int t = 0; t < m; ++t) {
            double acc = 0.0;
            for (int j = 0; j < d; ++j) acc += o->grad[static_cast<std::size_t>(i) * d + j] * pv->data[static_cast<std::size_t>(t) * d + j];
            pa->grad[static_cast<std::size_t>(i) * m + t] += acc;
          }
      }
      if (pv->needs_grad) {
        pv->ensure_grad();
        for (int t = 0; t < m; ++t)
          for (int j = 0; j < d; ++j) {
            double acc = 0.0;
            for (int i = 0; i < n; ++i) acc += pa->data[static_cast<std::size_t>(i) * m + t] * o->grad[static_cast<std::size_t>(i) * d + j];
            pv->grad[static_cast<std::size_t>(t) * d + j] += acc;
          }
      }
    };
  }
  return out;
}

/// Row-wise layer normalization followed by a learned affine map.
inline Tensor layer_norm_rows(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
  if (gain->rows != 1 || gain->cols != a->cols || bias->rows != 1 || bias->cols != a->cols)
    throw ShapeMismatch("layer_norm: affine params must be 1x" + std::to_string(a->cols));
  Tensor out = detail::op_result(a->rows, a->cols, {a, gain, bias});
  int n = a->cols;
  std::vector<double> inv_std(static_cast<std::size_t>(a->rows));
  std::vector<double> xhat(a->size());
  for (int r = 0; r < a->rows; ++r) {
    double mean = 0.0;
    for (int c = 0; c < n; ++c) mean += a->at(r, c);
    mean /= n;
    double var = 0.0;
    for (int c = 0; c < n; ++c) {
      double d = a->at(r, c) - mean;
      var += d * d;
    }
    var /= n;
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(r)] = is;
    for (int c = 0; c < n; ++c) {
      double h = (a->at(r, c) - mean) * is;
      xhat[static_cast<std::size_t>(r) * n + c] = h;
      out->at(r, c) = h * gain->at(0, c) + bias->at(0, c);
    }
  }
  if (out->needs_grad) {
    TensorNode* o = out.get();
    Tensor pa = a, pg = gain, pb = bias;
    out->backprop = [o, pa, pg, pb, inv_std = std::move(inv_std), xhat = std::move(xhat), n]() {
      for (int r = 0; r < o->rows; ++r) {
        const double* grow = &o->grad[static_cast<std::size_t>(r) * n];
        const double* hrow = &xhat[static_cast<std::size_t>(r) * n];
        if (pg->needs_grad) {
          pg->ensure_grad();
          for (int c = 0; c < n; ++c) pg->grad[static_cast<std::size_t>(c)] += grow[c] * hrow[c];
        }
        if (pb->needs_grad) {
          pb->ensure_grad();
          for (int c = 0; c < n; ++c) pb->grad[static_cast<std::size_t>(c)] += grow[c];
        }
        if (pa->needs_grad) {
          pa->ensure_grad();
          // dx = (g*gain - mean(g*gain) - xhat*mean(g*gain*xhat)) * inv_std
          double m1 = 0.0, m2 = 0.0;
          for (int c = 0; c < n; ++c) {
            double gg = grow[c] * pg->data[static_cast<std::size_t>(c)];
            m1 += gg;
            m2 += gg * hrow[c];
          }
          m1 /= n;
          m2 /= n;
          double is = inv_std[static_cast<std::size_t>(r)];
          for (int c = 0; c < n; ++c) {
            double gg = grow[c] * pg->data[static_cast<std::size_t>(c)];
            pa->grad[static_cast<std::size_t>(r) * n + c] += (gg - m1 - hrow[c] * m2) * is;
          }
        }
      }
    };
  }
  return out;
}

inline Tensor slice_rows(const Tensor& a, int r0, int r1) {
  if (r0 < 0 || r1 > a->rows || r0 >= r1)
    throw ShapeMismatch("slice_rows: [" + std::to_string(r0) + "," + std::to_string(r1) + ") of " + detail::shape_str(a));
  Tensor out = detail::op_result(r1 - r0, a->cols, {a});
  std::copy(a->data.begin() + static_cast<std::ptrdiff_t>(r0) * a->cols,
            a->data.begin() + static_cast<std::ptrdiff_t>(r1) * a->cols, out->data.begin());
  if (out->needs_grad) {
    TensorNode* o = out.get();
    Tensor pa = a;
    out->backprop = [o, pa, r0]() {
      pa->ensure_grad();
      for (std::size_t i = 0; i < o->size(); ++i)
        pa->grad[static_cast<std::size_t>(r0) * pa->cols + i] += o->grad[i];
    };
  }
  return out;
}

inline Tensor slice_cols(const Tensor& a, int c0, int c1) {
  if (c0 < 0 || c1 > a->cols || c0 >= c1)
    throw ShapeMismatch("slice_cols: [" + std::to_string(c0) + "," + std::to_string(c1) + ") of " + detail::shape_str(a));
  Tensor out = detail::op_result(a->rows, c1 - c0, {a});
  for (int r = 0; r < a->rows; ++r)
    for (int c = c0; c < c1; ++c) out->at(r, c - c0) = a->at(r, c);
  if (out->needs_grad) {
    TensorNode* o = out.get();
    Tensor pa = a;
    out->backprop = [o, pa, c0]() {
      pa->ensure_grad();
      for (int r = 0; r < o->rows; ++r)
        for (int c = 0; c < o->cols; ++c)
          pa->grad[static_cast<std::size_t>(r) * pa->cols + c0 + c] += o->grad[static_cast<std::size_t>(r) * o->cols + c];
    };
  }
  return out;
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_rows: empty list");
  int cols = parts[0]->cols;
  int rows = 0;
  for (const Tensor& p : parts) {
    if (p->cols != cols) throw ShapeMismatch("concat_rows: column mismatch");
    rows += p->rows;
  }
  Tensor out = detail::op_result(rows, cols, parts);
  std::size_t pos = 0;
  for (const Tensor& p : parts) {
    std::copy(p->data.begin(), p->data.end(), out->data.begin() + static_cast<std::ptrdiff_t>(pos));
    pos += p->size();
  }
  if (out->needs_grad) {
    TensorNode* o = out.get();
    std::vector<Tensor> ps = parts;
    out->backprop = [o, ps]() {
      std::size_t pos = 0;
      for (const Tensor& p : ps) {
        if (p->needs_grad) {
          p->ensure_grad();
          for (std::size_t i = 0; i < p->size(); ++i) p->grad[i] += o->grad[pos + i];
        }
        pos += p->size();
      }
    };
  }
  return out;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_cols: empty list");
  int rows = parts[0]->rows;
  int cols = 0;
  for (const Tensor& p : parts) {
    if (p->rows != rows) throw ShapeMismatch("concat_cols: row mismatch");
    cols += p->cols;
  }
  Tensor out = detail::op_result(rows, cols, parts);
  int c0 = 0;
  for (const Tensor& p : parts) {
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < p->cols; ++c) out->at(r, c0 + c) = p->at(r, c);
    c0 += p->cols;
  }
  if (out->needs_grad) {
    TensorNode* o = out.get();
    std::vector<Tensor> ps = parts;
    out->backprop = [o, ps, rows]() {
      int c0 = 0;
      for (const Tensor& p : ps) {
        if (p->needs_grad) {
          p->ensure_grad();
          for (int r = 0; r < rows; ++r)
            for (int c = 0; c < p->cols; ++c)
              p->grad[static_cast<std::size_t>(r) * p->cols + c] += o->grad[static_cast<std::size_t>(r) * o->cols + c0 + c];
        }
        c0 += p->cols;
      }
    };
  }
  return out;
}

/// Gathers rows by index; duplicate indices accumulate their gradients.
inline Tensor select_rows(const Tensor& a, const std::vector<int>& idx) {
  for (int i : idx)
    if (i < 0 || i >= a->rows) throw IndexOutOfRange("select_rows: row " + std::to_string(i) + " of " + detail::shape_str(a));
  Tensor out = detail::op_result(static_cast<int>(idx.size()), a->cols, {a});
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (int c = 0; c < a->cols; ++c) out->at(static_cast<int>(r), c) = a->at(idx[r], c);
  if (out->needs_grad) {
    TensorNode* o = out.get();
    Tensor pa = a;
    out->backprop = [o, pa, idx]() {
      pa->ensure_grad();
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (int c = 0; c < o->cols; ++c)
          pa->grad[static_cast<std::size_t>(idx[r]) * pa->cols + c] += o->grad[r * static_cast<std::size_t>(o->cols) + c];
    };
  }
  return out;
}

/// Copy of `base` with the given rows replaced by the rows of `rows_t`.
/// Replaced slots pass gradient to `rows_t`, everything else to `base`.
inline Tensor scatter_replace_rows(const Tensor& base, const std::vector<int>& idx, const Tensor& rows_t) {
  if (rows_t->rows != static_cast<int>(idx.size()) || rows_t->cols != base->cols)
    throw ShapeMismatch("scatter_replace_rows: " + detail::shape_str(rows_t) + " into " + detail::shape_str(base));
  for (int i : idx)
    if (i < 0 || i >= base->rows) throw IndexOutOfRange("scatter_replace_rows: row " + std::to_string(i));
  Tensor out = detail::op_result(base->rows, base->cols, {base, rows_t});
  out->data = base->data;
  std::vector<char> replaced(static_cast<std::size_t>(base->rows), 0);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    replaced[static_cast<std::size_t>(idx[r])] = 1;
    for (int c = 0; c < base->cols; ++c) out->at(idx[r], c) = rows_t->at(static_cast<int>(r), c);
  }
  if (out->needs_grad) {
    TensorNode* o = out.get();
    Tensor pb = base, pr = rows_t;
    out->backprop = [o, pb, pr, idx, replaced = std::move(replaced)]() {
      if (pb->needs_grad) {
        pb->ensure_grad();
        for (int r = 0; r < o->rows; ++r)
          if (!replaced[static_cast<std::size_t>(r)])
            for (int c = 0; c < o->cols; ++c)
              pb->grad[static_cast<std::size_t>(r) * o->cols + c] += o->grad[static_cast<std::size_t>(r) * o->cols + c];
      }
      if (pr->needs_grad) {
        pr->ensure_grad();
        for (std::size_t r = 0; r < idx.size(); ++r)
          for (int c = 0; c < o->cols; ++c)
            pr->grad[r * static_cast<std::size_t>(o->cols) + c] += o->grad[static_cast<std::size_t>(idx[r]) * o->cols + c];
      }
    };
  }
  return out;
}

/// Same data, new row/column split. Element count must be preserved.
inline Tensor reshape(const Tensor& a, int rows, int cols) {
  if (static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) != a->size())
    throw ShapeMismatch("reshape: " + detail::shape_str(a) + " to " + std::to_string(rows) + "x" + std::to_string(cols));
  Tensor out = detail::op_result(rows, cols, {a});
  out->data = a->data;
  if (out->needs_grad) {
    TensorNode* o = out.get();
    Tensor pa = a;
    out->backprop = [o, pa]() {
      pa->ensure_grad();
      for (std::size_t i = 0; i < o->size(); ++i) pa->grad[i] += o->grad[i];
    };
  }
  return out;
}

/// Mean over all rows, result 1 x cols. Each column is accumulated in
/// sorted order, so the result is bitwise invariant under row permutation.
inline Tensor mean_rows(const Tensor& a) {
  Tensor out = detail::op_result(1, a->cols, {a});
  double inv = 1.0 / a->rows;
  std::vector<double> buf(static_cast<std::size_t>(a->rows));
  for (int c = 0; c < a->cols; ++c) {
    for (int r = 0; r < a->rows; ++r) buf[static_cast<std::size_t>(r)] = a->at(r, c) * inv;
    out->at(0, c) = detail::sorted_sum(buf);
  }
  if (out->needs_grad) {
    TensorNode* o = out.get();
    Tensor pa = a;
    out->backprop = [o, pa, inv]() {
      pa->ensure_grad();
      for (int r = 0; r < pa->rows; ++r)
        for (int c = 0; c < pa->cols; ++c)
          pa->grad[static_cast<std::size_t>(r) * pa->cols + c] += o->grad[static_cast<std::size_t>(c)] * inv;
    };
  }
  return out;
}

// ---- positional encodings ----

/// Interleaved sin/cos encoding of one normalized coordinate, temperature
/// 10000, coordinate pre-scaled by 2*pi. Non-graph variant.
inline std::vector<double> sinusoidal_pe(double coordinate, int dim) {
  if (dim <= 0 || dim % 2 != 0) throw OddDimension("sinusoidal_pe: dim must be positive even, got " + std::to_string(dim));
  std::vector<double> out(static_cast<std::size_t>(dim));
  double x = coordinate * 2.0 * kPi;
  for (int p = 0; p < dim / 2; ++p) {
    double freq = std::pow(10000.0, -2.0 * p / dim);
    out[static_cast<std::size_t>(2 * p)] = std::sin(x * freq);
    out[static_cast<std::size_t>(2 * p + 1)] = std::cos(x * freq);
  }
  return out;
}

/// Graph op: rows of (x, y) coordinates to rows of concat(PE(x), PE(y)),
/// each half of width dim/2. Differentiable in the coordinates.
inline Tensor sinusoidal_pe_2d(const Tensor& coords, int dim) {
  if (coords->cols != 2) throw ShapeMismatch("sinusoidal_pe_2d: coords must be n x 2");
  if (dim <= 0 || dim % 4 != 0) throw OddDimension("sinusoidal_pe_2d: dim must be divisible by 4, got " + std::to_string(dim));
  int half = dim / 2;
  Tensor out = detail::op_result(coords->rows, dim, {coords});
  for (int r = 0; r < coords->rows; ++r)
    for (int axis = 0; axis < 2; ++axis) {
      double x = coords->at(r, axis) * 2.0 * kPi;
      for (int p = 0; p < half / 2; ++p) {
        double freq = std::pow(10000.0, -2.0 * p / half);
        out->at(r, axis * half + 2 * p) = std::sin(x * freq);
        out->at(r, axis * half + 2 * p + 1) = std::cos(x * freq);
      }
    }
  if (out->needs_grad) {
    TensorNode* o = out.get();
    Tensor pc = coords;
    out->backprop = [o, pc, half]() {
      pc->ensure_grad();
      for (int r = 0; r < pc->rows; ++r)
        for (int axis = 0; axis < 2; ++axis) {
          double x = pc->data[static_cast<std::size_t>(r) * 2 + axis] * 2.0 * kPi;
          double acc = 0.0;
          for (int p = 0; p < half / 2; ++p) {
            double freq = std::pow(10000.0, -2.0 * p / half);
            double gs = o->grad[static_cast<std::size_t>(r) * o->cols + axis * half + 2 * p];
            double gc = o->grad[static_cast<std::size_t>(r) * o->cols + axis * half + 2 * p + 1];
            acc += gs * std::cos(x * freq) * freq - gc * std::sin(x * freq) * freq;
          }
          pc->grad[static_cast<std::size_t>(r) * 2 + axis] += acc * 2.0 * kPi;
        }
    };
  }
  return out;
}

// ---- deformable sampling ----

/// Weighted bilinear gather from a value map laid out as (H*W) x dim rows.
/// `positions` holds S normalized sample points, `weights` is 1 x S. Samples
/// outside [0,1]^2 read zeros. Gradients flow to the value map, the sample
/// positions, and the weights.
inline Tensor deform_sample(const Tensor& value_map, int height, int width, const Tensor& positions,
                            const Tensor& weights) {
  if (value_map->rows != height * width)
    throw ShapeMismatch("deform_sample: value map rows " + std::to_string(value_map->rows) + " != H*W");
  if (positions->cols != 2) throw ShapeMismatch("deform_sample: positions must be S x 2");
  if (weights->rows != 1 || weights->cols != positions->rows)
    throw ShapeMismatch("deform_sample: weights must be 1 x S");
  int dim = value_map->cols;
  int s_count = positions->rows;
  Tensor out = detail::op_result(1, dim, {value_map, positions, weights});

  struct Corner {
    int row = -1;  // -1: outside, contributes zero
    double w = 0.0;
    double dwx = 0.0;  // d w / d grid_x
    double dwy = 0.0;
  };
  // 4 corners per sample, plus the grid scale for position gradients.
  std::vector<std::array<Corner, 4>> corners(static_cast<std::size_t>(s_count));
  double sx = static_cast<double>(width - 1);
  double sy = static_cast<double>(height - 1);
  for (int s = 0; s < s_count; ++s) {
    double gx = positions->at(s, 0) * sx;
    double gy = positions->at(s, 1) * sy;
    int x0 = static_cast<int>(std::floor(gx));
    int y0 = static_cast<int>(std::floor(gy));
    double fx = gx - x0;
    double fy = gy - y0;
    std::array<Corner, 4>& cs = corners[static_cast<std::size_t>(s)];
    const int dx[4] = {0, 1, 0, 1};
    const int dy[4] = {0, 0, 1, 1};
    const double wx[4] = {1.0 - fx, fx, 1.0 - fx, fx};
    const double wy[4] = {1.0 - fy, 1.0 - fy, fy, fy};
    const double gwx[4] = {-1.0, 1.0, -1.0, 1.0};
    const double gwy[4] = {-1.0, -1.0, 1.0, 1.0};
    for (int c = 0; c < 4; ++c) {
      int xi = x0 + dx[c];
      int yi = y0 + dy[c];
      if (xi < 0 || xi >= width || yi < 0 || yi >= height) continue;
      cs[static_cast<std::size_t>(c)].row = yi * width + xi;
      cs[static_cast<std::size_t>(c)].w = wx[c] * wy[c];
      cs[static_cast<std::size_t>(c)].dwx = gwx[c] * wy[c];
      cs[static_cast<std::size_t>(c)].dwy = wx[c] * gwy[c];
    }
    double wt = weights->at(0, s);
    for (const Corner& c : cs) {
      if (c.row < 0) continue;
      const double* vrow = &value_map->data[static_cast<std::size_t>(c.row) * dim];
      for (int d = 0; d < dim; ++d) out->at(0, d) += wt * c.w * vrow[d];
    }
  }

  if (out->needs_grad) {
    TensorNode* o = out.get();
    Tensor pv = value_map, pp = positions, pw = weights;
    out->backprop = [o, pv, pp, pw, corners = std::move(corners), dim, s_count, sx, sy]() {
      for (int s = 0; s < s_count; ++s) {
        const std::array<Corner, 4>& cs = corners[static_cast<std::size_t>(s)];
        double wt = pw->data[static_cast<std::size_t>(s)];
        double dwt = 0.0, dgx = 0.0, dgy = 0.0;
        for (const Corner& c : cs) {
          if (c.row < 0) continue;
          const double* vrow = &pv->data[static_cast<std::size_t>(c.row) * dim];
          double vdot = 0.0;
          for (int d = 0; d < dim; ++d) vdot += o->grad[static_cast<std::size_t>(d)] * vrow[d];
          dwt += c.w * vdot;
          dgx += wt * c.dwx * vdot;
          dgy += wt * c.dwy * vdot;
          if (pv->needs_grad) {
            pv->ensure_grad();
            double f = wt * c.w;
            double* grow = &pv->grad[static_cast<std::size_t>(c.row) * dim];
            for (int d = 0; d < dim; ++d) grow[d] += f * o->grad[static_cast<std::size_t>(d)];
          }
        }
        if (pw->needs_grad) {
          pw->ensure_grad();
          pw->grad[static_cast<std::size_t>(s)] += dwt;
        }
        if (pp->needs_grad) {
          pp->ensure_grad();
          pp->grad[static_cast<std::size_t>(s) * 2] += dgx * sx;
          pp->grad[static_cast<std::size_t>(s) * 2 + 1] += dgy * sy;
        }
      }
    };
  }
  return out;
}

}  // namespace paxkit
