#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "paxkit/axis_codec.hpp"
#include "paxkit/common.hpp"
#include "paxkit/geometry.hpp"

namespace paxkit {

enum class ProjectionVariant { kMax, kWithPenalty, kTopK };

struct LossConfig {
  double lambda1 = 5.0;    ///< weight of the point projection term
  double lambda2 = 1.0;    ///< weight of the axis term
  double cls_weight = 2.0;
  ProjectionVariant variant = ProjectionVariant::kMax;
  int top_k = 2;           ///< k for the top-k variant
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  AxisCodecConfig codec;

  void validate() const {
    if (lambda1 < 0.0 || lambda2 < 0.0 || cls_weight < 0.0)
      throw InvalidConfig("loss weights must be >= 0");
    if (top_k < 1) throw InvalidConfig("top_k must be >= 1");
    codec.validate();
  }
};

/// Scalar loss plus analytic gradients for whichever inputs the op touches;
/// untouched gradient vectors stay empty.
struct LossOutput {
  double value = 0.0;
  std::vector<Vec2> point_grads;
  std::vector<double> axis_logit_grads;
  std::vector<double> class_logit_grads;
};

namespace detail {

struct TargetFrame {
  Vec2 center{};
  std::array<Vec2, 4> unit{};   // radial directions
  std::array<double, 4> len{};  // radial norms
};

inline TargetFrame target_frame(const PointAxisTarget& target) {
  TargetFrame f;
  f.center = target.center;
  for (std::size_t j = 0; j < 4; ++j) {
    double n = norm(target.radials[j]);
    if (n < 1e-9) throw DegenerateTarget("radial " + std::to_string(j) + " has norm below 1e-9");
    f.unit[j] = (1.0 / n) * target.radials[j];
    f.len[j] = n;
  }
  return f;
}

/// Order-invariant reduction: the four per-direction terms are summed in
/// sorted order so relabeling the radial pairs cannot change the result.
inline double sum_sorted4(std::array<double, 4> t) {
  std::sort(t.begin(), t.end());
  return ((t[0] + t[1]) + t[2]) + t[3];
}

}  // namespace detail

/// Projection loss over one instance. The first K-1 points are boundary
/// points, the K-th is the predicted center; all projections are taken
/// relative to the target center. Gradient flows only into each direction's
/// arg-max point (ties resolved to the lowest point index) and the center.
inline LossOutput max_projection_variant(std::span<const Vec2> pred_points, const PointAxisTarget& target,
                                         ProjectionVariant variant, int top_k = 2) {
  std::size_t k_points = pred_points.size();
  if (k_points < 5) throw InvalidK("max_projection: need K >= 5 points, got " + std::to_string(k_points));
  std::size_t boundary = k_points - 1;
  if (variant == ProjectionVariant::kTopK && static_cast<std::size_t>(top_k) > boundary)
    throw InvalidK("top_k " + std::to_string(top_k) + " exceeds boundary point count " + std::to_string(boundary));
  detail::TargetFrame f = detail::target_frame(target);

  LossOutput out;
  out.point_grads.assign(k_points, Vec2{});

  // proj[j][m] is the signed distance of point m beyond edge j.
  std::array<std::vector<double>, 4> proj;
  for (std::size_t j = 0; j < 4; ++j) {
    proj[j].resize(boundary);
    for (std::size_t m = 0; m < boundary; ++m)
      proj[j][m] = dot(pred_points[m] - f.center, f.unit[j]) - f.len[j];
  }

  std::array<double, 4> terms{};
  if (variant == ProjectionVariant::kTopK) {
    for (std::size_t j = 0; j < 4; ++j) {
      std::vector<std::size_t> order(boundary);
      for (std::size_t m = 0; m < boundary; ++m) order[m] = m;
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return proj[j][a] > proj[j][b]; });
      double mean = 0.0;
      for (int i = 0; i < top_k; ++i) mean += proj[j][order[static_cast<std::size_t>(i)]];
      mean /= static_cast<double>(top_k);
      terms[j] = std::abs(mean);
      double sign = mean > 0.0 ? 1.0 : (mean < 0.0 ? -1.0 : 0.0);
      for (int i = 0; i < top_k; ++i) {
        std::size_t m = order[static_cast<std::size_t>(i)];
        out.point_grads[m] = out.point_grads[m] + (sign / static_cast<double>(top_k)) * f.unit[j];
      }
    }
  } else {
    for (std::size_t j = 0; j < 4; ++j) {
      std::size_t best = 0;
      for (std::size_t m = 1; m < boundary; ++m)
        if (proj[j][m] > proj[j][best]) best = m;
      double val = proj[j][best];
      terms[j] = std::abs(val);
      double sign = val > 0.0 ? 1.0 : (val < 0.0 ? -1.0 : 0.0);
      out.point_grads[best] = out.point_grads[best] + sign * f.unit[j];
    }
  }
  out.value = detail::sum_sorted4(terms);

  if (variant == ProjectionVariant::kWithPenalty) {
    // Every point strictly outside the rectangle pays its largest positive
    // edge distance on top of the base loss.
    for (std::size_t m = 0; m < boundary; ++m) {
      std::size_t worst = 0;
      for (std::size_t j = 1; j < 4; ++j)
        if (proj[j][m] > proj[worst][m]) worst = j;
      if (proj[worst][m] > 0.0) {
        out.value += proj[worst][m];
        out.point_grads[m] = out.point_grads[m] + f.unit[worst];
      }
    }
  }

  Vec2 center_err = pred_points[boundary] - f.center;
  double center_norm = norm(center_err);
  out.value += center_norm;
  if (center_norm > 0.0) out.point_grads[boundary] = (1.0 / center_norm) * center_err;
  return out;
}

inline LossOutput max_projection_loss(std::span<const Vec2> pred_points, const PointAxisTarget& target) {
  return max_projection_variant(pred_points, target, ProjectionVariant::kMax);
}

/// Mean per-bin binary cross-entropy between sigmoid(logits) and the soft
/// axis label. Each log argument is floored at eps, which keeps the loss
/// finite at exact saturation without putting a floor under correct
/// predictions; the gradient is the true derivative of the clamped form, so
/// finite differences agree everywhere.
inline LossOutput cross_axis_loss(std::span<const double> axis_logits, const AxisEncoding& target_axis,
                                  double epsilon = 1e-7) {
  std::size_t n = axis_logits.size();
  if (n != target_axis.values.size())
    throw LengthMismatch("cross_axis_loss: logits length " + std::to_string(n) + " != target length " +
                         std::to_string(target_axis.values.size()));
  LossOutput out;
  out.axis_logit_grads.assign(n, 0.0);
  double inv_n = 1.0 / static_cast<double>(n);
  double acc = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    double p = 1.0 / (1.0 + std::exp(-axis_logits[b]));
    double a = target_axis.values[b];
    acc += -(a * std::log(std::max(p, epsilon)) + (1.0 - a) * std::log(std::max(1.0 - p, epsilon)));
    double grad = 0.0;
    if (p > epsilon) grad += -a * (1.0 - p);
    if (1.0 - p > epsilon) grad += (1.0 - a) * p;
    out.axis_logit_grads[b] = grad * inv_n;
  }
  out.value = acc * inv_n;
  return out;
}

/// Sigmoid focal loss over a batch of query class logits. `target_class[q]`
/// is a class index or -1 for background. Normalized by the number of
/// foreground queries (at least 1).
inline LossOutput classification_loss(const std::vector<std::vector<double>>& class_logits,
                                      std::span<const int> target_class, double alpha = 0.25,
                                      double gamma = 2.0) {
  std::size_t n_q = class_logits.size();
  if (n_q != target_class.size())
    throw LengthMismatch("classification_loss: " + std::to_string(n_q) + " logit rows vs " +
                         std::to_string(target_class.size()) + " targets");
  std::size_t n_fg = 0;
  for (std::size_t q = 0; q < n_q; ++q) {
    int t = target_class[q];
    int n_classes = static_cast<int>(class_logits[q].size());
    if (t < -1 || t >= n_classes)
      throw IndexOutOfRange("classification_loss: class id " + std::to_string(t) + " out of range for " +
                            std::to_string(n_classes) + " classes");
    if (t >= 0) ++n_fg;
  }
  double denom = static_cast<double>(std::max<std::size_t>(1, n_fg));

  LossOutput out;
  std::size_t flat = 0;
  for (std::size_t q = 0; q < n_q; ++q) flat += class_logits[q].size();
  out.class_logit_grads.assign(flat, 0.0);

  double acc = 0.0;
  std::size_t offset = 0;
  for (std::size_t q = 0; q < n_q; ++q) {
    for (std::size_t c = 0; c < class_logits[q].size(); ++c) {
      double l = class_logits[q][c];
      bool pos = target_class[q] == static_cast<int>(c);
      double p = 1.0 / (1.0 + std::exp(-l));
      // Stable log-sigmoid forms: log p = -softplus(-l), log(1-p) = -softplus(l).
      double log_p = l > 0.0 ? -std::log1p(std::exp(-l)) : l - std::log1p(std::exp(l));
      double log_1mp = l > 0.0 ? -l - std::log1p(std::exp(-l)) : -std::log1p(std::exp(l));
      double a_t = pos ? alpha : 1.0 - alpha;
      double p_t = pos ? p : 1.0 - p;
      double focal = std::pow(1.0 - p_t, gamma);
      double log_pt = pos ? log_p : log_1mp;
      acc += -a_t * focal * log_pt;

      // d/dl, with dp/dl = p(1-p) and dp_t/dl = +-p(1-p).
      double dpt_dl = pos ? p * (1.0 - p) : -(p * (1.0 - p));
      double dfocal_dpt = gamma == 0.0 ? 0.0 : -gamma * std::pow(1.0 - p_t, gamma - 1.0);
      double safe_pt = std::max(p_t, 1e-300);
      double grad = -a_t * (dfocal_dpt * log_pt + focal / safe_pt) * dpt_dl;
      out.class_logit_grads[offset + c] = grad / denom;
    }
    offset += class_logits[q].size();
  }
  out.value = acc / denom;
  return out;
}

/// Per-instance combined loss terms and batch gradients.
struct BatchLossOutput {
  double value = 0.0;
  double proj_term = 0.0;  ///< mean lambda1-weighted projection part
  double axis_term = 0.0;  ///< mean lambda2-weighted axis part
  double cls_term = 0.0;   ///< cls_weight-scaled classification part
  std::vector<LossOutput> per_pred;
};

/// Combined set loss over one image: mean of the matched per-instance
/// projection and axis terms plus the classification term over every query.
/// `pred_to_target[q]` is a target index or -1 for background queries.
inline BatchLossOutput point_axis_loss(const std::vector<PointSetPrediction>& preds,
                                       const std::vector<PointAxisTarget>& targets,
                                       std::span<const int> target_class,
                                       std::span<const int> pred_to_target, const LossConfig& cfg) {
  cfg.validate();
  if (preds.empty()) throw EmptyBatch("point_axis_loss: no predictions");
  if (pred_to_target.size() != preds.size())
    throw LengthMismatch("point_axis_loss: assignment length != prediction count");
  if (target_class.size() != targets.size())
    throw LengthMismatch("point_axis_loss: class list length != target count");

  std::size_t n_matched = 0;
  for (int t : pred_to_target)
    if (t >= 0) ++n_matched;
  if (n_matched == 0) throw EmptyBatch("point_axis_loss: no matched predictions");

  BatchLossOutput out;
  out.per_pred.resize(preds.size());
  double inv_n = 1.0 / static_cast<double>(n_matched);

  std::vector<std::vector<double>> cls_logits(preds.size());
  std::vector<int> cls_targets(preds.size(), -1);
  for (std::size_t q = 0; q < preds.size(); ++q) {
    cls_logits[q] = preds[q].class_logits;
    int t = pred_to_target[q];
    if (t >= 0) {
      if (static_cast<std::size_t>(t) >= targets.size())
        throw IndexOutOfRange("point_axis_loss: target index " + std::to_string(t) + " out of range");
      cls_targets[q] = target_class[static_cast<std::size_t>(t)];

      LossOutput proj = max_projection_variant(preds[q].points, targets[static_cast<std::size_t>(t)],
                                               cfg.variant, cfg.top_k);
      LossOutput axis = cross_axis_loss(preds[q].axis_logits, targets[static_cast<std::size_t>(t)].axis,
                                        cfg.codec.epsilon);
      out.proj_term += cfg.lambda1 * proj.value * inv_n;
      out.axis_term += cfg.lambda2 * axis.value * inv_n;

      LossOutput& g = out.per_pred[q];
      g.point_grads.assign(preds[q].points.size(), Vec2{});
      for (std::size_t m = 0; m < proj.point_grads.size(); ++m)
        g.point_grads[m] = (cfg.lambda1 * inv_n) * proj.point_grads[m];
      g.axis_logit_grads.assign(preds[q].axis_logits.size(), 0.0);
      for (std::size_t b = 0; b < axis.axis_logit_grads.size(); ++b)
        g.axis_logit_grads[b] = cfg.lambda2 * inv_n * axis.axis_logit_grads[b];
    } else {
      out.per_pred[q].point_grads.assign(preds[q].points.size(), Vec2{});
      out.per_pred[q].axis_logit_grads.assign(preds[q].axis_logits.size(), 0.0);
    }
  }

  LossOutput cls = classification_loss(cls_logits, cls_targets, cfg.focal_alpha, cfg.focal_gamma);
  out.cls_term = cfg.cls_weight * cls.value;
  std::size_t offset = 0;
  for (std::size_t q = 0; q < preds.size(); ++q) {
    std::size_t n_c = preds[q].class_logits.size();
    out.per_pred[q].class_logit_grads.assign(n_c, 0.0);
    for (std::size_t c = 0; c < n_c; ++c)
      out.per_pred[q].class_logit_grads[c] = cfg.cls_weight * cls.class_logit_grads[offset + c];
    offset += n_c;
  }

  out.value = out.proj_term + out.axis_term + out.cls_term;
  return out;
}

}  // namespace paxkit
