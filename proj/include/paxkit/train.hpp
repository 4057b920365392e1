#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "paxkit/checkpoint.hpp"
#include "paxkit/config.hpp"
#include "paxkit/dota.hpp"
#include "paxkit/eval.hpp"
#include "paxkit/image.hpp"
#include "paxkit/losses.hpp"
#include "paxkit/matching.hpp"
#include "paxkit/metrics.hpp"
#include "paxkit/model.hpp"
#include "paxkit/tensor.hpp"

namespace paxkit {

/// Sorted unique categories across annotation sets; position = class id.
inline std::vector<std::string> collect_categories(const std::vector<std::vector<Annotation>>& sets) {
  std::set<std::string> unique;
  for (const auto& set : sets)
    for (const Annotation& a : set) unique.insert(a.category);
  return {unique.begin(), unique.end()};
}

inline int category_index(const std::vector<std::string>& classes, const std::string& name) {
  for (std::size_t i = 0; i < classes.size(); ++i)
    if (classes[i] == name) return static_cast<int>(i);
  throw Error("train: category '" + name + "' not in class list");
}

/// One instance in normalized [0,1] coordinates.
struct TrainInstance {
  PointAxisTarget target;
  int class_id = 0;
};

/// An image with both its normalized training targets and the raw
/// pixel-space annotations used for evaluation.
struct TrainScene {
  Image image;
  std::vector<TrainInstance> instances;
  std::vector<Annotation> annotations;
};

/// Builds training targets. Images must be square so normalization is
/// isotropic and angles survive the rescale.
inline TrainScene make_train_scene(const Image& image, const std::vector<Annotation>& annotations,
                                   const std::vector<std::string>& classes, const AxisCodecConfig& codec) {
  if (image.height != image.width)
    throw ShapeMismatch("train: images must be square, got " + std::to_string(image.height) + "x" +
                        std::to_string(image.width));
  double inv_side = 1.0 / static_cast<double>(image.width);
  TrainScene out;
  out.image = image;
  out.annotations = annotations;
  for (const Annotation& ann : annotations) {
    Quad q = ann.quad;
    for (Vec2& c : q.corners) c = {c.x * inv_side, c.y * inv_side};
    out.instances.push_back({quad_to_point_axis_target(q, codec), category_index(classes, ann.category)});
  }
  return out;
}

/// Adam with decoupled weight decay.
struct AdamW {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;
  int t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  void init(const std::vector<Tensor>& params, const OptimConfig& cfg) {
    beta1 = cfg.beta1;
    beta2 = cfg.beta2;
    epsilon = cfg.adam_epsilon;
    weight_decay = cfg.weight_decay;
    t = 0;
    m.clear();
    v.clear();
    for (const Tensor& p : params) {
      m.emplace_back(p->data.size(), 0.0);
      v.emplace_back(p->data.size(), 0.0);
    }
  }

  void step(const std::vector<Tensor>& params, double lr) {
    if (params.size() != m.size()) throw ShapeMismatch("adamw: parameter count changed");
    ++t;
    double bc1 = 1.0 - std::pow(beta1, t);
    double bc2 = 1.0 - std::pow(beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor p = params[i];
      p->ensure_grad();
      for (std::size_t e = 0; e < p->data.size(); ++e) {
        double g = p->grad[e];
        m[i][e] = beta1 * m[i][e] + (1.0 - beta1) * g;
        v[i][e] = beta2 * v[i][e] + (1.0 - beta2) * g * g;
        double mhat = m[i][e] / bc1;
        double vhat = v[i][e] / bc2;
        p->data[e] -= lr * (mhat / (std::sqrt(vhat) + epsilon) + weight_decay * p->data[e]);
      }
    }
  }
};

/// Scales all gradients so their global L2 norm is at most max_norm.
/// Returns the pre-clip norm. max_norm <= 0 disables clipping.
inline double clip_grad_norm(const std::vector<Tensor>& params, double max_norm) {
  double sq = 0.0;
  for (const Tensor& p : params) {
    p->ensure_grad();
    for (double g : p->grad) sq += g * g;
  }
  double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    double scale = max_norm / norm;
    for (const Tensor& p : params)
      for (double& g : p->grad) g *= scale;
  }
  return norm;
}

/// Loss terms of one image; `total` is the optimized objective
/// (auxiliary per-layer losses summed, plus the cell-score term).
struct SceneLoss {
  double total = 0.0;
  double proj = 0.0;   ///< last layer's projection term
  double axis = 0.0;   ///< last layer's axis term
  double cls = 0.0;    ///< last layer's classification term
  double score = 0.0;  ///< encoder cell-score term
};

namespace detail {

/// Matches every decoder layer's predictions to the targets, accumulates the
/// combined loss, and (optionally) seeds value-level gradients into the graph
/// output tensors, collecting them as backward roots.
inline SceneLoss scene_loss(const Model& model, const ModelOutput& output, const TrainScene& scene,
                            const RunConfig& cfg, bool seed_grads, std::vector<Tensor>* roots) {
  if (scene.instances.empty()) throw EmptyBatch("train: scene has no instances");
  LossConfig loss_cfg = cfg.loss;
  if (model.cfg.fixed_axis_mode) loss_cfg.lambda2 = 0.0;  // no axis head to supervise

  std::vector<PointAxisTarget> targets;
  std::vector<int> target_class;
  for (const TrainInstance& inst : scene.instances) {
    targets.push_back(inst.target);
    target_class.push_back(inst.class_id);
  }

  SceneLoss out;
  for (std::size_t layer = 0; layer < output.layers.size(); ++layer) {
    const std::vector<PointSetPredictionGraph>& graph_preds = output.layers[layer].preds;
    std::vector<PointSetPrediction> preds;
    preds.reserve(graph_preds.size());
    for (const PointSetPredictionGraph& g : graph_preds) preds.push_back(to_value_prediction(g));

    std::vector<std::vector<double>> costs(preds.size(), std::vector<double>(targets.size()));
    for (std::size_t q = 0; q < preds.size(); ++q)
      for (std::size_t j = 0; j < targets.size(); ++j)
        costs[q][j] = matching_cost(preds[q], targets[j], target_class[j], loss_cfg);

    std::vector<int> pred_to_target(preds.size(), -1);
    for (auto [q, j] : hungarian(costs)) pred_to_target[static_cast<std::size_t>(q)] = j;

    BatchLossOutput batch = point_axis_loss(preds, targets, target_class, pred_to_target, loss_cfg);
    out.total += batch.value;
    if (layer + 1 == output.layers.size()) {
      out.proj = batch.proj_term;
      out.axis = batch.axis_term;
      out.cls = batch.cls_term;
    }

    if (!seed_grads) continue;
    for (std::size_t q = 0; q < graph_preds.size(); ++q) {
      const PointSetPredictionGraph& g = graph_preds[q];
      const LossOutput& grads = batch.per_pred[q];
      g.points->ensure_grad();
      for (std::size_t p = 0; p < grads.point_grads.size(); ++p) {
        g.points->grad[2 * p] += grads.point_grads[p].x;
        g.points->grad[2 * p + 1] += grads.point_grads[p].y;
      }
      roots->push_back(g.points);
      if (g.axis_logits->needs_grad) {
        g.axis_logits->ensure_grad();
        for (std::size_t b = 0; b < grads.axis_logit_grads.size(); ++b)
          g.axis_logits->grad[b] += grads.axis_logit_grads[b];
        roots->push_back(g.axis_logits);
      }
      g.class_logits->ensure_grad();
      for (std::size_t c = 0; c < grads.class_logit_grads.size(); ++c)
        g.class_logits->grad[c] += grads.class_logit_grads[c];
      roots->push_back(g.class_logits);
    }
  }

  // Cell-score supervision: focal loss with positives at cells holding an
  // instance center.
  std::set<int> positive_cells;
  for (const TrainInstance& inst : scene.instances) {
    int cx = std::min(output.feat_w - 1, std::max(0, static_cast<int>(inst.target.center.x * output.feat_w)));
    int cy = std::min(output.feat_h - 1, std::max(0, static_cast<int>(inst.target.center.y * output.feat_h)));
    positive_cells.insert(cy * output.feat_w + cx);
  }
  std::size_t n_cells = output.encoder_scores->data.size();
  std::vector<std::vector<double>> cell_logits(n_cells);
  std::vector<int> cell_target(n_cells, -1);
  for (std::size_t i = 0; i < n_cells; ++i) cell_logits[i] = {output.encoder_scores->data[i]};
  for (int cell : positive_cells) cell_target[static_cast<std::size_t>(cell)] = 0;
  LossOutput score = classification_loss(cell_logits, cell_target, cfg.loss.focal_alpha, cfg.loss.focal_gamma);
  out.score = cfg.optim.enc_score_weight * score.value;
  out.total += out.score;

  if (seed_grads && output.encoder_scores->needs_grad) {
    output.encoder_scores->ensure_grad();
    for (std::size_t i = 0; i < n_cells; ++i)
      output.encoder_scores->grad[i] += cfg.optim.enc_score_weight * score.class_logit_grads[i];
    roots->push_back(output.encoder_scores);
  }
  return out;
}

}  // namespace detail

/// Owns the model, optimizer state, and schedule for one training run.
struct Trainer {
  RunConfig cfg;
  Model model;
  std::vector<Tensor> params;
  AdamW opt;

  static Trainer init(const RunConfig& cfg) {
    cfg.validate();
    Trainer tr;
    tr.cfg = cfg;
    tr.model = Model::init(cfg.model, cfg.seed);
    tr.params = tr.model.param_tensors();
    tr.opt.init(tr.params, cfg.optim);
    return tr;
  }

  /// Step-decayed learning rate for a 1-based epoch.
  double learning_rate(int epoch) const {
    double lr = cfg.optim.learning_rate;
    for (int d : cfg.optim.lr_decay_at)
      if (epoch >= d) lr *= cfg.optim.lr_decay_factor;
    return lr;
  }

  /// Loss of one scene without touching gradients or parameters.
  SceneLoss eval_loss(const TrainScene& scene) const {
    ModelOutput output = model.forward(scene.image);
    return detail::scene_loss(model, output, scene, cfg, false, nullptr);
  }

  /// One optimization step on one scene; returns the pre-update loss.
  SceneLoss train_step(const TrainScene& scene, double lr) {
    zero_grad(params);
    ModelOutput output = model.forward(scene.image);
    std::vector<Tensor> roots;
    SceneLoss loss = detail::scene_loss(model, output, scene, cfg, true, &roots);
    backward(roots);
    clip_grad_norm(params, cfg.optim.grad_clip);
    opt.step(params, lr);
    return loss;
  }
};

/// Runs the last decoder layer on one image and turns every query into a
/// detection record in pixel coordinates.
inline std::vector<DetectionRecord> detect(const Model& model, const Image& image, const std::string& image_id,
                                           const std::vector<std::string>& classes, const AxisCodecConfig& codec) {
  if (image.height != image.width) throw ShapeMismatch("detect: images must be square");
  if (static_cast<int>(classes.size()) != model.cfg.n_classes)
    throw InvalidConfig("detect: model has " + std::to_string(model.cfg.n_classes) + " classes, class list has " +
                        std::to_string(classes.size()));
  double side = image.width;
  ModelOutput output = model.forward(image);
  std::vector<DetectionRecord> dets;
  for (const PointSetPredictionGraph& g : output.layers.back().preds) {
    PointSetPrediction p = to_value_prediction(g);
    std::size_t best = 0;
    for (std::size_t c = 1; c < p.class_logits.size(); ++c)
      if (p.class_logits[c] > p.class_logits[best]) best = c;
    double score = 1.0 / (1.0 + std::exp(-p.class_logits[best]));
    OrientedBox box = decode_point_axis(p, codec);
    box.cx *= side;
    box.cy *= side;
    box.w *= side;
    box.h *= side;
    dets.push_back({image_id, classes[best], score, obb_to_quad(box)});
  }
  return dets;
}

inline std::vector<std::string> scene_ids(std::size_t n) {
  std::vector<std::string> ids;
  ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene_%04zu", i);
    ids.emplace_back(buf);
  }
  return ids;
}

/// Detects over all scenes (optionally with a worker-thread pool; results are
/// ordered by scene regardless of thread count) and scores against their
/// annotations.
inline ApResult evaluate_model(const Model& model, const std::vector<TrainScene>& scenes,
                               const std::vector<std::string>& ids, const std::vector<std::string>& classes,
                               const AxisCodecConfig& codec, double iou_threshold, ApProtocol protocol,
                               int n_threads = 1, std::vector<DetectionRecord>* out_detections = nullptr) {
  if (ids.size() != scenes.size()) throw LengthMismatch("evaluate: ids and scenes differ in length");
  std::vector<std::vector<DetectionRecord>> per_scene(scenes.size());
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < scenes.size(); i += stride)
      per_scene[i] = detect(model, scenes[i].image, ids[i], classes, codec);
  };
  if (n_threads <= 1 || scenes.size() <= 1) {
    work(0, 1);
  } else {
    std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(n_threads), scenes.size());
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
    for (std::thread& th : pool) th.join();
  }

  std::vector<DetectionRecord> detections;
  std::vector<GroundTruthRecord> ground_truth;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    for (DetectionRecord& d : per_scene[i]) detections.push_back(std::move(d));
    for (const Annotation& a : scenes[i].annotations)
      ground_truth.push_back({ids[i], a.category, a.quad, a.difficult != 0});
  }
  ApResult result = average_precision(detections, ground_truth, iou_threshold, protocol);
  if (out_detections) *out_detections = std::move(detections);
  return result;
}

/// Full training loop. Epoch 0 is a pure evaluation row (no updates), then
/// epochs 1..epochs train scene by scene. mAP50/75 on the training scenes is
/// recorded every eval_every epochs and on the last epoch. Throws
/// NonFiniteLoss naming the epoch and scene if the objective leaves R.
inline std::vector<MetricsRecord> train_run(Trainer& trainer, const std::vector<TrainScene>& scenes,
                                            const std::vector<std::string>& ids,
                                            const std::vector<std::string>& classes, int n_threads = 1) {
  if (scenes.empty()) throw EmptyBatch("train: no scenes");
  const OptimConfig& optim = trainer.cfg.optim;
  const AxisCodecConfig& codec = trainer.cfg.loss.codec;
  std::vector<MetricsRecord> metrics;

  auto record_epoch = [&](int epoch, const SceneLoss& mean, double wall_ms, bool with_map) {
    MetricsRecord rec;
    rec.epoch = epoch;
    rec.loss_total = mean.total;
    rec.loss_proj = mean.proj;
    rec.loss_axis = mean.axis;
    rec.loss_cls = mean.cls;
    rec.loss_score = mean.score;
    rec.wall_ms = wall_ms;
    if (with_map) {
      rec.map50 = evaluate_model(trainer.model, scenes, ids, classes, codec, 0.5, ApProtocol::kVoc12, n_threads).map;
      rec.map75 = evaluate_model(trainer.model, scenes, ids, classes, codec, 0.75, ApProtocol::kVoc12, n_threads).map;
    }
    metrics.push_back(rec);
  };

  auto mean_of = [&](std::vector<SceneLoss>& losses) {
    SceneLoss mean;
    double inv = 1.0 / static_cast<double>(losses.size());
    for (const SceneLoss& l : losses) {
      mean.total += l.total * inv;
      mean.proj += l.proj * inv;
      mean.axis += l.axis * inv;
      mean.cls += l.cls * inv;
      mean.score += l.score * inv;
    }
    return mean;
  };

  using Clock = std::chrono::steady_clock;
  {
    auto t0 = Clock::now();
    std::vector<SceneLoss> losses;
    for (const TrainScene& s : scenes) losses.push_back(trainer.eval_loss(s));
    SceneLoss mean = mean_of(losses);
    double wall = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    record_epoch(0, mean, wall, false);
  }

  for (int epoch = 1; epoch <= optim.epochs; ++epoch) {
    auto t0 = Clock::now();
    double lr = trainer.learning_rate(epoch);
    std::vector<SceneLoss> losses;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      std::string step = "epoch " + std::to_string(epoch) + ", scene " + std::to_string(i);
      SceneLoss l;
      try {
        l = trainer.train_step(scenes[i], lr);
      } catch (const NonFiniteCost& e) {
        throw NonFiniteLoss("train: non-finite objective at " + step + ": " + e.what());
      } catch (const RefPointOutOfRange& e) {
        // clamp01 keeps references in range, so this means non-finite arithmetic.
        throw NonFiniteLoss("train: non-finite objective at " + step + ": " + e.what());
      }
      if (!std::isfinite(l.total)) throw NonFiniteLoss("train: non-finite loss at " + step);
      losses.push_back(l);
    }
    SceneLoss mean = mean_of(losses);
    double wall = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    record_epoch(epoch, mean, wall, epoch % optim.eval_every == 0 || epoch == optim.epochs);
  }
  return metrics;
}

}  // namespace paxkit
