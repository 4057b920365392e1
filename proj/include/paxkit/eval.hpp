#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "paxkit/common.hpp"
#include "paxkit/geometry.hpp"

namespace paxkit {

struct DetectionRecord {
  std::string image_id;
  std::string category;
  double score = 0.0;
  Quad quad;
};

struct GroundTruthRecord {
  std::string image_id;
  std::string category;
  Quad quad;
  bool difficult = false;
};

enum class ApProtocol { kVoc07, kVoc12, kCoco101 };

inline ApProtocol protocol_from_string(const std::string& name) {
  if (name == "voc07") return ApProtocol::kVoc07;
  if (name == "voc12") return ApProtocol::kVoc12;
  if (name == "coco101") return ApProtocol::kCoco101;
  throw UnknownProtocol("protocol: " + name);
}

inline std::string protocol_to_string(ApProtocol p) {
  switch (p) {
    case ApProtocol::kVoc07: return "voc07";
    case ApProtocol::kVoc12: return "voc12";
    default: return "coco101";
  }
}

struct ApResult {
  std::map<std::string, double> per_class_ap;
  double map = 0.0;
  /// Per input detection: 1 = true positive, 0 = false positive,
  /// -1 = ignored (matched a difficult GT, or class absent from GT).
  std::vector<int> outcome;
};

namespace detail {

/// Area under the interpolated PR curve for one class.
inline double ap_from_curve(const std::vector<double>& recall, const std::vector<double>& precision,
                            ApProtocol protocol) {
  if (protocol == ApProtocol::kVoc12) {
    std::vector<double> mrec;
    std::vector<double> mpre;
    mrec.push_back(0.0);
    mrec.insert(mrec.end(), recall.begin(), recall.end());
    mrec.push_back(1.0);
    mpre.push_back(0.0);
    mpre.insert(mpre.end(), precision.begin(), precision.end());
    mpre.push_back(0.0);
    for (std::size_t i = mpre.size() - 1; i-- > 0;) mpre[i] = std::max(mpre[i], mpre[i + 1]);
    double ap = 0.0;
    for (std::size_t i = 0; i + 1 < mrec.size(); ++i)
      if (mrec[i + 1] != mrec[i]) ap += (mrec[i + 1] - mrec[i]) * mpre[i + 1];
    return ap;
  }
  int n_points = protocol == ApProtocol::kVoc07 ? 11 : 101;
  double step = protocol == ApProtocol::kVoc07 ? 0.1 : 0.01;
  double ap = 0.0;
  for (int t = 0; t < n_points; ++t) {
    double thresh = t * step;
    double best = 0.0;
    for (std::size_t i = 0; i < recall.size(); ++i)
      if (recall[i] >= thresh - 1e-12) best = std::max(best, precision[i]);
    ap += best;
  }
  return ap / n_points;
}

}  // namespace detail

/// VOC-style greedy AP over rotated boxes. Detections are processed in
/// descending score (ties by image id, then input order); each detection
/// matches the highest-IoU ground truth of its class and image at or above
/// the threshold; each GT matches once; difficult GT neither count as
/// positives nor turn their matches into false positives.
inline ApResult average_precision(const std::vector<DetectionRecord>& detections,
                                  const std::vector<GroundTruthRecord>& ground_truth,
                                  double iou_threshold, ApProtocol protocol) {
  ApResult result;
  result.outcome.assign(detections.size(), -1);

  std::set<std::string> classes;
  for (const GroundTruthRecord& gt : ground_truth) classes.insert(gt.category);
  if (classes.empty()) return result;

  for (const std::string& cls : classes) {
    std::vector<std::size_t> gt_idx;
    int n_pos = 0;
    for (std::size_t i = 0; i < ground_truth.size(); ++i)
      if (ground_truth[i].category == cls) {
        gt_idx.push_back(i);
        if (!ground_truth[i].difficult) ++n_pos;
      }

    std::vector<std::size_t> det_idx;
    for (std::size_t i = 0; i < detections.size(); ++i)
      if (detections[i].category == cls) det_idx.push_back(i);
    std::stable_sort(det_idx.begin(), det_idx.end(), [&](std::size_t a, std::size_t b) {
      if (detections[a].score != detections[b].score) return detections[a].score > detections[b].score;
      if (detections[a].image_id != detections[b].image_id) return detections[a].image_id < detections[b].image_id;
      return a < b;
    });

    std::vector<char> taken(gt_idx.size(), 0);
    std::vector<double> recall, precision;
    int tp = 0, fp = 0;
    for (std::size_t d : det_idx) {
      double best_iou = 0.0;
      std::size_t best_g = gt_idx.size();
      for (std::size_t g = 0; g < gt_idx.size(); ++g) {
        const GroundTruthRecord& gt = ground_truth[gt_idx[g]];
        if (gt.image_id != detections[d].image_id) continue;
        double iou = rotated_iou(detections[d].quad, gt.quad);
        if (iou > best_iou) {
          best_iou = iou;
          best_g = g;
        }
      }
      if (best_g < gt_idx.size() && best_iou >= iou_threshold) {
        if (ground_truth[gt_idx[best_g]].difficult) {
          result.outcome[d] = -1;
          continue;  // neither TP nor FP, no PR point
        }
        if (!taken[best_g]) {
          taken[best_g] = 1;
          result.outcome[d] = 1;
          ++tp;
        } else {
          result.outcome[d] = 0;
          ++fp;
        }
      } else {
        result.outcome[d] = 0;
        ++fp;
      }
      recall.push_back(n_pos > 0 ? static_cast<double>(tp) / n_pos : 0.0);
      precision.push_back(static_cast<double>(tp) / (tp + fp));
    }

    result.per_class_ap[cls] = n_pos > 0 ? detail::ap_from_curve(recall, precision, protocol) : 0.0;
  }

  double sum = 0.0;
  for (const auto& [cls, ap] : result.per_class_ap) sum += ap;
  result.map = sum / static_cast<double>(result.per_class_ap.size());
  return result;
}

// ---- detection dump (submission-style text) ----

namespace detail {

inline std::string format_g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

/// One line per detection: image_id category score x1 y1 x2 y2 x3 y3 x4 y4.
/// Numbers carry full double precision so a re-read reproduces bit-equal
/// scores and geometry.
inline std::string write_detections(const std::vector<DetectionRecord>& detections) {
  std::string out;
  for (const DetectionRecord& d : detections) {
    out += d.image_id;
    out += ' ';
    out += d.category;
    out += ' ';
    out += detail::format_g17(d.score);
    for (const Vec2& c : d.quad.corners) {
      out += ' ';
      out += detail::format_g17(c.x);
      out += ' ';
      out += detail::format_g17(c.y);
    }
    out += '\n';
  }
  return out;
}

inline std::vector<DetectionRecord> read_detections(const std::string& text) {
  std::vector<DetectionRecord> out;
  std::istringstream stream(text);
  std::string line;
  int line_no = 0;
  while (std::getline(stream, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    DetectionRecord d;
    std::vector<std::string> tokens;
    std::string tok;
    while (ls >> tok) tokens.push_back(tok);
    if (tokens.size() != 11)
      throw ParseError("detections: expected 11 tokens, got " + std::to_string(tokens.size()), line_no, 1);
    d.image_id = tokens[0];
    d.category = tokens[1];
    char* end = nullptr;
    d.score = std::strtod(tokens[2].c_str(), &end);
    if (end == tokens[2].c_str() || *end != '\0')
      throw ParseError("detections: bad score '" + tokens[2] + "'", line_no, 3);
    for (int c = 0; c < 4; ++c)
      for (int a = 0; a < 2; ++a) {
        const std::string& t = tokens[static_cast<std::size_t>(3 + 2 * c + a)];
        double v = std::strtod(t.c_str(), &end);
        if (end == t.c_str() || *end != '\0')
          throw ParseError("detections: bad coordinate '" + t + "'", line_no, 4 + 2 * c + a);
        if (a == 0)
          d.quad.corners[static_cast<std::size_t>(c)].x = v;
        else
          d.quad.corners[static_cast<std::size_t>(c)].y = v;
      }
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace paxkit
