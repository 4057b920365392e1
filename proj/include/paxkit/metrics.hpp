#pragma once

#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "paxkit/common.hpp"

namespace paxkit {

/// One training epoch's scalar summary. mAP fields are negative when the
/// epoch skipped evaluation; they serialize as null.
struct MetricsRecord {
  int epoch = 0;
  double loss_total = 0.0;
  double loss_proj = 0.0;
  double loss_axis = 0.0;
  double loss_cls = 0.0;
  double loss_score = 0.0;
  double map50 = -1.0;
  double map75 = -1.0;
  double wall_ms = -1.0;  ///< negative = not recorded; the key is then omitted
};

inline nlohmann::json metrics_to_json(const MetricsRecord& r) {
  nlohmann::json j;
  j["epoch"] = r.epoch;
  j["loss_total"] = r.loss_total;
  j["loss_proj"] = r.loss_proj;
  j["loss_axis"] = r.loss_axis;
  j["loss_cls"] = r.loss_cls;
  j["loss_score"] = r.loss_score;
  j["mAP50"] = r.map50 < 0.0 ? nlohmann::json() : nlohmann::json(r.map50);
  j["mAP75"] = r.map75 < 0.0 ? nlohmann::json() : nlohmann::json(r.map75);
  if (r.wall_ms >= 0.0) j["wall_ms"] = r.wall_ms;
  return j;
}

/// One JSON object per line, append-friendly.
inline void metrics_write(const std::vector<MetricsRecord>& records, std::ostream& out) {
  for (const MetricsRecord& r : records) out << metrics_to_json(r).dump() << "\n";
}

inline void metrics_write(const std::vector<MetricsRecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("metrics: cannot open '" + path + "'");
  metrics_write(records, out);
}

inline std::vector<MetricsRecord> metrics_read(const std::string& text) {
  std::vector<MetricsRecord> out;
  std::istringstream stream(text);
  std::string line;
  int line_no = 0;
  while (std::getline(stream, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ParseError("metrics: invalid JSON", line_no, 1);
    MetricsRecord r;
    r.epoch = j.value("epoch", 0);
    r.loss_total = j.value("loss_total", 0.0);
    r.loss_proj = j.value("loss_proj", 0.0);
    r.loss_axis = j.value("loss_axis", 0.0);
    r.loss_cls = j.value("loss_cls", 0.0);
    r.loss_score = j.value("loss_score", 0.0);
    r.map50 = j.contains("mAP50") && j["mAP50"].is_number() ? j["mAP50"].get<double>() : -1.0;
    r.map75 = j.contains("mAP75") && j["mAP75"].is_number() ? j["mAP75"].get<double>() : -1.0;
    r.wall_ms = j.value("wall_ms", -1.0);
    out.push_back(r);
  }
  return out;
}

}  // namespace paxkit
