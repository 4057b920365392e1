#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "paxkit/common.hpp"
#include "paxkit/config.hpp"
#include "paxkit/model.hpp"

namespace paxkit {

inline constexpr const char* kCheckpointHeader = "PAXKIT-CKPT-v1";

/// Text container: header, [config] block (model keys), then [tensors] with
/// one `name rows cols` line plus one hexfloat data line per tensor.
/// Hexfloat keeps save/load bit-exact.
inline void save_checkpoint(const Model& model, std::ostream& out) {
  out << kCheckpointHeader << "\n[config]\n";
  for (const auto& [key, value] : detail::model_config_items(model.cfg)) out << key << " = " << value << "\n";
  NamedParams named = model.params();
  out << "[tensors] " << named.size() << "\n";
  char buf[40];
  for (const auto& [name, tensor] : named) {
    out << name << " " << tensor->rows << " " << tensor->cols << "\n";
    for (std::size_t i = 0; i < tensor->data.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%a", tensor->data[i]);
      out << buf << (i + 1 == tensor->data.size() ? "\n" : " ");
    }
    if (tensor->data.empty()) out << "\n";
  }
}

inline void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("checkpoint: cannot open '" + path + "'");
  save_checkpoint(model, out);
}

inline Model load_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointHeader)
    throw CheckpointError("checkpoint: bad header '" + line + "'");
  if (!std::getline(in, line) || line != "[config]")
    throw CheckpointError("checkpoint: missing [config] block");

  ModelConfig cfg;
  while (std::getline(in, line)) {
    if (line.rfind("[tensors]", 0) == 0) break;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError("checkpoint: bad config line '" + line + "'");
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    if (!detail::apply_model_key(cfg, key, value))
      throw CheckpointError("checkpoint: unknown config key '" + key + "'");
  }
  if (line.rfind("[tensors]", 0) != 0) throw CheckpointError("checkpoint: missing [tensors] block");
  long declared = std::strtol(line.c_str() + 9, nullptr, 10);

  cfg.attention.dim = cfg.dim;
  cfg.validate();
  Model model = Model::init(cfg, 0);
  std::map<std::string, Tensor> by_name;
  for (const auto& [name, tensor] : model.params()) by_name[name] = tensor;
  if (declared != static_cast<long>(by_name.size()))
    throw CheckpointError("checkpoint: expected " + std::to_string(by_name.size()) + " tensors, header declares " +
                          std::to_string(declared));

  std::map<std::string, bool> seen;
  for (long t = 0; t < declared; ++t) {
    std::string name;
    int rows = 0, cols = 0;
    if (!(in >> name >> rows >> cols)) throw CheckpointError("checkpoint: truncated tensor table");
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("checkpoint: unknown tensor '" + name + "'");
    if (seen[name]) throw CheckpointError("checkpoint: duplicate tensor '" + name + "'");
    seen[name] = true;
    Tensor dst = it->second;
    if (rows != dst->rows || cols != dst->cols)
      throw CheckpointError("checkpoint: tensor '" + name + "' has shape " + std::to_string(rows) + "x" +
                            std::to_string(cols) + ", model expects " + std::to_string(dst->rows) + "x" +
                            std::to_string(dst->cols));
    for (double& v : dst->data) {
      std::string tok;
      if (!(in >> tok)) throw CheckpointError("checkpoint: truncated data for '" + name + "'");
      char* end = nullptr;
      v = std::strtod(tok.c_str(), &end);
      if (end == tok.c_str() || *end != '\0')
        throw CheckpointError("checkpoint: bad value '" + tok + "' in '" + name + "'");
    }
  }
  return model;
}

inline Model load_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open '" + path + "'");
  return load_checkpoint(in);
}

}  // namespace paxkit
