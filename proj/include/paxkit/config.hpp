#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "paxkit/common.hpp"
#include "paxkit/losses.hpp"
#include "paxkit/model.hpp"

namespace paxkit {

/// Optimizer and schedule knobs for the desk-scale trainer.
struct OptimConfig {
  double learning_rate = 2e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double grad_clip = 10.0;           ///< max global gradient norm, 0 disables
  int epochs = 300;
  double lr_decay_factor = 0.1;
  std::vector<int> lr_decay_at = {225, 276};
  double enc_score_weight = 1.0;     ///< weight of the cell-score supervision
  int eval_every = 10;               ///< epochs between mAP evaluations

  void validate() const {
    if (!(learning_rate > 0.0)) throw InvalidConfig("optim: learning_rate must be positive");
    if (weight_decay < 0.0 || grad_clip < 0.0) throw InvalidConfig("optim: negative weight_decay or grad_clip");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
      throw InvalidConfig("optim: betas must lie in [0, 1)");
    if (!(adam_epsilon > 0.0)) throw InvalidConfig("optim: adam_epsilon must be positive");
    if (epochs < 1) throw InvalidConfig("optim: epochs must be >= 1");
    if (!(lr_decay_factor > 0.0) || lr_decay_factor > 1.0)
      throw InvalidConfig("optim: lr_decay_factor must lie in (0, 1]");
    if (eval_every < 1) throw InvalidConfig("optim: eval_every must be >= 1");
  }
};

/// Everything a training or evaluation run needs, loadable from one file.
struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  OptimConfig optim;
  std::uint64_t seed = 42;

  void validate() const {
    model.validate();
    loss.validate();
    optim.validate();
    if (model.n_bins != loss.codec.n_bins)
      throw InvalidConfig("config: model n_bins and codec n_bins out of sync");
  }
};

namespace detail {

inline int parse_config_int(const std::string& key, const std::string& value) {
  char* end = nullptr;
  long v = std::strtol(value.c_str(), &end, 10);
  if (end == value.c_str() || *end != '\0')
    throw ConfigTypeError("config: key '" + key + "' expects an integer, got '" + value + "'");
  return static_cast<int>(v);
}

inline std::uint64_t parse_config_u64(const std::string& key, const std::string& value) {
  char* end = nullptr;
  unsigned long long v = std::strtoull(value.c_str(), &end, 10);
  if (end == value.c_str() || *end != '\0' || value[0] == '-')
    throw ConfigTypeError("config: key '" + key + "' expects an unsigned integer, got '" + value + "'");
  return v;
}

inline double parse_config_double(const std::string& key, const std::string& value) {
  char* end = nullptr;
  double v = std::strtod(value.c_str(), &end);
  if (end == value.c_str() || *end != '\0')
    throw ConfigTypeError("config: key '" + key + "' expects a number, got '" + value + "'");
  return v;
}

inline bool parse_config_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigTypeError("config: key '" + key + "' expects true/false, got '" + value + "'");
}

inline std::vector<int> parse_config_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  if (value.empty() || value == "none") return out;
  std::size_t pos = 0;
  while (pos <= value.size()) {
    std::size_t comma = value.find(',', pos);
    std::string item = value.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    out.push_back(parse_config_int(key, item));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

inline ProjectionVariant parse_config_variant(const std::string& key, const std::string& value) {
  if (value == "max") return ProjectionVariant::kMax;
  if (value == "with_penalty") return ProjectionVariant::kWithPenalty;
  if (value == "top_k") return ProjectionVariant::kTopK;
  throw ConfigTypeError("config: key '" + key + "' expects max|with_penalty|top_k, got '" + value + "'");
}

inline std::string format_config_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// Applies one model-section key. Returns false when the key is not a model key.
inline bool apply_model_key(ModelConfig& m, const std::string& key, const std::string& value) {
  if (key == "k_points") m.k_points = parse_config_int(key, value);
  else if (key == "n_queries") m.n_queries = parse_config_int(key, value);
  else if (key == "dim") m.dim = parse_config_int(key, value);
  else if (key == "n_layers") m.n_layers = parse_config_int(key, value);
  else if (key == "n_classes") m.n_classes = parse_config_int(key, value);
  else if (key == "n_bins") m.n_bins = parse_config_int(key, value);
  else if (key == "patch") m.patch = parse_config_int(key, value);
  else if (key == "n_heads") m.attention.n_heads = parse_config_int(key, value);
  else if (key == "n_sample_points") m.attention.n_sample_points = parse_config_int(key, value);
  else if (key == "use_point_queries") m.use_point_queries = parse_config_bool(key, value);
  else if (key == "use_group_self_attention") m.use_group_self_attention = parse_config_bool(key, value);
  else if (key == "use_decoupled_cross_attention") m.use_decoupled_cross_attention = parse_config_bool(key, value);
  else if (key == "fixed_axis_mode") m.fixed_axis_mode = parse_config_bool(key, value);
  else if (key == "use_encoder_layer") m.use_encoder_layer = parse_config_bool(key, value);
  else return false;
  return true;
}

inline std::vector<std::pair<std::string, std::string>> model_config_items(const ModelConfig& m) {
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  return {
      {"k_points", std::to_string(m.k_points)},
      {"n_queries", std::to_string(m.n_queries)},
      {"dim", std::to_string(m.dim)},
      {"n_layers", std::to_string(m.n_layers)},
      {"n_classes", std::to_string(m.n_classes)},
      {"n_bins", std::to_string(m.n_bins)},
      {"patch", std::to_string(m.patch)},
      {"n_heads", std::to_string(m.attention.n_heads)},
      {"n_sample_points", std::to_string(m.attention.n_sample_points)},
      {"use_point_queries", b(m.use_point_queries)},
      {"use_group_self_attention", b(m.use_group_self_attention)},
      {"use_decoupled_cross_attention", b(m.use_decoupled_cross_attention)},
      {"fixed_axis_mode", b(m.fixed_axis_mode)},
      {"use_encoder_layer", b(m.use_encoder_layer)},
  };
}

inline bool apply_loss_key(LossConfig& l, const std::string& key, const std::string& value) {
  if (key == "lambda1") l.lambda1 = parse_config_double(key, value);
  else if (key == "lambda2") l.lambda2 = parse_config_double(key, value);
  else if (key == "cls_weight") l.cls_weight = parse_config_double(key, value);
  else if (key == "proj_variant") l.variant = parse_config_variant(key, value);
  else if (key == "top_k") l.top_k = parse_config_int(key, value);
  else if (key == "focal_alpha") l.focal_alpha = parse_config_double(key, value);
  else if (key == "focal_gamma") l.focal_gamma = parse_config_double(key, value);
  else if (key == "axis_sigma") l.codec.sigma = parse_config_double(key, value);
  else if (key == "axis_epsilon") l.codec.epsilon = parse_config_double(key, value);
  else return false;
  return true;
}

inline bool apply_optim_key(OptimConfig& o, const std::string& key, const std::string& value) {
  if (key == "learning_rate") o.learning_rate = parse_config_double(key, value);
  else if (key == "weight_decay") o.weight_decay = parse_config_double(key, value);
  else if (key == "beta1") o.beta1 = parse_config_double(key, value);
  else if (key == "beta2") o.beta2 = parse_config_double(key, value);
  else if (key == "adam_epsilon") o.adam_epsilon = parse_config_double(key, value);
  else if (key == "grad_clip") o.grad_clip = parse_config_double(key, value);
  else if (key == "epochs") o.epochs = parse_config_int(key, value);
  else if (key == "lr_decay_factor") o.lr_decay_factor = parse_config_double(key, value);
  else if (key == "lr_decay_at") o.lr_decay_at = parse_config_int_list(key, value);
  else if (key == "enc_score_weight") o.enc_score_weight = parse_config_double(key, value);
  else if (key == "eval_every") o.eval_every = parse_config_int(key, value);
  else return false;
  return true;
}

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

/// Parses a flat `key = value` config ('#' comments, blank lines allowed;
/// later duplicates win). Unknown keys and ill-typed values are errors.
inline RunConfig config_parse(const std::string& text) {
  RunConfig cfg;
  std::istringstream stream(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(stream, raw)) {
    ++line_no;
    std::size_t hash = raw.find('#');
    if (hash != std::string::npos) raw = raw.substr(0, hash);
    std::string line = detail::trim(raw);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError("config: expected 'key = value'", line_no, 1);
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError("config: empty key", line_no, 1);

    if (detail::apply_model_key(cfg.model, key, value)) continue;
    if (detail::apply_loss_key(cfg.loss, key, value)) continue;
    if (detail::apply_optim_key(cfg.optim, key, value)) continue;
    if (key == "seed") {
      cfg.seed = detail::parse_config_u64(key, value);
      continue;
    }
    throw UnknownKey("config: unknown key '" + key + "'");
  }
  cfg.loss.codec.n_bins = cfg.model.n_bins;
  cfg.model.attention.dim = cfg.model.dim;
  cfg.validate();
  return cfg;
}

inline RunConfig config_load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("config: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return config_parse(buf.str());
}

/// Canonical serialization; config_parse(config_save(c)) reproduces c.
inline std::string config_save(const RunConfig& cfg) {
  std::ostringstream out;
  auto emit = [&](const std::string& key, const std::string& value) { out << key << " = " << value << "\n"; };
  auto d = detail::format_config_double;

  out << "# model\n";
  for (const auto& [key, value] : detail::model_config_items(cfg.model)) emit(key, value);
  out << "\n# loss\n";
  emit("lambda1", d(cfg.loss.lambda1));
  emit("lambda2", d(cfg.loss.lambda2));
  emit("cls_weight", d(cfg.loss.cls_weight));
  emit("proj_variant", cfg.loss.variant == ProjectionVariant::kMax          ? "max"
                       : cfg.loss.variant == ProjectionVariant::kWithPenalty ? "with_penalty"
                                                                             : "top_k");
  emit("top_k", std::to_string(cfg.loss.top_k));
  emit("focal_alpha", d(cfg.loss.focal_alpha));
  emit("focal_gamma", d(cfg.loss.focal_gamma));
  emit("axis_sigma", d(cfg.loss.codec.sigma));
  emit("axis_epsilon", d(cfg.loss.codec.epsilon));
  out << "\n# optimizer\n";
  emit("learning_rate", d(cfg.optim.learning_rate));
  emit("weight_decay", d(cfg.optim.weight_decay));
  emit("beta1", d(cfg.optim.beta1));
  emit("beta2", d(cfg.optim.beta2));
  emit("adam_epsilon", d(cfg.optim.adam_epsilon));
  emit("grad_clip", d(cfg.optim.grad_clip));
  emit("epochs", std::to_string(cfg.optim.epochs));
  emit("lr_decay_factor", d(cfg.optim.lr_decay_factor));
  std::string decay;
  for (std::size_t i = 0; i < cfg.optim.lr_decay_at.size(); ++i) {
    if (i) decay += ',';
    decay += std::to_string(cfg.optim.lr_decay_at[i]);
  }
  emit("lr_decay_at", decay.empty() ? "none" : decay);
  emit("enc_score_weight", d(cfg.optim.enc_score_weight));
  emit("eval_every", std::to_string(cfg.optim.eval_every));
  out << "\n# run\n";
  emit("seed", std::to_string(cfg.seed));
  return out.str();
}

}  // namespace paxkit
