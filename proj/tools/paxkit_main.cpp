#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "paxkit/axis_codec.hpp"
#include "paxkit/checkpoint.hpp"
#include "paxkit/config.hpp"
#include "paxkit/dota.hpp"
#include "paxkit/eval.hpp"
#include "paxkit/geometry.hpp"
#include "paxkit/imageio.hpp"
#include "paxkit/losses.hpp"
#include "paxkit/matching.hpp"
#include "paxkit/metrics.hpp"
#include "paxkit/model.hpp"
#include "paxkit/oracle.hpp"
#include "paxkit/rng.hpp"
#include "paxkit/synth.hpp"
#include "paxkit/train.hpp"

namespace {

using namespace paxkit;
namespace fs = std::filesystem;

constexpr const char* kManifestFormat = "paxkit-scenes-v1";

int fail_domain(const std::string& msg) {
  std::cerr << "paxkit: error: " << msg << "\n";
  return 1;
}

int fail_usage(const std::string& msg) {
  std::cerr << "paxkit: error: " << msg << "\n";
  return 2;
}

std::string iso_timestamp() {
  std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw Error("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::uint64_t seed = 7;
  std::string out;
  SyntheticParams params;
  std::string classes_csv = "alpha,beta,gamma";
};

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

int run_synth(SynthArgs& a) {
  a.params.classes = split_csv(a.classes_csv);
  a.params.validate();
  std::vector<SyntheticScene> scenes = generate_synthetic(a.seed, a.params);
  fs::create_directories(a.out);

  std::vector<std::string> ids = scene_ids(scenes.size());
  nlohmann::json manifest;
  manifest["format"] = kManifestFormat;
  manifest["seed"] = a.seed;
  manifest["created"] = iso_timestamp();
  manifest["params"] = {
      {"n_images", a.params.n_images},   {"height", a.params.height},
      {"width", a.params.width},         {"max_objects", a.params.max_objects},
      {"min_size", a.params.min_size},   {"max_size", a.params.max_size},
      {"min_aspect", a.params.min_aspect}, {"max_aspect", a.params.max_aspect},
      {"classes", a.params.classes},
  };
  nlohmann::json scene_list = nlohmann::json::array();
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    std::string image_name = ids[i] + ".img";
    std::string ann_name = ids[i] + ".txt";
    write_image(scenes[i].image, (fs::path(a.out) / image_name).string());
    DotaFile df;
    df.annotations = scenes[i].annotations;
    write_text_file((fs::path(a.out) / ann_name).string(), serialize_dota(df));
    scene_list.push_back({{"id", ids[i]}, {"image", image_name}, {"annotations", ann_name}});
  }
  manifest["scenes"] = scene_list;
  write_text_file((fs::path(a.out) / "manifest.json").string(), manifest.dump(2) + "\n");
  std::cout << "wrote " << scenes.size() << " scenes to " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// dataset loading

struct Dataset {
  std::vector<Image> images;
  std::vector<std::vector<Annotation>> annotations;
  std::vector<std::string> ids;
  std::vector<std::string> classes;
};

Dataset load_dataset(const std::string& dir) {
  std::string manifest_path = (fs::path(dir) / "manifest.json").string();
  nlohmann::json manifest = nlohmann::json::parse(read_text_file(manifest_path), nullptr, false);
  if (manifest.is_discarded()) throw Error("dataset: invalid JSON in '" + manifest_path + "'");
  if (manifest.value("format", "") != kManifestFormat)
    throw Error("dataset: unsupported manifest format in '" + manifest_path + "'");

  Dataset ds;
  for (const nlohmann::json& entry : manifest.at("scenes")) {
    ds.ids.push_back(entry.at("id").get<std::string>());
    ds.images.push_back(read_image_file((fs::path(dir) / entry.at("image").get<std::string>()).string()));
    DotaFile df = parse_dota(read_text_file((fs::path(dir) / entry.at("annotations").get<std::string>()).string()));
    ds.annotations.push_back(df.annotations);
  }
  if (manifest.contains("params") && manifest["params"].contains("classes")) {
    std::set<std::string> unique;
    for (const nlohmann::json& c : manifest["params"]["classes"]) unique.insert(c.get<std::string>());
    ds.classes.assign(unique.begin(), unique.end());
  }
  if (ds.classes.empty()) ds.classes = collect_categories(ds.annotations);
  return ds;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  int threads = 1;
  bool timing = false;
};

int run_train(const TrainArgs& a) {
  RunConfig cfg = config_load(a.config);
  if (const char* env = std::getenv("PAXKIT_SEED")) {
    char* end = nullptr;
    unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0') return fail_usage("PAXKIT_SEED must be a non-negative integer, got '" + std::string(env) + "'");
    cfg.seed = v;
  }
  Dataset ds = load_dataset(a.data);
  if (static_cast<int>(ds.classes.size()) != cfg.model.n_classes)
    throw InvalidConfig("train: config expects " + std::to_string(cfg.model.n_classes) + " classes, dataset has " +
                        std::to_string(ds.classes.size()));
  std::vector<TrainScene> scenes;
  for (std::size_t i = 0; i < ds.images.size(); ++i)
    scenes.push_back(make_train_scene(ds.images[i], ds.annotations[i], ds.classes, cfg.loss.codec));

  Trainer trainer = Trainer::init(cfg);
  std::vector<MetricsRecord> metrics = train_run(trainer, scenes, ds.ids, ds.classes, a.threads);
  if (!a.timing)
    for (MetricsRecord& r : metrics) r.wall_ms = -1.0;

  fs::create_directories(a.out);
  metrics_write(metrics, (fs::path(a.out) / "metrics.jsonl").string());
  save_checkpoint(trainer.model, (fs::path(a.out) / "model.ckpt").string());

  const MetricsRecord& last = metrics.back();
  char line[160];
  std::snprintf(line, sizeof(line), "trained %d epochs on %zu scenes: loss %.6f, train mAP50 %.6f, mAP75 %.6f\n",
                last.epoch, scenes.size(), last.loss_total, last.map50, last.map75);
  std::cout << line << "wrote " << (fs::path(a.out) / "metrics.jsonl").string() << " and "
            << (fs::path(a.out) / "model.ckpt").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  double iou = 0.5;
  std::string protocol = "voc12";
  int threads = 1;
  bool gt_as_detections = false;
};

int run_eval(const EvalArgs& a) {
  ApProtocol protocol = protocol_from_string(a.protocol);
  if (!(a.iou > 0.0 && a.iou < 1.0)) return fail_usage("--iou must be in (0, 1), got " + std::to_string(a.iou));
  Dataset ds = load_dataset(a.data);

  std::vector<GroundTruthRecord> gts;
  for (std::size_t i = 0; i < ds.annotations.size(); ++i)
    for (const Annotation& ann : ds.annotations[i]) gts.push_back({ds.ids[i], ann.category, ann.quad, ann.difficult != 0});

  std::vector<DetectionRecord> dets;
  ApResult result;
  if (a.gt_as_detections) {
    for (const GroundTruthRecord& gt : gts) dets.push_back({gt.image_id, gt.category, 1.0, gt.quad});
    result = average_precision(dets, gts, a.iou, protocol);
  } else {
    Model model = load_checkpoint_file(a.checkpoint);
    AxisCodecConfig codec;
    codec.n_bins = model.cfg.n_bins;
    std::vector<TrainScene> scenes;
    for (std::size_t i = 0; i < ds.images.size(); ++i)
      scenes.push_back(make_train_scene(ds.images[i], ds.annotations[i], ds.classes, codec));
    result = evaluate_model(model, scenes, ds.ids, ds.classes, codec, a.iou, protocol, a.threads, &dets);
  }

  std::string map_key = "mAP" + std::to_string(static_cast<int>(std::lround(a.iou * 100.0)));
  std::ostringstream table;
  char line[128];
  std::snprintf(line, sizeof(line), "protocol %s  iou %.2f\n", a.protocol.c_str(), a.iou);
  table << line;
  for (const auto& [cls, ap] : result.per_class_ap) {
    std::snprintf(line, sizeof(line), "class %-16s ap %.6f\n", cls.c_str(), ap);
    table << line;
  }
  std::snprintf(line, sizeof(line), "%s %.6f\n", map_key.c_str(), result.map);
  table << line;

  nlohmann::json report;
  report["protocol"] = a.protocol;
  report["iou"] = a.iou;
  report[map_key] = result.map;
  report["per_class"] = nlohmann::json::object();
  for (const auto& [cls, ap] : result.per_class_ap) report["per_class"][cls] = ap;

  fs::create_directories(a.out);
  write_text_file((fs::path(a.out) / "detections.txt").string(), write_detections(dets));
  write_text_file((fs::path(a.out) / "ap.txt").string(), table.str());
  write_text_file((fs::path(a.out) / "ap.json").string(), report.dump(2) + "\n");
  std::cout << table.str();
  return 0;
}

// ---------------------------------------------------------------------------
// verify

struct VerifyState {
  std::vector<std::string> failures;

  void report(const std::string& name, bool ok, const std::string& detail) {
    std::cout << "verify " << name << ": " << (ok ? "ok" : "FAIL") << "  " << detail << "\n";
    if (!ok) failures.push_back(name);
  }
};

PointAxisTarget random_target(Rng& rng, const AxisCodecConfig& codec) {
  OrientedBox box;
  box.cx = rng.uniform(0.3, 0.7);
  box.cy = rng.uniform(0.3, 0.7);
  box.w = rng.uniform(0.15, 0.4);
  box.h = rng.uniform(0.1, 0.35);
  box.theta = rng.uniform(0.0, kPi);
  return quad_to_point_axis_target(obb_to_quad(box), codec);
}

void verify_grad(VerifyState& state, bool inject_defect) {
  AxisCodecConfig codec;
  codec.sigma = 6.0;

  const struct {
    const char* name;
    ProjectionVariant variant;
  } variants[] = {{"grad.proj_max", ProjectionVariant::kMax},
                  {"grad.proj_penalty", ProjectionVariant::kWithPenalty},
                  {"grad.proj_topk", ProjectionVariant::kTopK}};
  for (const auto& v : variants) {
    double worst = 0.0;
    for (int trial = 0; trial < 30; ++trial) {
      Rng rng = Rng::derive(1001, static_cast<std::uint64_t>(trial));
      PointAxisTarget target = random_target(rng, codec);
      int k = 5 + trial % 6;
      std::vector<double> x0(static_cast<std::size_t>(2 * k));
      for (double& c : x0) c = rng.uniform(0.0, 1.0);
      auto to_points = [&](std::span<const double> x) {
        std::vector<Vec2> pts(static_cast<std::size_t>(k));
        for (int i = 0; i < k; ++i) pts[static_cast<std::size_t>(i)] = {x[2 * i], x[2 * i + 1]};
        return pts;
      };
      LossOutput out = max_projection_variant(to_points(x0), target, v.variant, 2);
      std::vector<double> analytic;
      for (const Vec2& g : out.point_grads) {
        analytic.push_back(g.x);
        analytic.push_back(g.y);
      }
      if (inject_defect && trial == 0 && v.variant == ProjectionVariant::kMax) analytic[0] = -analytic[0];
      auto f = [&](std::span<const double> x) { return max_projection_variant(to_points(x), target, v.variant, 2).value; };
      oracle::FdReport rep = oracle::fd_check(f, x0, analytic, 1e-6);
      worst = std::max(worst, rep.max_rel);
    }
    char detail[96];
    std::snprintf(detail, sizeof(detail), "max relative gradient error %.3g (tolerance 1e-4)", worst);
    state.report(v.name, worst <= 1e-4, detail);
  }

  {
    double worst = 0.0;
    AxisCodecConfig small = codec;
    small.n_bins = 16;
    small.sigma = 1.5;
    for (int trial = 0; trial < 30; ++trial) {
      Rng rng = Rng::derive(2002, static_cast<std::uint64_t>(trial));
      AxisEncoding target = encode_axis(rng.uniform(0.0, 2.0 * kPi), small);
      std::vector<double> x0(static_cast<std::size_t>(small.n_bins));
      for (double& v : x0) v = rng.uniform(-3.0, 3.0);
      LossOutput out = cross_axis_loss(x0, target, small.epsilon);
      auto f = [&](std::span<const double> x) { return cross_axis_loss(x, target, small.epsilon).value; };
      oracle::FdReport rep = oracle::fd_check(f, x0, out.axis_logit_grads, 1e-6);
      worst = std::max(worst, rep.max_rel);
    }
    char detail[96];
    std::snprintf(detail, sizeof(detail), "max relative gradient error %.3g (tolerance 1e-4)", worst);
    state.report("grad.cross_axis", worst <= 1e-4, detail);
  }

  {
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      Rng rng = Rng::derive(3003, static_cast<std::uint64_t>(trial));
      int n_query = 3, n_class = 3;
      std::vector<double> x0(static_cast<std::size_t>(n_query * n_class));
      for (double& v : x0) v = rng.uniform(-2.0, 2.0);
      std::vector<int> targets(static_cast<std::size_t>(n_query));
      for (int& t : targets) t = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n_class + 1))) - 1;
      auto to_rows = [&](std::span<const double> x) {
        std::vector<std::vector<double>> rows(static_cast<std::size_t>(n_query));
        for (int q = 0; q < n_query; ++q)
          rows[static_cast<std::size_t>(q)].assign(x.begin() + q * n_class, x.begin() + (q + 1) * n_class);
        return rows;
      };
      LossOutput out = classification_loss(to_rows(x0), targets);
      auto f = [&](std::span<const double> x) { return classification_loss(to_rows(x), targets).value; };
      oracle::FdReport rep = oracle::fd_check(f, x0, out.class_logit_grads, 1e-6);
      worst = std::max(worst, rep.max_rel);
    }
    char detail[96];
    std::snprintf(detail, sizeof(detail), "max relative gradient error %.3g (tolerance 1e-4)", worst);
    state.report("grad.classification", worst <= 1e-4, detail);
  }

  {
    RunConfig cfg;
    cfg.model.k_points = 5;
    cfg.model.n_queries = 2;
    cfg.model.dim = 8;
    cfg.model.n_layers = 1;
    cfg.model.n_classes = 2;
    cfg.model.n_bins = 8;
    cfg.model.patch = 2;
    cfg.model.attention.dim = 8;
    cfg.model.attention.n_heads = 2;
    cfg.model.attention.n_sample_points = 2;
    cfg.loss.codec.n_bins = 8;
    cfg.loss.codec.sigma = 1.0;
    cfg.optim.grad_clip = 0.0;
    cfg.seed = 17;
    Trainer trainer = Trainer::init(cfg);
    // Zero-initialized conversion heads put all boundary points on a tied
    // argmax of the projection loss; perturbing moves to a generic point.
    Rng noise(321);
    for (const Tensor& p : trainer.params)
      for (double& v : p->data) v += noise.uniform(-0.02, 0.02);

    SyntheticParams sp;
    sp.n_images = 1;
    sp.height = 16;
    sp.width = 16;
    sp.max_objects = 2;
    sp.min_size = 5.0;
    sp.max_size = 8.0;
    sp.classes = {"alpha", "beta"};
    std::vector<SyntheticScene> raw = generate_synthetic(21, sp);
    TrainScene scene = make_train_scene(raw[0].image, raw[0].annotations, {"alpha", "beta"}, cfg.loss.codec);

    trainer.train_step(scene, 0.0);
    std::vector<double> x0, analytic;
    for (const Tensor& p : trainer.params) {
      x0.insert(x0.end(), p->data.begin(), p->data.end());
      analytic.insert(analytic.end(), p->grad.begin(), p->grad.end());
    }
    auto f = [&](std::span<const double> x) {
      std::size_t off = 0;
      for (const Tensor& p : trainer.params) {
        std::copy(x.begin() + static_cast<std::ptrdiff_t>(off),
                  x.begin() + static_cast<std::ptrdiff_t>(off + p->data.size()), p->data.begin());
        off += p->data.size();
      }
      return trainer.eval_loss(scene).total;
    };
    oracle::FdReport rep = oracle::fd_check(f, x0, analytic, 1e-5);
    f(x0);
    char detail[112];
    std::snprintf(detail, sizeof(detail), "end-to-end max relative gradient error %.3g over %zu parameters (tolerance 1e-3)",
                  rep.max_rel, x0.size());
    state.report("grad.end_to_end", rep.max_rel <= 1e-3, detail);
  }
}

void verify_geom(VerifyState& state) {
  {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      Rng rng = Rng::derive(4004, static_cast<std::uint64_t>(trial));
      auto random_box = [&]() {
        OrientedBox b;
        b.cx = rng.uniform(0.2, 0.8);
        b.cy = rng.uniform(0.2, 0.8);
        b.w = rng.uniform(0.1, 0.5);
        b.h = rng.uniform(0.1, 0.5);
        b.theta = rng.uniform(0.0, kPi);
        return b;
      };
      OrientedBox a = random_box(), b = random_box();
      double exact = rotated_iou(a, b);
      oracle::McIou mc = oracle::mc_iou(a, b, 1000000, rng);
      worst = std::max(worst, std::abs(exact - mc.iou));
    }
    char detail[96];
    std::snprintf(detail, sizeof(detail), "max |IoU - MC(1e6)| %.3g over 100 pairs (tolerance 1e-3)", worst);
    state.report("geom.iou_monte_carlo", worst <= 1e-3, detail);
  }

  {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      Rng rng = Rng::derive(5005, static_cast<std::uint64_t>(trial));
      int n = 3 + static_cast<int>(rng.uniform_index(18));
      std::vector<Vec2> pts(static_cast<std::size_t>(n));
      for (Vec2& p : pts) p = {rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)};
      OrientedBox rect = min_area_rect(pts);
      double brute = oracle::min_rect_area_pairs(pts);
      double rel = std::abs(rect.w * rect.h - brute) / std::max(1e-12, brute);
      worst = std::max(worst, rel);
    }
    char detail[96];
    std::snprintf(detail, sizeof(detail), "max relative area error %.3g over 100 point sets (tolerance 1e-9)", worst);
    state.report("geom.min_rect_bruteforce", worst <= 1e-9, detail);
  }
}

void verify_codec(VerifyState& state) {
  AxisCodecConfig codec;
  {
    double worst = 0.0;
    double half_bin = 0.5 * 360.0 / codec.n_bins;
    for (int i = 0; i < 720; ++i) {
      double theta_deg = 0.25 * i;
      double theta = theta_deg * kPi / 180.0;
      DecodedAxis dec = decode_axis(encode_axis(theta, codec));
      double got = dec.principal_theta * 180.0 / kPi;
      double want = std::fmod(theta_deg, 90.0);
      double diff = std::abs(got - want);
      diff = std::min(diff, 90.0 - diff);
      worst = std::max(worst, diff);
    }
    char detail[96];
    std::snprintf(detail, sizeof(detail), "max roundtrip error %.9f deg over 0.25 deg sweep (tolerance %.2f)", worst, half_bin);
    state.report("codec.roundtrip", worst <= half_bin + 1e-9, detail);
  }

  {
    int mismatches = 0;
    for (int b = 0; b < codec.n_bins; ++b) {
      double theta = 2.0 * kPi * b / codec.n_bins;
      if (encode_axis(theta, codec).values != encode_axis(theta + kPi / 2.0, codec).values) ++mismatches;
    }
    char detail[96];
    std::snprintf(detail, sizeof(detail), "%d of %d bin-center encodings differ under a 90 deg shift", mismatches, codec.n_bins);
    state.report("codec.quarter_turn_exact", mismatches == 0, detail);
  }

  {
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      Rng rng = Rng::derive(6006, static_cast<std::uint64_t>(trial));
      std::vector<double> logits(static_cast<std::size_t>(codec.n_bins));
      for (double& v : logits) v = rng.uniform(-3.0, 3.0);
      double lo = cross_axis_loss(logits, encode_axis(1e-9, codec), codec.epsilon).value;
      double hi = cross_axis_loss(logits, encode_axis(2.0 * kPi - 1e-9, codec), codec.epsilon).value;
      worst = std::max(worst, std::abs(lo - hi));
    }
    char detail[96];
    std::snprintf(detail, sizeof(detail), "max loss jump across the 0/2pi seam %.3g (tolerance 1e-6)", worst);
    state.report("codec.seam_continuity", worst <= 1e-6, detail);
  }
}

void verify_match(VerifyState& state) {
  {
    double worst = 0.0;
    for (int trial = 0; trial < 300; ++trial) {
      Rng rng = Rng::derive(7007, static_cast<std::uint64_t>(trial));
      int rows = 1 + static_cast<int>(rng.uniform_index(7));
      int cols = 1 + static_cast<int>(rng.uniform_index(7));
      std::vector<std::vector<double>> costs(static_cast<std::size_t>(rows), std::vector<double>(static_cast<std::size_t>(cols)));
      for (auto& row : costs)
        for (double& v : row) v = rng.uniform(0.0, 10.0);
      double total = 0.0;
      for (auto [r, c] : hungarian(costs)) total += costs[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
      std::vector<std::vector<double>> brute_costs = costs;
      if (rows > cols) {
        brute_costs.assign(static_cast<std::size_t>(cols), std::vector<double>(static_cast<std::size_t>(rows)));
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < cols; ++c) brute_costs[static_cast<std::size_t>(c)][static_cast<std::size_t>(r)] = costs[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
      }
      double best = 0.0;
      oracle::assignment_bruteforce(brute_costs, &best);
      worst = std::max(worst, std::abs(total - best));
    }
    char detail[96];
    std::snprintf(detail, sizeof(detail), "max |hungarian - bruteforce| %.3g over 300 matrices (tolerance 1e-9)", worst);
    state.report("match.hungarian_bruteforce", worst <= 1e-9, detail);
  }

  {
    Quad ga = obb_to_quad({10.0, 10.0, 8.0, 4.0, 0.0});
    Quad gb = obb_to_quad({30.0, 30.0, 8.0, 4.0, 0.0});
    Quad far = obb_to_quad({50.0, 50.0, 8.0, 4.0, 0.0});
    std::vector<GroundTruthRecord> gts = {{"img", "c", ga, false}, {"img", "c", gb, false}};
    std::vector<DetectionRecord> dets = {{"img", "c", 0.9, ga}, {"img", "c", 0.8, far}, {"img", "c", 0.7, gb}};
    double voc12 = average_precision(dets, gts, 0.5, ApProtocol::kVoc12).map;
    double voc07 = average_precision(dets, gts, 0.5, ApProtocol::kVoc07).map;
    double coco = average_precision(dets, gts, 0.5, ApProtocol::kCoco101).map;
    double err = std::max({std::abs(voc12 - 5.0 / 6.0), std::abs(voc07 - 28.0 / 33.0), std::abs(coco - 253.0 / 303.0)});
    char detail[96];
    std::snprintf(detail, sizeof(detail), "max AP fixture error %.3g (tolerance 1e-12)", err);
    state.report("match.ap_fixture", err <= 1e-12, detail);
  }
}

struct VerifyArgs {
  std::string suite = "all";
  bool inject_grad_defect = false;
};

int run_verify(const VerifyArgs& a) {
  VerifyState state;
  bool all = a.suite == "all";
  if (all || a.suite == "grad") verify_grad(state, a.inject_grad_defect);
  if (all || a.suite == "geom") verify_geom(state);
  if (all || a.suite == "codec") verify_codec(state);
  if (all || a.suite == "match") verify_match(state);
  if (!state.failures.empty()) {
    std::string names;
    for (const std::string& f : state.failures) names += (names.empty() ? "" : ", ") + f;
    return fail_domain(std::to_string(state.failures.size()) + " verification properties failed: " + names);
  }
  std::cout << "all verification properties passed\n";
  return 0;
}

// ---------------------------------------------------------------------------
// axis-demo

struct AxisDemoArgs {
  double theta_deg = 0.0;
  int n_bins = 360;
  double sigma = 6.0;
  std::string csv;
};

int run_axis_demo(const AxisDemoArgs& a) {
  if (a.n_bins <= 0 || a.n_bins % 4 != 0) return fail_usage("--n-bins must be positive and divisible by 4, got " + std::to_string(a.n_bins));
  if (a.sigma < 0.0) return fail_usage("--sigma must be non-negative");
  AxisCodecConfig codec;
  codec.n_bins = a.n_bins;
  codec.sigma = a.sigma;
  AxisEncoding enc = encode_axis(a.theta_deg * kPi / 180.0, codec);
  DecodedAxis dec = decode_axis(enc);

  char line[128];
  std::snprintf(line, sizeof(line), "theta_deg=%.17g n_bins=%d sigma=%.17g\n", a.theta_deg, a.n_bins, a.sigma);
  std::cout << line << "encoding:";
  for (double v : enc.values) {
    std::snprintf(line, sizeof(line), " %.17g", v);
    std::cout << line;
  }
  std::snprintf(line, sizeof(line), "\nprincipal_bin=%d decoded_theta_deg=%.17g\n", dec.principal_bin,
                dec.principal_theta * 180.0 / kPi);
  std::cout << line;

  if (!a.csv.empty()) {
    std::ostringstream rows;
    for (int b = 0; b < a.n_bins; ++b) {
      std::snprintf(line, sizeof(line), "%d,%.17g,%.17g\n", b, 360.0 * b / a.n_bins, enc.values[static_cast<std::size_t>(b)]);
      rows << line;
    }
    write_text_file(a.csv, rows.str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"point-axis oriented object detection toolkit"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  CLI::App* synth = app.add_subcommand("synth", "generate synthetic oriented scenes");
  synth->add_option("--seed", synth_args.seed, "generator seed");
  synth->add_option("--out", synth_args.out, "output directory")->required();
  synth->add_option("--n-images", synth_args.params.n_images, "number of scenes");
  synth->add_option("--height", synth_args.params.height, "scene height in pixels");
  synth->add_option("--width", synth_args.params.width, "scene width in pixels");
  synth->add_option("--max-objects", synth_args.params.max_objects, "max objects per scene");
  synth->add_option("--min-size", synth_args.params.min_size, "min long side in pixels");
  synth->add_option("--max-size", synth_args.params.max_size, "max long side in pixels");
  synth->add_option("--min-aspect", synth_args.params.min_aspect, "min aspect ratio");
  synth->add_option("--max-aspect", synth_args.params.max_aspect, "max aspect ratio");
  synth->add_option("--classes", synth_args.classes_csv, "comma-separated class names");

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "train the point-axis detector");
  train->add_option("--config", train_args.config, "run configuration file")->required();
  train->add_option("--data", train_args.data, "scene directory from synth")->required();
  train->add_option("--out", train_args.out, "output directory")->required();
  train->add_option("--threads", train_args.threads, "evaluation worker threads");
  train->add_flag("--timing", train_args.timing, "include wall_ms in metrics (breaks byte-identical reruns)");

  EvalArgs eval_args;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint with rotated-box mAP");
  eval->add_option("--checkpoint", eval_args.checkpoint, "model checkpoint")->required();
  eval->add_option("--data", eval_args.data, "scene directory from synth")->required();
  eval->add_option("--out", eval_args.out, "output directory")->required();
  eval->add_option("--iou", eval_args.iou, "IoU threshold");
  eval->add_option("--protocol", eval_args.protocol, "AP protocol: voc07, voc12, coco101");
  eval->add_option("--threads", eval_args.threads, "inference worker threads");
  eval->add_flag("--gt-as-detections", eval_args.gt_as_detections, "score ground truth against itself (sanity mode)");

  VerifyArgs verify_args;
  CLI::App* verify = app.add_subcommand("verify", "run the oracle verification suites");
  verify->add_option("--suite", verify_args.suite, "grad, geom, codec, match, or all")
      ->check(CLI::IsMember({"grad", "geom", "codec", "match", "all"}));
  verify->add_flag("--inject-grad-defect", verify_args.inject_grad_defect,
                   "flip one analytic gradient sign; the grad suite must then fail");

  AxisDemoArgs axis_args;
  CLI::App* axis_demo = app.add_subcommand("axis-demo", "print the four-peak axis encoding for an angle");
  axis_demo->add_option("--theta", axis_args.theta_deg, "axis angle in degrees");
  axis_demo->add_option("--n-bins", axis_args.n_bins, "direction bins");
  axis_demo->add_option("--sigma", axis_args.sigma, "Gaussian width in bins");
  axis_demo->add_option("--csv", axis_args.csv, "write bin,angle_deg,value rows to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "paxkit: error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (synth->parsed()) return run_synth(synth_args);
    if (train->parsed()) return run_train(train_args);
    if (eval->parsed()) return run_eval(eval_args);
    if (verify->parsed()) return run_verify(verify_args);
    if (axis_demo->parsed()) return run_axis_demo(axis_args);
  } catch (const Error& e) {
    return fail_domain(e.what());
  } catch (const std::exception& e) {
    return fail_domain(e.what());
  }
  return fail_usage("no subcommand given");
}
