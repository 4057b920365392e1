#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <sstream>
#include <string>
#include <vector>

#include "paxkit/axis_codec.hpp"
#include "paxkit/checkpoint.hpp"
#include "paxkit/config.hpp"
#include "paxkit/dota.hpp"
#include "paxkit/metrics.hpp"
#include "paxkit/synth.hpp"

using namespace paxkit;

namespace {

bool run_configs_equal(const RunConfig& a, const RunConfig& b) {
  return config_save(a) == config_save(b) && a.seed == b.seed;
}

ModelConfig micro_model_config() {
  ModelConfig cfg;
  cfg.k_points = 5;
  cfg.n_queries = 2;
  cfg.dim = 8;
  cfg.n_layers = 1;
  cfg.n_classes = 2;
  cfg.n_bins = 8;
  cfg.patch = 2;
  cfg.attention.dim = 8;
  cfg.attention.n_heads = 2;
  cfg.attention.n_sample_points = 2;
  return cfg;
}

}  // namespace

TEST_CASE("dota parser handles headers and a single instance") {
  DotaFile f = parse_dota("imagesource:GoogleEarth\ngsd:0.1\n0 0 2 0 2 2 0 2 plane 0\n");
  CHECK(f.image_source == "GoogleEarth");
  CHECK(f.gsd == "0.1");
  REQUIRE(f.annotations.size() == 1);
  const Annotation& a = f.annotations[0];
  CHECK(a.category == "plane");
  CHECK(a.difficult == 0);
  CHECK(a.quad.corners[0].x == 0.0);
  CHECK(a.quad.corners[1].x == 2.0);
  CHECK(a.quad.corners[2].y == 2.0);
  CHECK(a.quad.corners[3].x == 0.0);
}

TEST_CASE("dota parser accepts empty and blank input") {
  CHECK(parse_dota("").annotations.empty());
  CHECK(parse_dota("\n\n  \n").annotations.empty());
  DotaFile f = parse_dota("1 1 3 1 3 2 1 2 ship 1\n");
  CHECK(f.image_source.empty());
  REQUIRE(f.annotations.size() == 1);
  CHECK(f.annotations[0].difficult == 1);
}

TEST_CASE("dota parse errors carry line and column") {
  SECTION("nine coordinate tokens") {
    try {
      parse_dota("0 0 2 0 2 2 0 2 9 plane 0\n");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line == 1);
      CHECK(e.column == 25);
    }
  }
  SECTION("too few tokens, after header lines") {
    try {
      parse_dota("imagesource:x\ngsd:1\n0 0 2 0 plane 0\n");
      FAIL("expected TooFewTokens");
    } catch (const TooFewTokens& e) {
      CHECK(e.line == 3);
    }
  }
  SECTION("non-numeric coordinate") {
    try {
      parse_dota("0 0 2 Q 2 2 0 2 plane 0\n");
      FAIL("expected NonNumericCoordinate");
    } catch (const NonNumericCoordinate& e) {
      CHECK(e.line == 1);
      CHECK(e.column == 7);
    }
  }
  SECTION("difficulty must be 0 or 1") {
    CHECK_THROWS_AS(parse_dota("0 0 2 0 2 2 0 2 plane 3\n"), ParseError);
    CHECK_THROWS_AS(parse_dota("0 0 2 0 2 2 0 2 plane x\n"), ParseError);
  }
}

TEST_CASE("dota serializer is a byte fixpoint on integer-grid files") {
  std::string golden =
      "imagesource:GoogleEarth\n"
      "gsd:0.12\n"
      "2753 2408 2861 2385 2888 2468 2805 2502 plane 0\n"
      "496 651 432 735 474 814 573 730 small-vehicle 1\n"
      "0 0 2 0 2 2 0 2 plane 0\n";
  DotaFile f = parse_dota(golden);
  CHECK(serialize_dota(f) == golden);

  // Fractional coordinates stabilize after one serialization.
  DotaFile g = parse_dota("0.125 0.5 2.375 0.5 2.375 2.25 0.125 2.25 ship 0\n");
  std::string once = serialize_dota(g);
  DotaFile h = parse_dota(once);
  CHECK(serialize_dota(h) == once);
  for (int c = 0; c < 4; ++c) {
    CHECK(h.annotations[0].quad.corners[static_cast<std::size_t>(c)].x == g.annotations[0].quad.corners[static_cast<std::size_t>(c)].x);
    CHECK(h.annotations[0].quad.corners[static_cast<std::size_t>(c)].y == g.annotations[0].quad.corners[static_cast<std::size_t>(c)].y);
  }
}

TEST_CASE("synthetic generation is reproducible and n_images-stable") {
  SyntheticParams params;
  params.n_images = 3;
  std::vector<SyntheticScene> a = generate_synthetic(5, params);
  std::vector<SyntheticScene> b = generate_synthetic(5, params);
  REQUIRE(a.size() == 3);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image.data == b[i].image.data);
    REQUIRE(a[i].annotations.size() == b[i].annotations.size());
    for (std::size_t j = 0; j < a[i].annotations.size(); ++j) {
      CHECK(a[i].annotations[j].category == b[i].annotations[j].category);
      for (int c = 0; c < 4; ++c) {
        CHECK(a[i].annotations[j].quad.corners[static_cast<std::size_t>(c)].x == b[i].annotations[j].quad.corners[static_cast<std::size_t>(c)].x);
        CHECK(a[i].annotations[j].quad.corners[static_cast<std::size_t>(c)].y == b[i].annotations[j].quad.corners[static_cast<std::size_t>(c)].y);
      }
    }
  }

  SyntheticParams more = params;
  more.n_images = 7;
  std::vector<SyntheticScene> c = generate_synthetic(5, more);
  CHECK(c[0].image.data == a[0].image.data);
  CHECK(c[2].image.data == a[2].image.data);
}

TEST_CASE("synthetic scenes respect count bounds and max_objects=1") {
  SyntheticParams params;
  params.n_images = 10;
  params.max_objects = 1;
  for (const SyntheticScene& s : generate_synthetic(11, params)) CHECK(s.annotations.size() == 1);
}

TEST_CASE("synthetic scenes keep objects separated, in bounds, and target-convertible") {
  SyntheticParams params;
  params.n_images = 100;
  AxisCodecConfig codec;
  codec.n_bins = 16;
  int total = 0;
  for (const SyntheticScene& s : generate_synthetic(123, params)) {
    REQUIRE(s.annotations.size() >= 1);
    REQUIRE(s.annotations.size() <= static_cast<std::size_t>(params.max_objects));
    total += static_cast<int>(s.annotations.size());
    for (std::size_t i = 0; i < s.annotations.size(); ++i) {
      for (const Vec2& c : s.annotations[i].quad.corners) {
        CHECK(c.x >= 0.0);
        CHECK(c.x <= params.width);
        CHECK(c.y >= 0.0);
        CHECK(c.y <= params.height);
      }
      PointAxisTarget t = quad_to_point_axis_target(s.annotations[i].quad, codec);
      CHECK(static_cast<int>(t.axis.values.size()) == codec.n_bins);
      for (int j = 0; j < 4; ++j) CHECK(norm(t.radials[static_cast<std::size_t>(j)]) > 0.0);
      for (std::size_t j = i + 1; j < s.annotations.size(); ++j)
        CHECK(rotated_iou(s.annotations[i].quad, s.annotations[j].quad) < 0.3);
    }
    for (double v : s.image.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  CHECK(total > 100);  // counts are uniform in [1,3], so 100 scenes exceed 100 objects
}

TEST_CASE("overdense synthetic params fail placement") {
  SyntheticParams params;
  params.n_images = 1;
  params.height = 32;
  params.width = 32;
  params.max_objects = 40;
  params.min_size = 20.0;
  params.max_size = 22.0;
  bool threw = false;
  for (std::uint64_t seed = 0; seed < 8 && !threw; ++seed) {
    try {
      generate_synthetic(seed, params);
    } catch (const PlacementFailure&) {
      threw = true;
    }
  }
  CHECK(threw);
}

TEST_CASE("synthetic params are validated") {
  SyntheticParams params;
  params.max_objects = 0;
  CHECK_THROWS_AS(generate_synthetic(1, params), InvalidConfig);
  params = SyntheticParams{};
  params.classes.clear();
  CHECK_THROWS_AS(generate_synthetic(1, params), InvalidConfig);
  params = SyntheticParams{};
  params.min_aspect = 0.5;
  CHECK_THROWS_AS(generate_synthetic(1, params), InvalidConfig);
}

TEST_CASE("config round-trips through its own serialization") {
  RunConfig defaults;
  RunConfig parsed = config_parse(config_save(defaults));
  CHECK(run_configs_equal(parsed, defaults));

  RunConfig tweaked;
  tweaked.model.k_points = 9;
  tweaked.model.n_bins = 24;
  tweaked.loss.codec.n_bins = 24;
  tweaked.loss.variant = ProjectionVariant::kTopK;
  tweaked.loss.top_k = 3;
  tweaked.optim.lr_decay_at = {};
  tweaked.seed = 7;
  CHECK(run_configs_equal(config_parse(config_save(tweaked)), tweaked));
}

TEST_CASE("shipped default config parses to the documented defaults") {
  RunConfig fromFile = config_load(std::string(PAXKIT_SOURCE_DIR) + "/configs/default.cfg");
  CHECK(run_configs_equal(fromFile, RunConfig{}));
}

TEST_CASE("config errors name the offender") {
  CHECK_THROWS_WITH(config_parse("lamda1 = 5\n"), Catch::Matchers::ContainsSubstring("lamda1"));
  CHECK_THROWS_AS(config_parse("lamda1 = 5\n"), UnknownKey);
  CHECK_THROWS_WITH(config_parse("dim = banana\n"), Catch::Matchers::ContainsSubstring("dim"));
  CHECK_THROWS_AS(config_parse("dim = banana\n"), ConfigTypeError);
  CHECK_THROWS_AS(config_parse("use_point_queries = maybe\n"), ConfigTypeError);
  CHECK_THROWS_AS(config_parse("epochs = 1.5\n"), ConfigTypeError);
  CHECK_THROWS_AS(config_parse("proj_variant = median\n"), ConfigTypeError);
  CHECK_THROWS_AS(config_parse("seed = -3\n"), ConfigTypeError);
  CHECK_THROWS_AS(config_parse("k_points\n"), ParseError);
  CHECK_THROWS_AS(config_parse("n_bins = 10\n"), InvalidConfig);
}

TEST_CASE("config n_bins reaches the axis codec") {
  RunConfig cfg = config_parse("n_bins = 16\naxis_sigma = 0\n");
  CHECK(cfg.loss.codec.n_bins == 16);
  CHECK(cfg.loss.codec.sigma == 0.0);
  CHECK(encode_axis(0.3, cfg.loss.codec).values.size() == 16);
  CHECK(RunConfig{}.loss.codec.n_bins == 360);
  CHECK(encode_axis(0.3, RunConfig{}.loss.codec).values.size() == 360);
}

TEST_CASE("config tolerates comments, spacing, and later-duplicate keys") {
  RunConfig cfg = config_parse("# leading comment\n  k_points = 7  # trailing\n\nk_points = 9\n");
  CHECK(cfg.model.k_points == 9);
}

TEST_CASE("metrics lines round-trip including null mAP fields") {
  std::vector<MetricsRecord> records;
  MetricsRecord r0;
  r0.epoch = 0;
  r0.loss_total = 3.5;
  r0.loss_proj = 1.25;
  r0.loss_axis = 0.5;
  r0.loss_cls = 1.5;
  r0.loss_score = 0.25;
  r0.wall_ms = 12.5;
  MetricsRecord r1 = r0;
  r1.epoch = 1;
  r1.map50 = 0.75;
  r1.map75 = 0.5;
  records = {r0, r1};

  std::ostringstream out;
  metrics_write(records, out);
  std::string text = out.str();
  CHECK(text.find("\"mAP50\":null") != std::string::npos);
  CHECK(std::count(text.begin(), text.end(), '\n') == 2);

  std::vector<MetricsRecord> back = metrics_read(text);
  REQUIRE(back.size() == 2);
  CHECK(back[0].epoch == 0);
  CHECK(back[0].map50 == -1.0);
  CHECK(back[0].loss_total == 3.5);
  CHECK(back[1].map50 == 0.75);
  CHECK(back[1].map75 == 0.5);
  CHECK(back[1].wall_ms == 12.5);
}

TEST_CASE("checkpoints restore parameters and forward outputs bit-exactly") {
  ModelConfig cfg = micro_model_config();
  Model model = Model::init(cfg, 99);

  std::ostringstream out;
  save_checkpoint(model, out);
  std::istringstream in(out.str());
  Model restored = load_checkpoint(in);

  NamedParams a = model.params();
  NamedParams b = restored.params();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(a[i].second->data == b[i].second->data);
  }

  SyntheticParams sp;
  sp.n_images = 1;
  sp.height = 16;
  sp.width = 16;
  sp.max_objects = 1;
  Image img = generate_synthetic(3, sp)[0].image;
  ModelOutput outA = model.forward(img);
  ModelOutput outB = restored.forward(img);
  const PointSetPredictionGraph& pa = outA.layers.back().preds[0];
  const PointSetPredictionGraph& pb = outB.layers.back().preds[0];
  CHECK(pa.points->data == pb.points->data);
  CHECK(pa.axis_logits->data == pb.axis_logits->data);
  CHECK(pa.class_logits->data == pb.class_logits->data);
}

TEST_CASE("checkpoint loading rejects malformed input") {
  ModelConfig cfg = micro_model_config();
  Model model = Model::init(cfg, 1);
  std::ostringstream out;
  save_checkpoint(model, out);
  std::string good = out.str();

  SECTION("bad header") {
    std::istringstream in("PAXKIT-CKPT-v0\n" + good.substr(good.find('\n') + 1));
    CHECK_THROWS_AS(load_checkpoint(in), CheckpointError);
  }
  SECTION("config mismatch changes tensor shapes") {
    std::string tampered = good;
    std::size_t pos = tampered.find("k_points = 5");
    REQUIRE(pos != std::string::npos);
    tampered.replace(pos, 12, "k_points = 7");
    std::istringstream in(tampered);
    CHECK_THROWS_AS(load_checkpoint(in), CheckpointError);
  }
  SECTION("unknown tensor name") {
    std::string tampered = good;
    std::size_t pos = tampered.find("head.class");
    REQUIRE(pos != std::string::npos);
    tampered.replace(pos, 10, "head.bogus");
    std::istringstream in(tampered);
    CHECK_THROWS_AS(load_checkpoint(in), CheckpointError);
  }
  SECTION("truncated data") {
    std::istringstream in(good.substr(0, good.size() / 2));
    CHECK_THROWS_AS(load_checkpoint(in), CheckpointError);
  }
  SECTION("unknown config key") {
    std::string tampered = good;
    std::size_t pos = tampered.find("patch = 2");
    REQUIRE(pos != std::string::npos);
    tampered.replace(pos, 9, "ptach = 2");
    std::istringstream in(tampered);
    CHECK_THROWS_AS(load_checkpoint(in), CheckpointError);
  }
}
