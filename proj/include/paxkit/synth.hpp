#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "paxkit/common.hpp"
#include "paxkit/dota.hpp"
#include "paxkit/geometry.hpp"
#include "paxkit/image.hpp"
#include "paxkit/rng.hpp"

namespace paxkit {

/// Scene-generation knobs. Sizes are in pixels and refer to the long side;
/// aspect is long over short side.
struct SyntheticParams {
  int n_images = 8;
  int height = 64;
  int width = 64;
  int max_objects = 3;
  double min_size = 10.0;
  double max_size = 22.0;
  double min_aspect = 1.5;
  double max_aspect = 3.0;
  std::vector<std::string> classes = {"alpha", "beta", "gamma"};

  void validate() const {
    if (n_images < 1) throw InvalidConfig("synth: n_images must be >= 1");
    if (height < 8 || width < 8) throw InvalidConfig("synth: image must be at least 8x8");
    if (max_objects < 1) throw InvalidConfig("synth: max_objects must be >= 1");
    if (!(min_size > 0.0) || max_size < min_size) throw InvalidConfig("synth: bad size range");
    if (min_aspect < 1.0 || max_aspect < min_aspect) throw InvalidConfig("synth: bad aspect range");
    if (classes.empty()) throw InvalidConfig("synth: classes must be non-empty");
  }
};

/// One rendered scene with its ground truth.
struct SyntheticScene {
  Image image;
  std::vector<Annotation> annotations;
  std::uint64_t seed = 0;
};

namespace detail {

/// Bright/dark channel pattern per class: the low 3 bits of (k mod 7) + 1,
/// never all dark, distinct for up to 7 classes.
inline void class_fill(std::size_t k, double* rgb) {
  unsigned v = static_cast<unsigned>(k % 7) + 1;
  for (int c = 0; c < 3; ++c) rgb[c] = 0.30 + 0.55 * ((v >> c) & 1u);
}

struct PlacedBox {
  OrientedBox box;
  double cos_t = 1.0, sin_t = 0.0;
  std::size_t cls = 0;
};

}  // namespace detail

/// Generates n_images scenes of rejection-sampled oriented rectangles
/// (pairwise rotated IoU < 0.3, fully in-bounds) rendered as background
/// noise, per-class flat fill, and a darkened band along each box edge.
/// Scene i depends only on (seed, i), never on n_images.
inline std::vector<SyntheticScene> generate_synthetic(std::uint64_t seed, const SyntheticParams& params) {
  params.validate();
  std::vector<SyntheticScene> scenes;
  scenes.reserve(static_cast<std::size_t>(params.n_images));
  const double W = params.width;
  const double H = params.height;

  for (int img = 0; img < params.n_images; ++img) {
    Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(img));
    SyntheticScene scene;
    scene.seed = seed;
    scene.image = Image::zeros(params.height, params.width, 3);

    int count = 1 + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(params.max_objects)));
    std::vector<detail::PlacedBox> placed;
    for (int obj = 0; obj < count; ++obj) {
      bool ok = false;
      for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
        double long_side = rng.uniform(params.min_size, params.max_size);
        double aspect = rng.uniform(params.min_aspect, params.max_aspect);
        double short_side = long_side / aspect;
        double theta = rng.uniform(0.0, kPi);
        std::size_t cls = rng.uniform_index(params.classes.size());
        double c = std::cos(theta), s = std::sin(theta);
        double hx = 0.5 * (long_side * std::abs(c) + short_side * std::abs(s)) + 1.0;
        double hy = 0.5 * (long_side * std::abs(s) + short_side * std::abs(c)) + 1.0;
        if (hx >= W - hx || hy >= H - hy) continue;
        double cx = rng.uniform(hx, W - hx);
        double cy = rng.uniform(hy, H - hy);

        OrientedBox box{cx, cy, long_side, short_side, theta};
        bool clear = true;
        for (const detail::PlacedBox& other : placed)
          if (rotated_iou(box, other.box) >= 0.3) {
            clear = false;
            break;
          }
        if (!clear) continue;
        placed.push_back({box, c, s, cls});
        ok = true;
      }
      if (!ok)
        throw PlacementFailure("synth: could not place object " + std::to_string(obj) + " in scene " +
                               std::to_string(img) + " after 1000 attempts");
    }

    for (int y = 0; y < params.height; ++y)
      for (int x = 0; x < params.width; ++x) {
        double base = rng.uniform(0.10, 0.22);
        for (int ch = 0; ch < 3; ++ch) scene.image.at(y, x, ch) = base;
      }

    for (const detail::PlacedBox& p : placed) {
      double rgb[3];
      detail::class_fill(p.cls, rgb);
      double edge = std::min(1.5, 0.25 * p.box.h);
      for (int y = 0; y < params.height; ++y)
        for (int x = 0; x < params.width; ++x) {
          double dx = (x + 0.5) - p.box.cx;
          double dy = (y + 0.5) - p.box.cy;
          double lx = dx * p.cos_t + dy * p.sin_t;
          double ly = -dx * p.sin_t + dy * p.cos_t;
          if (std::abs(lx) > 0.5 * p.box.w || std::abs(ly) > 0.5 * p.box.h) continue;
          bool border = std::abs(lx) > 0.5 * p.box.w - edge || std::abs(ly) > 0.5 * p.box.h - edge;
          double factor = border ? 0.45 : 1.0;
          for (int ch = 0; ch < 3; ++ch) scene.image.at(y, x, ch) = factor * rgb[ch];
        }
      scene.annotations.push_back({obb_to_quad(p.box), params.classes[p.cls], 0});
    }

    scenes.push_back(std::move(scene));
  }
  return scenes;
}

}  // namespace paxkit
