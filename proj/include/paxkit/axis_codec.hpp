#pragma once

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "paxkit/common.hpp"

namespace paxkit {

/// Settings for the circular direction-bin axis label.
struct AxisCodecConfig {
  int n_bins = 360;       ///< direction bins over the full circle, divisible by 4
  double sigma = 6.0;     ///< Gaussian smoothing std, in bins; 0 = one-hot peaks
  double epsilon = 1e-7;  ///< clamp floor for the cross-axis BCE

  void validate() const {
    if (n_bins < 8 || n_bins % 4 != 0)
      throw InvalidConfig("n_bins must be >= 8 and divisible by 4, got " + std::to_string(n_bins));
    if (sigma < 0.0) throw InvalidConfig("sigma must be >= 0");
  }
};

/// Soft label over direction bins with four peaks 90 degrees apart.
/// Invariant under a circular shift by n_bins/4, exactly.
struct AxisEncoding {
  std::vector<double> values;
};

/// Encodes an orientation as a four-peak circular label. Peaks sit at the
/// direction of `theta` and its three 90-degree rotations; overlapping
/// Gaussians combine by max so every value stays in [0, 1].
///
/// The bin distance is computed against a single phase reduced modulo a
/// quarter turn, so the shift-by-n_bins/4 symmetry holds bit-exactly.
inline AxisEncoding encode_axis(double theta, const AxisCodecConfig& cfg) {
  cfg.validate();
  const int n = cfg.n_bins;
  const int quarter = n / 4;
  // Peak positions are {p0 + k*quarter} in bin units; fold the phase into
  // one quarter so the circular distance reduces to exact integer shifts.
  double pos = wrap_two_pi(theta) * (static_cast<double>(n) / (2.0 * kPi));
  double p0 = std::fmod(pos, static_cast<double>(quarter));
  // Angles meant to sit on the half-bin grid can drift off it by rounding,
  // and the drift differs between theta and theta + pi/2. Snapping restores
  // the 90-degree equivariance as an exact identity for grid angles.
  double twice = 2.0 * p0;
  long long half_steps = std::llround(twice);
  if (std::abs(twice - static_cast<double>(half_steps)) < 2e-6) {
    p0 = static_cast<double>(half_steps) / 2.0;
    if (p0 >= static_cast<double>(quarter)) p0 -= static_cast<double>(quarter);
  }

  AxisEncoding enc;
  enc.values.assign(static_cast<std::size_t>(n), 0.0);

  if (cfg.sigma == 0.0) {
    long long peak = std::llround(p0);
    for (int k = 0; k < 4; ++k) {
      long long b = (peak + static_cast<long long>(k) * quarter) % n;
      enc.values[static_cast<std::size_t>(b)] = 1.0;
    }
    return enc;
  }

  // The peak set {p0 + k*quarter} is periodic with period `quarter` in bin
  // space, so a bin's circular distance to it depends on b only through
  // b mod quarter. Reducing b in integer arithmetic first makes the
  // shift-by-quarter invariance exact, not just approximate.
  const double inv_two_sigma_sq = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
  const double q = static_cast<double>(quarter);
  for (int b = 0; b < n; ++b) {
    double diff = static_cast<double>(b % quarter) - p0;  // (-q, q)
    double m = diff < 0.0 ? diff + q : diff;              // [0, q)
    double d = m < q - m ? m : q - m;
    enc.values[static_cast<std::size_t>(b)] = std::exp(-(d * d) * inv_two_sigma_sq);
  }
  return enc;
}

/// Result of reading an axis label or raw logit vector.
struct DecodedAxis {
  double principal_theta = 0.0;           ///< radians, reduced to [0, pi/2)
  std::array<double, 4> directions{};     ///< radians in [0, 2*pi), 90 degrees apart
  int principal_bin = 0;
};

/// Arg-max decoding: the strongest bin gives the principal direction, the
/// other three follow at 90-degree intervals. Ties go to the lowest index.
inline DecodedAxis decode_axis(std::span<const double> values) {
  if (values.empty()) throw NonFiniteLogits("decode_axis: empty vector");
  int best = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i]))
      throw NonFiniteLogits("decode_axis: non-finite entry at bin " + std::to_string(i));
    if (values[i] > values[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  const double bin_width = 2.0 * kPi / static_cast<double>(values.size());
  DecodedAxis out;
  out.principal_bin = best;
  double raw = best * bin_width;
  for (int k = 0; k < 4; ++k) out.directions[static_cast<std::size_t>(k)] = wrap_two_pi(raw + k * (kPi / 2.0));
  double t = std::fmod(raw, kPi / 2.0);
  if (t < 0.0) t += kPi / 2.0;
  out.principal_theta = t;
  return out;
}

inline DecodedAxis decode_axis(const AxisEncoding& enc) {
  return decode_axis(std::span<const double>(enc.values));
}

/// Label for the fixed-axis (general detection) mode: horizontal/vertical.
inline AxisEncoding encode_fixed_horizontal(const AxisCodecConfig& cfg) { return encode_axis(0.0, cfg); }

}  // namespace paxkit
