#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace paxkit {

constexpr double kPi = 3.14159265358979323846;

/// Base class for every domain error thrown by the library.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct DegenerateQuad : Error {
  using Error::Error;
};
struct DegeneratePointSet : Error {
  using Error::Error;
};
struct DegenerateTarget : Error {
  using Error::Error;
};
struct NonFiniteLogits : Error {
  using Error::Error;
};
struct LengthMismatch : Error {
  using Error::Error;
};
struct InvalidK : Error {
  using Error::Error;
};
struct EmptyBatch : Error {
  using Error::Error;
};
struct IndexOutOfRange : Error {
  using Error::Error;
};
struct ShapeMismatch : Error {
  using Error::Error;
};
struct OddDimension : Error {
  using Error::Error;
};
struct RefPointOutOfRange : Error {
  using Error::Error;
};
struct TooSmallInput : Error {
  using Error::Error;
};
struct NotEnoughCells : Error {
  using Error::Error;
};
struct GroupSizeMismatch : Error {
  using Error::Error;
};
struct NonFiniteCost : Error {
  using Error::Error;
};
struct UnknownProtocol : Error {
  using Error::Error;
};
struct InvalidConfig : Error {
  using Error::Error;
};
struct PlacementFailure : Error {
  using Error::Error;
};
struct NonFiniteLoss : Error {
  using Error::Error;
};
struct CheckpointError : Error {
  using Error::Error;
};

/// Text-format errors carry the 1-based line (and column where known).
struct ParseError : Error {
  int line = 0;
  int column = 0;
  ParseError(const std::string& msg, int line_, int column_ = 0)
      : Error(msg + " (line " + std::to_string(line_) +
              (column_ > 0 ? ", column " + std::to_string(column_) : "") + ")"),
        line(line_),
        column(column_) {}
};
struct TooFewTokens : ParseError {
  using ParseError::ParseError;
};
struct NonNumericCoordinate : ParseError {
  using ParseError::ParseError;
};
struct UnknownKey : Error {
  using Error::Error;
};
struct ConfigTypeError : Error {
  using Error::Error;
};

/// Wraps an angle into [0, pi). The tie at pi maps to 0.
inline double canonical_theta(double theta) {
  double t = std::fmod(theta, kPi);
  if (t < 0.0) t += kPi;
  if (t >= kPi) t = 0.0;
  return t;
}

/// Wraps an angle into [0, 2*pi).
inline double wrap_two_pi(double theta) {
  double t = std::fmod(theta, 2.0 * kPi);
  if (t < 0.0) t += 2.0 * kPi;
  if (t >= 2.0 * kPi) t = 0.0;
  return t;
}

}  // namespace paxkit
