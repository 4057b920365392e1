#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "paxkit/common.hpp"
#include "paxkit/image.hpp"

namespace paxkit {

inline constexpr const char* kImageMagic = "paximg";

namespace detail {

inline std::uint64_t to_le_bits(double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  if constexpr (std::endian::native == std::endian::big) {
    std::uint64_t out = 0;
    for (int i = 0; i < 8; ++i) out |= ((bits >> (8 * i)) & 0xff) << (8 * (7 - i));
    bits = out;
  }
  return bits;
}

inline double from_le_bits(std::uint64_t bits) {
  if constexpr (std::endian::native == std::endian::big) {
    std::uint64_t out = 0;
    for (int i = 0; i < 8; ++i) out |= ((bits >> (8 * i)) & 0xff) << (8 * (7 - i));
    bits = out;
  }
  return std::bit_cast<double>(bits);
}

}  // namespace detail

/// One ASCII header line "paximg H W C", then H*W*C little-endian f64 values
/// in (y, x, channel) order. Bitwise stable across runs and platforms.
inline void write_image(const Image& image, std::ostream& out) {
  out << kImageMagic << ' ' << image.height << ' ' << image.width << ' ' << image.channels << '\n';
  for (double v : image.data) {
    std::uint64_t bits = detail::to_le_bits(v);
    char buf[8];
    std::memcpy(buf, &bits, 8);
    out.write(buf, 8);
  }
  if (!out) throw Error("image: write failed");
}

inline void write_image(const Image& image, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("image: cannot open '" + path + "'");
  write_image(image, out);
}

inline Image read_image(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("image: missing header", 1, 1);
  std::istringstream header(line);
  std::string magic;
  int h = 0, w = 0, c = 0;
  if (!(header >> magic >> h >> w >> c) || magic != kImageMagic)
    throw ParseError("image: bad header '" + line + "'", 1, 1);
  if (h <= 0 || w <= 0 || c <= 0) throw ParseError("image: non-positive dimensions", 1, 1);
  Image image = Image::zeros(h, w, c);
  for (double& v : image.data) {
    char buf[8];
    in.read(buf, 8);
    if (!in) throw ParseError("image: truncated data", 2, 1);
    std::uint64_t bits;
    std::memcpy(&bits, buf, 8);
    v = detail::from_le_bits(bits);
  }
  return image;
}

inline Image read_image_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("image: cannot open '" + path + "'");
  return read_image(in);
}

}  // namespace paxkit
