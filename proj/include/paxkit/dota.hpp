#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "paxkit/common.hpp"
#include "paxkit/geometry.hpp"

namespace paxkit {

/// One labeled oriented instance from an annotation file.
struct Annotation {
  Quad quad;
  std::string category;
  int difficult = 0;
};

/// Parsed annotation file: optional header metadata plus instances in file order.
struct DotaFile {
  std::string image_source;
  std::string gsd;
  std::vector<Annotation> annotations;
};

namespace detail {

struct TokenSpan {
  std::string text;
  int column = 0;  // 1-based character column of the first character
};

inline std::vector<TokenSpan> split_tokens(const std::string& line) {
  std::vector<TokenSpan> out;
  std::size_t i = 0;
  while (i < line.size()) {
    if (line[i] == ' ' || line[i] == '\t' || line[i] == '\r') {
      ++i;
      continue;
    }
    std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    out.push_back({line.substr(start, i - start), static_cast<int>(start) + 1});
  }
  return out;
}

inline double parse_coordinate(const TokenSpan& tok, int line_no) {
  char* end = nullptr;
  double v = std::strtod(tok.text.c_str(), &end);
  if (end == tok.text.c_str() || *end != '\0' || !std::isfinite(v))
    throw NonNumericCoordinate("dota: bad coordinate '" + tok.text + "'", line_no, tok.column);
  return v;
}

/// Integer-valued coordinates print without a decimal point so integer-grid
/// files survive a parse/serialize round trip byte for byte.
inline std::string format_coordinate(double v) {
  if (v == std::floor(v) && std::abs(v) < 9.007199254740992e15) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%lld", static_cast<long long>(v));
    return buf;
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

/// Parses annotation text: optional `imagesource:`/`gsd:` header lines, then
/// one instance per line as `x1 y1 x2 y2 x3 y3 x4 y4 category difficult`.
/// Errors carry the 1-based line number and the character column of the
/// offending token.
inline DotaFile parse_dota(const std::string& text) {
  DotaFile out;
  std::size_t pos = 0;
  int line_no = 0;
  bool header_done = false;
  while (pos <= text.size()) {
    if (pos == text.size()) break;
    std::size_t eol = text.find('\n', pos);
    std::string line = text.substr(pos, eol == std::string::npos ? std::string::npos : eol - pos);
    pos = eol == std::string::npos ? text.size() : eol + 1;
    ++line_no;

    std::vector<detail::TokenSpan> tokens = detail::split_tokens(line);
    if (tokens.empty()) continue;
    if (!header_done && tokens.size() == 1 && tokens[0].column == 1) {
      if (tokens[0].text.rfind("imagesource:", 0) == 0) {
        out.image_source = tokens[0].text.substr(12);
        continue;
      }
      if (tokens[0].text.rfind("gsd:", 0) == 0) {
        out.gsd = tokens[0].text.substr(4);
        continue;
      }
    }
    header_done = true;

    if (tokens.size() < 10)
      throw TooFewTokens("dota: expected 10 tokens, got " + std::to_string(tokens.size()), line_no,
                         tokens.back().column);
    if (tokens.size() > 10)
      throw ParseError("dota: expected 10 tokens, got " + std::to_string(tokens.size()), line_no,
                       tokens[10].column);

    Annotation ann;
    for (int c = 0; c < 4; ++c) {
      ann.quad.corners[static_cast<std::size_t>(c)].x = detail::parse_coordinate(tokens[static_cast<std::size_t>(2 * c)], line_no);
      ann.quad.corners[static_cast<std::size_t>(c)].y = detail::parse_coordinate(tokens[static_cast<std::size_t>(2 * c + 1)], line_no);
    }
    ann.category = tokens[8].text;
    const detail::TokenSpan& diff = tokens[9];
    if (diff.text != "0" && diff.text != "1")
      throw ParseError("dota: difficulty must be 0 or 1, got '" + diff.text + "'", line_no, diff.column);
    ann.difficult = diff.text == "1" ? 1 : 0;
    out.annotations.push_back(std::move(ann));
  }
  return out;
}

/// Inverse of parse_dota. Emits header lines only when their values are set.
inline std::string serialize_dota(const DotaFile& file) {
  std::string out;
  if (!file.image_source.empty()) out += "imagesource:" + file.image_source + "\n";
  if (!file.gsd.empty()) out += "gsd:" + file.gsd + "\n";
  for (const Annotation& ann : file.annotations) {
    for (const Vec2& c : ann.quad.corners) {
      out += detail::format_coordinate(c.x);
      out += ' ';
      out += detail::format_coordinate(c.y);
      out += ' ';
    }
    out += ann.category;
    out += ' ';
    out += ann.difficult ? '1' : '0';
    out += '\n';
  }
  return out;
}

}  // namespace paxkit
