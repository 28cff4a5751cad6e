#pragma once

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "vcmqp/error.hpp"

namespace vcmqp {

/// 8-bit single-plane (luma) image, row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> luma;

  Image() = default;
  Image(int width_, int height_, std::uint8_t fill = 0)
      : width(width_), height(height_) {
    if (width <= 0 || height <= 0) throw DataError("Image: non-positive dimensions");
    luma.assign(static_cast<std::size_t>(width) * height, fill);
  }

  std::uint8_t at(int x, int y) const { return luma[static_cast<std::size_t>(y) * width + x]; }
  void set(int x, int y, std::uint8_t v) { luma[static_cast<std::size_t>(y) * width + x] = v; }

  bool operator==(const Image&) const = default;
};

// --- PGM (P5, binary, maxval <= 255) -----------------------------------------

namespace detail {

inline int pgm_next_token(std::istream& in, const std::string& context) {
  // skip whitespace and '#' comment lines
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = in.get();
  }
  if (c == EOF) throw DataError(context + ": truncated PGM header");
  int value = 0;
  bool any = false;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    any = true;
    c = in.get();
  }
  if (!any) throw DataError(context + ": malformed PGM header");
  if (c != EOF) in.unget();
  return value;
}

}  // namespace detail

inline Image read_pgm(std::istream& in, const std::string& context) {
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != '5')
    throw DataError(context + ": not a binary PGM (P5) file");
  const int width = detail::pgm_next_token(in, context);
  const int height = detail::pgm_next_token(in, context);
  const int maxval = detail::pgm_next_token(in, context);
  if (width <= 0 || height <= 0) throw DataError(context + ": non-positive PGM dimensions");
  if (maxval <= 0 || maxval > 255) throw DataError(context + ": PGM maxval must be in [1,255]");
  in.get();  // single whitespace byte after maxval
  Image img(width, height);
  in.read(reinterpret_cast<char*>(img.luma.data()), static_cast<std::streamsize>(img.luma.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.luma.size()))
    throw DataError(context + ": truncated PGM payload");
  return img;
}

inline Image read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return read_pgm(in, path.string());
}

inline void write_pgm(const Image& img, std::ostream& out) {
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.luma.data()), static_cast<std::streamsize>(img.luma.size()));
}

inline void write_pgm(const Image& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_pgm(img, out);
  if (!out) throw DataError("write failed: " + path.string());
}

inline std::string pgm_bytes(const Image& img) {
  std::ostringstream out(std::ios::binary);
  write_pgm(img, out);
  return out.str();
}

}  // namespace vcmqp
