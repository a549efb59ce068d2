// SPDX-License-Identifier: Apache-2.0
//
// Binary PGM (P5, maxval 255) frame export/import. Writing quantizes [0,1]
// reals with round-half-up; reading maps bytes back to value/255, so a
// write-read round trip moves each pixel by at most 1/510.

#pragma once

#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "cubic/error.hpp"
#include "cubic/math.hpp"
#include "cubic/tensor.hpp"

namespace cubic {

inline void write_pgm_bytes(const std::string& path, int width, int height,
                            std::span<const std::uint8_t> pixels) {
  if (width <= 0 || height <= 0 ||
      pixels.size() != static_cast<std::size_t>(width) * height) {
    throw ConfigError("write_pgm: pixel buffer does not match " + std::to_string(width) + "x" +
                      std::to_string(height));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError(path + ": cannot open for writing");
  out << "P5\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!out) throw UsageError(path + ": short write");
}

template <typename T>
void write_pgm(const Tensor<T>& frame, const std::string& path) {
  if (frame.channels() != 1) {
    throw ConfigError("write_pgm: expected a single-channel frame, got " + frame.shape());
  }
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(frame.height()) * frame.width());
  std::size_t i = 0;
  for (int y = 0; y < frame.height(); ++y) {
    for (int x = 0; x < frame.width(); ++x) {
      long q = round_half_up(static_cast<double>(frame.at(y, x, 0)) * 255.0);
      q = q < 0 ? 0 : (q > 255 ? 255 : q);
      pixels[i++] = static_cast<std::uint8_t>(q);
    }
  }
  write_pgm_bytes(path, frame.width(), frame.height(), pixels);
}

namespace detail {

inline int pgm_next_int(std::istream& in, const std::string& path) {
  // Skips whitespace and '#' comment lines between header tokens.
  for (;;) {
    const int ch = in.peek();
    if (ch == '#') {
      std::string line;
      std::getline(in, line);
      continue;
    }
    if (ch == ' ' || ch == '\t' || ch == '\r' || ch == '\n') {
      in.get();
      continue;
    }
    break;
  }
  int value = 0;
  if (!(in >> value)) throw FormatError(path + ": malformed PGM header");
  return value;
}

}  // namespace detail

template <typename T>
Tensor<T> read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open PGM file");
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (!in || m0 != 'P' || m1 != '5') {
    throw FormatError(path + ": not a binary PGM (P5) file");
  }
  const int width = detail::pgm_next_int(in, path);
  const int height = detail::pgm_next_int(in, path);
  const int maxval = detail::pgm_next_int(in, path);
  if (width <= 0 || height <= 0) throw FormatError(path + ": bad PGM dimensions");
  if (maxval != 255) {
    throw FormatError(path + ": unsupported PGM maxval " + std::to_string(maxval) +
                      " (expected 255)");
  }
  in.get();  // single whitespace byte after maxval
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(width) * height);
  in.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(pixels.size())) {
    throw FormatError(path + ": PGM pixel data truncated");
  }
  Tensor<T> frame(height, width, 1);
  std::size_t i = 0;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      frame.at(y, x, 0) = static_cast<T>(pixels[i++]) / T(255);
    }
  }
  return frame;
}

}  // namespace cubic
