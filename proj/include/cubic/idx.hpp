// SPDX-License-Identifier: Apache-2.0
//
// Reader for the IDX image container (big-endian magic 0x00000803 =
// unsigned-byte rank-3 images, as used by the MNIST distribution). Pixels are
// rescaled from [0,255] bytes to [0,1] reals.

#pragma once

#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "cubic/error.hpp"
#include "cubic/tensor.hpp"

namespace cubic {

namespace detail {

inline std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t off) {
  return (static_cast<std::uint32_t>(bytes[off]) << 24) |
         (static_cast<std::uint32_t>(bytes[off + 1]) << 16) |
         (static_cast<std::uint32_t>(bytes[off + 2]) << 8) |
         static_cast<std::uint32_t>(bytes[off + 3]);
}

}  // namespace detail

constexpr std::uint32_t kIdxImageMagic = 0x00000803u;

template <typename T>
std::vector<Tensor<T>> parse_idx_images(std::span<const std::uint8_t> bytes,
                                        const std::string& source = "<memory>") {
  if (bytes.size() < 16) {
    throw FormatError(source + ": IDX header truncated (" + std::to_string(bytes.size()) +
                      " bytes, need 16)");
  }
  const std::uint32_t magic = detail::read_be32(bytes, 0);
  if (magic != kIdxImageMagic) {
    throw FormatError(source + ": bad IDX magic (expected 0x00000803)");
  }
  const std::uint32_t n = detail::read_be32(bytes, 4);
  const std::uint32_t rows = detail::read_be32(bytes, 8);
  const std::uint32_t cols = detail::read_be32(bytes, 12);
  const std::size_t need = 16 + static_cast<std::size_t>(n) * rows * cols;
  if (bytes.size() < need) {
    throw FormatError(source + ": IDX payload truncated (" + std::to_string(bytes.size()) +
                      " bytes, need " + std::to_string(need) + ")");
  }
  if (n > 0 && (rows == 0 || cols == 0)) {
    throw FormatError(source + ": IDX declares zero-sized images");
  }
  std::vector<Tensor<T>> images;
  images.reserve(n);
  std::size_t off = 16;
  for (std::uint32_t i = 0; i < n; ++i) {
    Tensor<T> img(static_cast<int>(rows), static_cast<int>(cols), 1);
    for (std::size_t p = 0; p < static_cast<std::size_t>(rows) * cols; ++p) {
      img.data()[p] = static_cast<T>(bytes[off + p]) / T(255);
    }
    off += static_cast<std::size_t>(rows) * cols;
    images.push_back(std::move(img));
  }
  return images;
}

template <typename T>
std::vector<Tensor<T>> load_idx_images(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open IDX file");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return parse_idx_images<T>(std::span<const std::uint8_t>(bytes), path);
}

}  // namespace cubic
