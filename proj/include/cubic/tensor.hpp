// SPDX-License-Identifier: Apache-2.0
//
// Dense rank-3 tensor (height, width, channel), row-major with the channel
// contiguous per pixel, plus the elementwise forward/backward operations
// shared by every recurrence. Tensors are plain values; all operations are
// pure functions of their inputs.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "cubic/error.hpp"
#include "cubic/math.hpp"

namespace cubic {

template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>, "Tensor requires a floating-point element type");

 public:
  Tensor() = default;

  Tensor(int height, int width, int channels) : h_(height), w_(width), c_(channels) {
    if (height <= 0 || width <= 0 || channels <= 0) {
      throw ConfigError("Tensor dimensions must be positive, got " + shape_string(height, width, channels));
    }
    data_.assign(static_cast<std::size_t>(height) * width * channels, T(0));
  }

  static Tensor full(int height, int width, int channels, T value) {
    Tensor t(height, width, channels);
    t.fill(value);
    return t;
  }

  int height() const { return h_; }
  int width() const { return w_; }
  int channels() const { return c_; }
  bool empty() const { return data_.empty(); }
  std::size_t size() const { return data_.size(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  T* pixel(int y, int x) { return data_.data() + pixel_offset(y, x); }
  const T* pixel(int y, int x) const { return data_.data() + pixel_offset(y, x); }

  T& at(int y, int x, int ch) { return data_[pixel_offset(y, x) + ch]; }
  const T& at(int y, int x, int ch) const { return data_[pixel_offset(y, x) + ch]; }

  bool same_shape(const Tensor& o) const { return h_ == o.h_ && w_ == o.w_ && c_ == o.c_; }
  std::string shape() const { return shape_string(h_, w_, c_); }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

  static std::string shape_string(int h, int w, int c) {
    return "(" + std::to_string(h) + ", " + std::to_string(w) + ", " + std::to_string(c) + ")";
  }

 private:
  std::size_t pixel_offset(int y, int x) const {
    return (static_cast<std::size_t>(y) * w_ + x) * c_;
  }

  int h_ = 0;
  int w_ = 0;
  int c_ = 0;
  std::vector<T> data_;
};

namespace detail {

template <typename T>
inline void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ConfigError(std::string(op) + ": shape mismatch " + a.shape() + " vs " + b.shape());
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out(x.height(), x.width(), x.channels());
  const T* in = x.data();
  T* o = out.data();
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) o[i] = sigmoid_scalar(in[i]);
  return out;
}

template <typename T>
Tensor<T> tanh_act(const Tensor<T>& x) {
  Tensor<T> out(x.height(), x.width(), x.channels());
  const T* in = x.data();
  T* o = out.data();
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) o[i] = tanh_scalar(in[i]);
  return out;
}

// Backward passes take the forward *output* so the derivative needs no
// re-evaluation: sigma' = v(1-v), tanh' = 1-v^2.
template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& value, const Tensor<T>& grad_out) {
  detail::require_same_shape(value, grad_out, "sigmoid_backward");
  Tensor<T> out(value.height(), value.width(), value.channels());
  const T* v = value.data();
  const T* g = grad_out.data();
  T* o = out.data();
  for (std::size_t i = 0; i < value.size(); ++i) o[i] = g[i] * v[i] * (T(1) - v[i]);
  return out;
}

template <typename T>
Tensor<T> tanh_backward(const Tensor<T>& value, const Tensor<T>& grad_out) {
  detail::require_same_shape(value, grad_out, "tanh_backward");
  Tensor<T> out(value.height(), value.width(), value.channels());
  const T* v = value.data();
  const T* g = grad_out.data();
  T* o = out.data();
  for (std::size_t i = 0; i < value.size(); ++i) o[i] = g[i] * (T(1) - v[i] * v[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> elementwise_mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "elementwise_mul");
  Tensor<T> out(a.height(), a.width(), a.channels());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  return out;
}

template <typename T>
Tensor<T> elementwise_add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "elementwise_add");
  Tensor<T> out(a.height(), a.width(), a.channels());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> mul_backward(const Tensor<T>& a, const Tensor<T>& b,
                                             const Tensor<T>& grad_out) {
  detail::require_same_shape(a, b, "mul_backward");
  detail::require_same_shape(a, grad_out, "mul_backward");
  return {elementwise_mul(grad_out, b), elementwise_mul(grad_out, a)};
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> add_backward(const Tensor<T>& grad_out) {
  return {grad_out, grad_out};
}

template <typename T>
void add_inplace(Tensor<T>& acc, const Tensor<T>& x) {
  detail::require_same_shape(acc, x, "add_inplace");
  for (std::size_t i = 0; i < acc.size(); ++i) acc.data()[i] += x.data()[i];
}

template <typename T>
void scale_inplace(Tensor<T>& t, T s) {
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] *= s;
}

// ---------------------------------------------------------------------------
// Channel concatenation / split
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>* const> parts) {
  if (parts.empty()) throw ConfigError("concat_channels: empty part list");
  const int h = parts[0]->height();
  const int w = parts[0]->width();
  int total = 0;
  for (const auto* p : parts) {
    if (p->height() != h || p->width() != w) {
      throw ConfigError("concat_channels: spatial mismatch " + parts[0]->shape() + " vs " + p->shape());
    }
    total += p->channels();
  }
  Tensor<T> out(h, w, total);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      T* op = out.pixel(y, x);
      for (const auto* p : parts) {
        const T* pp = p->pixel(y, x);
        const int pc = p->channels();
        for (int ch = 0; ch < pc; ++ch) op[ch] = pp[ch];
        op += pc;
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> concat_channels(std::initializer_list<const Tensor<T>*> parts) {
  return concat_channels(std::span<const Tensor<T>* const>(parts.begin(), parts.size()));
}

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> parts) {
  std::vector<const Tensor<T>*> ptrs;
  ptrs.reserve(parts.size());
  for (const auto& p : parts) ptrs.push_back(&p);
  return concat_channels(std::span<const Tensor<T>* const>(ptrs));
}

// Inverse of concat_channels; also serves as its backward (split the
// cotangent at the same offsets).
template <typename T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& t, std::span<const int> sizes) {
  int total = 0;
  for (int s : sizes) {
    if (s <= 0) throw ConfigError("split_channels: part sizes must be positive");
    total += s;
  }
  if (total != t.channels()) {
    throw ConfigError("split_channels: sizes sum to " + std::to_string(total) + ", tensor has " +
                      std::to_string(t.channels()) + " channels");
  }
  std::vector<Tensor<T>> parts;
  parts.reserve(sizes.size());
  for (int s : sizes) parts.emplace_back(t.height(), t.width(), s);
  for (int y = 0; y < t.height(); ++y) {
    for (int x = 0; x < t.width(); ++x) {
      const T* ip = t.pixel(y, x);
      for (std::size_t pi = 0; pi < sizes.size(); ++pi) {
        T* pp = parts[pi].pixel(y, x);
        for (int ch = 0; ch < sizes[pi]; ++ch) pp[ch] = ip[ch];
        ip += sizes[pi];
      }
    }
  }
  return parts;
}

// ---------------------------------------------------------------------------
// Reductions and predicates
// ---------------------------------------------------------------------------

template <typename T>
double sum_elements(const Tensor<T>& t) {
  double s = 0;
  for (std::size_t i = 0; i < t.size(); ++i) s += static_cast<double>(t.data()[i]);
  return s;
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t.data()[i])) return false;
  }
  return true;
}

}  // namespace cubic
