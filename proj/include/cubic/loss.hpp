// SPDX-License-Identifier: Apache-2.0
//
// Per-frame reconstruction losses: squared error and binary cross-entropy,
// both summed over pixels within a frame and averaged across frames. Values
// accumulate in double regardless of the tensor precision.

#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "cubic/error.hpp"
#include "cubic/tensor.hpp"

namespace cubic {

template <typename T>
struct LossResult {
  double value = 0;
  std::vector<Tensor<T>> grads;  // d value / d pred, one per frame
};

namespace detail {

template <typename T>
void require_loss_args(std::span<const Tensor<T>> pred, std::span<const Tensor<T>> target) {
  if (pred.size() != target.size()) {
    throw UsageError("loss: prediction count " + std::to_string(pred.size()) +
                     " does not match target count " + std::to_string(target.size()));
  }
  if (pred.empty()) throw UsageError("loss: empty frame lists");
  for (std::size_t k = 0; k < pred.size(); ++k) {
    if (!pred[k].same_shape(target[k])) {
      throw UsageError("loss: frame " + std::to_string(k) + " shape mismatch " + pred[k].shape() +
                       " vs " + target[k].shape());
    }
  }
}

}  // namespace detail

template <typename T>
double mse_value(std::span<const Tensor<T>> pred, std::span<const Tensor<T>> target) {
  detail::require_loss_args(pred, target);
  double total = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    double frame = 0;
    const T* p = pred[k].data();
    const T* y = target[k].data();
    for (std::size_t i = 0; i < pred[k].size(); ++i) {
      const double d = static_cast<double>(p[i]) - static_cast<double>(y[i]);
      frame += d * d;
    }
    total += frame;
  }
  return total / static_cast<double>(pred.size());
}

template <typename T>
LossResult<T> mse_loss(std::span<const Tensor<T>> pred, std::span<const Tensor<T>> target) {
  LossResult<T> out;
  out.value = mse_value(pred, target);
  const double inv_frames = 1.0 / static_cast<double>(pred.size());
  out.grads.reserve(pred.size());
  for (std::size_t k = 0; k < pred.size(); ++k) {
    Tensor<T> g(pred[k].height(), pred[k].width(), pred[k].channels());
    const T* p = pred[k].data();
    const T* y = target[k].data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g.data()[i] = static_cast<T>(2.0 * (static_cast<double>(p[i]) - static_cast<double>(y[i])) *
                                   inv_frames);
    }
    out.grads.push_back(std::move(g));
  }
  return out;
}

template <typename T>
double bce_value(std::span<const Tensor<T>> pred, std::span<const Tensor<T>> target) {
  detail::require_loss_args(pred, target);
  double total = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    double frame = 0;
    const T* p = pred[k].data();
    const T* y = target[k].data();
    for (std::size_t i = 0; i < pred[k].size(); ++i) {
      const double pv = static_cast<double>(p[i]);
      if (!(pv > 0.0 && pv < 1.0)) {
        throw NumericError("bce: prediction " + std::to_string(pv) +
                           " outside the open interval (0, 1)");
      }
      const double yv = static_cast<double>(y[i]);
      frame -= yv * std::log(pv) + (1.0 - yv) * std::log1p(-pv);
    }
    total += frame;
  }
  return total / static_cast<double>(pred.size());
}

template <typename T>
LossResult<T> bce_loss(std::span<const Tensor<T>> pred, std::span<const Tensor<T>> target) {
  LossResult<T> out;
  out.value = bce_value(pred, target);
  const double inv_frames = 1.0 / static_cast<double>(pred.size());
  out.grads.reserve(pred.size());
  for (std::size_t k = 0; k < pred.size(); ++k) {
    Tensor<T> g(pred[k].height(), pred[k].width(), pred[k].channels());
    const T* p = pred[k].data();
    const T* y = target[k].data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double pv = static_cast<double>(p[i]);
      const double yv = static_cast<double>(y[i]);
      g.data()[i] = static_cast<T>((pv - yv) / (pv * (1.0 - pv)) * inv_frames);
    }
    out.grads.push_back(std::move(g));
  }
  return out;
}

}  // namespace cubic
