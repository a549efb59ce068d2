// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference oracle. Deliberately independent of the analytic
// backward passes: it only re-evaluates the forward map.

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "cubic/tensor.hpp"

namespace cubic {

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

// Central difference over a flat parameter array. The function is evaluated
// with the perturbation written in place, so `f` must read through the same
// storage (e.g. a lambda re-running a model whose weights alias `x`).
template <typename T, typename F>
std::vector<double> finite_diff_span(F&& f, std::span<T> x, double eps = 1e-5) {
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T saved = x[i];
    x[i] = static_cast<T>(saved + eps);
    const double up = f();
    x[i] = static_cast<T>(saved - eps);
    const double down = f();
    x[i] = saved;
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

// Fourth-order central difference: (-f(x+2e) + 8f(x+e) - 8f(x-e) + f(x-2e)) / (12e).
// Same oracle family, but the O(e^4) truncation permits a probe large enough
// to stay above roundoff cancellation on long evaluation chains.
template <typename T, typename F>
std::vector<double> finite_diff_span_4th(F&& f, std::span<T> x, double eps) {
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T saved = x[i];
    x[i] = static_cast<T>(saved + 2 * eps);
    const double p2 = f();
    x[i] = static_cast<T>(saved + eps);
    const double p1 = f();
    x[i] = static_cast<T>(saved - eps);
    const double m1 = f();
    x[i] = static_cast<T>(saved - 2 * eps);
    const double m2 = f();
    x[i] = saved;
    grad[i] = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * eps);
  }
  return grad;
}

// Central-difference gradient of a scalar function of one tensor.
template <typename T, typename F>
Tensor<T> finite_diff_grad(F&& f, const Tensor<T>& x, double eps = 1e-5) {
  Tensor<T> probe = x;
  Tensor<T> grad(x.height(), x.width(), x.channels());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const T saved = probe.data()[i];
    probe.data()[i] = static_cast<T>(saved + eps);
    const double up = f(probe);
    probe.data()[i] = static_cast<T>(saved - eps);
    const double down = f(probe);
    probe.data()[i] = saved;
    grad.data()[i] = static_cast<T>((up - down) / (2.0 * eps));
  }
  return grad;
}

// Largest relative error between an analytic gradient and its
// finite-difference estimate.
template <typename T>
double max_rel_err(std::span<const T> analytic, std::span<const double> numeric) {
  double worst = 0;
  const std::size_t n = std::min(analytic.size(), numeric.size());
  for (std::size_t i = 0; i < n; ++i) {
    worst = std::max(worst, rel_err(static_cast<double>(analytic[i]), numeric[i]));
  }
  return worst;
}

template <typename T>
double max_rel_err(const Tensor<T>& analytic, const Tensor<T>& numeric) {
  double worst = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    worst = std::max(worst, rel_err(static_cast<double>(analytic.data()[i]),
                                    static_cast<double>(numeric.data()[i])));
  }
  return worst;
}

}  // namespace cubic
