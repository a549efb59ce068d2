// SPDX-License-Identifier: Apache-2.0
//
// ADAM with bias correction, operating on flat parameter arrays. One slot
// (first/second moment plus step count) per named parameter tensor.

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "cubic/error.hpp"

namespace cubic {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) {
      throw ConfigError("adam: betas must lie in [0, 1)");
    }
    if (epsilon <= 0) throw ConfigError("adam: epsilon must be positive");
  }
};

template <typename T>
struct AdamSlot {
  std::vector<T> m;  // first moment
  std::vector<T> v;  // second moment, elementwise >= 0
  std::int64_t step = 0;

  static AdamSlot zeros(std::size_t n) {
    AdamSlot s;
    s.m.assign(n, T(0));
    s.v.assign(n, T(0));
    return s;
  }
};

// m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;  p -= lr * m_hat / (sqrt(v_hat) + eps)
template <typename T>
void adam_step(std::span<T> param, std::span<const T> grad, AdamSlot<T>& slot, double lr,
               const AdamConfig& cfg = {}) {
  cfg.validate();
  if (param.size() != grad.size() || slot.m.size() != param.size() ||
      slot.v.size() != param.size()) {
    throw ConfigError("adam_step: parameter, gradient and slot sizes must match");
  }
  slot.step += 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(slot.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(slot.step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = static_cast<double>(grad[i]);
    const double m = cfg.beta1 * static_cast<double>(slot.m[i]) + (1.0 - cfg.beta1) * g;
    const double v = cfg.beta2 * static_cast<double>(slot.v[i]) + (1.0 - cfg.beta2) * g * g;
    slot.m[i] = static_cast<T>(m);
    slot.v[i] = static_cast<T>(v);
    const double m_hat = m / c1;
    const double v_hat = v / c2;
    param[i] = static_cast<T>(static_cast<double>(param[i]) - lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon));
  }
}

}  // namespace cubic
