// SPDX-License-Identifier: Apache-2.0
//
// Branch-free scalar math kernels. fast_exp avoids libm so the elementwise
// gate loops auto-vectorize without -ffast-math and produce identical bits
// for a given build regardless of call site. Accuracy is ~1e-14 relative in
// double, ~1e-7 in float; exact at x == 0.

#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <type_traits>

namespace cubic {

namespace detail {

// exp(t) for |t| <= ln(2)/2 by Horner polynomial (truncated Taylor series).
// Degree 13 keeps the residual below one double ulp so finite-difference
// probes through the gate math see a smooth function.
inline double exp_poly_small(double t) {
  double p = 1.6059043836821615e-10;  // 1/13!
  p = p * t + 2.08767569878681e-09;
  p = p * t + 2.5052108385441720e-08;
  p = p * t + 2.7557319223985893e-07;
  p = p * t + 2.7557319223985888e-06;
  p = p * t + 2.4801587301587302e-05;
  p = p * t + 1.9841269841269841e-04;
  p = p * t + 1.3888888888888889e-03;
  p = p * t + 8.3333333333333332e-03;
  p = p * t + 4.1666666666666664e-02;
  p = p * t + 1.6666666666666666e-01;
  p = p * t + 0.5;
  p = p * t + 1.0;
  p = p * t + 1.0;
  return p;
}

inline float exp_poly_small(float t) {
  float p = 1.9841270114958531e-04f;  // 1/7!... folded low orders below
  p = p * t + 1.3888889225199819e-03f;
  p = p * t + 8.3333337679505348e-03f;
  p = p * t + 4.1666667908430099e-02f;
  p = p * t + 1.6666667163372040e-01f;
  p = p * t + 0.5f;
  p = p * t + 1.0f;
  p = p * t + 1.0f;
  return p;
}

}  // namespace detail

// exp(x) with the argument clamped to a safely-finite range. Total: finite
// inputs always yield a finite positive result.
template <typename T>
inline T fast_exp(T x) {
  static_assert(std::is_floating_point_v<T>);
  if constexpr (sizeof(T) == 8) {
    const double lim = 700.0;
    double v = x < -lim ? -lim : (x > lim ? lim : static_cast<double>(x));
    const double y = v * 1.4426950408889634;  // log2(e)
    const double nd = std::floor(y + 0.5);
    // Cody-Waite argument reduction: t = v - nd * ln2 to full precision.
    const double t = (v - nd * 6.93147180369123816490e-01) - nd * 1.90821492927058770002e-10;
    const auto n = static_cast<std::int64_t>(nd);
    const double scale = std::bit_cast<double>(static_cast<std::uint64_t>(n + 1023) << 52);
    return static_cast<T>(detail::exp_poly_small(t) * scale);
  } else {
    const float lim = 80.0f;
    float v = x < -lim ? -lim : (x > lim ? lim : static_cast<float>(x));
    const float y = v * 1.44269504f;
    const float nd = std::floor(y + 0.5f);
    const float t = (y - nd) * 0.6931471805599453f;
    const auto n = static_cast<std::int32_t>(nd);
    const float scale = std::bit_cast<float>(static_cast<std::uint32_t>(n + 127) << 23);
    return static_cast<T>(detail::exp_poly_small(t) * scale);
  }
}

// Logistic function, exact 0.5 at x == 0, output in (0, 1) away from
// saturation.
template <typename T>
inline T sigmoid_scalar(T x) {
  return T(1) / (T(1) + fast_exp(-x));
}

// tanh via a single exp; the 2/(e^{2x}+1) form never produces inf/nan for
// finite input and is exactly 0 at x == 0.
template <typename T>
inline T tanh_scalar(T x) {
  return T(1) - T(2) / (fast_exp(T(2) * x) + T(1));
}

// Round-half-up to an integer, used wherever real values are quantized
// (rasterization, 8-bit image encoding).
template <typename T>
inline long round_half_up(T x) {
  return static_cast<long>(std::floor(static_cast<double>(x) + 0.5));
}

}  // namespace cubic
