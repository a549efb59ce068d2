// SPDX-License-Identifier: Apache-2.0
//
// 2D convolution (cross-correlation, "same" zero padding, stride 1) with an
// exact reverse-mode backward pass.
//
// The inner kernels use GCC vector extensions with register-resident
// accumulator tiles. Per output element the reduction order is fixed:
// kernel rows, kernel columns, then input channels, ascending, with the bias
// added last. The fully-connected path shares the same kernel, so a 1x1
// convolution and a matrix product produce identical bits, and zeroed weight
// blocks contribute exact +0 terms.

#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cubic/error.hpp"
#include "cubic/rng.hpp"
#include "cubic/tensor.hpp"

namespace cubic {

template <typename T>
struct ConvKernel {
  int kh = 0;
  int kw = 0;
  int in_channels = 0;
  int out_channels = 0;
  std::vector<T> weights;  // [ky][kx][ic][oc], oc contiguous
  std::vector<T> bias;     // [oc]

  ConvKernel() = default;

  ConvKernel(int kh_, int kw_, int in_c, int out_c)
      : kh(kh_), kw(kw_), in_channels(in_c), out_channels(out_c) {
    validate_dims(kh, kw, in_c, out_c);
    weights.assign(static_cast<std::size_t>(kh) * kw * in_c * out_c, T(0));
    bias.assign(static_cast<std::size_t>(out_c), T(0));
  }

  T& w(int ky, int kx, int ic, int oc) {
    return weights[((static_cast<std::size_t>(ky) * kw + kx) * in_channels + ic) * out_channels + oc];
  }
  const T& w(int ky, int kx, int ic, int oc) const {
    return weights[((static_cast<std::size_t>(ky) * kw + kx) * in_channels + ic) * out_channels + oc];
  }

  bool same_dims(const ConvKernel& o) const {
    return kh == o.kh && kw == o.kw && in_channels == o.in_channels && out_channels == o.out_channels;
  }

  void validate() const {
    validate_dims(kh, kw, in_channels, out_channels);
    if (weights.size() != static_cast<std::size_t>(kh) * kw * in_channels * out_channels ||
        bias.size() != static_cast<std::size_t>(out_channels)) {
      throw ConfigError("ConvKernel: storage size does not match declared dims");
    }
  }

  static void validate_dims(int kh, int kw, int in_c, int out_c) {
    if (kh <= 0 || kw <= 0 || kh % 2 == 0 || kw % 2 == 0) {
      throw ConfigError("ConvKernel: kernel extent must be odd and positive, got " +
                        std::to_string(kh) + "x" + std::to_string(kw));
    }
    if (in_c <= 0 || out_c <= 0) {
      throw ConfigError("ConvKernel: channel counts must be positive");
    }
  }

  friend bool operator==(const ConvKernel&, const ConvKernel&) = default;
};

namespace detail {

// 64-byte SIMD lane groups; lowered to plain code on targets without the
// matching vector units. aligned(sizeof(T)) permits unaligned access,
// may_alias permits loading from float/double arrays.
template <typename T>
struct VecTraits;
template <>
struct VecTraits<float> {
  typedef float vec __attribute__((vector_size(64), aligned(4), may_alias));
  static constexpr int width = 16;
};
template <>
struct VecTraits<double> {
  typedef double vec __attribute__((vector_size(64), aligned(8), may_alias));
  static constexpr int width = 8;
};

template <typename T>
inline typename VecTraits<T>::vec vload(const T* p) {
  return *reinterpret_cast<const typename VecTraits<T>::vec*>(p);
}

template <typename T>
inline void vstore(T* p, typename VecTraits<T>::vec v) {
  *reinterpret_cast<typename VecTraits<T>::vec*>(p) = v;
}

// out[p][ob..] += sum_i in[p][i] * w[i][ob..] for P pixels and NB lane
// groups; accumulators live in registers across the whole i-reduction.
template <typename T, int P, int NB>
inline void accum_tile(const T* __restrict__ in, int n_in, int n_out, const T* __restrict__ w,
                       T* __restrict__ out) {
  using vec = typename VecTraits<T>::vec;
  constexpr int W = VecTraits<T>::width;
  vec acc[P][NB];
  for (int p = 0; p < P; ++p)
    for (int b = 0; b < NB; ++b) acc[p][b] = vload(out + static_cast<std::size_t>(p) * n_out + b * W);
  for (int i = 0; i < n_in; ++i) {
    const T* wr = w + static_cast<std::size_t>(i) * n_out;
    vec wv[NB];
    for (int b = 0; b < NB; ++b) wv[b] = vload(wr + b * W);
    for (int p = 0; p < P; ++p) {
      const T v = in[static_cast<std::size_t>(p) * n_in + i];
      for (int b = 0; b < NB; ++b) acc[p][b] += v * wv[b];
    }
  }
  for (int p = 0; p < P; ++p)
    for (int b = 0; b < NB; ++b) vstore(out + static_cast<std::size_t>(p) * n_out + b * W, acc[p][b]);
}

// out[p][:] += in[p][:] x w for P consecutive pixels (pixel stride = n_in on
// the input side, n_out on the output side).
template <typename T, int P>
inline void accum_pixels(const T* __restrict__ in, int n_in, int n_out, const T* __restrict__ w,
                         T* __restrict__ out) {
  constexpr int W = VecTraits<T>::width;
  const int chunks = n_out / W;
  int ob = 0;
  for (; ob + 4 <= chunks; ob += 4)
    accum_tile<T, P, 4>(in, n_in, n_out, w + ob * W, out + ob * W);
  for (; ob < chunks; ++ob) accum_tile<T, P, 1>(in, n_in, n_out, w + ob * W, out + ob * W);
  for (int o = chunks * W; o < n_out; ++o) {
    for (int p = 0; p < P; ++p) {
      T a = out[static_cast<std::size_t>(p) * n_out + o];
      for (int i = 0; i < n_in; ++i) {
        a += in[static_cast<std::size_t>(p) * n_in + i] * w[static_cast<std::size_t>(i) * n_out + o];
      }
      out[static_cast<std::size_t>(p) * n_out + o] = a;
    }
  }
}

// acc[o] += sum_i in[i] * w[i * n_out + o]; the single kernel behind both the
// convolution and the fully-connected gate pre-activations.
template <typename T>
inline void accumulate_outer(const T* in, int n_in, const T* w, int n_out, T* acc) {
  accum_pixels<T, 1>(in, n_in, n_out, w, acc);
}

// One (ky, kx) stage of grad_weights: gw[i][o] += sum_pixels in[p][i] * g[p][o],
// pixels ascending, with an I x NB register tile over (input channel, lane
// group).
template <typename T, int I, int NB>
inline void gradw_tile(const T* __restrict__ in, int n_in, const T* __restrict__ g, int n_out,
                       int count, T* __restrict__ gw) {
  using vec = typename VecTraits<T>::vec;
  constexpr int W = VecTraits<T>::width;
  vec acc[I][NB];
  for (int i = 0; i < I; ++i)
    for (int b = 0; b < NB; ++b) acc[i][b] = vload(gw + static_cast<std::size_t>(i) * n_out + b * W);
  for (int p = 0; p < count; ++p) {
    const T* gp = g + static_cast<std::size_t>(p) * n_out;
    vec gv[NB];
    for (int b = 0; b < NB; ++b) gv[b] = vload(gp + b * W);
    const T* ip = in + static_cast<std::size_t>(p) * n_in;
    for (int i = 0; i < I; ++i) {
      const T v = ip[i];
      for (int b = 0; b < NB; ++b) acc[i][b] += v * gv[b];
    }
  }
  for (int i = 0; i < I; ++i)
    for (int b = 0; b < NB; ++b) vstore(gw + static_cast<std::size_t>(i) * n_out + b * W, acc[i][b]);
}

template <typename T, int I>
inline void gradw_rows(const T* __restrict__ in, int n_in, const T* __restrict__ g, int n_out,
                       int count, T* __restrict__ gw) {
  constexpr int W = VecTraits<T>::width;
  const int chunks = n_out / W;
  int ob = 0;
  for (; ob + 4 <= chunks; ob += 4)
    gradw_tile<T, I, 4>(in, n_in, g + ob * W, n_out, count, gw + ob * W);
  for (; ob < chunks; ++ob) gradw_tile<T, I, 1>(in, n_in, g + ob * W, n_out, count, gw + ob * W);
  for (int o = chunks * W; o < n_out; ++o) {
    for (int i = 0; i < I; ++i) {
      T a = gw[static_cast<std::size_t>(i) * n_out + o];
      for (int p = 0; p < count; ++p) {
        a += in[static_cast<std::size_t>(p) * n_in + i] * g[static_cast<std::size_t>(p) * n_out + o];
      }
      gw[static_cast<std::size_t>(i) * n_out + o] = a;
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvKernel<T>& kernel) {
  kernel.validate();
  if (kernel.in_channels != input.channels()) {
    throw ConfigError("conv2d: kernel expects " + std::to_string(kernel.in_channels) +
                      " input channels, tensor has " + std::to_string(input.channels()));
  }
  const int h = input.height(), w = input.width();
  const int ic = kernel.in_channels, oc = kernel.out_channels;
  const int ph = (kernel.kh - 1) / 2, pw = (kernel.kw - 1) / 2;

  Tensor<T> out(h, w, oc);
  for (int ky = 0; ky < kernel.kh; ++ky) {
    const int y0 = std::max(0, ph - ky), y1 = std::min(h, h + ph - ky);
    for (int kx = 0; kx < kernel.kw; ++kx) {
      const int x0 = std::max(0, pw - kx), x1 = std::min(w, w + pw - kx);
      const T* wrow = kernel.weights.data() +
                      (static_cast<std::size_t>(ky) * kernel.kw + kx) * ic * oc;
      for (int y = y0; y < y1; ++y) {
        const int iy = y + ky - ph;
        const T* ip = input.pixel(iy, x0 + kx - pw);
        T* op = out.pixel(y, x0);
        const int count = x1 - x0;
        int done = 0;
        for (; done + 4 <= count; done += 4) {
          detail::accum_pixels<T, 4>(ip + static_cast<std::size_t>(done) * ic, ic, oc, wrow,
                                     op + static_cast<std::size_t>(done) * oc);
        }
        for (; done < count; ++done) {
          detail::accum_pixels<T, 1>(ip + static_cast<std::size_t>(done) * ic, ic, oc, wrow,
                                     op + static_cast<std::size_t>(done) * oc);
        }
      }
    }
  }
  const T* b = kernel.bias.data();
  T* o = out.data();
  for (std::size_t p = 0; p < static_cast<std::size_t>(h) * w; ++p) {
    for (int c = 0; c < oc; ++c) o[p * oc + c] += b[c];
  }
  return out;
}

// Accumulating backward pass: grad_input and grad_kernel are += targets so
// BPTT can fold many steps into one buffer. grad_input must be zeroed by the
// caller when a fresh gradient is wanted.
template <typename T>
void conv2d_backward_acc(const Tensor<T>& input, const ConvKernel<T>& kernel,
                         const Tensor<T>& grad_out, Tensor<T>& grad_input,
                         ConvKernel<T>& grad_kernel) {
  kernel.validate();
  if (kernel.in_channels != input.channels()) {
    throw ConfigError("conv2d_backward: kernel/input channel mismatch");
  }
  if (grad_out.height() != input.height() || grad_out.width() != input.width() ||
      grad_out.channels() != kernel.out_channels) {
    throw ConfigError("conv2d_backward: grad_out shape " + grad_out.shape() +
                      " does not match conv output (" + std::to_string(input.height()) + ", " +
                      std::to_string(input.width()) + ", " + std::to_string(kernel.out_channels) + ")");
  }
  if (!grad_input.same_shape(input)) {
    throw ConfigError("conv2d_backward: grad_input shape mismatch");
  }
  if (!grad_kernel.same_dims(kernel)) {
    throw ConfigError("conv2d_backward: grad_kernel dims mismatch");
  }

  const int h = input.height(), w = input.width();
  const int ic = kernel.in_channels, oc = kernel.out_channels;
  const int ph = (kernel.kh - 1) / 2, pw = (kernel.kw - 1) / 2;

  // Transposed weights ([ky][kx][oc][ic]) so grad_input reads contiguously.
  std::vector<T> wt(kernel.weights.size());
  for (int ky = 0; ky < kernel.kh; ++ky) {
    for (int kx = 0; kx < kernel.kw; ++kx) {
      const std::size_t base = (static_cast<std::size_t>(ky) * kernel.kw + kx) * ic * oc;
      for (int i = 0; i < ic; ++i) {
        for (int o = 0; o < oc; ++o) {
          wt[base + static_cast<std::size_t>(o) * ic + i] =
              kernel.weights[base + static_cast<std::size_t>(i) * oc + o];
        }
      }
    }
  }

  for (int ky = 0; ky < kernel.kh; ++ky) {
    const int y0 = std::max(0, ph - ky), y1 = std::min(h, h + ph - ky);
    for (int kx = 0; kx < kernel.kw; ++kx) {
      const int x0 = std::max(0, pw - kx), x1 = std::min(w, w + pw - kx);
      const std::size_t base = (static_cast<std::size_t>(ky) * kernel.kw + kx) * ic * oc;
      T* gw = grad_kernel.weights.data() + base;
      const T* wrow = wt.data() + base;
      for (int y = y0; y < y1; ++y) {
        const int iy = y + ky - ph;
        const T* ip = input.pixel(iy, x0 + kx - pw);
        const T* gp = grad_out.pixel(y, x0);
        T* gi = grad_input.pixel(iy, x0 + kx - pw);
        const int count = x1 - x0;
        // dL/dW: one register tile per (4 input channels x lane groups),
        // pixels ascending inside.
        int i0 = 0;
        for (; i0 + 4 <= ic; i0 += 4) {
          detail::gradw_rows<T, 4>(ip + i0, ic, gp, oc, count,
                                   gw + static_cast<std::size_t>(i0) * oc);
        }
        for (; i0 < ic; ++i0) {
          detail::gradw_rows<T, 1>(ip + i0, ic, gp, oc, count,
                                   gw + static_cast<std::size_t>(i0) * oc);
        }
        // dL/dIn: same tile shape as the forward pass with the transposed
        // weights; reduction over output channels.
        int done = 0;
        for (; done + 4 <= count; done += 4) {
          detail::accum_pixels<T, 4>(gp + static_cast<std::size_t>(done) * oc, oc, ic, wrow,
                                     gi + static_cast<std::size_t>(done) * ic);
        }
        for (; done < count; ++done) {
          detail::accum_pixels<T, 1>(gp + static_cast<std::size_t>(done) * oc, oc, ic, wrow,
                                     gi + static_cast<std::size_t>(done) * ic);
        }
      }
    }
  }

  // dL/db: plain pixel sweep.
  T* gb = grad_kernel.bias.data();
  const T* g = grad_out.data();
  for (std::size_t p = 0; p < static_cast<std::size_t>(h) * w; ++p) {
    for (int o = 0; o < oc; ++o) gb[o] += g[p * oc + o];
  }
}

template <typename T>
std::pair<Tensor<T>, ConvKernel<T>> conv2d_backward(const Tensor<T>& input,
                                                    const ConvKernel<T>& kernel,
                                                    const Tensor<T>& grad_out) {
  Tensor<T> grad_input(input.height(), input.width(), input.channels());
  ConvKernel<T> grad_kernel(kernel.kh, kernel.kw, kernel.in_channels, kernel.out_channels);
  conv2d_backward_acc(input, kernel, grad_out, grad_input, grad_kernel);
  return {std::move(grad_input), std::move(grad_kernel)};
}

// Uniform init in +/- sqrt(6 / (fan_in + fan_out)); bias starts at zero.
template <typename T>
void glorot_init(ConvKernel<T>& k, SplitMix64& rng) {
  const double fan_in = static_cast<double>(k.kh) * k.kw * k.in_channels;
  const double fan_out = static_cast<double>(k.kh) * k.kw * k.out_channels;
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  for (auto& v : k.weights) v = static_cast<T>(rng.uniform(-bound, bound));
  for (auto& v : k.bias) v = T(0);
}

}  // namespace cubic
