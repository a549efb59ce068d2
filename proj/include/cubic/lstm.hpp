// SPDX-License-Identifier: Apache-2.0
//
// The three recurrence steps: fully-connected LSTM, convolutional LSTM, and
// the three-branch cubic unit. All are pure state-transition functions; the
// optional tape captures what the hand-written backward passes need.
//
// Gate blocks inside a 4c pre-activation are ordered (input, forget, output,
// candidate). The cell update is c_new = f . c_prev + i . g and the hidden is
// h_new = o . tanh(c_new).

#pragma once

#include <array>
#include <span>
#include <utility>
#include <vector>

#include "cubic/conv.hpp"
#include "cubic/error.hpp"
#include "cubic/math.hpp"
#include "cubic/tensor.hpp"

namespace cubic {

namespace detail {

// One pixel (or one whole vector) of gate algebra. `gates` receives the four
// post-activation blocks so the backward pass can run without pre-activations.
template <typename T>
inline void lstm_combine(const T* z, const T* c_prev, int c, T* gates, T* c_new, T* h_new) {
  for (int j = 0; j < c; ++j) {
    const T iv = sigmoid_scalar(z[j]);
    const T fv = sigmoid_scalar(z[c + j]);
    const T ov = sigmoid_scalar(z[2 * c + j]);
    const T gv = tanh_scalar(z[3 * c + j]);
    const T cn = fv * c_prev[j] + iv * gv;
    gates[j] = iv;
    gates[c + j] = fv;
    gates[2 * c + j] = ov;
    gates[3 * c + j] = gv;
    c_new[j] = cn;
    h_new[j] = ov * tanh_scalar(cn);
  }
}

template <typename T>
inline void lstm_combine_backward(const T* gates, const T* c_prev, const T* c_new, int c,
                                  const T* d_c_in, const T* d_h, T* d_z, T* d_c_prev) {
  for (int j = 0; j < c; ++j) {
    const T iv = gates[j];
    const T fv = gates[c + j];
    const T ov = gates[2 * c + j];
    const T gv = gates[3 * c + j];
    const T tc = tanh_scalar(c_new[j]);
    const T dc = (d_c_in ? d_c_in[j] : T(0)) + d_h[j] * ov * (T(1) - tc * tc);
    const T dov = d_h[j] * tc;
    d_z[j] = dc * gv * iv * (T(1) - iv);
    d_z[c + j] = dc * c_prev[j] * fv * (T(1) - fv);
    d_z[2 * c + j] = dov * ov * (T(1) - ov);
    d_z[3 * c + j] = dc * iv * (T(1) - gv * gv);
    d_c_prev[j] = dc * fv;
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Fully-connected LSTM on flat vectors
// ---------------------------------------------------------------------------

template <typename T>
struct FcLstmParams {
  int input_dim = 0;
  int state_dim = 0;
  std::vector<T> weights;  // [(input_dim + state_dim)][4 * state_dim], input-major
  std::vector<T> bias;     // [4 * state_dim]

  static FcLstmParams zeros(int input_dim, int state_dim) {
    FcLstmParams p;
    p.input_dim = input_dim;
    p.state_dim = state_dim;
    p.weights.assign(static_cast<std::size_t>(input_dim + state_dim) * 4 * state_dim, T(0));
    p.bias.assign(static_cast<std::size_t>(4) * state_dim, T(0));
    return p;
  }

  void validate() const {
    if (input_dim <= 0 || state_dim <= 0 ||
        weights.size() != static_cast<std::size_t>(input_dim + state_dim) * 4 * state_dim ||
        bias.size() != static_cast<std::size_t>(4) * state_dim) {
      throw ConfigError("FcLstmParams: weight matrix must map input_dim + state_dim to 4 * state_dim");
    }
  }
};

template <typename T>
struct FcLstmTape {
  std::vector<T> gate_input;  // [x, h_prev]
  std::vector<T> gates;       // post-activation, 4 blocks
  std::vector<T> c_prev;
  std::vector<T> c_new;
};

template <typename T>
std::pair<std::vector<T>, std::vector<T>> fc_lstm_step(std::span<const T> x,
                                                       std::span<const T> c_prev,
                                                       std::span<const T> h_prev,
                                                       const FcLstmParams<T>& p,
                                                       FcLstmTape<T>* tape = nullptr) {
  p.validate();
  const int d = p.state_dim;
  if (static_cast<int>(x.size()) != p.input_dim || static_cast<int>(c_prev.size()) != d ||
      static_cast<int>(h_prev.size()) != d) {
    throw ConfigError("fc_lstm_step: input/state dimensions do not match parameters");
  }
  std::vector<T> gate_input;
  gate_input.reserve(x.size() + h_prev.size());
  gate_input.insert(gate_input.end(), x.begin(), x.end());
  gate_input.insert(gate_input.end(), h_prev.begin(), h_prev.end());

  std::vector<T> z(static_cast<std::size_t>(4) * d, T(0));
  detail::accumulate_outer(gate_input.data(), static_cast<int>(gate_input.size()),
                           p.weights.data(), 4 * d, z.data());
  for (int r = 0; r < 4 * d; ++r) z[r] = z[r] + p.bias[r];

  std::vector<T> gates(static_cast<std::size_t>(4) * d), c_new(d), h_new(d);
  detail::lstm_combine(z.data(), c_prev.data(), d, gates.data(), c_new.data(), h_new.data());

  if (tape) {
    tape->gate_input = std::move(gate_input);
    tape->gates = std::move(gates);
    tape->c_prev.assign(c_prev.begin(), c_prev.end());
    tape->c_new = c_new;
  }
  return {std::move(c_new), std::move(h_new)};
}

template <typename T>
void fc_lstm_backward(const FcLstmTape<T>& tape, const FcLstmParams<T>& p,
                      std::span<const T> d_c_new, std::span<const T> d_h_new,
                      std::vector<T>& d_x, std::vector<T>& d_c_prev, std::vector<T>& d_h_prev,
                      FcLstmParams<T>& grad_acc) {
  const int d = p.state_dim;
  const int n_in = p.input_dim + d;
  std::vector<T> d_z(static_cast<std::size_t>(4) * d);
  d_c_prev.assign(d, T(0));
  detail::lstm_combine_backward(tape.gates.data(), tape.c_prev.data(), tape.c_new.data(), d,
                                d_c_new.empty() ? nullptr : d_c_new.data(), d_h_new.data(),
                                d_z.data(), d_c_prev.data());
  std::vector<T> d_gate_input(n_in, T(0));
  for (int k = 0; k < n_in; ++k) {
    const T* wr = p.weights.data() + static_cast<std::size_t>(k) * 4 * d;
    T* gw = grad_acc.weights.data() + static_cast<std::size_t>(k) * 4 * d;
    const T v = tape.gate_input[k];
    T acc = T(0);
    for (int r = 0; r < 4 * d; ++r) {
      acc += d_z[r] * wr[r];
      gw[r] += v * d_z[r];
    }
    d_gate_input[k] = acc;
  }
  for (int r = 0; r < 4 * d; ++r) grad_acc.bias[r] += d_z[r];
  d_x.assign(d_gate_input.begin(), d_gate_input.begin() + p.input_dim);
  d_h_prev.assign(d_gate_input.begin() + p.input_dim, d_gate_input.end());
}

// ---------------------------------------------------------------------------
// Convolutional LSTM branch machinery
// ---------------------------------------------------------------------------

template <typename T>
struct TemporalState {
  Tensor<T> cell;
  Tensor<T> hidden;
};

template <typename T>
struct SpatialState {
  Tensor<T> cell;
  Tensor<T> hidden;
};

template <typename T>
struct LstmBranchTape {
  Tensor<T> gate_input;
  Tensor<T> gates;  // post-activation (i,f,o,g) blocks
  Tensor<T> c_prev;
  Tensor<T> c_new;
  Tensor<T> h_new;
};

template <typename T>
void lstm_branch_forward(Tensor<T> gate_input, const Tensor<T>& c_prev,
                         const ConvKernel<T>& kernel, Tensor<T>& c_new_out, Tensor<T>& h_new_out,
                         LstmBranchTape<T>* tape) {
  const int c = c_prev.channels();
  if (kernel.out_channels != 4 * c) {
    throw ConfigError("lstm branch: kernel must emit 4 * state_channels = " + std::to_string(4 * c) +
                      " channels, has " + std::to_string(kernel.out_channels));
  }
  if (gate_input.height() != c_prev.height() || gate_input.width() != c_prev.width()) {
    throw ConfigError("lstm branch: gate input " + gate_input.shape() +
                      " not spatially congruent with state " + c_prev.shape());
  }
  Tensor<T> z = conv2d(gate_input, kernel);
  const int h = z.height(), w = z.width();
  Tensor<T> gates(h, w, 4 * c);
  c_new_out = Tensor<T>(h, w, c);
  h_new_out = Tensor<T>(h, w, c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      detail::lstm_combine(z.pixel(y, x), c_prev.pixel(y, x), c, gates.pixel(y, x),
                           c_new_out.pixel(y, x), h_new_out.pixel(y, x));
    }
  }
  if (tape) {
    tape->gate_input = std::move(gate_input);
    tape->gates = std::move(gates);
    tape->c_prev = c_prev;
    tape->c_new = c_new_out;
    tape->h_new = h_new_out;
  }
}

template <typename T>
void lstm_branch_backward(const LstmBranchTape<T>& tape, const ConvKernel<T>& kernel,
                          const Tensor<T>* d_c_new, const Tensor<T>& d_h_new,
                          Tensor<T>& d_gate_input_out, Tensor<T>& d_c_prev_out,
                          ConvKernel<T>& grad_kernel_acc) {
  const int c = tape.c_prev.channels();
  const int h = tape.c_prev.height(), w = tape.c_prev.width();
  Tensor<T> d_z(h, w, 4 * c);
  d_c_prev_out = Tensor<T>(h, w, c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      detail::lstm_combine_backward(tape.gates.pixel(y, x), tape.c_prev.pixel(y, x),
                                    tape.c_new.pixel(y, x), c,
                                    d_c_new ? d_c_new->pixel(y, x) : nullptr, d_h_new.pixel(y, x),
                                    d_z.pixel(y, x), d_c_prev_out.pixel(y, x));
    }
  }
  d_gate_input_out = Tensor<T>(h, w, tape.gate_input.channels());
  conv2d_backward_acc(tape.gate_input, kernel, d_z, d_gate_input_out, grad_kernel_acc);
}

// ---------------------------------------------------------------------------
// ConvLSTM step
// ---------------------------------------------------------------------------

template <typename T>
struct ConvLstmTape {
  LstmBranchTape<T> branch;
};

template <typename T>
TemporalState<T> conv_lstm_step(const Tensor<T>& x, const TemporalState<T>& prev,
                                const ConvKernel<T>& kernel, ConvLstmTape<T>* tape = nullptr) {
  if (kernel.in_channels != x.channels() + prev.hidden.channels()) {
    throw ConfigError("conv_lstm_step: kernel expects " + std::to_string(kernel.in_channels) +
                      " input channels, concat provides " +
                      std::to_string(x.channels() + prev.hidden.channels()));
  }
  detail::require_same_shape(prev.cell, prev.hidden, "conv_lstm_step state");
  TemporalState<T> next;
  lstm_branch_forward(concat_channels<T>({&x, &prev.hidden}), prev.cell, kernel, next.cell,
                      next.hidden, tape ? &tape->branch : nullptr);
  return next;
}

template <typename T>
void conv_lstm_backward(const ConvLstmTape<T>& tape, const ConvKernel<T>& kernel,
                        const TemporalState<T>& d_new, Tensor<T>& d_x, TemporalState<T>& d_prev,
                        ConvKernel<T>& grad_kernel_acc) {
  Tensor<T> d_gate_input;
  lstm_branch_backward(tape.branch, kernel, &d_new.cell, d_new.hidden, d_gate_input, d_prev.cell,
                       grad_kernel_acc);
  const int state_c = tape.branch.c_prev.channels();
  const int x_c = tape.branch.gate_input.channels() - state_c;
  const std::array<int, 2> sizes{x_c, state_c};
  auto parts = split_channels(d_gate_input, std::span<const int>(sizes));
  d_x = std::move(parts[0]);
  d_prev.hidden = std::move(parts[1]);
}

// ---------------------------------------------------------------------------
// Cubic LSTM step
// ---------------------------------------------------------------------------

// One cell owns three kernels: the temporal-branch kernel (1x1 by default),
// the spatial-branch kernel (5x5 by default) and the output-branch kernel
// (1x1, combines both hiddens). The two branch kernels consume the same
// concatenation arity: x plus both previous hiddens.
template <typename T>
struct CubicCellParams {
  ConvKernel<T> temporal;
  ConvKernel<T> spatial;
  ConvKernel<T> output;
};

template <typename T>
struct CubicStepTape {
  LstmBranchTape<T> temporal;
  LstmBranchTape<T> spatial;
  bool has_output = false;
};

template <typename T>
struct CubicStepResult {
  TemporalState<T> temporal;
  SpatialState<T> spatial;
  Tensor<T> y;  // empty when the output branch was not evaluated
};

// Branch gate inputs follow the update equations' listing order:
//   temporal: [x, h_spatial_prev_layer, h_temporal_prev_time]
//   spatial:  [x, h_temporal_prev_time, h_spatial_prev_layer]
// The temporal branch updates (cell, hidden) along time; the spatial branch
// updates (cell', hidden') along the layer axis; the output branch is a
// linear map of both new hiddens with no activation.
template <typename T>
CubicStepResult<T> cubic_lstm_step(const Tensor<T>& x, const TemporalState<T>& temporal_prev,
                                   const SpatialState<T>& spatial_prev,
                                   const CubicCellParams<T>& params, CubicStepTape<T>* tape = nullptr,
                                   bool want_output = true) {
  detail::require_same_shape(temporal_prev.cell, temporal_prev.hidden, "cubic temporal state");
  detail::require_same_shape(spatial_prev.cell, spatial_prev.hidden, "cubic spatial state");
  detail::require_same_shape(temporal_prev.cell, spatial_prev.cell, "cubic states");
  if (x.height() != temporal_prev.cell.height() || x.width() != temporal_prev.cell.width()) {
    throw ConfigError("cubic_lstm_step: input " + x.shape() + " not spatially congruent with state " +
                      temporal_prev.cell.shape());
  }
  const int want_in = x.channels() + 2 * temporal_prev.cell.channels();
  if (params.temporal.in_channels != want_in || params.spatial.in_channels != want_in) {
    throw ConfigError("cubic_lstm_step: branch kernels must consume " + std::to_string(want_in) +
                      " channels");
  }

  CubicStepResult<T> out;
  lstm_branch_forward(concat_channels<T>({&x, &spatial_prev.hidden, &temporal_prev.hidden}),
                      temporal_prev.cell, params.temporal, out.temporal.cell, out.temporal.hidden,
                      tape ? &tape->temporal : nullptr);
  lstm_branch_forward(concat_channels<T>({&x, &temporal_prev.hidden, &spatial_prev.hidden}),
                      spatial_prev.cell, params.spatial, out.spatial.cell, out.spatial.hidden,
                      tape ? &tape->spatial : nullptr);
  if (want_output) {
    if (params.output.in_channels != 2 * temporal_prev.cell.channels()) {
      throw ConfigError("cubic_lstm_step: output kernel must consume 2 * state_channels");
    }
    out.y = conv2d(concat_channels<T>({&out.temporal.hidden, &out.spatial.hidden}), params.output);
  }
  if (tape) tape->has_output = want_output;
  return out;
}

template <typename T>
void cubic_lstm_backward(const CubicStepTape<T>& tape, const CubicCellParams<T>& params,
                         const TemporalState<T>& d_temporal_new, const SpatialState<T>& d_spatial_new,
                         const Tensor<T>* d_y, CubicCellParams<T>& grad_acc, Tensor<T>& d_x,
                         TemporalState<T>& d_temporal_prev, SpatialState<T>& d_spatial_prev) {
  const int c = tape.temporal.c_prev.channels();
  Tensor<T> d_th = d_temporal_new.hidden;
  Tensor<T> d_sh = d_spatial_new.hidden;

  if (d_y) {
    if (!tape.has_output) throw UsageError("cubic_lstm_backward: no output branch on the tape");
    Tensor<T> out_in = concat_channels<T>({&tape.temporal.h_new, &tape.spatial.h_new});
    Tensor<T> d_out_in(out_in.height(), out_in.width(), out_in.channels());
    conv2d_backward_acc(out_in, params.output, *d_y, d_out_in, grad_acc.output);
    const std::array<int, 2> halves{c, c};
    auto parts = split_channels(d_out_in, std::span<const int>(halves));
    add_inplace(d_th, parts[0]);
    add_inplace(d_sh, parts[1]);
  }

  Tensor<T> d_tin, d_sin;
  lstm_branch_backward(tape.temporal, params.temporal, &d_temporal_new.cell, d_th, d_tin,
                       d_temporal_prev.cell, grad_acc.temporal);
  lstm_branch_backward(tape.spatial, params.spatial, &d_spatial_new.cell, d_sh, d_sin,
                       d_spatial_prev.cell, grad_acc.spatial);

  const int x_c = tape.temporal.gate_input.channels() - 2 * c;
  const std::array<int, 3> sizes{x_c, c, c};
  auto t_parts = split_channels(d_tin, std::span<const int>(sizes));  // [x, h_sp_prev, h_tm_prev]
  auto s_parts = split_channels(d_sin, std::span<const int>(sizes));  // [x, h_tm_prev, h_sp_prev]

  d_x = std::move(t_parts[0]);
  add_inplace(d_x, s_parts[0]);
  d_temporal_prev.hidden = std::move(t_parts[2]);
  add_inplace(d_temporal_prev.hidden, s_parts[1]);
  d_spatial_prev.hidden = std::move(t_parts[1]);
  add_inplace(d_spatial_prev.hidden, s_parts[2]);
}

}  // namespace cubic
