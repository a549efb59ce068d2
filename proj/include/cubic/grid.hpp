// SPDX-License-Identifier: Apache-2.0
//
// The cubic recurrent grid: a J x L array of cubic cells (J output layers, L
// spatial layers) unrolled along time. Frames enter the first output row
// through a sliding window of the L most recent frames; higher rows consume
// the intermediate predictions of the row below. The spatial state leaving
// layer L re-enters layer 1 at the next time step (per-row carry). Parameters
// are shared across time and distinct across cells.

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cubic/conv.hpp"
#include "cubic/error.hpp"
#include "cubic/lstm.hpp"
#include "cubic/rng.hpp"
#include "cubic/tensor.hpp"

namespace cubic {

struct GridConfig {
  int spatial_layers = 3;  // L
  int output_layers = 1;   // J
  int state_channels = 32;
  int frame_height = 64;
  int frame_width = 64;
  int frame_channels = 1;
  int temporal_kernel = 1;
  int spatial_kernel = 5;
  int context_len = 10;
  int predict_len = 10;
  bool share_encoder_decoder = false;
  double forget_bias = 0.0;

  int cells() const { return output_layers * spatial_layers; }

  void validate() const {
    if (spatial_layers <= 0 || output_layers <= 0 || state_channels <= 0 || frame_height <= 0 ||
        frame_width <= 0 || frame_channels <= 0 || context_len <= 0 || predict_len <= 0) {
      throw ConfigError("GridConfig: all dimensions must be positive");
    }
    if (temporal_kernel <= 0 || temporal_kernel % 2 == 0 || spatial_kernel <= 0 ||
        spatial_kernel % 2 == 0) {
      throw ConfigError("GridConfig: kernels must be odd and positive");
    }
    if (context_len < spatial_layers) {
      throw ConfigError("GridConfig: context_len must be >= spatial_layers (the sliding window "
                        "must fit inside the context)");
    }
  }
};

// Prediction squashing floor; keeps every emitted pixel strictly inside
// (0, 1) even when float32 sigmoids saturate.
template <typename T>
inline constexpr T squash_eps = sizeof(T) == 8 ? T(1e-12) : T(1e-6);

enum class GridPhase { encoder, decoder };

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

template <typename T>
struct CubicModel {
  GridConfig cfg;
  std::vector<CubicCellParams<T>> encoder;  // J*L cells, row-major (j * L + l)
  std::vector<CubicCellParams<T>> decoder;  // empty when share_encoder_decoder
  ConvKernel<T> frame_head;                 // 1x1, 2c -> frame_channels

  struct ParamRef {
    std::string name;
    std::vector<T>* values;
    int rank;
    std::array<int, 4> dims;
  };

  static CubicModel create(const GridConfig& cfg) {
    cfg.validate();
    CubicModel m;
    m.cfg = cfg;
    m.encoder = make_cells(cfg);
    if (!cfg.share_encoder_decoder) m.decoder = make_cells(cfg);
    m.frame_head = ConvKernel<T>(1, 1, 2 * cfg.state_channels, cfg.frame_channels);
    return m;
  }

  const std::vector<CubicCellParams<T>>& cells(GridPhase phase) const {
    if (phase == GridPhase::encoder || cfg.share_encoder_decoder) return encoder;
    return decoder;
  }
  std::vector<CubicCellParams<T>>& cells(GridPhase phase) {
    if (phase == GridPhase::encoder || cfg.share_encoder_decoder) return encoder;
    return decoder;
  }

  // Glorot-uniform weights, zero biases, plus the configured forget-gate
  // offset on both branch kernels. Draw order follows parameters().
  void init_params(std::uint64_t seed) {
    SplitMix64 rng(seed);
    auto init_set = [&](std::vector<CubicCellParams<T>>& set) {
      for (auto& cell : set) {
        glorot_init(cell.temporal, rng);
        glorot_init(cell.spatial, rng);
        glorot_init(cell.output, rng);
        const int c = cfg.state_channels;
        for (int j = 0; j < c; ++j) {
          cell.temporal.bias[c + j] = static_cast<T>(cfg.forget_bias);
          cell.spatial.bias[c + j] = static_cast<T>(cfg.forget_bias);
        }
      }
    };
    init_set(encoder);
    init_set(decoder);
    glorot_init(frame_head, rng);
  }

  std::vector<ParamRef> parameters() {
    std::vector<ParamRef> out;
    auto add_kernel = [&out](const std::string& name, ConvKernel<T>& k) {
      out.push_back({name + ".weight", &k.weights, 4, {k.kh, k.kw, k.in_channels, k.out_channels}});
      out.push_back({name + ".bias", &k.bias, 1, {k.out_channels, 0, 0, 0}});
    };
    auto add_set = [&](const char* set_name, std::vector<CubicCellParams<T>>& set) {
      for (int j = 0; j < cfg.output_layers; ++j) {
        for (int l = 0; l < cfg.spatial_layers; ++l) {
          const std::string prefix = std::string(set_name) + ".cell_" + std::to_string(j) + "_" +
                                     std::to_string(l);
          auto& cell = set[static_cast<std::size_t>(j) * cfg.spatial_layers + l];
          add_kernel(prefix + ".temporal", cell.temporal);
          add_kernel(prefix + ".spatial", cell.spatial);
          add_kernel(prefix + ".output", cell.output);
        }
      }
    };
    add_set("encoder", encoder);
    if (!cfg.share_encoder_decoder) add_set("decoder", decoder);
    add_kernel("frame_head", frame_head);
    return out;
  }

 private:
  static std::vector<CubicCellParams<T>> make_cells(const GridConfig& cfg) {
    std::vector<CubicCellParams<T>> set;
    set.reserve(static_cast<std::size_t>(cfg.cells()));
    const int c = cfg.state_channels;
    for (int j = 0; j < cfg.output_layers; ++j) {
      const int x_c = j == 0 ? cfg.frame_channels : c;
      const int in_c = x_c + 2 * c;
      for (int l = 0; l < cfg.spatial_layers; ++l) {
        CubicCellParams<T> cell;
        cell.temporal = ConvKernel<T>(cfg.temporal_kernel, cfg.temporal_kernel, in_c, 4 * c);
        cell.spatial = ConvKernel<T>(cfg.spatial_kernel, cfg.spatial_kernel, in_c, 4 * c);
        cell.output = ConvKernel<T>(1, 1, 2 * c, c);
        set.push_back(std::move(cell));
      }
    }
    return set;
  }
};

// ---------------------------------------------------------------------------
// State
// ---------------------------------------------------------------------------

template <typename T>
struct GridState {
  std::vector<TemporalState<T>> temporal;     // J*L, row-major
  std::vector<SpatialState<T>> spatial_carry;  // one per output row

  bool initialized() const { return !temporal.empty(); }
};

template <typename T>
GridState<T> init_state(const GridConfig& cfg) {
  cfg.validate();
  GridState<T> s;
  const int h = cfg.frame_height, w = cfg.frame_width, c = cfg.state_channels;
  s.temporal.resize(static_cast<std::size_t>(cfg.cells()));
  for (auto& t : s.temporal) {
    t.cell = Tensor<T>(h, w, c);
    t.hidden = Tensor<T>(h, w, c);
  }
  s.spatial_carry.resize(static_cast<std::size_t>(cfg.output_layers));
  for (auto& sp : s.spatial_carry) {
    sp.cell = Tensor<T>(h, w, c);
    sp.hidden = Tensor<T>(h, w, c);
  }
  return s;
}

template <typename T>
GridState<T> init_state(const CubicModel<T>& m) {
  return init_state<T>(m.cfg);
}

namespace detail {

template <typename T>
void require_valid_state(const GridConfig& cfg, const GridState<T>& state) {
  if (!state.initialized() || static_cast<int>(state.temporal.size()) != cfg.cells() ||
      static_cast<int>(state.spatial_carry.size()) != cfg.output_layers) {
    throw UsageError("grid_step: state is not initialized for this grid");
  }
  const auto& t0 = state.temporal.front();
  if (t0.cell.height() != cfg.frame_height || t0.cell.width() != cfg.frame_width ||
      t0.cell.channels() != cfg.state_channels) {
    throw UsageError("grid_step: state shape " + t0.cell.shape() + " does not match the grid config");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// One grid step
// ---------------------------------------------------------------------------

template <typename T>
struct GridStepTape {
  std::vector<CubicStepTape<T>> cells;  // J*L
  Tensor<T> head_in;
  Tensor<T> pred;
};

// Advances every cell once, updates the per-row spatial carry, and returns
// the squashed frame prediction read off the final cell's two hiddens.
// `window` holds the L input frames, oldest first.
template <typename T>
Tensor<T> grid_step(const CubicModel<T>& m, GridPhase phase, GridState<T>& state,
                    std::span<const Tensor<T>* const> window, GridStepTape<T>* tape = nullptr) {
  const GridConfig& cfg = m.cfg;
  const int J = cfg.output_layers, L = cfg.spatial_layers;
  detail::require_valid_state(cfg, state);
  if (static_cast<int>(window.size()) != L) {
    throw UsageError("grid_step: window must hold exactly " + std::to_string(L) + " frames, got " +
                     std::to_string(window.size()));
  }
  for (const auto* f : window) {
    if (f->height() != cfg.frame_height || f->width() != cfg.frame_width ||
        f->channels() != cfg.frame_channels) {
      throw UsageError("grid_step: window frame shape " + f->shape() + " does not match the grid");
    }
  }
  const auto& cells = m.cells(phase);
  if (tape) tape->cells.resize(static_cast<std::size_t>(cfg.cells()));

  std::vector<Tensor<T>> y_below;  // outputs of the previous row
  for (int j = 0; j < J; ++j) {
    SpatialState<T> row_sp = std::move(state.spatial_carry[j]);
    const bool want_y = j + 1 < J;
    std::vector<Tensor<T>> y_cur(want_y ? L : 0);
    for (int l = 0; l < L; ++l) {
      const std::size_t idx = static_cast<std::size_t>(j) * L + l;
      const Tensor<T>& x = j == 0 ? *window[l] : y_below[l];
      auto r = cubic_lstm_step(x, state.temporal[idx], row_sp, cells[idx],
                               tape ? &tape->cells[idx] : nullptr, want_y);
      state.temporal[idx] = std::move(r.temporal);
      row_sp = std::move(r.spatial);
      if (want_y) y_cur[l] = std::move(r.y);
    }
    state.spatial_carry[j] = std::move(row_sp);
    y_below = std::move(y_cur);
  }

  const auto& final_t = state.temporal[static_cast<std::size_t>(cfg.cells()) - 1];
  const auto& final_s = state.spatial_carry[static_cast<std::size_t>(J) - 1];
  Tensor<T> head_in = concat_channels<T>({&final_t.hidden, &final_s.hidden});
  Tensor<T> pred = conv2d(head_in, m.frame_head);
  const T eps = squash_eps<T>;
  T* p = pred.data();
  for (std::size_t i = 0; i < pred.size(); ++i) {
    T v = sigmoid_scalar(p[i]);
    v = v < eps ? eps : (v > T(1) - eps ? T(1) - eps : v);
    p[i] = v;
  }
  if (tape) {
    tape->head_in = std::move(head_in);
    tape->pred = pred;
  }
  return pred;
}

template <typename T>
Tensor<T> grid_step(const CubicModel<T>& m, GridPhase phase, GridState<T>& state,
                    std::span<const Tensor<T>> window, GridStepTape<T>* tape = nullptr) {
  std::vector<const Tensor<T>*> ptrs;
  ptrs.reserve(window.size());
  for (const auto& f : window) ptrs.push_back(&f);
  return grid_step(m, phase, state, std::span<const Tensor<T>* const>(ptrs), tape);
}

// Reverse sweep of one grid step. `d_temporal` and `d_carry` arrive holding
// the cotangents of the states this step produced and leave holding the
// cotangents of the states it consumed. `d_window`, when given, accumulates
// the cotangents of the input frames.
template <typename T>
void grid_step_backward(const CubicModel<T>& m, GridPhase phase, const GridStepTape<T>& tape,
                        const Tensor<T>* d_pred, std::vector<TemporalState<T>>& d_temporal,
                        std::vector<SpatialState<T>>& d_carry,
                        std::vector<CubicCellParams<T>>& grad_cells, ConvKernel<T>& grad_head,
                        std::vector<Tensor<T>>* d_window) {
  const GridConfig& cfg = m.cfg;
  const int J = cfg.output_layers, L = cfg.spatial_layers;
  const auto& cells = m.cells(phase);

  if (d_pred) {
    const Tensor<T>& p = tape.pred;
    Tensor<T> d_z(p.height(), p.width(), p.channels());
    for (std::size_t i = 0; i < p.size(); ++i) {
      d_z.data()[i] = d_pred->data()[i] * p.data()[i] * (T(1) - p.data()[i]);
    }
    Tensor<T> d_head_in(tape.head_in.height(), tape.head_in.width(), tape.head_in.channels());
    conv2d_backward_acc(tape.head_in, m.frame_head, d_z, d_head_in, grad_head);
    const std::array<int, 2> halves{cfg.state_channels, cfg.state_channels};
    auto parts = split_channels(d_head_in, std::span<const int>(halves));
    add_inplace(d_temporal[static_cast<std::size_t>(cfg.cells()) - 1].hidden, parts[0]);
    add_inplace(d_carry[static_cast<std::size_t>(J) - 1].hidden, parts[1]);
  }

  std::vector<Tensor<T>> d_y_above;  // d_x of the row processed previously (row j+1)
  for (int j = J - 1; j >= 0; --j) {
    SpatialState<T> d_row_sp = std::move(d_carry[j]);
    std::vector<Tensor<T>> d_x_row(static_cast<std::size_t>(L));
    for (int l = L - 1; l >= 0; --l) {
      const std::size_t idx = static_cast<std::size_t>(j) * L + l;
      const Tensor<T>* dy = j + 1 < J ? &d_y_above[l] : nullptr;
      Tensor<T> d_x;
      TemporalState<T> d_t_prev;
      SpatialState<T> d_s_prev;
      cubic_lstm_backward(tape.cells[idx], cells[idx], d_temporal[idx], d_row_sp, dy,
                          grad_cells[idx], d_x, d_t_prev, d_s_prev);
      d_temporal[idx] = std::move(d_t_prev);
      d_row_sp = std::move(d_s_prev);
      if (j > 0) {
        d_x_row[l] = std::move(d_x);
      } else if (d_window) {
        add_inplace((*d_window)[l], d_x);
      }
    }
    d_carry[j] = std::move(d_row_sp);
    d_y_above = std::move(d_x_row);
  }
}

// ---------------------------------------------------------------------------
// Encoder-decoder rollout
// ---------------------------------------------------------------------------

template <typename T>
struct RolloutTape {
  std::vector<GridStepTape<T>> enc;
  std::vector<GridStepTape<T>> dec;
  std::vector<Tensor<T>> predictions;
  int context_used = 0;
};

// Feeds the encoder every in-context window [t-L+1 .. t]; returns its final
// state, which seeds the decoder.
template <typename T>
GridState<T> run_encoder(const CubicModel<T>& m, std::span<const Tensor<T>> context,
                         std::vector<GridStepTape<T>>* tapes = nullptr) {
  const int L = m.cfg.spatial_layers;
  const int n = static_cast<int>(context.size());
  if (n < L) {
    throw UsageError("encoder: context of " + std::to_string(n) + " frames is shorter than the " +
                     std::to_string(L) + "-frame window");
  }
  GridState<T> state = init_state(m);
  if (tapes) tapes->resize(static_cast<std::size_t>(n - L + 1));
  std::vector<const Tensor<T>*> window(static_cast<std::size_t>(L));
  for (int e = L - 1; e < n; ++e) {
    for (int l = 0; l < L; ++l) window[l] = &context[e - L + 1 + l];
    grid_step(m, GridPhase::encoder, state, std::span<const Tensor<T>* const>(window),
              tapes ? &(*tapes)[e - L + 1] : nullptr);
  }
  return state;
}

// Closed-loop prediction: the decoder starts from the encoder's final state
// and emits `horizon` frames; its window is always the L most recent frames
// of the combined stream (context then own predictions).
template <typename T>
std::vector<Tensor<T>> encode_decode(const CubicModel<T>& m, std::span<const Tensor<T>> context,
                                     int horizon, RolloutTape<T>* tape = nullptr) {
  if (horizon < 0) throw UsageError("encode_decode: horizon must be >= 0");
  GridState<T> state = run_encoder(m, context, tape ? &tape->enc : nullptr);
  const int L = m.cfg.spatial_layers;
  const int n = static_cast<int>(context.size());
  if (tape) {
    tape->context_used = n;
    tape->dec.resize(static_cast<std::size_t>(horizon));
    tape->predictions.clear();
  }
  std::vector<Tensor<T>> preds;
  preds.reserve(static_cast<std::size_t>(horizon));
  std::vector<const Tensor<T>*> window(static_cast<std::size_t>(L));
  for (int k = 0; k < horizon; ++k) {
    for (int l = 0; l < L; ++l) {
      const int pos = n + k - L + l;
      window[l] = pos < n ? &context[pos] : &preds[pos - n];
    }
    Tensor<T> p = grid_step(m, GridPhase::decoder, state,
                            std::span<const Tensor<T>* const>(window), tape ? &tape->dec[k] : nullptr);
    preds.push_back(std::move(p));
  }
  if (tape) tape->predictions = preds;
  return preds;
}

// Full reverse-mode sweep of encode_decode: through the decoder (including
// the paths where fed-back predictions re-enter later windows), across the
// state copy into the encoder, and down to every parameter. Gradients
// accumulate into `grad`, a zero-initialized model of the same config.
template <typename T>
void encode_decode_backward(const CubicModel<T>& m, const RolloutTape<T>& tape,
                            std::span<const Tensor<T>> d_predictions, CubicModel<T>& grad) {
  const GridConfig& cfg = m.cfg;
  const int L = cfg.spatial_layers;
  const int n = tape.context_used;
  const int horizon = static_cast<int>(tape.dec.size());
  if (static_cast<int>(d_predictions.size()) != horizon) {
    throw UsageError("encode_decode_backward: cotangent count does not match predictions");
  }

  std::vector<Tensor<T>> d_preds(d_predictions.begin(), d_predictions.end());
  std::vector<TemporalState<T>> d_temporal(static_cast<std::size_t>(cfg.cells()));
  for (auto& t : d_temporal) {
    t.cell = Tensor<T>(cfg.frame_height, cfg.frame_width, cfg.state_channels);
    t.hidden = Tensor<T>(cfg.frame_height, cfg.frame_width, cfg.state_channels);
  }
  std::vector<SpatialState<T>> d_carry(static_cast<std::size_t>(cfg.output_layers));
  for (auto& s : d_carry) {
    s.cell = Tensor<T>(cfg.frame_height, cfg.frame_width, cfg.state_channels);
    s.hidden = Tensor<T>(cfg.frame_height, cfg.frame_width, cfg.state_channels);
  }

  std::vector<Tensor<T>> d_window(static_cast<std::size_t>(L));
  for (int k = horizon - 1; k >= 0; --k) {
    for (auto& t : d_window) t = Tensor<T>(cfg.frame_height, cfg.frame_width, cfg.frame_channels);
    grid_step_backward(m, GridPhase::decoder, tape.dec[k], &d_preds[k], d_temporal, d_carry,
                       grad.cells(GridPhase::decoder), grad.frame_head, &d_window);
    for (int l = 0; l < L; ++l) {
      const int pos = n + k - L + l;
      if (pos >= n) add_inplace(d_preds[pos - n], d_window[l]);
    }
  }
  // Decoder initial state was copied from the encoder's final state, so the
  // cotangents flow through unchanged.
  for (int t = static_cast<int>(tape.enc.size()) - 1; t >= 0; --t) {
    grid_step_backward(m, GridPhase::encoder, tape.enc[t], static_cast<const Tensor<T>*>(nullptr),
                       d_temporal, d_carry, grad.cells(GridPhase::encoder), grad.frame_head,
                       static_cast<std::vector<Tensor<T>>*>(nullptr));
  }
}

// ---------------------------------------------------------------------------
// State visualization
// ---------------------------------------------------------------------------

struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

// Per-channel images of sigma(value) * 255, round-half-up: the temporal
// hidden channels of cell (j, l) first, then the row's spatial hidden
// channels.
template <typename T>
std::vector<GrayImage> visualize_states(const GridState<T>& state, const GridConfig& cfg, int j,
                                        int l) {
  detail::require_valid_state(cfg, state);
  if (j < 0 || j >= cfg.output_layers || l < 0 || l >= cfg.spatial_layers) {
    throw UsageError("visualize_states: cell (" + std::to_string(j) + ", " + std::to_string(l) +
                     ") out of range for a " + std::to_string(cfg.output_layers) + "x" +
                     std::to_string(cfg.spatial_layers) + " grid");
  }
  auto render = [](const Tensor<T>& t, std::vector<GrayImage>& out) {
    for (int ch = 0; ch < t.channels(); ++ch) {
      GrayImage img;
      img.height = t.height();
      img.width = t.width();
      img.pixels.resize(static_cast<std::size_t>(t.height()) * t.width());
      std::size_t i = 0;
      for (int y = 0; y < t.height(); ++y) {
        for (int x = 0; x < t.width(); ++x) {
          const double v = sigmoid_scalar(static_cast<double>(t.at(y, x, ch))) * 255.0;
          long q = round_half_up(v);
          q = q < 0 ? 0 : (q > 255 ? 255 : q);
          img.pixels[i++] = static_cast<std::uint8_t>(q);
        }
      }
      out.push_back(std::move(img));
    }
  };
  std::vector<GrayImage> out;
  out.reserve(static_cast<std::size_t>(2) * cfg.state_channels);
  render(state.temporal[static_cast<std::size_t>(j) * cfg.spatial_layers + l].hidden, out);
  render(state.spatial_carry[static_cast<std::size_t>(j)].hidden, out);
  return out;
}

}  // namespace cubic
