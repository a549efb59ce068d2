// SPDX-License-Identifier: Apache-2.0
//
// Recurrence-step tests: fully-connected LSTM, ConvLSTM, CubicLSTM. Scalar
// hand-traces serve as oracles for the gate algebra; structural reductions
// (1x1 grid, zeroed weight blocks) are checked bitwise.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "cubic/gradcheck.hpp"
#include "cubic/lstm.hpp"
#include "cubic/rng.hpp"

using namespace cubic;

namespace {

void fill_random(Tensor<double>& t, SplitMix64& rng, double lo = -1, double hi = 1) {
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
}

void fill_random(std::vector<double>& v, SplitMix64& rng, double lo = -1, double hi = 1) {
  for (auto& x : v) x = rng.uniform(lo, hi);
}

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.same_shape(b) && std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

TemporalState<double> random_state(SplitMix64& rng, int h, int w, int c) {
  TemporalState<double> s{Tensor<double>(h, w, c), Tensor<double>(h, w, c)};
  fill_random(s.cell, rng);
  fill_random(s.hidden, rng);
  return s;
}

ConvKernel<double> random_kernel(SplitMix64& rng, int kh, int kw, int ic, int oc, double scale = 0.5) {
  ConvKernel<double> k(kh, kw, ic, oc);
  for (auto& w : k.weights) w = rng.uniform(-scale, scale);
  for (auto& b : k.bias) b = rng.uniform(-scale, scale);
  return k;
}

}  // namespace

// ---------------------------------------------------------------------------
// FC-LSTM
// ---------------------------------------------------------------------------

TEST_CASE("fc_lstm_step: zero parameters and zero cell give a zero state") {
  auto p = FcLstmParams<double>::zeros(3, 4);
  std::vector<double> x{0.3, -0.7, 1.1}, c0(4, 0.0), h0(4, 0.0);
  const auto [c, h] = fc_lstm_step<double>(x, c0, h0, p);
  for (const auto v : c) CHECK(v == 0.0);
  for (const auto v : h) CHECK(v == 0.0);
}

TEST_CASE("fc_lstm_step: zero parameters, unit cell -> scalar hand evaluation") {
  // All gates sigmoid(0) = 1/2, candidate tanh(0) = 0:
  //   c = 1/2 * 1 + 1/2 * 0 = 1/2, h = 1/2 * tanh(1/2).
  auto p = FcLstmParams<double>::zeros(2, 3);
  std::vector<double> x{1.0, -1.0}, c0(3, 1.0), h0(3, 0.0);
  const auto [c, h] = fc_lstm_step<double>(x, c0, h0, p);
  const double want_h = 0.5 * std::tanh(0.5);
  for (const auto v : c) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));
  for (const auto v : h) {
    CHECK(v == doctest::Approx(want_h).epsilon(1e-12));
    CHECK(v == doctest::Approx(0.23106).epsilon(1e-4));
  }
}

TEST_CASE("fc_lstm_step: saturated forget gate preserves the cell, zero output gate mutes h") {
  const int d = 3;
  auto p = FcLstmParams<double>::zeros(2, d);
  for (int j = 0; j < d; ++j) {
    p.bias[j] = -20.0;          // input gate ~ 0
    p.bias[d + j] = 20.0;       // forget gate ~ 1
    p.bias[2 * d + j] = -20.0;  // output gate ~ 0
    p.bias[3 * d + j] = -20.0;  // candidate ~ -1 (suppressed by the input gate)
  }
  SplitMix64 rng(5);
  std::vector<double> x{0.2, -0.4}, c0(d), h0(d);
  fill_random(c0, rng);
  fill_random(h0, rng);
  const auto [c, h] = fc_lstm_step<double>(x, c0, h0, p);
  for (int j = 0; j < d; ++j) {
    CHECK(std::abs(c[j] - c0[j]) < 1e-6);
    CHECK(std::abs(h[j]) < 1e-6);
  }
}

TEST_CASE("fc_lstm_step rejects mismatched dimensions") {
  auto p = FcLstmParams<double>::zeros(3, 4);
  std::vector<double> x{1.0, 2.0}, c0(4, 0.0), h0(4, 0.0);
  CHECK_THROWS_AS((void)fc_lstm_step<double>(x, c0, h0, p), ConfigError);
}

TEST_CASE("fc_lstm backward matches finite differences") {
  SplitMix64 rng(11);
  auto p = FcLstmParams<double>::zeros(3, 2);
  fill_random(p.weights, rng, -0.8, 0.8);
  fill_random(p.bias, rng, -0.5, 0.5);
  std::vector<double> x(3), c0(2), h0(2), ph(2), pc(2);
  fill_random(x, rng);
  fill_random(c0, rng);
  fill_random(h0, rng);
  fill_random(ph, rng);
  fill_random(pc, rng);

  auto loss = [&]() {
    const auto [c, h] = fc_lstm_step<double>(x, c0, h0, p);
    double s = 0;
    for (std::size_t i = 0; i < c.size(); ++i) s += c[i] * pc[i] + h[i] * ph[i];
    return s;
  };
  FcLstmTape<double> tape;
  fc_lstm_step<double>(x, c0, h0, p, &tape);
  auto grad = FcLstmParams<double>::zeros(3, 2);
  std::vector<double> dx, dc0, dh0;
  fc_lstm_backward<double>(tape, p, pc, ph, dx, dc0, dh0, grad);

  CHECK(max_rel_err(std::span<const double>(grad.weights),
                    std::span<const double>(finite_diff_span(loss, std::span<double>(p.weights)))) <
        1e-4);
  CHECK(max_rel_err(std::span<const double>(dx),
                    std::span<const double>(finite_diff_span(loss, std::span<double>(x)))) < 1e-4);
  CHECK(max_rel_err(std::span<const double>(dc0),
                    std::span<const double>(finite_diff_span(loss, std::span<double>(c0)))) < 1e-4);
}

// ---------------------------------------------------------------------------
// ConvLSTM
// ---------------------------------------------------------------------------

TEST_CASE("conv_lstm_step: zero kernel and zero state stay zero") {
  Tensor<double> x(3, 3, 2);
  x.at(1, 1, 0) = 5.0;
  TemporalState<double> prev{Tensor<double>(3, 3, 4), Tensor<double>(3, 3, 4)};
  ConvKernel<double> k(3, 3, 6, 16);
  const auto next = conv_lstm_step(x, prev, k);
  for (const auto v : next.cell.values()) CHECK(v == 0.0);
  for (const auto v : next.hidden.values()) CHECK(v == 0.0);
}

TEST_CASE("conv_lstm_step on a 1x1 grid is bitwise the fc step with the kernel as matrix") {
  SplitMix64 rng(21);
  const int xc = 3, d = 5;
  Tensor<double> x(1, 1, xc);
  fill_random(x, rng);
  TemporalState<double> prev = random_state(rng, 1, 1, d);
  ConvKernel<double> k = random_kernel(rng, 1, 1, xc + d, 4 * d, 0.9);

  auto p = FcLstmParams<double>::zeros(xc, d);
  for (int i = 0; i < xc + d; ++i) {
    for (int o = 0; o < 4 * d; ++o) p.weights[static_cast<std::size_t>(i) * 4 * d + o] = k.w(0, 0, i, o);
  }
  p.bias.assign(k.bias.begin(), k.bias.end());

  const auto next = conv_lstm_step(x, prev, k);
  const std::vector<double> xv(x.data(), x.data() + xc);
  const std::vector<double> cv(prev.cell.data(), prev.cell.data() + d);
  const std::vector<double> hv(prev.hidden.data(), prev.hidden.data() + d);
  const auto [c, h] = fc_lstm_step<double>(xv, cv, hv, p);

  CHECK(std::memcmp(next.cell.data(), c.data(), d * sizeof(double)) == 0);
  CHECK(std::memcmp(next.hidden.data(), h.data(), d * sizeof(double)) == 0);
}

TEST_CASE("conv_lstm parameter gradients match finite differences") {
  SplitMix64 rng(23);
  Tensor<double> x(3, 3, 2);
  fill_random(x, rng);
  TemporalState<double> prev = random_state(rng, 3, 3, 2);
  ConvKernel<double> k = random_kernel(rng, 3, 3, 4, 8);
  Tensor<double> ph(3, 3, 2);
  fill_random(ph, rng);

  auto loss = [&]() {
    const auto next = conv_lstm_step(x, prev, k);
    double s = 0;
    for (std::size_t i = 0; i < ph.size(); ++i) s += next.hidden.data()[i] * ph.data()[i];
    return s;
  };
  ConvLstmTape<double> tape;
  conv_lstm_step(x, prev, k, &tape);
  ConvKernel<double> gk(3, 3, 4, 8);
  Tensor<double> dx;
  TemporalState<double> dprev;
  const Tensor<double> zero_cell(3, 3, 2);
  conv_lstm_backward(tape, k, TemporalState<double>{zero_cell, ph}, dx, dprev, gk);

  CHECK(max_rel_err(std::span<const double>(gk.weights),
                    std::span<const double>(finite_diff_span(loss, std::span<double>(k.weights)))) <
        1e-4);
  CHECK(max_rel_err(std::span<const double>(gk.bias),
                    std::span<const double>(finite_diff_span(loss, std::span<double>(k.bias)))) <
        1e-4);
}

TEST_CASE("conv_lstm_step rejects a kernel whose input arity is wrong") {
  Tensor<double> x(3, 3, 2);
  TemporalState<double> prev{Tensor<double>(3, 3, 4), Tensor<double>(3, 3, 4)};
  ConvKernel<double> k(3, 3, 5, 16);
  CHECK_THROWS_AS((void)conv_lstm_step(x, prev, k), ConfigError);
}

// ---------------------------------------------------------------------------
// CubicLSTM
// ---------------------------------------------------------------------------

namespace {

CubicCellParams<double> random_cell(SplitMix64& rng, int xc, int c, int tk = 1, int sk = 5) {
  CubicCellParams<double> p;
  p.temporal = random_kernel(rng, tk, tk, xc + 2 * c, 4 * c);
  p.spatial = random_kernel(rng, sk, sk, xc + 2 * c, 4 * c, 0.3);
  p.output = random_kernel(rng, 1, 1, 2 * c, c);
  return p;
}

}  // namespace

TEST_CASE("cubic_lstm_step: all-zero parameters and states produce zeros") {
  SplitMix64 rng(31);
  Tensor<double> x(4, 4, 1);
  fill_random(x, rng);
  CubicCellParams<double> p;
  p.temporal = ConvKernel<double>(1, 1, 1 + 4, 8);
  p.spatial = ConvKernel<double>(5, 5, 1 + 4, 8);
  p.output = ConvKernel<double>(1, 1, 4, 2);
  TemporalState<double> tprev{Tensor<double>(4, 4, 2), Tensor<double>(4, 4, 2)};
  SpatialState<double> sprev{Tensor<double>(4, 4, 2), Tensor<double>(4, 4, 2)};
  const auto r = cubic_lstm_step(x, tprev, sprev, p);
  for (const auto v : r.temporal.cell.values()) CHECK(v == 0.0);
  for (const auto v : r.temporal.hidden.values()) CHECK(v == 0.0);
  for (const auto v : r.spatial.cell.values()) CHECK(v == 0.0);
  for (const auto v : r.spatial.hidden.values()) CHECK(v == 0.0);
  for (const auto v : r.y.values()) CHECK(v == 0.0);
}

TEST_CASE("zeroing the spatial-hidden block of the temporal kernel reduces to conv_lstm_step") {
  SplitMix64 rng(37);
  for (const int tk : {1, 3}) {
    const int xc = 2, c = 3, h = 4, w = 5;
    Tensor<double> x(h, w, xc);
    fill_random(x, rng);
    TemporalState<double> tprev = random_state(rng, h, w, c);
    SpatialState<double> sprev{Tensor<double>(h, w, c), Tensor<double>(h, w, c)};
    fill_random(sprev.cell, rng);
    fill_random(sprev.hidden, rng);

    CubicCellParams<double> p = random_cell(rng, xc, c, tk);
    // Temporal gate input is [x, h_spatial, h_temporal]; silence the middle block.
    for (int ky = 0; ky < tk; ++ky) {
      for (int kx = 0; kx < tk; ++kx) {
        for (int i = xc; i < xc + c; ++i) {
          for (int o = 0; o < 4 * c; ++o) p.temporal.w(ky, kx, i, o) = 0.0;
        }
      }
    }
    ConvKernel<double> reduced(tk, tk, xc + c, 4 * c);
    for (int ky = 0; ky < tk; ++ky) {
      for (int kx = 0; kx < tk; ++kx) {
        for (int i = 0; i < xc + c; ++i) {
          const int src = i < xc ? i : i + c;
          for (int o = 0; o < 4 * c; ++o) reduced.w(ky, kx, i, o) = p.temporal.w(ky, kx, src, o);
        }
      }
    }
    reduced.bias = p.temporal.bias;

    const auto full = cubic_lstm_step(x, tprev, sprev, p);
    const auto red = conv_lstm_step(x, tprev, reduced);
    CHECK(bitwise_equal(full.temporal.cell, red.cell));
    CHECK(bitwise_equal(full.temporal.hidden, red.hidden));
  }
}

TEST_CASE("cubic_lstm_step: gradients of sum(y) match finite differences (4x4, c=3)") {
  SplitMix64 rng(41);
  const int xc = 2, c = 3, h = 4, w = 4;
  Tensor<double> x(h, w, xc);
  fill_random(x, rng);
  TemporalState<double> tprev = random_state(rng, h, w, c);
  SpatialState<double> sprev{Tensor<double>(h, w, c), Tensor<double>(h, w, c)};
  fill_random(sprev.cell, rng);
  fill_random(sprev.hidden, rng);
  CubicCellParams<double> p = random_cell(rng, xc, c);

  auto loss = [&]() { return sum_elements(cubic_lstm_step(x, tprev, sprev, p).y); };

  CubicStepTape<double> tape;
  const auto r = cubic_lstm_step(x, tprev, sprev, p, &tape);
  const Tensor<double> d_y = Tensor<double>::full(h, w, c, 1.0);
  CubicCellParams<double> grad;
  grad.temporal = ConvKernel<double>(1, 1, xc + 2 * c, 4 * c);
  grad.spatial = ConvKernel<double>(5, 5, xc + 2 * c, 4 * c);
  grad.output = ConvKernel<double>(1, 1, 2 * c, c);
  Tensor<double> dx;
  TemporalState<double> dtprev;
  SpatialState<double> dsprev;
  const TemporalState<double> zt{Tensor<double>(h, w, c), Tensor<double>(h, w, c)};
  const SpatialState<double> zs{Tensor<double>(h, w, c), Tensor<double>(h, w, c)};
  cubic_lstm_backward(tape, p, zt, zs, &d_y, grad, dx, dtprev, dsprev);

  auto check = [&](std::span<const double> analytic, std::span<double> storage) {
    return max_rel_err(analytic,
                       std::span<const double>(finite_diff_span(loss, storage))) < 1e-4;
  };
  CHECK(check(grad.temporal.weights, p.temporal.weights));
  CHECK(check(grad.temporal.bias, p.temporal.bias));
  CHECK(check(grad.spatial.weights, p.spatial.weights));
  CHECK(check(grad.spatial.bias, p.spatial.bias));
  CHECK(check(grad.output.weights, p.output.weights));
  CHECK(check(grad.output.bias, p.output.bias));
  CHECK(check(dx.values(), x.values()));
  CHECK(check(dtprev.cell.values(), tprev.cell.values()));
  CHECK(check(dtprev.hidden.values(), tprev.hidden.values()));
  CHECK(check(dsprev.cell.values(), sprev.cell.values()));
  CHECK(check(dsprev.hidden.values(), sprev.hidden.values()));
  CHECK(r.y.channels() == c);
}

TEST_CASE("gate ranges and cell-state growth bound hold on random instances") {
  SplitMix64 rng(43);
  for (int round = 0; round < 10; ++round) {
    const int xc = 1 + static_cast<int>(rng.next_below(3));
    const int c = 1 + static_cast<int>(rng.next_below(4));
    const int h = 2 + static_cast<int>(rng.next_below(4));
    const int w = 2 + static_cast<int>(rng.next_below(4));
    Tensor<double> x(h, w, xc);
    fill_random(x, rng, -4, 4);
    TemporalState<double> tprev{Tensor<double>(h, w, c), Tensor<double>(h, w, c)};
    SpatialState<double> sprev{Tensor<double>(h, w, c), Tensor<double>(h, w, c)};
    double bound = 0;
    for (auto& v : tprev.cell.values()) {
      v = rng.uniform(-3, 3);
      bound = std::max(bound, std::abs(v));
    }
    fill_random(tprev.hidden, rng);
    fill_random(sprev.cell, rng, -3, 3);
    fill_random(sprev.hidden, rng);
    CubicCellParams<double> p = random_cell(rng, xc, c, 1, 3);

    CubicStepTape<double> tape;
    const auto r = cubic_lstm_step(x, tprev, sprev, p, &tape);

    const auto& g = tape.temporal.gates;
    const std::size_t block = static_cast<std::size_t>(h) * w;
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        const double* gp = g.pixel(y, xx);
        for (int j = 0; j < 3 * c; ++j) {
          CHECK(gp[j] > 0.0);
          CHECK(gp[j] < 1.0);
        }
        for (int j = 3 * c; j < 4 * c; ++j) {
          CHECK(gp[j] > -1.0);
          CHECK(gp[j] < 1.0);
        }
      }
    }
    for (const auto v : r.temporal.cell.values()) CHECK(std::abs(v) <= bound + 1.0);
    CHECK(r.temporal.cell.height() == h);
    CHECK(r.temporal.cell.width() == w);
    CHECK(r.temporal.cell.channels() == c);
    CHECK(r.y.height() == h);
    CHECK(r.y.width() == w);
    (void)block;
  }
}

TEST_CASE("cubic_lstm_step validates channel arities") {
  Tensor<double> x(4, 4, 2);
  TemporalState<double> tprev{Tensor<double>(4, 4, 3), Tensor<double>(4, 4, 3)};
  SpatialState<double> sprev{Tensor<double>(4, 4, 3), Tensor<double>(4, 4, 3)};
  CubicCellParams<double> p;
  p.temporal = ConvKernel<double>(1, 1, 7, 12);  // wants 8 input channels
  p.spatial = ConvKernel<double>(5, 5, 8, 12);
  p.output = ConvKernel<double>(1, 1, 6, 3);
  CHECK_THROWS_AS((void)cubic_lstm_step(x, tprev, sprev, p), ConfigError);
}
