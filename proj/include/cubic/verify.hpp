// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference verification suite: every analytic backward pass in the
// library against the central-difference oracle, in 64-bit, from elementwise
// ops up to a small end-to-end grid rollout. Used by the `gradcheck` CLI
// command and by the acceptance tests.

#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "cubic/conv.hpp"
#include "cubic/gradcheck.hpp"
#include "cubic/grid.hpp"
#include "cubic/loss.hpp"
#include "cubic/lstm.hpp"
#include "cubic/rng.hpp"
#include "cubic/tensor.hpp"

namespace cubic {

constexpr double kGradCheckTolerance = 1e-4;

struct GradCheckOptions {
  bool quick = false;         // unit steps only
  bool inject_fault = false;  // deliberately corrupt one analytic gradient (test fixture)
  double eps = 1e-5;
  // Probe step for the full-rollout check (4th-order stencil). At 1e-5 the
  // double-roundoff cancellation noise of a ~20-step loss evaluation swamps
  // gradient entries near the 1e-8 relative-error floor.
  double eps_grid = 2e-3;
  std::uint64_t seed = 0x5EEDC0DEull;
};

struct GradCheckResult {
  std::string target;
  double max_rel_err = 0;
};

namespace detail {

inline void fill_random(Tensor<double>& t, SplitMix64& rng, double lo, double hi) {
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
}

inline void fill_random(std::vector<double>& v, SplitMix64& rng, double lo, double hi) {
  for (auto& x : v) x = rng.uniform(lo, hi);
}

inline double project(const Tensor<double>& t, const Tensor<double>& p) {
  double s = 0;
  for (std::size_t i = 0; i < t.size(); ++i) s += t.data()[i] * p.data()[i];
  return s;
}

inline double project(std::span<const double> t, std::span<const double> p) {
  double s = 0;
  for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * p[i];
  return s;
}

}  // namespace detail

inline std::vector<GradCheckResult> run_gradcheck(const GradCheckOptions& opt = {}) {
  SplitMix64 rng(opt.seed);
  std::vector<GradCheckResult> results;
  auto report = [&results](const std::string& target, double err) {
    results.push_back({target, err});
  };

  using detail::fill_random;
  using detail::project;

  // --- tensor-core operations -------------------------------------------
  if (!opt.quick) {
    {
      Tensor<double> x(4, 4, 2);
      fill_random(x, rng, -1, 1);
      ConvKernel<double> k(3, 3, 2, 3);
      fill_random(k.weights, rng, -1, 1);
      fill_random(k.bias, rng, -1, 1);
      Tensor<double> proj(4, 4, 3);
      fill_random(proj, rng, -1, 1);

      auto [gi, gk] = conv2d_backward(x, k, proj);
      auto loss_x = [&](const Tensor<double>& probe) { return project(conv2d(probe, k), proj); };
      report("conv2d.input", max_rel_err(gi, finite_diff_grad(loss_x, x, opt.eps)));
      auto loss_params = [&]() { return project(conv2d(x, k), proj); };
      report("conv2d.weights",
             max_rel_err(std::span<const double>(gk.weights),
                         std::span<const double>(
                             finite_diff_span(loss_params, std::span<double>(k.weights), opt.eps))));
      report("conv2d.bias",
             max_rel_err(std::span<const double>(gk.bias),
                         std::span<const double>(
                             finite_diff_span(loss_params, std::span<double>(k.bias), opt.eps))));
    }
    {
      Tensor<double> x(5, 5, 3);
      fill_random(x, rng, -3, 3);
      Tensor<double> proj(5, 5, 3);
      fill_random(proj, rng, -1, 1);
      report("sigmoid.input",
             max_rel_err(sigmoid_backward(sigmoid(x), proj),
                         finite_diff_grad(
                             [&](const Tensor<double>& p) { return project(sigmoid(p), proj); }, x,
                             opt.eps)));
      report("tanh.input",
             max_rel_err(tanh_backward(tanh_act(x), proj),
                         finite_diff_grad(
                             [&](const Tensor<double>& p) { return project(tanh_act(p), proj); }, x,
                             opt.eps)));
    }
    {
      Tensor<double> a(3, 4, 2), b(3, 4, 2), proj(3, 4, 2);
      fill_random(a, rng, -2, 2);
      fill_random(b, rng, -2, 2);
      fill_random(proj, rng, -1, 1);
      auto [ga, gb] = mul_backward(a, b, proj);
      report("elementwise_mul.lhs",
             max_rel_err(ga, finite_diff_grad(
                                 [&](const Tensor<double>& p) {
                                   return project(elementwise_mul(p, b), proj);
                                 },
                                 a, opt.eps)));
      report("elementwise_mul.rhs",
             max_rel_err(gb, finite_diff_grad(
                                 [&](const Tensor<double>& p) {
                                   return project(elementwise_mul(a, p), proj);
                                 },
                                 b, opt.eps)));
      report("elementwise_add.lhs",
             max_rel_err(proj, finite_diff_grad(
                                   [&](const Tensor<double>& p) {
                                     return project(elementwise_add(p, b), proj);
                                   },
                                   a, opt.eps)));
    }
  }

  // --- fc_lstm_step -------------------------------------------------------
  {
    const int in_dim = 3, d = 4;
    auto p = FcLstmParams<double>::zeros(in_dim, d);
    fill_random(p.weights, rng, -0.8, 0.8);
    fill_random(p.bias, rng, -0.5, 0.5);
    std::vector<double> x(in_dim), c0(d), h0(d), ph(d), pc(d);
    fill_random(x, rng, -1, 1);
    fill_random(c0, rng, -1, 1);
    fill_random(h0, rng, -1, 1);
    fill_random(ph, rng, -1, 1);
    fill_random(pc, rng, -1, 1);

    auto loss = [&]() {
      auto [c, h] = fc_lstm_step<double>(x, c0, h0, p);
      return project(std::span<const double>(c), std::span<const double>(pc)) +
             project(std::span<const double>(h), std::span<const double>(ph));
    };
    FcLstmTape<double> tape;
    fc_lstm_step<double>(x, c0, h0, p, &tape);
    auto grad = FcLstmParams<double>::zeros(in_dim, d);
    std::vector<double> dx, dc0, dh0;
    fc_lstm_backward<double>(tape, p, pc, ph, dx, dc0, dh0, grad);

    auto check_span = [&](const std::string& name, std::span<const double> analytic,
                          std::span<double> storage) {
      report(name, max_rel_err(analytic, std::span<const double>(
                                             finite_diff_span(loss, storage, opt.eps))));
    };
    check_span("fc_lstm.weights", grad.weights, p.weights);
    check_span("fc_lstm.bias", grad.bias, p.bias);
    check_span("fc_lstm.x", dx, x);
    check_span("fc_lstm.c_prev", dc0, c0);
    check_span("fc_lstm.h_prev", dh0, h0);
  }

  // --- conv_lstm_step ------------------------------------------------------
  {
    const int h = 4, w = 4, xc = 2, c = 3;
    Tensor<double> x(h, w, xc);
    fill_random(x, rng, -1, 1);
    TemporalState<double> prev{Tensor<double>(h, w, c), Tensor<double>(h, w, c)};
    fill_random(prev.cell, rng, -1, 1);
    fill_random(prev.hidden, rng, -1, 1);
    ConvKernel<double> k(3, 3, xc + c, 4 * c);
    fill_random(k.weights, rng, -0.5, 0.5);
    fill_random(k.bias, rng, -0.3, 0.3);
    Tensor<double> ph(h, w, c), pc(h, w, c);
    fill_random(ph, rng, -1, 1);
    fill_random(pc, rng, -1, 1);

    auto loss = [&]() {
      auto next = conv_lstm_step(x, prev, k);
      return project(next.cell, pc) + project(next.hidden, ph);
    };
    ConvLstmTape<double> tape;
    conv_lstm_step(x, prev, k, &tape);
    ConvKernel<double> gk(k.kh, k.kw, k.in_channels, k.out_channels);
    Tensor<double> dx;
    TemporalState<double> dprev;
    conv_lstm_backward(tape, k, TemporalState<double>{pc, ph}, dx, dprev, gk);

    report("conv_lstm.kernel.weight",
           max_rel_err(std::span<const double>(gk.weights),
                       std::span<const double>(
                           finite_diff_span(loss, std::span<double>(k.weights), opt.eps))));
    report("conv_lstm.kernel.bias",
           max_rel_err(std::span<const double>(gk.bias),
                       std::span<const double>(
                           finite_diff_span(loss, std::span<double>(k.bias), opt.eps))));
    report("conv_lstm.x", max_rel_err(std::span<const double>(dx.values()),
                                      std::span<const double>(finite_diff_span(
                                          loss, std::span<double>(x.values()), opt.eps))));
    report("conv_lstm.prev_cell",
           max_rel_err(std::span<const double>(dprev.cell.values()),
                       std::span<const double>(
                           finite_diff_span(loss, std::span<double>(prev.cell.values()), opt.eps))));
    report("conv_lstm.prev_hidden",
           max_rel_err(std::span<const double>(dprev.hidden.values()),
                       std::span<const double>(finite_diff_span(
                           loss, std::span<double>(prev.hidden.values()), opt.eps))));
  }

  // --- cubic_lstm_step: all three kernels and both input states ------------
  {
    const int h = 4, w = 4, xc = 2, c = 3;
    Tensor<double> x(h, w, xc);
    fill_random(x, rng, -1, 1);
    TemporalState<double> tprev{Tensor<double>(h, w, c), Tensor<double>(h, w, c)};
    SpatialState<double> sprev{Tensor<double>(h, w, c), Tensor<double>(h, w, c)};
    fill_random(tprev.cell, rng, -1, 1);
    fill_random(tprev.hidden, rng, -1, 1);
    fill_random(sprev.cell, rng, -1, 1);
    fill_random(sprev.hidden, rng, -1, 1);
    CubicCellParams<double> params;
    params.temporal = ConvKernel<double>(1, 1, xc + 2 * c, 4 * c);
    params.spatial = ConvKernel<double>(5, 5, xc + 2 * c, 4 * c);
    params.output = ConvKernel<double>(1, 1, 2 * c, 2);
    fill_random(params.temporal.weights, rng, -0.5, 0.5);
    fill_random(params.temporal.bias, rng, -0.3, 0.3);
    fill_random(params.spatial.weights, rng, -0.3, 0.3);
    fill_random(params.spatial.bias, rng, -0.3, 0.3);
    fill_random(params.output.weights, rng, -0.5, 0.5);
    fill_random(params.output.bias, rng, -0.3, 0.3);

    Tensor<double> py(h, w, 2), ptc(h, w, c), pth(h, w, c), psc(h, w, c), psh(h, w, c);
    fill_random(py, rng, -1, 1);
    fill_random(ptc, rng, -1, 1);
    fill_random(pth, rng, -1, 1);
    fill_random(psc, rng, -1, 1);
    fill_random(psh, rng, -1, 1);

    auto loss = [&]() {
      auto r = cubic_lstm_step(x, tprev, sprev, params);
      return project(r.y, py) + project(r.temporal.cell, ptc) + project(r.temporal.hidden, pth) +
             project(r.spatial.cell, psc) + project(r.spatial.hidden, psh);
    };
    CubicStepTape<double> tape;
    cubic_lstm_step(x, tprev, sprev, params, &tape);
    CubicCellParams<double> grad;
    grad.temporal = ConvKernel<double>(1, 1, xc + 2 * c, 4 * c);
    grad.spatial = ConvKernel<double>(5, 5, xc + 2 * c, 4 * c);
    grad.output = ConvKernel<double>(1, 1, 2 * c, 2);
    Tensor<double> dx;
    TemporalState<double> dtprev;
    SpatialState<double> dsprev;
    cubic_lstm_backward(tape, params, TemporalState<double>{ptc, pth},
                        SpatialState<double>{psc, psh}, &py, grad, dx, dtprev, dsprev);
    if (opt.inject_fault) {
      grad.temporal.weights[0] += 0.05 * (1.0 + std::abs(grad.temporal.weights[0]));
    }

    auto check_span = [&](const std::string& name, std::span<const double> analytic,
                          std::span<double> storage) {
      report(name, max_rel_err(analytic, std::span<const double>(
                                             finite_diff_span(loss, storage, opt.eps))));
    };
    check_span("cubic_lstm.temporal.weight", grad.temporal.weights, params.temporal.weights);
    check_span("cubic_lstm.temporal.bias", grad.temporal.bias, params.temporal.bias);
    check_span("cubic_lstm.spatial.weight", grad.spatial.weights, params.spatial.weights);
    check_span("cubic_lstm.spatial.bias", grad.spatial.bias, params.spatial.bias);
    check_span("cubic_lstm.output.weight", grad.output.weights, params.output.weights);
    check_span("cubic_lstm.output.bias", grad.output.bias, params.output.bias);
    check_span("cubic_lstm.x", dx.values(), x.values());
    check_span("cubic_lstm.temporal_prev.cell", dtprev.cell.values(), tprev.cell.values());
    check_span("cubic_lstm.temporal_prev.hidden", dtprev.hidden.values(), tprev.hidden.values());
    check_span("cubic_lstm.spatial_prev.cell", dsprev.cell.values(), sprev.cell.values());
    check_span("cubic_lstm.spatial_prev.hidden", dsprev.hidden.values(), sprev.hidden.values());
  }

  // --- end-to-end grid: every parameter of a (J=1, L=2, c=2, 6x6) rollout --
  if (!opt.quick) {
    GridConfig cfg;
    cfg.spatial_layers = 2;
    cfg.output_layers = 1;
    cfg.state_channels = 2;
    cfg.frame_height = 6;
    cfg.frame_width = 6;
    cfg.frame_channels = 1;
    cfg.context_len = 3;
    cfg.predict_len = 2;
    auto model = CubicModel<double>::create(cfg);
    model.init_params(rng.next());

    std::vector<Tensor<double>> context, targets;
    for (int i = 0; i < cfg.context_len; ++i) {
      Tensor<double> f(6, 6, 1);
      fill_random(f, rng, 0, 1);
      context.push_back(std::move(f));
    }
    for (int i = 0; i < cfg.predict_len; ++i) {
      Tensor<double> f(6, 6, 1);
      fill_random(f, rng, 0, 1);
      targets.push_back(std::move(f));
    }

    auto loss = [&]() {
      const auto preds = encode_decode(model, std::span<const Tensor<double>>(context),
                                       cfg.predict_len);
      return mse_value<double>(preds, targets);
    };
    RolloutTape<double> tape;
    const auto preds = encode_decode(model, std::span<const Tensor<double>>(context),
                                     cfg.predict_len, &tape);
    auto loss_grads = mse_loss<double>(preds, targets);
    CubicModel<double> grads = CubicModel<double>::create(cfg);
    encode_decode_backward(model, tape, std::span<const Tensor<double>>(loss_grads.grads), grads);

    auto params = model.parameters();
    auto grad_params = grads.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      report("grid." + params[i].name,
             max_rel_err(std::span<const double>(*grad_params[i].values),
                         std::span<const double>(finite_diff_span_4th(
                             loss, std::span<double>(*params[i].values), opt.eps_grid))));
    }
  }

  return results;
}

inline bool gradcheck_passed(const std::vector<GradCheckResult>& results,
                             double tolerance = kGradCheckTolerance) {
  for (const auto& r : results) {
    if (!(r.max_rel_err < tolerance)) return false;
  }
  return !results.empty();
}

}  // namespace cubic
