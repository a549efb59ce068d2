// SPDX-License-Identifier: Apache-2.0
//
// Loss and optimizer tests: closed-form values, finite-difference gradients,
// a hand-unrolled scalar ADAM recurrence, and training-loop smoke checks.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <memory>
#include <vector>

#include "cubic/adam.hpp"
#include "cubic/data.hpp"
#include "cubic/gradcheck.hpp"
#include "cubic/loss.hpp"
#include "cubic/train.hpp"

using namespace cubic;

namespace {

std::vector<Tensor<double>> random_frames(SplitMix64& rng, int n, int h, int w, double lo = 0.05,
                                          double hi = 0.95) {
  std::vector<Tensor<double>> frames;
  for (int i = 0; i < n; ++i) {
    Tensor<double> f(h, w, 1);
    for (auto& v : f.values()) v = rng.uniform(lo, hi);
    frames.push_back(std::move(f));
  }
  return frames;
}

}  // namespace

TEST_CASE("mse: zero at equality, quarter for a half-pixel error") {
  SplitMix64 rng(1);
  const auto frames = random_frames(rng, 3, 4, 4);
  CHECK(mse_value<double>(frames, frames) == 0.0);

  std::vector<Tensor<double>> pred{Tensor<double>::full(1, 1, 1, 0.5)};
  std::vector<Tensor<double>> target{Tensor<double>(1, 1, 1)};
  CHECK(mse_value<double>(pred, target) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("mse gradient matches finite differences on a random 3x3 pair") {
  SplitMix64 rng(2);
  auto pred = random_frames(rng, 2, 3, 3);
  const auto target = random_frames(rng, 2, 3, 3);
  const auto res = mse_loss<double>(pred, target);
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const auto fd = finite_diff_grad(
        [&](const Tensor<double>& probe) {
          auto probe_list = pred;
          probe_list[k] = probe;
          return mse_value<double>(probe_list, target);
        },
        pred[k], 1e-6);
    CHECK(max_rel_err(res.grads[k], fd) < 1e-6);
  }
}

TEST_CASE("bce: ln 2 at (0.5, 0.5), vanishing at a confident correct answer") {
  std::vector<Tensor<double>> half{Tensor<double>::full(1, 1, 1, 0.5)};
  CHECK(bce_value<double>(half, half) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(bce_value<double>(half, half) == doctest::Approx(0.693147).epsilon(1e-5));

  std::vector<Tensor<double>> confident{Tensor<double>::full(1, 1, 1, 1.0 - 1e-7)};
  std::vector<Tensor<double>> ones{Tensor<double>::full(1, 1, 1, 1.0)};
  CHECK(bce_value<double>(confident, ones) < 1e-6);
  CHECK(bce_value<double>(confident, ones) >= 0.0);
}

TEST_CASE("bce gradient matches finite differences; domain guard fires") {
  SplitMix64 rng(3);
  auto pred = random_frames(rng, 2, 3, 3, 0.1, 0.9);
  const auto target = random_frames(rng, 2, 3, 3, 0.0, 1.0);
  const auto res = bce_loss<double>(pred, target);
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const auto fd = finite_diff_grad(
        [&](const Tensor<double>& probe) {
          auto probe_list = pred;
          probe_list[k] = probe;
          return bce_value<double>(probe_list, target);
        },
        pred[k], 1e-7);
    CHECK(max_rel_err(res.grads[k], fd) < 1e-5);
  }

  std::vector<Tensor<double>> bad{Tensor<double>::full(2, 2, 1, 1.0)};
  std::vector<Tensor<double>> t{Tensor<double>::full(2, 2, 1, 1.0)};
  CHECK_THROWS_AS((void)bce_value<double>(bad, t), NumericError);
}

TEST_CASE("losses are non-negative and reject mismatched lists") {
  SplitMix64 rng(4);
  const auto a = random_frames(rng, 2, 3, 3);
  const auto b = random_frames(rng, 2, 3, 3);
  CHECK(mse_value<double>(a, b) >= 0.0);
  CHECK(bce_value<double>(a, b) >= 0.0);
  CHECK(mse_value<double>(a, b) > 0.0);  // distinct random frames

  const auto c = random_frames(rng, 3, 3, 3);
  CHECK_THROWS_AS((void)mse_value<double>(a, c), UsageError);
  const auto d = random_frames(rng, 2, 4, 3);
  CHECK_THROWS_AS((void)bce_value<double>(a, d), UsageError);
}

TEST_CASE("adam: zero gradient on a fresh slot leaves the parameter unchanged") {
  std::vector<double> p{0.25, -1.5, 3.0};
  const auto before = p;
  std::vector<double> g(3, 0.0);
  auto slot = AdamSlot<double>::zeros(3);
  adam_step(std::span<double>(p), std::span<const double>(g), slot, 1e-3);
  CHECK(p == before);
  CHECK(slot.step == 1);
}

TEST_CASE("adam: first-step magnitude is ~lr and direction is -sign(g)") {
  std::vector<double> p{1.0};
  std::vector<double> g{0.5};
  auto slot = AdamSlot<double>::zeros(1);
  adam_step(std::span<double>(p), std::span<const double>(g), slot, 1e-3);
  CHECK(std::abs((p[0] - 1.0) + 1e-3) < 1e-9);

  SplitMix64 rng(5);
  std::vector<double> params(16), grads(16);
  for (auto& v : params) v = rng.uniform(-2, 2);
  for (auto& v : grads) v = rng.uniform(-3, 3);
  const auto before = params;
  auto s = AdamSlot<double>::zeros(16);
  adam_step(std::span<double>(params), std::span<const double>(grads), s, 1e-2);
  for (int i = 0; i < 16; ++i) {
    if (grads[i] > 0) CHECK(params[i] < before[i]);
    if (grads[i] < 0) CHECK(params[i] > before[i]);
  }
}

TEST_CASE("adam matches a hand-unrolled two-step scalar recurrence to 1e-12") {
  const double g1 = 0.2, g2 = -0.7, lr = 0.01;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;

  double m = 0, v = 0, p = 0.3;
  m = b1 * m + (1 - b1) * g1;
  v = b2 * v + (1 - b2) * g1 * g1;
  p -= lr * (m / (1 - b1)) / (std::sqrt(v / (1 - b2)) + eps);
  m = b1 * m + (1 - b1) * g2;
  v = b2 * v + (1 - b2) * g2 * g2;
  p -= lr * (m / (1 - b1 * b1)) / (std::sqrt(v / (1 - b2 * b2)) + eps);

  std::vector<double> param{0.3};
  auto slot = AdamSlot<double>::zeros(1);
  std::vector<double> grad{g1};
  adam_step(std::span<double>(param), std::span<const double>(grad), slot, lr);
  grad[0] = g2;
  adam_step(std::span<double>(param), std::span<const double>(grad), slot, lr);

  CHECK(std::abs(param[0] - p) < 1e-12);
  CHECK(slot.step == 2);
  for (const auto x : slot.v) CHECK(x >= 0.0);
}

TEST_CASE("adam validates configuration and shapes") {
  AdamConfig bad;
  bad.beta1 = 1.0;
  std::vector<double> p{1.0}, g{1.0};
  auto slot = AdamSlot<double>::zeros(1);
  CHECK_THROWS_AS(adam_step(std::span<double>(p), std::span<const double>(g), slot, 1e-3, bad),
                  ConfigError);
  auto small = AdamSlot<double>::zeros(2);
  CHECK_THROWS_AS(adam_step(std::span<double>(p), std::span<const double>(g), small, 1e-3),
                  ConfigError);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace {

GridConfig tiny_grid() {
  GridConfig g;
  g.spatial_layers = 2;
  g.output_layers = 1;
  g.state_channels = 4;
  g.frame_height = 8;
  g.frame_width = 8;
  g.frame_channels = 1;
  g.context_len = 4;
  g.predict_len = 2;
  return g;
}

Sampler<float> fixed_square_sampler() {
  auto glyphs = std::make_shared<std::vector<Tensor<float>>>(builtin_glyphs<float>(5));
  glyphs->resize(1);  // the filled square only
  return [glyphs](std::uint64_t) {
    return gen_sequence<float>(12345, 1, 8, 4, 2, std::span<const Tensor<float>>(*glyphs));
  };
}

}  // namespace

TEST_CASE("train: zero iterations leave the parameters bitwise unchanged") {
  auto model = CubicModel<float>::create(tiny_grid());
  model.init_params(7);
  std::vector<float> snapshot;
  for (const auto& p : model.parameters()) {
    snapshot.insert(snapshot.end(), p.values->begin(), p.values->end());
  }
  TrainConfig tc;
  tc.total_iterations = 0;
  tc.val_count = 0;
  auto slots = init_adam_slots(model);
  const auto records = train(model, fixed_square_sampler(), tc, slots);
  CHECK(records.empty());
  std::vector<float> after;
  for (const auto& p : model.parameters()) {
    after.insert(after.end(), p.values->begin(), p.values->end());
  }
  CHECK(std::memcmp(snapshot.data(), after.data(), after.size() * sizeof(float)) == 0);
}

TEST_CASE("train: loss on a fixed sample decreases within 200 iterations") {
  auto model = CubicModel<float>::create(tiny_grid());
  model.init_params(7);
  TrainConfig tc;
  tc.total_iterations = 201;
  tc.lr_switch_iteration = 201;
  tc.val_count = 0;
  auto slots = init_adam_slots(model);
  const auto records = train(model, fixed_square_sampler(), tc, slots);
  REQUIRE(records.size() == 201);
  CHECK(records[200].loss < records[0].loss);
  CHECK(records[200].loss < 0.5 * records[0].loss);
}

TEST_CASE("train: identical seeds and configs give identical loss logs") {
  TrainConfig tc;
  tc.total_iterations = 25;
  tc.val_every = 10;
  tc.val_count = 2;
  tc.val_seed_start = 5000;
  tc.seed = 99;

  auto glyphs = std::make_shared<std::vector<Tensor<float>>>(builtin_glyphs<float>(5));
  Sampler<float> sampler = [glyphs](std::uint64_t seed) {
    return gen_sequence<float>(seed, 1, 8, 4, 2, std::span<const Tensor<float>>(*glyphs));
  };

  auto run = [&]() {
    auto model = CubicModel<float>::create(tiny_grid());
    model.init_params(tc.seed);
    auto slots = init_adam_slots(model);
    return train(model, sampler, tc, slots);
  };
  const auto a = run();
  const auto b = run();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].iteration == b[i].iteration);
    CHECK(a[i].is_val == b[i].is_val);
    CHECK(std::memcmp(&a[i].loss, &b[i].loss, sizeof(double)) == 0);
  }
}

TEST_CASE("train: the divergence guard rejects non-finite losses") {
  auto model = CubicModel<float>::create(tiny_grid());
  model.init_params(7);
  Sampler<float> poisoned = [](std::uint64_t) {
    SequenceSample<float> s;
    s.context_len = 4;
    s.predict_len = 2;
    for (int i = 0; i < 6; ++i) s.frames.emplace_back(8, 8, 1);
    s.frames[5].at(0, 0, 0) = std::numeric_limits<float>::quiet_NaN();
    return s;
  };
  TrainConfig tc;
  tc.total_iterations = 1;
  tc.val_count = 0;
  auto slots = init_adam_slots(model);
  CHECK_THROWS_AS((void)train(model, poisoned, tc, slots), NumericError);
}

TEST_CASE("learning-rate schedule switches at the configured iteration") {
  auto model = CubicModel<float>::create(tiny_grid());
  model.init_params(3);
  TrainConfig tc;
  tc.total_iterations = 6;
  tc.lr_switch_iteration = 3;
  tc.learning_rate = 1e-3;
  tc.learning_rate_after = 1e-4;
  tc.val_count = 0;
  auto slots = init_adam_slots(model);
  const auto records = train(model, fixed_square_sampler(), tc, slots);
  REQUIRE(records.size() == 6);
  for (int i = 0; i < 3; ++i) CHECK(records[i].lr == 1e-3);
  for (int i = 3; i < 6; ++i) CHECK(records[i].lr == 1e-4);
}
