// SPDX-License-Identifier: Apache-2.0
//
// Serial training loop: sample a batch, roll the encoder-decoder forward,
// backpropagate through time and the grid, average gradients, ADAM-update
// every parameter. Two-phase learning-rate schedule, optional global-norm
// clipping, frozen-seed validation, divergence guard. Deterministic given
// (seed, config).

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cubic/adam.hpp"
#include "cubic/data.hpp"
#include "cubic/error.hpp"
#include "cubic/grid.hpp"
#include "cubic/loss.hpp"
#include "cubic/rng.hpp"

namespace cubic {

enum class LossKind { mse, bce };

inline const char* loss_kind_name(LossKind k) { return k == LossKind::mse ? "mse" : "bce"; }

struct TrainConfig {
  double learning_rate = 1e-3;
  std::int64_t lr_switch_iteration = 1000;  // iterations before the drop
  double learning_rate_after = 1e-4;
  AdamConfig adam;
  int batch_size = 1;
  std::int64_t total_iterations = 2000;
  LossKind loss_kind = LossKind::mse;
  std::uint64_t seed = 1;
  double grad_clip = 0.0;  // global-norm threshold, 0 disables
  std::int64_t val_every = 500;
  int val_count = 8;
  std::uint64_t val_seed_start = 900000;

  void validate() const {
    adam.validate();
    if (learning_rate <= 0 || learning_rate_after <= 0) {
      throw ConfigError("train: learning rates must be positive");
    }
    if (lr_switch_iteration < 0) throw ConfigError("train: lr_switch_iteration must be >= 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (total_iterations < 0) throw ConfigError("train: total_iterations must be >= 0");
    if (grad_clip < 0) throw ConfigError("train: grad_clip must be >= 0");
    if (val_every < 1) throw ConfigError("train: val_every must be >= 1");
    if (val_count < 0) throw ConfigError("train: val_count must be >= 0");
  }
};

struct TrainRecord {
  std::int64_t iteration = 0;
  bool is_val = false;
  LossKind loss_kind = LossKind::mse;
  double loss = 0;
  double lr = 0;
  std::int64_t wall_ms = 0;
};

template <typename T>
using Sampler = std::function<SequenceSample<T>(std::uint64_t seed)>;

template <typename T>
std::vector<AdamSlot<T>> init_adam_slots(CubicModel<T>& model) {
  std::vector<AdamSlot<T>> slots;
  for (const auto& p : model.parameters()) slots.push_back(AdamSlot<T>::zeros(p.values->size()));
  return slots;
}

template <typename T>
double loss_value(LossKind kind, std::span<const Tensor<T>> pred, std::span<const Tensor<T>> target) {
  return kind == LossKind::mse ? mse_value(pred, target) : bce_value(pred, target);
}

template <typename T>
double validation_loss(const CubicModel<T>& model, const Sampler<T>& sampler, const TrainConfig& cfg) {
  double total = 0;
  for (int i = 0; i < cfg.val_count; ++i) {
    const SequenceSample<T> sample = sampler(cfg.val_seed_start + static_cast<std::uint64_t>(i));
    const auto preds = encode_decode(model, sample.context(), sample.predict_len);
    total += loss_value<T>(cfg.loss_kind, preds, sample.targets());
  }
  return total / cfg.val_count;
}

// Runs iterations [start_iteration, total_iterations). `slots` must align
// with model.parameters(); pass freshly-initialized slots (and 0) for a new
// run or the restored ones to resume.
template <typename T>
std::vector<TrainRecord> train(CubicModel<T>& model, const Sampler<T>& sampler,
                               const TrainConfig& cfg, std::vector<AdamSlot<T>>& slots,
                               std::int64_t start_iteration = 0,
                               const std::function<void(const TrainRecord&)>& on_record = {}) {
  cfg.validate();
  auto params = model.parameters();
  if (slots.size() != params.size()) {
    throw ConfigError("train: optimizer slots do not match the parameter list");
  }
  CubicModel<T> grads = CubicModel<T>::create(model.cfg);
  auto grad_params = grads.parameters();

  std::vector<TrainRecord> records;
  const auto t0 = std::chrono::steady_clock::now();
  auto wall_ms = [&t0]() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() -
                                                                 t0)
        .count();
  };

  std::uint64_t sample_counter =
      static_cast<std::uint64_t>(start_iteration) * static_cast<std::uint64_t>(cfg.batch_size);
  for (std::int64_t it = start_iteration; it < cfg.total_iterations; ++it) {
    const double lr = it < cfg.lr_switch_iteration ? cfg.learning_rate : cfg.learning_rate_after;
    for (auto& gp : grad_params) std::fill(gp.values->begin(), gp.values->end(), T(0));

    double loss_sum = 0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const std::uint64_t sample_seed = SplitMix64::mix(cfg.seed, sample_counter++);
      const SequenceSample<T> sample = sampler(sample_seed);
      RolloutTape<T> tape;
      const auto preds = encode_decode(model, sample.context(), sample.predict_len, &tape);
      LossResult<T> loss = cfg.loss_kind == LossKind::mse
                               ? mse_loss<T>(preds, sample.targets())
                               : bce_loss<T>(preds, sample.targets());
      loss_sum += loss.value;
      encode_decode_backward(model, tape, std::span<const Tensor<T>>(loss.grads), grads);
    }
    const double batch_loss = loss_sum / cfg.batch_size;
    if (!std::isfinite(batch_loss)) {
      throw NumericError("training diverged at iteration " + std::to_string(it) + " (loss = " +
                         std::to_string(batch_loss) + ")");
    }

    if (cfg.batch_size > 1) {
      const T inv = T(1) / static_cast<T>(cfg.batch_size);
      for (auto& gp : grad_params) {
        for (auto& g : *gp.values) g *= inv;
      }
    }
    if (cfg.grad_clip > 0) {
      double sq = 0;
      for (const auto& gp : grad_params) {
        for (const auto& g : *gp.values) sq += static_cast<double>(g) * static_cast<double>(g);
      }
      const double norm = std::sqrt(sq);
      if (norm > cfg.grad_clip) {
        const T scale = static_cast<T>(cfg.grad_clip / norm);
        for (auto& gp : grad_params) {
          for (auto& g : *gp.values) g *= scale;
        }
      }
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      adam_step(std::span<T>(*params[i].values), std::span<const T>(*grad_params[i].values),
                slots[i], lr, cfg.adam);
    }

    TrainRecord rec{it, false, cfg.loss_kind, batch_loss, lr, wall_ms()};
    records.push_back(rec);
    if (on_record) on_record(rec);

    const bool last = it + 1 == cfg.total_iterations;
    if (cfg.val_count > 0 && ((it + 1) % cfg.val_every == 0 || last)) {
      TrainRecord vrec{it, true, cfg.loss_kind, validation_loss(model, sampler, cfg), lr, wall_ms()};
      records.push_back(vrec);
      if (on_record) on_record(vrec);
    }
  }
  return records;
}

}  // namespace cubic
