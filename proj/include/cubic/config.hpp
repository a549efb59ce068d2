// SPDX-License-Identifier: Apache-2.0
//
// Flat UTF-8 configuration: one `key = value` per line, `#` comments, dotted
// keys for nesting. Unknown keys are errors (with the offending line), and
// the effective configuration serializes to a canonical text that is echoed
// into checkpoints and metrics files.

#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cubic/data.hpp"
#include "cubic/error.hpp"
#include "cubic/grid.hpp"
#include "cubic/idx.hpp"
#include "cubic/train.hpp"

namespace cubic {

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

class ConfigMap {
 public:
  struct Entry {
    std::string value;
    int line = 0;  // 0 for programmatic overrides
  };

  static ConfigMap parse_text(const std::string& text, const std::string& source) {
    ConfigMap cfg;
    cfg.source_ = source;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw FormatError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
      }
      const std::string key = detail::trim(line.substr(0, eq));
      const std::string value = detail::trim(line.substr(eq + 1));
      if (key.empty()) {
        throw FormatError(source + ":" + std::to_string(lineno) + ": empty key");
      }
      cfg.entries_[key] = Entry{value, lineno};
    }
    return cfg;
  }

  static ConfigMap parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError(path + ": cannot open config file");
    std::ostringstream text;
    text << in.rdbuf();
    return parse_text(text.str(), path);
  }

  // Programmatic override (`--set key=value`); takes precedence over file
  // entries because it is applied afterwards.
  void set(const std::string& key, const std::string& value) {
    entries_[key] = Entry{value, 0};
  }

  void set_kv(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    const std::string key = detail::trim(kv.substr(0, eq));
    const std::string value = detail::trim(kv.substr(eq + 1));
    if (key.empty()) throw UsageError("--set expects key=value, got '" + kv + "'");
    set(key, value);
  }

  bool contains(const std::string& key) const { return entries_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    touch(key);
    auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second.value;
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    touch(key);
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    try {
      std::size_t pos = 0;
      const std::int64_t v = std::stoll(it->second.value, &pos);
      if (pos != it->second.value.size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      throw ConfigError(where(key) + ": key '" + key + "' expects an integer, got '" +
                        it->second.value + "'");
    }
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    touch(key);
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    try {
      std::size_t pos = 0;
      const std::uint64_t v = std::stoull(it->second.value, &pos);
      if (pos != it->second.value.size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      throw ConfigError(where(key) + ": key '" + key + "' expects an unsigned integer, got '" +
                        it->second.value + "'");
    }
  }

  double get_double(const std::string& key, double fallback) const {
    touch(key);
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    try {
      std::size_t pos = 0;
      const double v = std::stod(it->second.value, &pos);
      if (pos != it->second.value.size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      throw ConfigError(where(key) + ": key '" + key + "' expects a number, got '" +
                        it->second.value + "'");
    }
  }

  bool get_bool(const std::string& key, bool fallback) const {
    touch(key);
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    if (it->second.value == "true" || it->second.value == "1") return true;
    if (it->second.value == "false" || it->second.value == "0") return false;
    throw ConfigError(where(key) + ": key '" + key + "' expects true/false, got '" +
                      it->second.value + "'");
  }

  // Any entry never read by the consumer is a typo; report it with its line.
  void reject_unknown() const {
    for (const auto& [key, entry] : entries_) {
      if (!consumed_.count(key)) {
        throw ConfigError(where(key) + ": unknown key '" + key + "'");
      }
    }
  }

 private:
  std::string where(const std::string& key) const {
    auto it = entries_.find(key);
    const int line = it == entries_.end() ? 0 : it->second.line;
    return line > 0 ? source_ + ":" + std::to_string(line) : "<override>";
  }

  void touch(const std::string& key) const { consumed_.insert(key); }

  std::string source_ = "<config>";
  std::map<std::string, Entry> entries_;
  mutable std::set<std::string> consumed_;
};

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

struct RunConfig {
  GridConfig grid;
  TrainConfig train;

  // data synthesis
  int frame_size = 64;
  int num_glyphs = 2;
  std::string glyph_source = "builtin";  // "builtin" or a path to an IDX image file
  int glyph_size = 12;                   // builtin shapes only
  MotionParams motion;

  // artifacts
  std::string checkpoint_path = "model.ckpt";
  std::string metrics_path = "metrics.csv";
  std::string output_dir = "out";
  std::int64_t checkpoint_every = 0;  // 0 = only at the end

  static RunConfig from_map(const ConfigMap& m) {
    RunConfig c;
    c.grid.spatial_layers = static_cast<int>(m.get_int("grid.spatial_layers", c.grid.spatial_layers));
    c.grid.output_layers = static_cast<int>(m.get_int("grid.output_layers", c.grid.output_layers));
    c.grid.state_channels = static_cast<int>(m.get_int("grid.state_channels", c.grid.state_channels));
    c.grid.temporal_kernel = static_cast<int>(m.get_int("grid.temporal_kernel", c.grid.temporal_kernel));
    c.grid.spatial_kernel = static_cast<int>(m.get_int("grid.spatial_kernel", c.grid.spatial_kernel));
    c.grid.context_len = static_cast<int>(m.get_int("grid.context_len", c.grid.context_len));
    c.grid.predict_len = static_cast<int>(m.get_int("grid.predict_len", c.grid.predict_len));
    c.grid.share_encoder_decoder = m.get_bool("grid.share_encoder_decoder", c.grid.share_encoder_decoder);
    c.grid.forget_bias = m.get_double("grid.forget_bias", c.grid.forget_bias);

    c.frame_size = static_cast<int>(m.get_int("data.frame_size", c.frame_size));
    c.num_glyphs = static_cast<int>(m.get_int("data.num_glyphs", c.num_glyphs));
    c.glyph_source = m.get_string("data.glyph_source", c.glyph_source);
    c.glyph_size = static_cast<int>(m.get_int("data.glyph_size", c.glyph_size));
    c.motion.speed_min = m.get_double("data.speed_min", c.motion.speed_min);
    c.motion.speed_max = m.get_double("data.speed_max", c.motion.speed_max);
    c.grid.frame_height = c.frame_size;
    c.grid.frame_width = c.frame_size;
    c.grid.frame_channels = 1;

    c.train.learning_rate = m.get_double("train.learning_rate", c.train.learning_rate);
    c.train.lr_switch_iteration = m.get_int("train.lr_switch_iteration", c.train.lr_switch_iteration);
    c.train.learning_rate_after = m.get_double("train.learning_rate_after", c.train.learning_rate_after);
    c.train.adam.beta1 = m.get_double("train.beta1", c.train.adam.beta1);
    c.train.adam.beta2 = m.get_double("train.beta2", c.train.adam.beta2);
    c.train.adam.epsilon = m.get_double("train.epsilon", c.train.adam.epsilon);
    c.train.batch_size = static_cast<int>(m.get_int("train.batch_size", c.train.batch_size));
    c.train.total_iterations = m.get_int("train.total_iterations", c.train.total_iterations);
    const std::string loss = m.get_string("train.loss", loss_kind_name(c.train.loss_kind));
    if (loss == "mse") {
      c.train.loss_kind = LossKind::mse;
    } else if (loss == "bce") {
      c.train.loss_kind = LossKind::bce;
    } else {
      throw ConfigError("train.loss must be 'mse' or 'bce', got '" + loss + "'");
    }
    c.train.seed = m.get_u64("train.seed", c.train.seed);
    c.train.grad_clip = m.get_double("train.grad_clip", c.train.grad_clip);
    c.train.val_every = m.get_int("train.val_every", c.train.val_every);
    c.train.val_count = static_cast<int>(m.get_int("train.val_count", c.train.val_count));
    c.train.val_seed_start = m.get_u64("train.val_seed_start", c.train.val_seed_start);

    c.checkpoint_path = m.get_string("paths.checkpoint", c.checkpoint_path);
    c.metrics_path = m.get_string("paths.metrics", c.metrics_path);
    c.output_dir = m.get_string("paths.output_dir", c.output_dir);
    c.checkpoint_every = m.get_int("paths.checkpoint_every", c.checkpoint_every);

    m.reject_unknown();
    c.validate();
    return c;
  }

  void validate() const {
    grid.validate();
    train.validate();
    if (num_glyphs < 1) throw ConfigError("data.num_glyphs must be >= 1");
    if (frame_size < 2) throw ConfigError("data.frame_size must be >= 2");
    if (glyph_source == "builtin" && glyph_size >= frame_size) {
      throw ConfigError("data.glyph_size must be smaller than data.frame_size");
    }
    if (motion.speed_min < 0 || motion.speed_max < motion.speed_min) {
      throw ConfigError("data.speed_min/speed_max must satisfy 0 <= min <= max");
    }
    if (checkpoint_every < 0) throw ConfigError("paths.checkpoint_every must be >= 0");
  }

  // Canonical serialization: fixed key order, round-trip-exact numbers. This
  // exact text is embedded in checkpoints and metrics headers.
  std::string canonical_text() const {
    std::ostringstream out;
    auto kv = [&out](const std::string& k, const std::string& v) { out << k << " = " << v << "\n"; };
    kv("grid.spatial_layers", std::to_string(grid.spatial_layers));
    kv("grid.output_layers", std::to_string(grid.output_layers));
    kv("grid.state_channels", std::to_string(grid.state_channels));
    kv("grid.temporal_kernel", std::to_string(grid.temporal_kernel));
    kv("grid.spatial_kernel", std::to_string(grid.spatial_kernel));
    kv("grid.context_len", std::to_string(grid.context_len));
    kv("grid.predict_len", std::to_string(grid.predict_len));
    kv("grid.share_encoder_decoder", grid.share_encoder_decoder ? "true" : "false");
    kv("grid.forget_bias", detail::format_double(grid.forget_bias));
    kv("data.frame_size", std::to_string(frame_size));
    kv("data.num_glyphs", std::to_string(num_glyphs));
    kv("data.glyph_source", glyph_source);
    kv("data.glyph_size", std::to_string(glyph_size));
    kv("data.speed_min", detail::format_double(motion.speed_min));
    kv("data.speed_max", detail::format_double(motion.speed_max));
    kv("train.learning_rate", detail::format_double(train.learning_rate));
    kv("train.lr_switch_iteration", std::to_string(train.lr_switch_iteration));
    kv("train.learning_rate_after", detail::format_double(train.learning_rate_after));
    kv("train.beta1", detail::format_double(train.adam.beta1));
    kv("train.beta2", detail::format_double(train.adam.beta2));
    kv("train.epsilon", detail::format_double(train.adam.epsilon));
    kv("train.batch_size", std::to_string(train.batch_size));
    kv("train.total_iterations", std::to_string(train.total_iterations));
    kv("train.loss", loss_kind_name(train.loss_kind));
    kv("train.seed", std::to_string(train.seed));
    kv("train.grad_clip", detail::format_double(train.grad_clip));
    kv("train.val_every", std::to_string(train.val_every));
    kv("train.val_count", std::to_string(train.val_count));
    kv("train.val_seed_start", std::to_string(train.val_seed_start));
    kv("paths.checkpoint", checkpoint_path);
    kv("paths.metrics", metrics_path);
    kv("paths.output_dir", output_dir);
    kv("paths.checkpoint_every", std::to_string(checkpoint_every));
    return out.str();
  }
};

// Builds the sampler the configuration describes: builtin shapes or IDX
// digits, bouncing inside frame_size frames, split context/predict.
template <typename T>
Sampler<T> make_sampler(const RunConfig& cfg) {
  auto glyphs = std::make_shared<std::vector<Tensor<T>>>();
  if (cfg.glyph_source == "builtin") {
    *glyphs = builtin_glyphs<T>(cfg.glyph_size);
  } else {
    *glyphs = load_idx_images<T>(cfg.glyph_source);
    if (glyphs->empty()) throw ConfigError(cfg.glyph_source + ": IDX file holds no images");
  }
  for (const auto& g : *glyphs) {
    if (g.height() >= cfg.frame_size || g.width() >= cfg.frame_size) {
      throw ConfigError("glyph " + g.shape() + " does not fit inside " +
                        std::to_string(cfg.frame_size) + "x" + std::to_string(cfg.frame_size) +
                        " frames");
    }
  }
  const int num_glyphs = cfg.num_glyphs;
  const int frame_size = cfg.frame_size;
  const int context_len = cfg.grid.context_len;
  const int predict_len = cfg.grid.predict_len;
  const MotionParams motion = cfg.motion;
  return [glyphs, num_glyphs, frame_size, context_len, predict_len, motion](std::uint64_t seed) {
    return gen_sequence<T>(seed, num_glyphs, frame_size, context_len, predict_len,
                           std::span<const Tensor<T>>(*glyphs), motion);
  };
}

}  // namespace cubic
