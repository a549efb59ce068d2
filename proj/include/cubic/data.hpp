// SPDX-License-Identifier: Apache-2.0
//
// On-the-fly bouncing-glyph video synthesis. Generation is a pure function
// of the seed: the PRNG is fixed (rng.hpp), direction sampling avoids libm
// (rejection from the unit disk + IEEE sqrt), and glyphs are rasterized at
// round-half-up integer offsets, so sequences are bit-identical across runs
// and platforms.

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "cubic/error.hpp"
#include "cubic/math.hpp"
#include "cubic/rng.hpp"
#include "cubic/tensor.hpp"

namespace cubic {

template <typename T>
struct SequenceSample {
  std::vector<Tensor<T>> frames;  // context_len + predict_len single-channel frames in [0,1]
  int context_len = 0;
  int predict_len = 0;
  std::uint64_t seed = 0;

  std::span<const Tensor<T>> context() const {
    return std::span<const Tensor<T>>(frames.data(), static_cast<std::size_t>(context_len));
  }
  std::span<const Tensor<T>> targets() const {
    return std::span<const Tensor<T>>(frames.data() + context_len,
                                      static_cast<std::size_t>(predict_len));
  }
};

template <typename T>
struct GlyphSprite {
  Tensor<T> bitmap;  // g x g x 1, values in [0,1]
  double row = 0;    // real top-left corner
  double col = 0;
  double d_row = 0;  // per-frame velocity
  double d_col = 0;
};

struct MotionParams {
  double speed_min = 2.0;
  double speed_max = 5.0;
};

// Elastic wall bounce: the position reflects about the boundary
// (p -> -p at 0, p -> 2*bound - p at the far wall) and the velocity
// component flips sign.
inline void bounce_axis(double& p, double& v, double bound) {
  if (bound <= 0.0) {
    p = 0.0;
    return;
  }
  p += v;
  while (p < 0.0 || p > bound) {
    if (p < 0.0) {
      p = -p;
      v = -v;
    } else {
      p = 2.0 * bound - p;
      v = -v;
    }
  }
}

template <typename T>
void advance_sprite(GlyphSprite<T>& s, int frame_size) {
  const double bound_r = frame_size - s.bitmap.height();
  const double bound_c = frame_size - s.bitmap.width();
  bounce_axis(s.row, s.d_row, bound_r);
  bounce_axis(s.col, s.d_col, bound_c);
}

// Composites all sprites by per-pixel maximum at integer offsets.
template <typename T>
Tensor<T> rasterize(std::span<const GlyphSprite<T>> sprites, int frame_size) {
  Tensor<T> frame(frame_size, frame_size, 1);
  for (const auto& s : sprites) {
    const int r0 = static_cast<int>(round_half_up(s.row));
    const int c0 = static_cast<int>(round_half_up(s.col));
    for (int gy = 0; gy < s.bitmap.height(); ++gy) {
      for (int gx = 0; gx < s.bitmap.width(); ++gx) {
        T v = s.bitmap.at(gy, gx, 0);
        v = v < T(0) ? T(0) : (v > T(1) ? T(1) : v);
        T& dst = frame.at(r0 + gy, c0 + gx, 0);
        if (v > dst) dst = v;
      }
    }
  }
  return frame;
}

// Uniform direction on the unit circle without trigonometry: rejection-sample
// a point in the unit disk, then normalize. Deterministic bit-for-bit given
// the generator state.
inline std::pair<double, double> random_direction(SplitMix64& rng) {
  for (;;) {
    const double dx = rng.uniform(-1.0, 1.0);
    const double dy = rng.uniform(-1.0, 1.0);
    const double r2 = dx * dx + dy * dy;
    if (r2 > 1.0 || r2 < 1e-12) continue;
    const double r = std::sqrt(r2);
    return {dy / r, dx / r};
  }
}

template <typename T>
std::vector<GlyphSprite<T>> spawn_sprites(SplitMix64& rng, int num_glyphs, int frame_size,
                                          std::span<const Tensor<T>> glyphs,
                                          const MotionParams& motion) {
  if (glyphs.empty()) throw ConfigError("gen_sequence: empty glyph set");
  if (num_glyphs < 1) throw ConfigError("gen_sequence: need at least one glyph");
  std::vector<GlyphSprite<T>> sprites;
  sprites.reserve(static_cast<std::size_t>(num_glyphs));
  for (int i = 0; i < num_glyphs; ++i) {
    GlyphSprite<T> s;
    s.bitmap = glyphs[static_cast<std::size_t>(rng.next_below(glyphs.size()))];
    if (s.bitmap.height() >= frame_size || s.bitmap.width() >= frame_size) {
      throw ConfigError("gen_sequence: glyph " + s.bitmap.shape() + " does not fit a " +
                        std::to_string(frame_size) + "-pixel frame");
    }
    s.row = rng.uniform() * (frame_size - s.bitmap.height());
    s.col = rng.uniform() * (frame_size - s.bitmap.width());
    const auto [dr, dc] = random_direction(rng);
    const double speed = rng.uniform(motion.speed_min, motion.speed_max);
    s.d_row = speed * dr;
    s.d_col = speed * dc;
    sprites.push_back(std::move(s));
  }
  return sprites;
}

// Random initial placement, uniform direction, uniform speed; elastic wall
// bounces; per-pixel max compositing.
template <typename T>
SequenceSample<T> gen_sequence(std::uint64_t seed, int num_glyphs, int frame_size, int context_len,
                               int predict_len, std::span<const Tensor<T>> glyphs,
                               const MotionParams& motion = {}) {
  if (context_len < 0 || predict_len < 0 || context_len + predict_len <= 0) {
    throw ConfigError("gen_sequence: sequence length must be positive");
  }
  SplitMix64 rng(seed);
  auto sprites = spawn_sprites(rng, num_glyphs, frame_size, glyphs, motion);
  SequenceSample<T> sample;
  sample.seed = seed;
  sample.context_len = context_len;
  sample.predict_len = predict_len;
  const int total = context_len + predict_len;
  sample.frames.reserve(static_cast<std::size_t>(total));
  for (int t = 0; t < total; ++t) {
    sample.frames.push_back(rasterize(std::span<const GlyphSprite<T>>(sprites), frame_size));
    for (auto& s : sprites) advance_sprite(s, frame_size);
  }
  return sample;
}

// Deterministic binary shapes: filled square, cross, diagonal bar, ring,
// plus a fixed family of rectangle-union silhouettes for appearance variety.
// Default 12x12; removes the external-dataset dependency for tests.
template <typename T>
std::vector<Tensor<T>> builtin_glyphs(int size = 12) {
  if (size < 4) throw ConfigError("builtin_glyphs: size must be >= 4");
  std::vector<Tensor<T>> set;
  Tensor<T> square(size, size, 1);
  square.fill(T(1));
  set.push_back(std::move(square));

  Tensor<T> cross(size, size, 1);
  const int a0 = size / 2 - 1, a1 = size / 2;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      if (y == a0 || y == a1 || x == a0 || x == a1) cross.at(y, x, 0) = T(1);
    }
  }
  set.push_back(std::move(cross));

  Tensor<T> bar(size, size, 1);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      if (y == x || y == x + 1 || y + 1 == x) bar.at(y, x, 0) = T(1);
    }
  }
  set.push_back(std::move(bar));

  Tensor<T> ring(size, size, 1);
  const double mid = (size - 1) / 2.0;
  const double outer = size / 2.0;
  const double inner = outer - 2.0;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double d = std::sqrt((y - mid) * (y - mid) + (x - mid) * (x - mid));
      if (d <= outer && d >= inner) ring.at(y, x, 0) = T(1);
    }
  }
  set.push_back(std::move(ring));

  // Silhouettes: unions of solid rectangles minus one carved rectangle,
  // drawn from a fixed generator so every call and platform agrees.
  SplitMix64 rng(0xB17A95ull);
  auto rand_rect = [&rng, size](Tensor<T>& g, T value, int min_side) {
    const int h = min_side + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(size / 2)));
    const int w = min_side + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(size / 2)));
    const int y0 = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(size - h + 1)));
    const int x0 = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(size - w + 1)));
    for (int y = y0; y < y0 + h; ++y) {
      for (int x = x0; x < x0 + w; ++x) g.at(y, x, 0) = value;
    }
  };
  for (int k = 0; k < 12; ++k) {
    Tensor<T> g(size, size, 1);
    const int solids = 2 + static_cast<int>(rng.next_below(2));
    for (int b = 0; b < solids; ++b) rand_rect(g, T(1), 2);
    if (k % 2 == 1) rand_rect(g, T(0), 2);  // carve a hole through everything
    double mass = 0;
    for (const auto v : g.values()) mass += static_cast<double>(v);
    if (mass < size * 2) {
      for (int y = size / 4; y < size - size / 4; ++y) {
        for (int x = size / 4; x < size - size / 4; ++x) g.at(y, x, 0) = T(1);
      }
    }
    set.push_back(std::move(g));
  }
  return set;
}

}  // namespace cubic
