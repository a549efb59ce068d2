// SPDX-License-Identifier: Apache-2.0
//
// Data-forge tests: sprite kinematics against scalar oracles, generation
// determinism and containment, IDX parsing, PGM round trips.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "cubic/data.hpp"
#include "cubic/idx.hpp"
#include "cubic/pgm.hpp"

using namespace cubic;
namespace fs = std::filesystem;

namespace {

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.same_shape(b) && std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

// Scalar oracle for the elastic bounce: advance, then reflect about the
// boundary (p -> -p at zero, p -> 2*bound - p at the far wall) flipping the
// velocity, until the position is inside.
void bounce_oracle(double& p, double& v, double bound) {
  p += v;
  while (p < 0 || p > bound) {
    if (p < 0) {
      p = -p;
      v = -v;
    } else {
      p = 2 * bound - p;
      v = -v;
    }
  }
}

GlyphSprite<double> dot_sprite(double row, double col, double d_row, double d_col) {
  GlyphSprite<double> s;
  s.bitmap = Tensor<double>::full(1, 1, 1, 1.0);
  s.row = row;
  s.col = col;
  s.d_row = d_row;
  s.d_col = d_col;
  return s;
}

fs::path temp_dir() {
  const auto dir = fs::temp_directory_path() / "cubic_data_tests";
  fs::create_directories(dir);
  return dir;
}

std::string idx_fixture(std::uint32_t n, std::uint32_t rows, std::uint32_t cols,
                        const std::vector<std::uint8_t>& payload) {
  std::string bytes;
  auto be32 = [&bytes](std::uint32_t v) {
    bytes.push_back(static_cast<char>((v >> 24) & 0xFF));
    bytes.push_back(static_cast<char>((v >> 16) & 0xFF));
    bytes.push_back(static_cast<char>((v >> 8) & 0xFF));
    bytes.push_back(static_cast<char>(v & 0xFF));
  };
  be32(0x00000803u);
  be32(n);
  be32(rows);
  be32(cols);
  bytes.append(payload.begin(), payload.end());
  return bytes;
}

}  // namespace

TEST_CASE("zero velocity: every frame of the sequence is identical") {
  const auto glyphs = builtin_glyphs<double>(12);
  MotionParams still;
  still.speed_min = 0;
  still.speed_max = 0;
  const auto s = gen_sequence<double>(42, 2, 32, 5, 5, std::span<const Tensor<double>>(glyphs), still);
  REQUIRE(s.frames.size() == 10);
  for (std::size_t i = 1; i < s.frames.size(); ++i) {
    CHECK(bitwise_equal(s.frames[i], s.frames[0]));
  }
}

TEST_CASE("kinematics: a 1x1 glyph at column 0 with velocity (0, +1) sits at column t") {
  auto s = dot_sprite(0, 0, 0, 1);
  std::vector<GlyphSprite<double>> sprites{s};
  for (int t = 0; t <= 63; ++t) {
    const auto frame = rasterize(std::span<const GlyphSprite<double>>(sprites), 64);
    for (int x = 0; x < 64; ++x) {
      CHECK(frame.at(0, x, 0) == (x == t ? 1.0 : 0.0));
    }
    advance_sprite(sprites[0], 64);
  }
}

TEST_CASE("reflection rule: position reflects about the wall and velocity flips") {
  // From column 62 with velocity +3 against the wall at 63 the reflection
  // rule gives 2*63 - 65 = 61, then 58 moving away.
  double p = 62, v = 3;
  bounce_oracle(p, v, 63);
  CHECK(p == 61.0);
  CHECK(v == -3.0);
  bounce_oracle(p, v, 63);
  CHECK(p == 58.0);

  auto s = dot_sprite(0, 62, 0, 3);
  advance_sprite(s, 64);
  CHECK(s.col == 61.0);
  CHECK(s.d_col == -3.0);
  advance_sprite(s, 64);
  CHECK(s.col == 58.0);

  // Low wall too.
  double q = 1, u = -4;
  bounce_oracle(q, u, 63);
  CHECK(q == 3.0);
  CHECK(u == 4.0);
}

TEST_CASE("advance_sprite agrees with the scalar bounce oracle on random trajectories") {
  SplitMix64 rng(7);
  for (int round = 0; round < 50; ++round) {
    const double bound = 1 + static_cast<double>(rng.next_below(50));
    double p = rng.uniform() * bound, v = rng.uniform(-6, 6);
    auto s = dot_sprite(0, p, 0, v);
    const int frame_size = static_cast<int>(bound) + 1;
    double op = p, ov = v;
    for (int t = 0; t < 40; ++t) {
      advance_sprite(s, frame_size);
      bounce_oracle(op, ov, bound);
      CHECK(s.col == op);
      CHECK(s.d_col == ov);
      CHECK(s.col >= 0.0);
      CHECK(s.col <= bound);
    }
  }
}

TEST_CASE("gen_sequence is bitwise deterministic per seed and distinct across seeds") {
  const auto glyphs = builtin_glyphs<double>(12);
  const auto a = gen_sequence<double>(99, 2, 64, 10, 10, std::span<const Tensor<double>>(glyphs));
  const auto b = gen_sequence<double>(99, 2, 64, 10, 10, std::span<const Tensor<double>>(glyphs));
  REQUIRE(a.frames.size() == b.frames.size());
  for (std::size_t i = 0; i < a.frames.size(); ++i) CHECK(bitwise_equal(a.frames[i], b.frames[i]));

  std::set<std::string> first_frames;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto s = gen_sequence<double>(seed, 2, 64, 1, 1, std::span<const Tensor<double>>(glyphs));
    first_frames.insert(std::string(reinterpret_cast<const char*>(s.frames[0].data()),
                                    s.frames[0].size() * sizeof(double)));
  }
  CHECK(first_frames.size() >= 99);
}

TEST_CASE("generated frames stay in [0,1] and glyphs stay inside the frame") {
  const auto glyphs = builtin_glyphs<double>(12);
  for (std::uint64_t seed : {1ull, 17ull, 400ull}) {
    const auto s = gen_sequence<double>(seed, 3, 40, 10, 10, std::span<const Tensor<double>>(glyphs));
    CHECK(s.context_len == 10);
    CHECK(s.predict_len == 10);
    for (const auto& f : s.frames) {
      for (const auto v : f.values()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
  }
  // Direct containment of sprite bounding boxes over a long roll.
  SplitMix64 rng(3);
  auto sprites = spawn_sprites<double>(rng, 3, 40, std::span<const Tensor<double>>(glyphs), {});
  for (int t = 0; t < 200; ++t) {
    for (auto& s : sprites) {
      advance_sprite(s, 40);
      CHECK(s.row >= 0.0);
      CHECK(s.row <= 40.0 - s.bitmap.height());
      CHECK(s.col >= 0.0);
      CHECK(s.col <= 40.0 - s.bitmap.width());
    }
  }
}

TEST_CASE("gen_sequence rejects glyphs that do not fit") {
  const auto glyphs = builtin_glyphs<double>(12);
  CHECK_THROWS_AS(
      (void)gen_sequence<double>(1, 1, 12, 2, 2, std::span<const Tensor<double>>(glyphs)),
      ConfigError);
}

TEST_CASE("builtin glyphs: deterministic binary 12x12 shapes") {
  const auto a = builtin_glyphs<double>();
  const auto b = builtin_glyphs<double>();
  REQUIRE(a.size() >= 4);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].height() == 12);
    CHECK(a[i].width() == 12);
    CHECK(bitwise_equal(a[i], b[i]));
    for (const auto v : a[i].values()) CHECK((v == 0.0 || v == 1.0));
  }
  for (const auto v : a[0].values()) CHECK(v == 1.0);  // the filled square
}

TEST_CASE("IDX: header plus four bytes parses to scaled reals") {
  const auto bytes = idx_fixture(1, 2, 2, {0, 255, 128, 64});
  const auto imgs = parse_idx_images<double>(
      std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(bytes.data()),
                                    bytes.size()));
  REQUIRE(imgs.size() == 1);
  CHECK(imgs[0].at(0, 0, 0) == 0.0);
  CHECK(imgs[0].at(0, 1, 0) == 1.0);
  CHECK(imgs[0].at(1, 0, 0) == doctest::Approx(0.50196).epsilon(1e-4));
  CHECK(imgs[0].at(1, 1, 0) == doctest::Approx(0.25098).epsilon(1e-4));
}

TEST_CASE("IDX error paths: empty, wrong magic, truncated; n = 0 is fine") {
  CHECK_THROWS_AS((void)parse_idx_images<double>(std::span<const std::uint8_t>()), FormatError);

  auto bad = idx_fixture(1, 2, 2, {0, 255, 128, 64});
  bad[3] = 0x01;  // not 0x00000803
  CHECK_THROWS_AS((void)parse_idx_images<double>(std::span<const std::uint8_t>(
                      reinterpret_cast<const std::uint8_t*>(bad.data()), bad.size())),
                  FormatError);

  const auto truncated = idx_fixture(2, 2, 2, {0, 255, 128, 64});  // needs 8 payload bytes
  CHECK_THROWS_AS((void)parse_idx_images<double>(std::span<const std::uint8_t>(
                      reinterpret_cast<const std::uint8_t*>(truncated.data()), truncated.size())),
                  FormatError);

  const auto empty_set = idx_fixture(0, 28, 28, {});
  CHECK(parse_idx_images<double>(std::span<const std::uint8_t>(
            reinterpret_cast<const std::uint8_t*>(empty_set.data()), empty_set.size()))
            .empty());
}

TEST_CASE("load_idx_images reads files and reports open failures") {
  const auto dir = temp_dir();
  const auto path = (dir / "digits.idx").string();
  const auto bytes = idx_fixture(2, 2, 2, {0, 255, 128, 64, 10, 20, 30, 40});
  std::ofstream(path, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  const auto imgs = load_idx_images<float>(path);
  REQUIRE(imgs.size() == 2);
  CHECK(imgs[1].at(0, 0, 0) == doctest::Approx(10.0 / 255).epsilon(1e-6));
  CHECK_THROWS_AS((void)load_idx_images<float>((dir / "missing.idx").string()), FormatError);
}

TEST_CASE("PGM: exact quantization bytes and round-trip bound") {
  const auto dir = temp_dir();
  const auto path = (dir / "frame.pgm").string();

  Tensor<double> f(2, 2, 1);
  f.at(0, 0, 0) = 0.0;
  f.at(0, 1, 0) = 1.0;
  f.at(1, 0, 0) = 0.5;
  f.at(1, 1, 0) = 0.25;
  write_pgm(f, path);

  std::ifstream in(path, std::ios::binary);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  REQUIRE(content.size() >= 4);
  const auto* tail = reinterpret_cast<const std::uint8_t*>(content.data() + content.size() - 4);
  CHECK(tail[0] == 0);
  CHECK(tail[1] == 255);
  CHECK(tail[2] == 128);
  CHECK(tail[3] == 64);

  const auto back = read_pgm<double>(path);
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 2; ++x) {
      CHECK(std::abs(back.at(y, x, 0) - f.at(y, x, 0)) <= 1.0 / 510 + 1e-12);
    }
  }

  // Random frames: quantization error bounded by 1/510 per pixel.
  SplitMix64 rng(5);
  Tensor<double> r(7, 9, 1);
  for (auto& v : r.values()) v = rng.uniform();
  write_pgm(r, path);
  const auto rb = read_pgm<double>(path);
  for (std::size_t i = 0; i < r.size(); ++i) {
    CHECK(std::abs(rb.data()[i] - r.data()[i]) <= 1.0 / 510 + 1e-12);
  }
}

TEST_CASE("PGM: an all-zero frame encodes as all-zero bytes") {
  const auto dir = temp_dir();
  const auto path = (dir / "zero.pgm").string();
  write_pgm(Tensor<double>(3, 4, 1), path);
  std::ifstream in(path, std::ios::binary);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  REQUIRE(content.size() >= 12);
  for (std::size_t i = content.size() - 12; i < content.size(); ++i) {
    CHECK(static_cast<unsigned char>(content[i]) == 0);
  }
}

TEST_CASE("PGM error paths: wrong magic and wrong maxval") {
  const auto dir = temp_dir();
  const auto p5_bad_maxval = (dir / "bad_maxval.pgm").string();
  {
    std::ofstream out(p5_bad_maxval, std::ios::binary);
    out << "P5\n2 2\n65535\n";
    out.write("\0\0\0\0\0\0\0\0", 8);
  }
  CHECK_THROWS_AS((void)read_pgm<double>(p5_bad_maxval), FormatError);

  const auto p2 = (dir / "ascii.pgm").string();
  {
    std::ofstream out(p2);
    out << "P2\n2 2\n255\n0 0 0 0\n";
  }
  CHECK_THROWS_AS((void)read_pgm<double>(p2), FormatError);

  const auto truncated = (dir / "trunc.pgm").string();
  {
    std::ofstream out(truncated, std::ios::binary);
    out << "P5\n4 4\n255\n";
    out.write("\0\0", 2);
  }
  CHECK_THROWS_AS((void)read_pgm<double>(truncated), FormatError);
}
