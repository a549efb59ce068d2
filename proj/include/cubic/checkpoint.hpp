// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container. Layout (all multi-byte values little-endian):
//   magic "CRNN" | u32 version
//   u64 config length | UTF-8 canonical config text
//   u32 parameter record count | records
//   u32 optimizer record count | records (<name>.m, <name>.v, <name>.t)
//   u64 iteration counter
// Each record: u32 name length | name | u32 rank | u32 dims[rank] |
// float32 values. Shapes are validated against the embedded config before
// any values load, and writes go through a temp file + rename.

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "cubic/adam.hpp"
#include "cubic/config.hpp"
#include "cubic/error.hpp"
#include "cubic/grid.hpp"

namespace cubic {

constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string source)
      : bytes_(bytes), source_(std::move(source)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[off_ + i]) << (8 * i);
    off_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[off_ + i]) << (8 * i);
    off_ += 8;
    return v;
  }

  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + off_), n);
    off_ += n;
    return s;
  }

  void f32_block(float* dst, std::size_t count) {
    need(4 * count);
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(bytes_[off_ + 4 * i + b]) << (8 * b);
      }
      std::memcpy(dst + i, &bits, 4);
    }
    off_ += 4 * count;
  }

  bool done() const { return off_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (off_ + n > bytes_.size()) throw FormatError(source_ + ": checkpoint truncated");
  }
  std::span<const std::uint8_t> bytes_;
  std::string source_;
  std::size_t off_ = 0;
};

inline void put_record(std::string& out, const std::string& name, int rank,
                       std::span<const int> dims, std::span<const float> values) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.append(name);
  put_u32(out, static_cast<std::uint32_t>(rank));
  std::size_t count = 1;
  for (int r = 0; r < rank; ++r) {
    put_u32(out, static_cast<std::uint32_t>(dims[r]));
    count *= static_cast<std::size_t>(dims[r]);
  }
  if (count != values.size()) throw ConfigError("checkpoint record '" + name + "': size mismatch");
  for (float v : values) put_f32(out, v);
}

}  // namespace detail

struct LoadedCheckpoint {
  std::string config_text;  // verbatim canonical echo from the file
  RunConfig config;
  CubicModel<float> model;
  std::vector<AdamSlot<float>> slots;
  std::uint64_t iteration = 0;
};

inline std::string serialize_checkpoint(const std::string& config_text,
                                        CubicModel<float>& model,
                                        const std::vector<AdamSlot<float>>& slots,
                                        std::uint64_t iteration) {
  auto params = model.parameters();
  if (slots.size() != params.size()) {
    throw ConfigError("checkpoint: optimizer slots do not match the parameter list");
  }
  std::string out;
  out.append("CRNN");
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u64(out, config_text.size());
  out.append(config_text);

  detail::put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    detail::put_record(out, p.name, p.rank, std::span<const int>(p.dims.data(), p.dims.size()),
                       std::span<const float>(*p.values));
  }
  detail::put_u32(out, static_cast<std::uint32_t>(3 * params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    detail::put_record(out, p.name + ".m", p.rank,
                       std::span<const int>(p.dims.data(), p.dims.size()),
                       std::span<const float>(slots[i].m));
    detail::put_record(out, p.name + ".v", p.rank,
                       std::span<const int>(p.dims.data(), p.dims.size()),
                       std::span<const float>(slots[i].v));
    const int one[1] = {1};
    const float t[1] = {static_cast<float>(slots[i].step)};
    detail::put_record(out, p.name + ".t", 1, std::span<const int>(one, 1),
                       std::span<const float>(t, 1));
  }
  detail::put_u64(out, iteration);
  return out;
}

inline void save_checkpoint(const std::string& path, const std::string& config_text,
                            CubicModel<float>& model, const std::vector<AdamSlot<float>>& slots,
                            std::uint64_t iteration) {
  const std::string bytes = serialize_checkpoint(config_text, model, slots, iteration);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw UsageError(tmp + ": cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw UsageError(tmp + ": short write");
  }
  std::filesystem::rename(tmp, path);
}

namespace detail {

struct RawRecord {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

inline RawRecord read_record(ByteReader& r, const std::string& source) {
  RawRecord rec;
  const std::uint32_t name_len = r.u32();
  if (name_len > 4096) throw FormatError(source + ": implausible record name length");
  rec.name = r.str(name_len);
  const std::uint32_t rank = r.u32();
  if (rank > 8) throw FormatError(source + ": implausible record rank");
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    rec.dims.push_back(r.u32());
    count *= rec.dims.back();
  }
  if (count > (1u << 30)) throw FormatError(source + ": implausible record size");
  rec.values.resize(count);
  r.f32_block(rec.values.data(), count);
  return rec;
}

}  // namespace detail

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError(path + ": cannot open checkpoint");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  detail::ByteReader r(std::span<const std::uint8_t>(bytes), path);

  if (r.str(4) != "CRNN") throw FormatError(path + ": bad checkpoint magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint64_t cfg_len = r.u64();
  LoadedCheckpoint ck;
  ck.config_text = r.str(cfg_len);
  ck.config = RunConfig::from_map(ConfigMap::parse_text(ck.config_text, path + "#config"));
  ck.model = CubicModel<float>::create(ck.config.grid);

  auto params = ck.model.parameters();
  const std::uint32_t n_params = r.u32();
  if (n_params != params.size()) {
    throw FormatError(path + ": checkpoint holds " + std::to_string(n_params) +
                      " parameter records, config implies " + std::to_string(params.size()));
  }
  for (auto& p : params) {
    auto rec = detail::read_record(r, path);
    if (rec.name != p.name) {
      throw FormatError(path + ": expected parameter record '" + p.name + "', found '" + rec.name +
                        "'");
    }
    bool dims_ok = static_cast<int>(rec.dims.size()) == p.rank;
    for (int d = 0; dims_ok && d < p.rank; ++d) {
      dims_ok = rec.dims[d] == static_cast<std::uint32_t>(p.dims[d]);
    }
    if (!dims_ok || rec.values.size() != p.values->size()) {
      throw FormatError(path + ": parameter '" + p.name + "' has mismatched shape");
    }
    *p.values = std::move(rec.values);
  }

  const std::uint32_t n_slots = r.u32();
  if (n_slots != 3 * params.size()) {
    throw FormatError(path + ": unexpected optimizer record count");
  }
  ck.slots.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto m_rec = detail::read_record(r, path);
    auto v_rec = detail::read_record(r, path);
    auto t_rec = detail::read_record(r, path);
    if (m_rec.name != params[i].name + ".m" || v_rec.name != params[i].name + ".v" ||
        t_rec.name != params[i].name + ".t" || t_rec.values.size() != 1) {
      throw FormatError(path + ": malformed optimizer records for '" + params[i].name + "'");
    }
    if (m_rec.values.size() != params[i].values->size() ||
        v_rec.values.size() != params[i].values->size()) {
      throw FormatError(path + ": optimizer slot for '" + params[i].name + "' has mismatched shape");
    }
    ck.slots[i].m = std::move(m_rec.values);
    ck.slots[i].v = std::move(v_rec.values);
    ck.slots[i].step = static_cast<std::int64_t>(t_rec.values[0]);
  }
  ck.iteration = r.u64();
  if (!r.done()) throw FormatError(path + ": trailing bytes after checkpoint payload");
  return ck;
}

}  // namespace cubic
