// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "hicropl/numcore/nn.hpp"

// Checkpoint format: a flat, ordered list of named blocks.
//
//   magic   "HCPLCKPT"                       8 bytes
//   version u32                              currently 1
//   count   u32                              number of blocks
//   block   name_len u32, name bytes,
//           rank u32, extents u64 x rank,
//           values f64 x product(extents)
//
// All integers and floats are little-endian.
namespace hicropl::io {

inline constexpr char kCheckpointMagic[8] = {'H', 'C', 'P', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedBlock {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

namespace detail {

template <typename U>
void put_le(std::ostream& out, U value) {
  unsigned char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<unsigned char>(value >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
U get_le(std::istream& in) {
  unsigned char bytes[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) throw IoError("truncated checkpoint");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace detail

inline void write_blocks(std::ostream& out, const std::vector<NamedBlock>& blocks) {
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(blocks.size()));
  for (const auto& b : blocks) {
    if (shape_numel(b.shape) != b.values.size()) throw DimensionError("block " + b.name + " shape/value mismatch");
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(b.name.size()));
    out.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(b.shape.size()));
    for (auto e : b.shape) detail::put_le<std::uint64_t>(out, e);
    for (double v : b.values) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw IoError("checkpoint write failed");
}

inline std::vector<NamedBlock> read_blocks(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw IoError("not a checkpoint (bad magic)");
  const auto version = detail::get_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  const auto count = detail::get_le<std::uint32_t>(in);
  std::vector<NamedBlock> blocks(count);
  for (auto& b : blocks) {
    const auto len = detail::get_le<std::uint32_t>(in);
    b.name.resize(len);
    if (!in.read(b.name.data(), len)) throw IoError("truncated checkpoint");
    const auto rank = detail::get_le<std::uint32_t>(in);
    b.shape.resize(rank);
    for (auto& e : b.shape) e = detail::get_le<std::uint64_t>(in);
    b.values.resize(shape_numel(b.shape));
    for (auto& v : b.values) v = std::bit_cast<double>(detail::get_le<std::uint64_t>(in));
  }
  return blocks;
}

inline std::vector<NamedBlock> to_blocks(const ParamList& params) {
  std::vector<NamedBlock> blocks;
  for (const auto& [name, t] : params) blocks.push_back({name, t.shape(), {t.data().begin(), t.data().end()}});
  return blocks;
}

// Copies values into existing parameters; names and shapes must match exactly.
inline void assign_blocks(const ParamList& params, const std::vector<NamedBlock>& blocks) {
  std::map<std::string, const NamedBlock*> by_name;
  for (const auto& b : blocks) by_name[b.name] = &b;
  if (by_name.size() != params.size())
    throw IoError("checkpoint has " + std::to_string(by_name.size()) + " blocks, model expects " +
                  std::to_string(params.size()));
  for (const auto& [name, t] : params) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError("checkpoint lacks block " + name);
    if (it->second->shape != t.shape())
      throw IoError("block " + name + " has shape " + shape_str(it->second->shape) + ", expected " + shape_str(t.shape()));
    Tensor handle = t;
    std::copy(it->second->values.begin(), it->second->values.end(), handle.mutable_data().begin());
  }
}

inline void save_params(const std::string& path, const ParamList& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_blocks(out, to_blocks(params));
}

inline void load_params(const std::string& path, const ParamList& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  assign_blocks(params, read_blocks(in));
}

// 64-bit FNV-1a.
class Fnv1a {
 public:
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view s) { update(s.data(), s.size()); }
  void update_doubles(std::span<const double> values) {
    for (double v : values) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      unsigned char bytes[8];
      for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
      update(bytes, 8);
    }
  }
  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t hash_params(const ParamList& params) {
  Fnv1a h;
  for (const auto& [name, t] : params) {
    h.update(name);
    h.update_doubles(t.data());
  }
  return h.digest();
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

}  // namespace hicropl::io
