#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "fcdd/errors.hpp"
#include "fcdd/tensor.hpp"

namespace fcdd {

// Checkpoint container: named tensors in a single little-endian binary file.
// Layout: magic "FCDD", format version u32, tensor count u32, then per
// tensor: name length u32 + UTF-8 name, rank u32, extents u64 each,
// dtype tag u8 (0 = f32, 1 = f64), raw values.
struct CheckpointEntry {
  Shape shape;
  int dtype = 0;  // 0 = f32, 1 = f64
  std::vector<double> values;  // widened on load; narrowed on save per dtype
};

using Checkpoint = std::map<std::string, CheckpointEntry>;

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class V>
void write_pod(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V read_pod(std::istream& in, const std::string& path) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) throw LoadError("truncated checkpoint: " + path);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write checkpoint: " + path);
  out.write("FCDD", 4);
  detail::write_pod<std::uint32_t>(out, kCheckpointVersion);
  detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.size()));
  for (const auto& [name, entry] : ckpt) {
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(entry.shape.size()));
    for (long e : entry.shape)
      detail::write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(e));
    detail::write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(entry.dtype));
    if (entry.dtype == 0) {
      for (double v : entry.values)
        detail::write_pod<float>(out, static_cast<float>(v));
    } else {
      for (double v : entry.values) detail::write_pod<double>(out, v);
    }
  }
  if (!out) throw LoadError("write failure on checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "FCDD", 4) != 0)
    throw LoadError("bad checkpoint magic: " + path);
  const auto version = detail::read_pod<std::uint32_t>(in, path);
  if (version != kCheckpointVersion)
    throw LoadError("unsupported checkpoint version " + std::to_string(version) +
                    ": " + path);
  const auto count = detail::read_pod<std::uint32_t>(in, path);
  Checkpoint ckpt;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = detail::read_pod<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw LoadError("truncated checkpoint: " + path);
    CheckpointEntry entry;
    const auto rank = detail::read_pod<std::uint32_t>(in, path);
    std::uint64_t numel = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      const auto e = detail::read_pod<std::uint64_t>(in, path);
      if (e == 0 || e > (1ULL << 32))
        throw LoadError("bad tensor extent in checkpoint: " + path);
      entry.shape.push_back(static_cast<long>(e));
      numel *= e;
    }
    entry.dtype = detail::read_pod<std::uint8_t>(in, path);
    if (entry.dtype != 0 && entry.dtype != 1)
      throw LoadError("bad dtype tag in checkpoint tensor '" + name + "': " + path);
    entry.values.resize(numel);
    for (std::uint64_t j = 0; j < numel; ++j) {
      entry.values[j] = entry.dtype == 0
                            ? static_cast<double>(detail::read_pod<float>(in, path))
                            : detail::read_pod<double>(in, path);
    }
    ckpt.emplace(std::move(name), std::move(entry));
  }
  return ckpt;
}

}  // namespace fcdd
