#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "kdmp/error.hpp"
#include "kdmp/tensor.hpp"

namespace kdmp {

// KDNP1 container: magic "KDNP1", u64 entry count, then per entry
// (u64 name length, UTF-8 name, u64 rank, rank x u64 extents, f32 payload).
// All integers little-endian; payloads quantized to f32.

namespace detail {

inline void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), 8);
}

inline std::uint64_t read_u64(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  if (!is) throw Error(ErrorCode::BadFile, "truncated integer field");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

inline void write_f32(std::ostream& os, const std::vector<double>& d) {
  std::vector<float> f(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) f[i] = static_cast<float>(d[i]);
  static_assert(sizeof(float) == 4);
  os.write(reinterpret_cast<const char*>(f.data()),
           static_cast<std::streamsize>(f.size() * 4));
}

inline void read_f32(std::istream& is, std::vector<double>& d, std::size_t n) {
  std::vector<float> f(n);
  is.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(n * 4));
  if (!is) throw Error(ErrorCode::BadFile, "truncated f32 payload");
  d.resize(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = static_cast<double>(f[i]);
}

}  // namespace detail

inline void write_checkpoint(const std::string& path,
                             const std::vector<std::pair<std::string, Tensor>>& entries) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::BadFile, "cannot open for writing: " + path);
  os.write("KDNP1", 5);
  detail::write_u64(os, entries.size());
  for (const auto& [name, tensor] : entries) {
    detail::write_u64(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_u64(os, tensor.rank());
    for (std::size_t e : tensor.shape) detail::write_u64(os, e);
    detail::write_f32(os, tensor.data);
  }
  if (!os) throw Error(ErrorCode::BadFile, "write failed: " + path);
}

inline std::vector<std::pair<std::string, Tensor>> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::BadFile, "cannot open: " + path);
  char magic[5];
  is.read(magic, 5);
  if (!is || std::memcmp(magic, "KDNP1", 5) != 0) {
    throw Error(ErrorCode::BadFile, "bad magic in " + path);
  }
  const std::uint64_t count = detail::read_u64(is);
  std::vector<std::pair<std::string, Tensor>> entries;
  entries.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t name_len = detail::read_u64(is);
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    if (!is) throw Error(ErrorCode::BadFile, "truncated name in " + path);
    const std::uint64_t rank = detail::read_u64(is);
    Shape shape(rank);
    std::size_t numel = 1;
    for (std::uint64_t r = 0; r < rank; ++r) {
      shape[r] = detail::read_u64(is);
      numel *= shape[r];
    }
    std::vector<double> data;
    detail::read_f32(is, data, numel);
    entries.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return entries;
}

}  // namespace kdmp
