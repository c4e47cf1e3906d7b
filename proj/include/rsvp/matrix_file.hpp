#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "rsvp/common.hpp"

namespace rsvp::io {

namespace fs = std::filesystem;

using Matrix = std::vector<std::vector<double>>;

namespace detail {

inline void put_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)((v >> 8) & 0xff),
                        (unsigned char)((v >> 16) & 0xff), (unsigned char)((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IngestError("matrix file truncated");
  return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) | (uint32_t(b[3]) << 24);
}

inline void put_f32(std::ostream& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

inline float get_f32(std::istream& in) {
  uint32_t bits = get_u32(in);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline void put_u64(std::ostream& out, uint64_t v) {
  put_u32(out, uint32_t(v & 0xffffffffull));
  put_u32(out, uint32_t(v >> 32));
}

inline uint64_t get_u64(std::istream& in) {
  uint64_t lo = get_u32(in);
  uint64_t hi = get_u32(in);
  return lo | (hi << 32);
}

inline void put_f64(std::ostream& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

inline double get_f64(std::istream& in) {
  uint64_t bits = get_u64(in);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace detail

// Magic-tagged row-major float32 matrix, little-endian. The same container
// backs the "FV441" feature matrices and the "SCR1" ensemble score caches.
inline void save_matrix(const fs::path& path, const std::string& magic, const Matrix& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write matrix file: " + path.string());
  out.write(magic.data(), std::streamsize(magic.size()));
  uint32_t n = uint32_t(rows.size());
  uint32_t cols = rows.empty() ? 0 : uint32_t(rows.front().size());
  detail::put_u32(out, n);
  detail::put_u32(out, cols);
  for (const auto& row : rows) {
    if (row.size() != cols) throw InternalError("ragged matrix rows");
    for (double v : row) detail::put_f32(out, float(v));
  }
}

inline Matrix load_matrix(const fs::path& path, const std::string& magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read matrix file: " + path.string());
  std::string head(magic.size(), '\0');
  in.read(head.data(), std::streamsize(magic.size()));
  if (!in || head != magic)
    throw IngestError("matrix file " + path.string() + " lacks magic '" + magic + "'");
  uint32_t n = detail::get_u32(in);
  uint32_t cols = detail::get_u32(in);
  Matrix rows(n, std::vector<double>(cols));
  for (auto& row : rows)
    for (auto& v : row) v = double(detail::get_f32(in));
  return rows;
}

}  // namespace rsvp::io
