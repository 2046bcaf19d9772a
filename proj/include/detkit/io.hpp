#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "detkit/matrix.hpp"

namespace detkit {

/// Raised for unreadable, truncated, or malformed data files.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

// All binary containers are little-endian on disk regardless of host order.

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, const std::string& path)
      : bytes_(bytes), path_(path) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i]))
           << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i]))
           << (8 * i);
    pos_ += 8;
    return v;
  }

  double f64() { return std::bit_cast<double>(u64()); }

  std::string chars(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void doubles(double* dst, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] = f64();
  }

  bool exhausted() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) {
    if (pos_ + n > bytes_.size())
      throw IoError(path_ + ": truncated file");
  }
  const std::string& bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path + ": cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(path + ": write failed");
}

}  // namespace detail

/// Named-matrix container, the on-disk format for parameter sets, feature
/// batches, and pipeline outputs. Layout (little-endian):
///   magic "DKMAT1\n" (7 bytes), u32 entry count, then per entry:
///   u32 name length, name bytes, u64 rows, u64 cols, rows*cols f64 row-major.
/// Save and load round-trip bit-exactly.
inline constexpr char kMatrixContainerMagic[] = "DKMAT1\n";

inline void save_matrices(const std::map<std::string, Matrix>& matrices,
                          const std::string& path) {
  std::string out;
  out.append(kMatrixContainerMagic, 7);
  detail::put_u32(out, static_cast<std::uint32_t>(matrices.size()));
  for (const auto& [name, m] : matrices) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    detail::put_u64(out, m.rows);
    detail::put_u64(out, m.cols);
    for (double v : m.data) detail::put_f64(out, v);
  }
  detail::write_file_bytes(path, out);
}

inline std::map<std::string, Matrix> load_matrices(const std::string& path) {
  const std::string bytes = detail::read_file_bytes(path);
  detail::ByteReader r(bytes, path);
  if (r.chars(7) != std::string(kMatrixContainerMagic, 7))
    throw IoError(path + ": not a matrix container (bad magic)");
  const std::uint32_t count = r.u32();
  std::map<std::string, Matrix> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.chars(r.u32());
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    if (rows > (1ull << 32) || cols > (1ull << 32) ||
        (cols != 0 && rows * cols / cols != rows))
      throw IoError(path + ": implausible matrix shape for entry '" + name + "'");
    Matrix m(rows, cols);
    r.doubles(m.data.data(), m.data.size());
    if (!out.emplace(name, std::move(m)).second)
      throw IoError(path + ": duplicate entry '" + name + "'");
  }
  if (!r.exhausted()) throw IoError(path + ": trailing bytes after last entry");
  return out;
}

inline const Matrix& require_matrix(const std::map<std::string, Matrix>& matrices,
                                    const std::string& name,
                                    const std::string& path) {
  const auto it = matrices.find(name);
  if (it == matrices.end())
    throw IoError(path + ": missing required entry '" + name + "'");
  return it->second;
}

}  // namespace detkit
