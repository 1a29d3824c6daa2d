#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

#include "hill/errors.hpp"

namespace hill::io {

// Little binary stream helpers. Values are written in host byte order; the
// checkpoint files are platform-local artifacts.

template <typename T>
  requires std::is_trivially_copyable_v<T>
void write(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
  requires std::is_trivially_copyable_v<T>
T read(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw CheckpointError("unexpected end of stream");
  return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
  write<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
  const auto n = read<std::uint64_t>(is);
  if (n > (1ull << 32)) throw CheckpointError("implausible string length in stream");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw CheckpointError("unexpected end of stream");
  return s;
}

inline void write_matrix(std::ostream& os, const Eigen::MatrixXd& m) {
  write<std::int64_t>(os, m.rows());
  write<std::int64_t>(os, m.cols());
  // row-major on disk
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) write<double>(os, m(r, c));
}

inline Eigen::MatrixXd read_matrix(std::istream& is) {
  const auto rows = read<std::int64_t>(is);
  const auto cols = read<std::int64_t>(is);
  if (rows < 0 || cols < 0 || rows * cols > (1ll << 30)) throw CheckpointError("implausible matrix shape in stream");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = read<double>(is);
  return m;
}

inline void write_vector(std::ostream& os, const Eigen::VectorXd& v) {
  write<std::int64_t>(os, v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) write<double>(os, v(i));
}

inline Eigen::VectorXd read_vector(std::istream& is) {
  const auto n = read<std::int64_t>(is);
  if (n < 0 || n > (1ll << 30)) throw CheckpointError("implausible vector length in stream");
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = read<double>(is);
  return v;
}

inline void expect_magic(std::istream& is, const std::string& magic) {
  std::string got(magic.size(), '\0');
  is.read(got.data(), static_cast<std::streamsize>(got.size()));
  if (!is || got != magic) throw CheckpointError("bad magic: expected " + magic);
}

}  // namespace hill::io
