// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "cpqr/dense_tensor.hpp"
#include "cpqr/errors.hpp"
#include "cpqr/kruskal_tensor.hpp"

// Text formats, whitespace separated, values column-major:
//   .dten   N / dims / values
//   .kten   N R / dims / weights / factor 1 / ... / factor N

namespace cpqr {

namespace detail {

template <typename T>
T read_token(std::istream& in, const char* what) {
  T v{};
  if (!(in >> v)) throw IoError(std::string("malformed input: expected ") + what);
  return v;
}

inline std::vector<Index> read_dims(std::istream& in, Index nd) {
  if (nd < 1) throw IoError("malformed input: mode count must be positive");
  std::vector<Index> dims;
  for (Index j = 0; j < nd; ++j) {
    const auto d = read_token<long long>(in, "dimension");
    if (d < 1) throw IoError("malformed input: nonpositive dimension");
    dims.push_back(static_cast<Index>(d));
  }
  return dims;
}

inline void read_values(std::istream& in, double* out, Index count) {
  for (Index i = 0; i < count; ++i) out[i] = read_token<double>(in, "value");
}

inline void expect_end(std::istream& in) {
  std::string extra;
  if (in >> extra) throw IoError("malformed input: trailing data '" + extra + "'");
}

inline void write_row(std::ostream& out, const double* v, Index count) {
  for (Index i = 0; i < count; ++i) out << (i ? " " : "") << v[i];
  out << '\n';
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for reading");
  return f;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  return f;
}

inline void finish(std::ofstream& f, const std::string& path) {
  f.flush();
  if (!f) throw IoError("write to '" + path + "' failed");
}

}  // namespace detail

inline DenseTensor read_dense(std::istream& in) {
  const auto nd = detail::read_token<long long>(in, "mode count");
  std::vector<Index> dims = detail::read_dims(in, static_cast<Index>(nd));
  DenseTensor x(std::move(dims));
  detail::read_values(in, x.data(), x.size());
  detail::expect_end(in);
  return x;
}

inline void write_dense(std::ostream& out, const DenseTensor& x) {
  const auto precision = out.precision(17);
  out << x.ndims() << '\n';
  for (Index j = 0; j < x.ndims(); ++j) out << (j ? " " : "") << x.dim(j);
  out << '\n';
  detail::write_row(out, x.data(), x.size());
  out.precision(precision);
}

inline KruskalTensor read_kruskal(std::istream& in) {
  const auto nd = detail::read_token<long long>(in, "mode count");
  const auto rank = detail::read_token<long long>(in, "rank");
  if (rank < 1) throw IoError("malformed input: rank must be positive");
  const std::vector<Index> dims = detail::read_dims(in, static_cast<Index>(nd));
  Vector weights(rank);
  detail::read_values(in, weights.data(), rank);
  std::vector<Matrix> factors;
  for (Index d : dims) {
    Matrix f(d, rank);
    detail::read_values(in, f.data(), f.size());
    factors.push_back(std::move(f));
  }
  detail::expect_end(in);
  return KruskalTensor(std::move(weights), std::move(factors));
}

inline void write_kruskal(std::ostream& out, const KruskalTensor& k) {
  const auto precision = out.precision(17);
  out << k.ndims() << ' ' << k.rank() << '\n';
  for (Index j = 0; j < k.ndims(); ++j) out << (j ? " " : "") << k.dim(j);
  out << '\n';
  detail::write_row(out, k.weights().data(), k.rank());
  for (const Matrix& f : k.factors()) detail::write_row(out, f.data(), f.size());
  out.precision(precision);
}

inline DenseTensor load_dense(const std::string& path) {
  std::ifstream f = detail::open_in(path);
  return read_dense(f);
}

inline KruskalTensor load_kruskal(const std::string& path) {
  std::ifstream f = detail::open_in(path);
  return read_kruskal(f);
}

inline void save_dense(const std::string& path, const DenseTensor& x) {
  std::ofstream f = detail::open_out(path);
  write_dense(f, x);
  detail::finish(f, path);
}

inline void save_kruskal(const std::string& path, const KruskalTensor& k) {
  std::ofstream f = detail::open_out(path);
  write_kruskal(f, k);
  detail::finish(f, path);
}

/// True when the path names a Kruskal file by extension.
inline bool is_kruskal_path(const std::string& path) {
  return path.size() >= 5 && path.compare(path.size() - 5, 5, ".kten") == 0;
}

}  // namespace cpqr
