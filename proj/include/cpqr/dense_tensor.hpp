// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cpqr/errors.hpp"

namespace cpqr {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline Index product(std::span<const Index> dims) {
  return std::accumulate(dims.begin(), dims.end(), Index{1}, std::multiplies<>());
}

inline std::string dims_to_string(std::span<const Index> dims) {
  std::string s;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(dims[i]);
  }
  return s;
}

/// N-mode dense tensor stored column-major: the first index varies fastest,
/// so the mode-0 unfolding is the storage itself viewed as an I0 x (rest) matrix.
class DenseTensor {
 public:
  explicit DenseTensor(std::vector<Index> dims) : dims_(std::move(dims)) {
    validate_dims();
    values_.assign(static_cast<std::size_t>(product(dims_)), 0.0);
  }

  DenseTensor(std::vector<Index> dims, std::vector<double> values)
      : dims_(std::move(dims)), values_(std::move(values)) {
    validate_dims();
    if (static_cast<Index>(values_.size()) != product(dims_))
      throw ShapeError("DenseTensor: " + std::to_string(values_.size()) +
                       " values do not fill dims " + dims_to_string(dims_));
  }

  Index ndims() const { return static_cast<Index>(dims_.size()); }
  const std::vector<Index>& dims() const { return dims_; }
  Index dim(Index n) const { return dims_[static_cast<std::size_t>(n)]; }
  Index size() const { return static_cast<Index>(values_.size()); }

  std::span<const double> values() const { return values_; }
  const double* data() const { return values_.data(); }
  double* data() { return values_.data(); }

  /// Linear offset of a multi-index (0-based).
  Index offset(std::span<const Index> idx) const {
    Index off = 0, stride = 1;
    for (std::size_t k = 0; k < dims_.size(); ++k) {
      off += idx[k] * stride;
      stride *= dims_[k];
    }
    return off;
  }

  double operator()(std::span<const Index> idx) const { return values_[static_cast<std::size_t>(offset(idx))]; }
  double& operator()(std::span<const Index> idx) { return values_[static_cast<std::size_t>(offset(idx))]; }
  double operator()(std::initializer_list<Index> idx) const {
    return (*this)(std::span<const Index>(idx.begin(), idx.size()));
  }

  /// Storage viewed as a rows x cols column-major matrix (rows * cols == size()).
  Eigen::Map<const Matrix> view(Index rows, Index cols) const { return {values_.data(), rows, cols}; }
  Eigen::Map<const Vector> flat() const { return {values_.data(), size()}; }
  Eigen::Map<Vector> flat() { return {values_.data(), size()}; }

  /// Product of the dimensions strictly before / after mode n.
  Index size_before(Index n) const { return product(std::span(dims_).first(static_cast<std::size_t>(n))); }
  Index size_after(Index n) const { return product(std::span(dims_).subspan(static_cast<std::size_t>(n) + 1)); }

  friend bool operator==(const DenseTensor&, const DenseTensor&) = default;

 private:
  void validate_dims() const {
    if (dims_.empty()) throw ShapeError("DenseTensor: at least one mode required");
    for (Index d : dims_)
      if (d < 1) throw ShapeError("DenseTensor: dimensions must be positive, got " + dims_to_string(dims_));
  }

  std::vector<Index> dims_;
  std::vector<double> values_;
};

inline void check_mode(Index n, Index ndims, const char* where) {
  if (n < 0 || n >= ndims)
    throw ShapeError(std::string(where) + ": mode " + std::to_string(n) + " out of range for " +
                     std::to_string(ndims) + "-mode tensor");
}

/// Mode-n unfolding: rows are indexed by i_n, columns by the remaining indices
/// with the lowest remaining mode varying fastest.
inline Matrix matricize(const DenseTensor& x, Index n) {
  check_mode(n, x.ndims(), "matricize");
  const Index before = x.size_before(n), in = x.dim(n), after = x.size_after(n);
  if (before == 1) return x.view(in, after);
  Matrix m(in, before * after);
  for (Index r = 0; r < after; ++r)
    m.middleCols(r * before, before) = x.view(before * in, after).col(r).reshaped(before, in).transpose();
  return m;
}

/// Inverse of matricize.
inline DenseTensor tensorize(const Matrix& m, std::vector<Index> dims, Index n) {
  DenseTensor x(std::move(dims));
  check_mode(n, x.ndims(), "tensorize");
  const Index before = x.size_before(n), in = x.dim(n), after = x.size_after(n);
  if (m.rows() != in || m.cols() != before * after)
    throw ShapeError("tensorize: matrix is " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                     ", expected " + std::to_string(in) + "x" + std::to_string(before * after));
  Eigen::Map<Matrix> out(x.data(), before * in, after);
  for (Index r = 0; r < after; ++r)
    out.col(r).reshaped(before, in) = m.middleCols(r * before, before).transpose();
  return x;
}

inline void check_same_dims(const DenseTensor& a, const DenseTensor& b, const char* where) {
  if (a.dims() != b.dims())
    throw ShapeError(std::string(where) + ": dims " + dims_to_string(a.dims()) + " vs " + dims_to_string(b.dims()));
}

inline double inner(const DenseTensor& a, const DenseTensor& b) {
  check_same_dims(a, b, "inner");
  return a.flat().dot(b.flat());
}

inline double norm(const DenseTensor& x) { return x.flat().norm(); }

}  // namespace cpqr
