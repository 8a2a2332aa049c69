// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "cpqr/dense_tensor.hpp"
#include "cpqr/products.hpp"

namespace cpqr {

/// Weighted sum of R rank-one terms: X = sum_r weights(r) * a_r^(1) ∘ ... ∘ a_r^(N).
class KruskalTensor {
 public:
  KruskalTensor(Vector weights, std::vector<Matrix> factors)
      : weights_(std::move(weights)), factors_(std::move(factors)) {
    validate();
  }

  /// Unit weights.
  explicit KruskalTensor(std::vector<Matrix> factors)
      : weights_(unit_weights(factors)), factors_(std::move(factors)) {
    validate();
  }

  Index ndims() const { return static_cast<Index>(factors_.size()); }
  Index rank() const { return weights_.size(); }
  Index dim(Index n) const { return factors_[static_cast<std::size_t>(n)].rows(); }
  std::vector<Index> dims() const {
    std::vector<Index> d;
    for (const Matrix& f : factors_) d.push_back(f.rows());
    return d;
  }

  const Vector& weights() const { return weights_; }
  Vector& weights() { return weights_; }
  const std::vector<Matrix>& factors() const { return factors_; }
  const Matrix& factor(Index n) const { return factors_[static_cast<std::size_t>(n)]; }
  Matrix& factor(Index n) { return factors_[static_cast<std::size_t>(n)]; }

  /// Moves column norms of every factor into the weights. Negative weights are
  /// made nonnegative by flipping the mode-0 column; a zero column becomes e_1
  /// with weight 0.
  void normalize() {
    for (Matrix& f : factors_) {
      for (Index r = 0; r < rank(); ++r) {
        const double nrm = f.col(r).norm();
        if (nrm > 0.0) {
          f.col(r) /= nrm;
          weights_(r) *= nrm;
        } else {
          f.col(r).setZero();
          f(0, r) = 1.0;
          weights_(r) = 0.0;
        }
      }
    }
    for (Index r = 0; r < rank(); ++r) {
      if (weights_(r) < 0.0) {
        weights_(r) = -weights_(r);
        factors_[0].col(r) *= -1.0;
      }
    }
  }

 private:
  static Vector unit_weights(const std::vector<Matrix>& factors) {
    return Vector::Ones(factors.empty() ? 0 : factors.front().cols());
  }

  void validate() const {
    if (factors_.empty()) throw ShapeError("KruskalTensor: at least one factor required");
    for (const Matrix& f : factors_) {
      if (f.cols() != weights_.size())
        throw ShapeError("KruskalTensor: factor has " + std::to_string(f.cols()) + " columns, expected rank " +
                         std::to_string(weights_.size()));
      if (f.rows() < 1) throw ShapeError("KruskalTensor: factor with zero rows");
    }
  }

  Vector weights_;
  std::vector<Matrix> factors_;
};

inline KruskalTensor normalized(KruskalTensor k) {
  k.normalize();
  return k;
}

inline DenseTensor kruskal_to_dense(const KruskalTensor& k) {
  DenseTensor x(k.dims());
  const Matrix scaled = k.factor(0) * k.weights().asDiagonal();
  Eigen::Map<Matrix> out(x.data(), k.dim(0), x.size() / k.dim(0));
  if (k.ndims() == 1) {
    out = scaled.rowwise().sum();
    return x;
  }
  const auto rest = reversed_except(k.factors(), 0);
  out.noalias() = scaled * khatri_rao(std::span<const Matrix* const>(rest)).transpose();
  return x;
}

/// H = hadamard_j (A_j^T B_j) over all modes (or all but `skip`).
inline Matrix cross_gram_product(const KruskalTensor& a, const KruskalTensor& b, Index skip = -1) {
  if (a.dims() != b.dims())
    throw ShapeError("Kruskal dims " + dims_to_string(a.dims()) + " vs " + dims_to_string(b.dims()));
  Matrix h = Matrix::Ones(a.rank(), b.rank());
  for (Index j = 0; j < a.ndims(); ++j)
    if (j != skip) h.array() *= (a.factor(j).transpose() * b.factor(j)).array();
  return h;
}

inline double inner(const KruskalTensor& a, const KruskalTensor& b) {
  return a.weights().dot(cross_gram_product(a, b) * b.weights());
}

/// Norm from the Gram identity; accurate to about sqrt(eps) relative when
/// terms cancel. See rel_error_direct for the compressed, accurate variant.
inline double norm(const KruskalTensor& k) { return std::sqrt(std::max(0.0, inner(k, k))); }

}  // namespace cpqr
