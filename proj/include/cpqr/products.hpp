// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

#include "cpqr/dense_tensor.hpp"

namespace cpqr {

inline Matrix kronecker(const Matrix& a, const Matrix& b) {
  Matrix k(a.rows() * b.rows(), a.cols() * b.cols());
  for (Index j = 0; j < a.cols(); ++j)
    for (Index i = 0; i < a.rows(); ++i)
      k.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return k;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("hadamard: shapes " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " and " +
                     std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + " differ");
  return a.cwiseProduct(b);
}

/// Khatri-Rao product mats[0] ⊙ mats[1] ⊙ ... ; the row index of the last
/// operand varies fastest. Pass factors as A_N, ..., A_1 to match the unfolding order.
inline Matrix khatri_rao(std::span<const Matrix* const> mats) {
  if (mats.empty()) throw ShapeError("khatri_rao: at least one matrix required");
  const Index cols = mats[0]->cols();
  for (const Matrix* m : mats)
    if (m->cols() != cols)
      throw ShapeError("khatri_rao: column counts " + std::to_string(cols) + " and " + std::to_string(m->cols()));
  Matrix acc = *mats[0];
  for (std::size_t t = 1; t < mats.size(); ++t) {
    const Matrix& b = *mats[t];
    Matrix next(acc.rows() * b.rows(), cols);
    for (Index k = 0; k < cols; ++k)
      for (Index i = 0; i < acc.rows(); ++i) next.col(k).segment(i * b.rows(), b.rows()) = acc(i, k) * b.col(k);
    acc = std::move(next);
  }
  return acc;
}

inline Matrix khatri_rao(std::span<const Matrix> mats) {
  std::vector<const Matrix*> ptrs;
  ptrs.reserve(mats.size());
  for (const Matrix& m : mats) ptrs.push_back(&m);
  return khatri_rao(std::span<const Matrix* const>(ptrs));
}

inline Matrix khatri_rao(std::initializer_list<Matrix> mats) {
  return khatri_rao(std::span<const Matrix>(mats.begin(), mats.size()));
}

/// Pointers to factors[N-1], ..., factors[0] skipping `skip` (pass -1 to keep all):
/// the operand order of Z_n = A_N ⊙ ... ⊙ A_{n+1} ⊙ A_{n-1} ⊙ ... ⊙ A_1.
inline std::vector<const Matrix*> reversed_except(std::span<const Matrix> factors, Index skip) {
  std::vector<const Matrix*> out;
  for (Index j = static_cast<Index>(factors.size()) - 1; j >= 0; --j)
    if (j != skip) out.push_back(&factors[static_cast<std::size_t>(j)]);
  return out;
}

}  // namespace cpqr
