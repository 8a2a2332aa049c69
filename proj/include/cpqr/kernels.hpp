// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cpqr/dense_tensor.hpp"
#include "cpqr/kruskal_tensor.hpp"
#include "cpqr/products.hpp"

namespace cpqr {

/// n-mode product Y = X x_n U, i.e. Y_(n) = U * X_(n).
inline DenseTensor ttm(const DenseTensor& x, const Matrix& u, Index n) {
  check_mode(n, x.ndims(), "ttm");
  const Index before = x.size_before(n), in = x.dim(n), after = x.size_after(n);
  if (u.cols() != in)
    throw ShapeError("ttm: matrix has " + std::to_string(u.cols()) + " columns, mode " + std::to_string(n) +
                     " has size " + std::to_string(in));
  std::vector<Index> dims = x.dims();
  dims[static_cast<std::size_t>(n)] = u.rows();
  DenseTensor y(std::move(dims));
  const Index j = u.rows();
  if (before == 1) {
    Eigen::Map<Matrix>(y.data(), j, after).noalias() = u * x.view(in, after);
    return y;
  }
  for (Index r = 0; r < after; ++r) {
    Eigen::Map<const Matrix> xs(x.data() + r * before * in, before, in);
    Eigen::Map<Matrix> ys(y.data() + r * before * j, before, j);
    ys.noalias() = xs * u.transpose();
  }
  return y;
}

struct ModeMatrix {
  Index mode;
  Matrix matrix;
};

/// Sequence of TTMs in distinct modes, applied in order of decreasing mode
/// size (ties: higher mode first) regardless of the order given.
inline DenseTensor multi_ttm(const DenseTensor& x, std::span<const ModeMatrix> mats) {
  std::set<Index> seen;
  for (const ModeMatrix& m : mats) {
    check_mode(m.mode, x.ndims(), "multi_ttm");
    if (!seen.insert(m.mode).second) throw ShapeError("multi_ttm: duplicate mode " + std::to_string(m.mode));
    if (m.matrix.cols() != x.dim(m.mode))
      throw ShapeError("multi_ttm: matrix for mode " + std::to_string(m.mode) + " has " +
                       std::to_string(m.matrix.cols()) + " columns, expected " + std::to_string(x.dim(m.mode)));
  }
  std::vector<const ModeMatrix*> order;
  for (const ModeMatrix& m : mats) order.push_back(&m);
  std::sort(order.begin(), order.end(), [&](const ModeMatrix* a, const ModeMatrix* b) {
    const Index da = x.dim(a->mode), db = x.dim(b->mode);
    return da != db ? da > db : a->mode > b->mode;
  });
  if (order.empty()) return x;
  DenseTensor y = ttm(x, order.front()->matrix, order.front()->mode);
  for (std::size_t t = 1; t < order.size(); ++t) y = ttm(y, order[t]->matrix, order[t]->mode);
  return y;
}

inline DenseTensor multi_ttm(const DenseTensor& x, std::initializer_list<ModeMatrix> mats) {
  return multi_ttm(x, std::span<const ModeMatrix>(mats.begin(), mats.size()));
}

namespace detail {
inline Index check_factors(std::span<const Matrix> factors, const std::vector<Index>& dims, Index n,
                           const char* where) {
  if (static_cast<Index>(factors.size()) != static_cast<Index>(dims.size()))
    throw ShapeError(std::string(where) + ": " + std::to_string(factors.size()) + " factors for a " +
                     std::to_string(dims.size()) + "-mode tensor");
  check_mode(n, static_cast<Index>(dims.size()), where);
  Index rank = -1;
  for (Index j = 0; j < static_cast<Index>(dims.size()); ++j) {
    if (j == n) continue;
    const Matrix& f = factors[static_cast<std::size_t>(j)];
    if (f.rows() != dims[static_cast<std::size_t>(j)])
      throw ShapeError(std::string(where) + ": factor " + std::to_string(j) + " has " + std::to_string(f.rows()) +
                       " rows, mode size is " + std::to_string(dims[static_cast<std::size_t>(j)]));
    if (rank >= 0 && f.cols() != rank) throw ShapeError(std::string(where) + ": factors disagree on rank");
    rank = f.cols();
  }
  if (rank < 0) rank = factors[static_cast<std::size_t>(n)].cols();
  return rank;
}
}  // namespace detail

/// M = X_(n) (A_N ⊙ ... ⊙ A_{n+1} ⊙ A_{n-1} ⊙ ... ⊙ A_1). factors[n] is ignored.
inline Matrix mttkrp(const DenseTensor& x, std::span<const Matrix> factors, Index n) {
  const Index rank = detail::check_factors(factors, x.dims(), n, "mttkrp");
  const Index nd = x.ndims();
  const Index before = x.size_before(n), in = x.dim(n), after = x.size_after(n);
  if (nd == 1) return x.view(in, 1) * Matrix::Ones(1, rank);

  std::vector<const Matrix*> left, right;  // modes n-1..0 and N-1..n+1
  for (Index j = n - 1; j >= 0; --j) left.push_back(&factors[static_cast<std::size_t>(j)]);
  for (Index j = nd - 1; j > n; --j) right.push_back(&factors[static_cast<std::size_t>(j)]);

  if (n == 0) return x.view(in, after) * khatri_rao(std::span<const Matrix* const>(right));
  const Matrix kl = khatri_rao(std::span<const Matrix* const>(left));
  if (n == nd - 1) return x.view(before, in).transpose() * kl;

  const Matrix kr = khatri_rao(std::span<const Matrix* const>(right));
  Matrix m = Matrix::Zero(in, rank);
  if (before >= after) {
    // contract the left modes first: T = KL^T X, R x (in * after)
    const Matrix t = kl.transpose() * x.view(before, in * after);
    for (Index k = 0; k < after; ++k)
      m.noalias() += (t.middleCols(k * in, in).transpose().array().rowwise() * kr.row(k).array()).matrix();
  } else {
    // contract the right modes first: T = X KR, (before * in) x R
    const Matrix t = x.view(before * in, after) * kr;
    for (Index r = 0; r < rank; ++r)
      m.col(r) = t.col(r).reshaped(before, in).transpose() * kl.col(r);
  }
  return m;
}

/// MTTKRP of a Kruskal tensor without forming it: B_n diag(weights) * hadamard_{j != n}(B_j^T A_j).
inline Matrix mttkrp(const KruskalTensor& x, std::span<const Matrix> factors, Index n) {
  const Index rank = detail::check_factors(factors, x.dims(), n, "mttkrp");
  Matrix h = Matrix::Ones(x.rank(), rank);
  for (Index j = 0; j < x.ndims(); ++j)
    if (j != n) h.array() *= (x.factor(j).transpose() * factors[static_cast<std::size_t>(j)]).array();
  return x.factor(n) * (x.weights().asDiagonal() * h);
}

/// <X, K> through a mode-0 MTTKRP; K is never densified.
inline double inner(const DenseTensor& x, const KruskalTensor& k) {
  const Matrix m = mttkrp(x, k.factors(), 0);
  return (m.array() * (k.factor(0) * k.weights().asDiagonal()).array()).sum();
}

}  // namespace cpqr
