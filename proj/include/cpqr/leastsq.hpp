// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cpqr/dense_tensor.hpp"
#include "cpqr/errors.hpp"
#include "cpqr/products.hpp"

namespace cpqr {

/// Thin QR: q is m x k with orthonormal columns, r is k x n upper triangular
/// (upper trapezoidal when m < n), k = min(m, n), diag(r) >= 0.
struct CompactQR {
  Matrix q;
  Matrix r;
};

inline CompactQR compact_qr(const Matrix& a) {
  const Index m = a.rows(), k = std::min(a.rows(), a.cols());
  Eigen::HouseholderQR<Matrix> qr(a);
  CompactQR out;
  out.q = qr.householderQ() * Matrix::Identity(m, k);
  out.r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
  for (Index i = 0; i < k; ++i) {
    if (out.r(i, i) < 0.0) {
      out.r.row(i) *= -1.0;
      out.q.col(i) *= -1.0;
    }
  }
  return out;
}

/// Q0 and R of the QR of a Khatri-Rao product V = rs[0] ⊙ ... ⊙ rs[m-1].
struct KhatriRaoQR {
  Matrix q0;
  Matrix r;
};

/// Forms V densely and factors it. With rs the triangular factors of the
/// Khatri-Rao operands, (⊗ Q_j) q0 r is a thin QR of the full Khatri-Rao product.
inline KhatriRaoQR structured_kr_qr(std::span<const Matrix* const> rs) {
  CompactQR qr = compact_qr(khatri_rao(rs));
  return {std::move(qr.q), std::move(qr.r)};
}

inline KhatriRaoQR structured_kr_qr(std::span<const Matrix> rs) {
  std::vector<const Matrix*> ptrs;
  for (const Matrix& m : rs) ptrs.push_back(&m);
  return structured_kr_qr(std::span<const Matrix* const>(ptrs));
}

/// Full structured factorization of Z = A_0 ⊙ ... ⊙ A_{m-1} (operands in
/// Khatri-Rao order): per-operand thin QRs plus the QR of the Khatri-Rao
/// product of their triangular factors.
struct StructuredKRQR {
  std::vector<CompactQR> factor_qrs;
  Matrix q0;
  Matrix r;

  /// (Q_0 ⊗ ... ⊗ Q_{m-1}) q0; only sensible at small sizes.
  Matrix explicit_q() const {
    Matrix k = factor_qrs.front().q;
    for (std::size_t j = 1; j < factor_qrs.size(); ++j) k = kronecker(k, factor_qrs[j].q);
    return k * q0;
  }
};

inline StructuredKRQR structured_qr_of_khatri_rao(std::span<const Matrix> factors) {
  StructuredKRQR out;
  std::vector<Matrix> rs;
  for (const Matrix& a : factors) {
    out.factor_qrs.push_back(compact_qr(a));
    rs.push_back(out.factor_qrs.back().r);
  }
  KhatriRaoQR kr = structured_kr_qr(std::span<const Matrix>(rs));
  out.q0 = std::move(kr.q0);
  out.r = std::move(kr.r);
  return out;
}

/// QR of V = rs[0] ⊙ ... ⊙ rs[m-1] without forming V, using
/// a ⊙ (Q T) = (I ⊗ Q)(a ⊙ T) one operand at a time from the right:
///   Q0 = (I ⊗ (I ⊗ (... Q_1) ... ) Q_{m-1}) Q_m.
/// Every stage factors a matrix of at most rows(rs[j]) * R rows, so memory and
/// work are linear in the number of operands.
class ChainedKRQR {
 public:
  explicit ChainedKRQR(std::span<const Matrix* const> rs) {
    if (rs.empty()) throw ShapeError("chained_kr_qr: at least one matrix required");
    const Index cols = rs.front()->cols();
    for (const Matrix* m : rs)
      if (m->cols() != cols) throw ShapeError("chained_kr_qr: column counts differ");
    total_rows_ = 1;
    for (const Matrix* m : rs) total_rows_ *= m->rows();
    CompactQR qr = compact_qr(*rs.back());
    stages_.push_back(std::move(qr.q));
    Matrix t = std::move(qr.r);
    for (std::size_t s = rs.size() - 1; s-- > 0;) {
      const Matrix* pair[] = {rs[s], &t};
      qr = compact_qr(khatri_rao(std::span<const Matrix* const>(pair)));
      stages_.push_back(std::move(qr.q));
      t = std::move(qr.r);
    }
    r_ = std::move(t);
  }

  const Matrix& r() const { return r_; }
  Index q0_rows() const { return total_rows_; }
  Index q0_cols() const { return stages_.back().cols(); }
  const std::vector<Matrix>& stages() const { return stages_; }

  /// Explicit Q0 for testing.
  Matrix explicit_q0() const {
    Matrix e = stages_.front();
    for (std::size_t s = 1; s < stages_.size(); ++s) {
      const Index blocks = stages_[s].rows() / e.cols();
      e = kronecker(Matrix::Identity(blocks, blocks), e) * stages_[s];
    }
    return e;
  }

  /// Y * Q0, for Y with q0_rows() columns ordered like the Khatri-Rao rows.
  Matrix apply_right(const Matrix& y) const {
    if (y.cols() != total_rows_)
      throw ShapeError("ChainedKRQR::apply_right: " + std::to_string(y.cols()) + " columns, expected " +
                       std::to_string(total_rows_));
    Matrix cur = y;
    for (const Matrix& q : stages_) {
      const Index in = q.rows(), out = q.cols(), blocks = cur.cols() / in;
      Matrix next(cur.rows(), blocks * out);
      for (Index b = 0; b < blocks; ++b) next.middleCols(b * out, out).noalias() = cur.middleCols(b * in, in) * q;
      cur = std::move(next);
    }
    return cur;
  }

  /// Q0^T (cs[0] ⊙ ... ⊙ cs[m-1]) with rows(cs[j]) == rows(rs[j]).
  Matrix transpose_times_khatri_rao(std::span<const Matrix* const> cs) const {
    if (cs.size() != stages_.size()) throw ShapeError("ChainedKRQR: operand count mismatch");
    Matrix d = stages_.front().transpose() * *cs.back();
    for (std::size_t s = 1; s < stages_.size(); ++s) {
      const Matrix* pair[] = {cs[cs.size() - 1 - s], &d};
      d = stages_[s].transpose() * khatri_rao(std::span<const Matrix* const>(pair));
    }
    return d;
  }

 private:
  std::vector<Matrix> stages_;
  Matrix r_;
  Index total_rows_ = 1;
};

// ---------------------------------------------------------------------------
// Subproblem solves. All solve X * A = B style systems (the unknown on the
// left), matching the row-wise least-squares form of the ALS updates.
// ---------------------------------------------------------------------------

inline double default_rtol(Index rows, Index cols) {
  return static_cast<double>(std::max(rows, cols)) * std::numeric_limits<double>::epsilon();
}

/// Solves Â S = M through a Cholesky factorization of the symmetric S.
inline Matrix solve_gram_cholesky(const Matrix& s, const Matrix& m) {
  if (s.rows() != s.cols() || m.cols() != s.rows()) throw ShapeError("solve_gram_cholesky: shape mismatch");
  Eigen::LLT<Matrix> llt(s);
  if (llt.info() != Eigen::Success) throw NotPositiveDefinite("solve_gram_cholesky: Gram matrix is not positive definite");
  Matrix out = llt.solve(m.transpose()).transpose();
  if (!out.allFinite()) throw NotPositiveDefinite("solve_gram_cholesky: non-finite solution");
  return out;
}

/// Pivoted LDL^T solve of Â S = M; used when Cholesky breaks down on an indefinite S.
inline Matrix solve_gram_ldlt(const Matrix& s, const Matrix& m) {
  if (s.rows() != s.cols() || m.cols() != s.rows()) throw ShapeError("solve_gram_ldlt: shape mismatch");
  return Eigen::LDLT<Matrix>(s).solve(m.transpose()).transpose();
}

/// a = U diag(sigma) V^T with sigma nonincreasing.
struct SVDFactors {
  Matrix u;
  Vector sigma;
  Matrix v;
};

inline SVDFactors svd(const Matrix& a) {
  Eigen::JacobiSVD<Matrix> j(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return {j.matrixU(), j.singularValues(), j.matrixV()};
}

inline Vector pseudo_inverse_diagonal(const Vector& sigma, double rtol) {
  const double cutoff = sigma.size() ? rtol * sigma.maxCoeff() : 0.0;
  Vector inv = Vector::Zero(sigma.size());
  for (Index i = 0; i < sigma.size(); ++i)
    if (sigma(i) > cutoff) inv(i) = 1.0 / sigma(i);
  return inv;
}

/// Â = M pinv(S), singular values at or below rtol * sigma_max dropped.
inline Matrix solve_gram_pinv(const Matrix& s, const Matrix& m, std::optional<double> rtol = std::nullopt) {
  if (s.rows() != s.cols() || m.cols() != s.rows()) throw ShapeError("solve_gram_pinv: shape mismatch");
  const SVDFactors f = svd(s);
  const Vector inv = pseudo_inverse_diagonal(f.sigma, rtol.value_or(default_rtol(s.rows(), s.cols())));
  return ((m * f.v) * inv.asDiagonal()) * f.u.transpose();
}

/// Solves Â R^T = W for upper-triangular R by substitution.
inline Matrix solve_triangular_rt(const Matrix& r, const Matrix& w) {
  if (r.rows() != r.cols())
    throw SingularFactor("solve_triangular_rt: triangular factor is " + std::to_string(r.rows()) + "x" +
                         std::to_string(r.cols()) + " (rank deficient)");
  if (w.cols() != r.rows()) throw ShapeError("solve_triangular_rt: shape mismatch");
  const double threshold = std::numeric_limits<double>::epsilon() * r.norm();
  for (Index i = 0; i < r.rows(); ++i)
    if (!(std::abs(r(i, i)) >= threshold) || r(i, i) == 0.0)
      throw SingularFactor("solve_triangular_rt: diagonal entry " + std::to_string(i) + " is below threshold");
  Matrix out = w;
  r.transpose().triangularView<Eigen::Lower>().solveInPlace<Eigen::OnTheRight>(out);
  return out;
}

/// Â = W U pinv(Sigma) V^T for R = U Sigma V^T.
inline Matrix solve_rt_svd(const Matrix& r, const Matrix& w, std::optional<double> rtol = std::nullopt) {
  if (w.cols() != r.rows()) throw ShapeError("solve_rt_svd: shape mismatch");
  const SVDFactors f = svd(r);
  const Vector inv = pseudo_inverse_diagonal(f.sigma, rtol.value_or(default_rtol(r.rows(), r.cols())));
  return ((w * f.u) * inv.asDiagonal()) * f.v.transpose();
}

}  // namespace cpqr
