// SPDX-License-Identifier: Apache-2.0
// Randomized invariants, swept over seeds.
#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "test_util.hpp"

using namespace cpqr;
using namespace cpqr::testing;

namespace {

class Seeded : public ::testing::TestWithParam<std::uint64_t> {};

std::vector<Index> random_dims(std::uint64_t seed, Index modes, Index lo, Index hi) {
  CounterRng rng(seed, 300);
  std::vector<Index> dims;
  for (Index j = 0; j < modes; ++j)
    dims.push_back(lo + static_cast<Index>(rng.uniform() * static_cast<double>(hi - lo + 1)));
  return dims;
}

// Tensor near a random low-rank model, so every Gram stays well conditioned.
DenseTensor model_plus_noise(const std::vector<Index>& dims, Index rank, std::uint64_t seed, double noise) {
  DenseTensor x = kruskal_to_dense(random_kruskal(dims, rank, seed));
  const DenseTensor e = random_tensor(dims, seed + 7);
  x.flat() += noise * x.flat().norm() / e.flat().norm() * e.flat();
  return x;
}

}  // namespace

INSTANTIATE_TEST_SUITE_P(Seeds, Seeded, ::testing::Range<std::uint64_t>(0, 12));

// ---------------------------------------------------------------- tensor core

TEST_P(Seeded, MixedProductIdentity) {
  const std::uint64_t s = GetParam();
  const std::vector<Index> d = random_dims(s, 4, 2, 6);
  const Index i = d[0], j = d[1], k = d[2], l = d[3];
  const Matrix a = random_matrix(k, l, s, 1), b = random_matrix(i, l, s, 2);
  const Matrix c = random_matrix(i, k, s, 3), dd = random_matrix(j, i, s, 4);
  const Matrix rhs = khatri_rao({Matrix(c * a), Matrix(dd * b)});
  EXPECT_LE((kronecker(c, dd) * khatri_rao({a, b}) - rhs).norm(), 1e-12 * rhs.norm());
}

TEST_P(Seeded, MultiTtmOrderInvariance) {
  const std::uint64_t s = GetParam();
  const std::vector<Index> dims = random_dims(s, 4, 2, 5);
  const DenseTensor x = random_tensor(dims, s);
  std::vector<ModeMatrix> ops;
  for (Index n = 0; n < 4; ++n) ops.push_back({n, random_matrix(1 + (dims[static_cast<std::size_t>(n)] + n) % 4, dims[static_cast<std::size_t>(n)], s, 10 + n)});
  const DenseTensor ref = multi_ttm(x, ops);
  std::vector<ModeMatrix> shuffled = ops;
  std::reverse(shuffled.begin(), shuffled.end());
  EXPECT_LE(rel_diff(multi_ttm(x, shuffled), ref), 1e-13);
  std::rotate(shuffled.begin(), shuffled.begin() + 1 + static_cast<std::ptrdiff_t>(s % 3), shuffled.end());
  EXPECT_LE(rel_diff(multi_ttm(x, shuffled), ref), 1e-13);
  DenseTensor chained = x;
  for (const ModeMatrix& op : shuffled) chained = ttm(chained, op.matrix, op.mode);
  EXPECT_LE(rel_diff(chained, ref), 1e-13);
}

TEST_P(Seeded, MatricizeRoundTripIsBitExact) {
  const std::uint64_t s = GetParam();
  const std::vector<Index> dims = random_dims(s, 2 + static_cast<Index>(s % 4), 1, 5);
  const DenseTensor x = random_tensor(dims, s);
  for (Index n = 0; n < x.ndims(); ++n) {
    const Matrix m = matricize(x, n);
    EXPECT_EQ(m, unfold_oracle(x, n));
    const DenseTensor y = tensorize(m, dims, n);
    EXPECT_TRUE(std::equal(x.values().begin(), x.values().end(), y.values().begin()));
  }
}

TEST_P(Seeded, MttkrpMatchesExplicitOracle) {
  const std::uint64_t s = GetParam();
  const Index modes = 3 + static_cast<Index>(s % 3), rank = 1 + static_cast<Index>(s % 8);
  const std::vector<Index> dims = random_dims(s, modes, 2, 5);
  const DenseTensor x = random_tensor(dims, s);
  std::vector<Matrix> fs;
  for (Index j = 0; j < modes; ++j) fs.push_back(random_matrix(dims[static_cast<std::size_t>(j)], rank, s, 20 + j));
  for (Index n = 0; n < modes; ++n) {
    const Matrix expect = unfold_oracle(x, n) * khatri_rao_skip(fs, n);
    EXPECT_LE(rel_diff(mttkrp(x, fs, n), expect), 1e-13) << n;
  }
}

TEST_P(Seeded, KruskalUnfoldingsMatchFactorForm) {
  const std::uint64_t s = GetParam();
  const Index modes = 2 + static_cast<Index>(s % 4);
  const KruskalTensor k = random_kruskal(random_dims(s, modes, 2, 5), 1 + static_cast<Index>(s % 5), s);
  const DenseTensor x = kruskal_to_dense(k);
  for (Index n = 0; n < modes; ++n) {
    const Matrix expect = k.factor(n) * k.weights().asDiagonal() * khatri_rao_skip(k.factors(), n).transpose();
    EXPECT_LE(rel_diff(matricize(x, n), expect), 1e-13) << n;
  }
}

// ---------------------------------------------------------------- least squares

TEST_P(Seeded, StructuredKhatriRaoQrReconstructs) {
  const std::uint64_t s = GetParam();
  const Index modes = 3 + static_cast<Index>(s % 3), rank = 1 + static_cast<Index>(s % 6);
  std::vector<Matrix> rs;
  for (Index j = 0; j < modes; ++j) rs.push_back(random_upper(rank, s * 10 + static_cast<std::uint64_t>(j)));
  std::vector<const Matrix*> ptrs;
  for (const Matrix& r : rs) ptrs.push_back(&r);
  const KhatriRaoQR qr = structured_kr_qr(std::span<const Matrix* const>(ptrs));
  const Matrix kr = khatri_rao(std::span<const Matrix>(rs));
  EXPECT_LE((qr.q0 * qr.r - kr).norm(), 1e-12 * kr.norm());
  EXPECT_LE((qr.q0.transpose() * qr.q0 - Matrix::Identity(rank, rank)).norm(), 1e-12);
}

TEST_P(Seeded, PseudoinverseIgnoresZeroColumn) {
  const std::uint64_t s = GetParam();
  const Index rank = 2 + static_cast<Index>(s % 4);
  const Matrix z = random_matrix(30, rank, s);
  const Matrix x = random_matrix(4, 30, s, 5);
  Matrix z0(30, rank + 1);
  z0 << z, Matrix::Zero(30, 1);
  const Matrix base = solve_gram_pinv(z.transpose() * z, x * z);
  const Matrix ext = solve_gram_pinv(z0.transpose() * z0, x * z0);
  EXPECT_LE((ext.leftCols(rank) - base).norm(), 1e-12 * base.norm());
  EXPECT_LE(ext.col(rank).norm(), 1e-12 * base.norm());

  const CompactQR qr = compact_qr(z), qr0 = compact_qr(z0);
  const Matrix sb = solve_rt_svd(qr.r, x * qr.q);
  const Matrix se = solve_rt_svd(qr0.r, x * qr0.q);
  EXPECT_LE((se.leftCols(rank) - sb).norm(), 1e-12 * sb.norm());
  EXPECT_LE(se.col(rank).norm(), 1e-12 * sb.norm());
}

// ---------------------------------------------------------------- solvers

TEST_P(Seeded, DirectErrorIsMonotone) {
  const std::uint64_t s = GetParam();
  const DenseTensor x = model_plus_noise({9, 8, 7}, 3, s, 0.1);
  SolverOptions opts;
  opts.rank = 3;
  opts.max_iters = 25;
  opts.tol = 0.0;
  opts.error_mode = ErrorMode::Direct;
  opts.seed = s;
  for (Method m : kAllMethods) {
    const SolveTrace t = cp_als(x, opts, m).trace;
    ASSERT_EQ(t.status, SolveStatus::MaxIterations) << method_name(m);
    for (std::size_t i = 1; i < t.records.size(); ++i)
      EXPECT_LE(t.records[i].rel_error, t.records[i - 1].rel_error + 1e-12) << method_name(m) << " " << i;
  }
}

TEST_P(Seeded, OneSweepIsSolverIndependent) {
  const std::uint64_t s = GetParam();
  const DenseTensor x = model_plus_noise({8, 7, 6, 5}, 4, s, 0.3);
  SolverOptions opts;
  opts.rank = 4;
  opts.max_iters = 1;
  opts.initial_factors = random_factors(x.dims(), 4, s);
  const KruskalTensor ref = cp_als(x, opts, Method::NeCholesky).model;
  for (Method m : {Method::NePinv, Method::Qr, Method::QrSvd}) {
    const KruskalTensor k = cp_als(x, opts, m).model;
    for (Index n = 0; n < 4; ++n) EXPECT_LE(rel_diff(k.factor(n), ref.factor(n)), 1e-9) << method_name(m);
    EXPECT_LE((k.weights() - ref.weights()).norm(), 1e-9 * ref.weights().norm());
  }
}

TEST_P(Seeded, SubiterationContracts) {
  const std::uint64_t s = GetParam();
  const DenseTensor x = model_plus_noise({7, 6, 5}, 3, s, 0.2);
  std::vector<Matrix> ne = random_factors(x.dims(), 3, s), qr = ne;
  std::vector<Matrix> grams;
  for (const Matrix& a : ne) grams.push_back(a.transpose() * a);
  FactorQRCache cache{std::span<const Matrix>(qr)};
  std::vector<CompactQR> entries;
  for (const Matrix& a : qr) entries.push_back(compact_qr(a));
  const Method ne_method = s % 2 ? Method::NePinv : Method::NeCholesky;
  const Method qr_method = s % 2 ? Method::QrSvd : Method::Qr;
  for (int sweep = 0; sweep < 3; ++sweep) {
    for (Index n = 0; n < 3; ++n) {
      const auto un = static_cast<std::size_t>(n);
      const NeStep a = subiteration_ne(x, ne, grams, n, ne_method);
      const QrStep b = subiteration_qr(x, qr, std::span<const CompactQR>(entries), n, qr_method);
      for (const auto* st : {&a.factor, &b.factor})
        for (Index r = 0; r < 3; ++r) EXPECT_NEAR(st->col(r).norm(), 1.0, 1e-13);
      EXPECT_GE(a.lambda.minCoeff(), 0.0);
      EXPECT_GE(b.lambda.minCoeff(), 0.0);
      EXPECT_LE((b.factor_qr.q * b.factor_qr.r - b.factor).norm(), 1e-12 * b.factor.norm());
      EXPECT_LE((a.gram - a.factor.transpose() * a.factor).norm(), 1e-13);
      ne[un] = a.factor;
      grams[un] = a.gram;
      qr[un] = b.factor;
      entries[un] = b.factor_qr;
      cache.update(n, b.factor);
      EXPECT_LE((cache[n].q * cache[n].r - qr[un]).norm(), 1e-12 * qr[un].norm());
    }
  }
}

TEST_P(Seeded, SolvesAreDeterministic) {
  const std::uint64_t s = GetParam();
  const DenseTensor x = random_tensor({6, 5, 4}, s);
  SolverOptions opts;
  opts.rank = 3;
  opts.max_iters = 8;
  opts.seed = s;
  for (Method m : kAllMethods) {
    const SolveResult a = cp_als(x, opts, m), b = cp_als(x, opts, m);
    ASSERT_EQ(a.trace.records.size(), b.trace.records.size());
    for (std::size_t i = 0; i < a.trace.records.size(); ++i)
      EXPECT_EQ(a.trace.records[i].rel_error, b.trace.records[i].rel_error);
    EXPECT_EQ(a.model.weights(), b.model.weights());
    for (Index n = 0; n < 3; ++n) EXPECT_EQ(a.model.factor(n), b.model.factor(n));
  }
}

TEST_P(Seeded, FastErrorTracksDirect) {
  const std::uint64_t s = GetParam();
  const DenseTensor x = model_plus_noise({8, 7, 6}, 3, s, 0.05);
  SolverOptions fast;
  fast.rank = 3;
  fast.max_iters = 1 + static_cast<int>(s % 6);
  fast.tol = 0.0;
  fast.seed = s;
  for (Method m : kAllMethods) {
    const SolveResult r = cp_als(x, fast, m);
    EXPECT_NEAR(r.trace.final_error(), rel_error_direct(x, r.model), 1e-7) << method_name(m);
  }
}

// ---------------------------------------------------------------- score

TEST_P(Seeded, ScoreInvariances) {
  const std::uint64_t s = GetParam();
  const Index modes = 2 + static_cast<Index>(s % 3), rank = 1 + static_cast<Index>(s % 4);
  const KruskalTensor k = random_kruskal(random_dims(s, modes, 3, 6), rank, s);
  const KruskalTensor other = random_kruskal(k.dims(), rank, s + 100);
  const double base = score(k, other).value;
  EXPECT_GE(base, 0.0);
  EXPECT_LE(base, 1.0);

  std::vector<Index> perm(static_cast<std::size_t>(rank));
  std::iota(perm.begin(), perm.end(), 0);
  std::rotate(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(s % static_cast<std::uint64_t>(rank)), perm.end());
  KruskalTensor t = k;
  for (Index r = 0; r < rank; ++r) {
    const auto p = perm[static_cast<std::size_t>(r)];
    t.weights()(r) = k.weights()(p);
    for (Index n = 0; n < modes; ++n) t.factor(n).col(r) = k.factor(n).col(p);
  }
  t.factor(0).col(0) *= -1.0;
  t.factor(modes - 1).col(0) *= -1.0;
  t.factor(modes - 1).col(rank - 1) *= 3.0;
  t.weights()(rank - 1) /= 3.0;
  EXPECT_NEAR(score(t, other).value, base, 1e-12);
  EXPECT_NEAR(score(t, k).value, 1.0, 1e-12);
}
