// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "cpqr/dense_tensor.hpp"
#include "cpqr/errors.hpp"
#include "cpqr/kruskal_tensor.hpp"
#include "cpqr/leastsq.hpp"
#include "cpqr/random.hpp"

namespace cpqr {

// ---------------------------------------------------------------------------
// Collinear factors
// ---------------------------------------------------------------------------

struct CollinearSpec {
  std::vector<Index> dims;
  Index rank = 5;
  double collinearity = 0.0;  ///< common inner product c of distinct unit columns, 0 <= c < 1
  double noise = 0.0;         ///< eta: noise norm relative to the signal norm
  std::uint64_t seed = 0;
};

struct CollinearProblem {
  KruskalTensor truth;
  DenseTensor noisy;
};

/// Factor with orthonormal random basis times the Cholesky factor of the
/// congruence matrix (ones on the diagonal, c elsewhere), so A^T A == C.
inline Matrix collinear_factor(Index rows, Index rank, double c, CounterRng& rng) {
  Matrix g(rows, rank);
  for (Index j = 0; j < rank; ++j)
    for (Index i = 0; i < rows; ++i) g(i, j) = rng.normal();
  const Matrix q = compact_qr(g).q;
  Matrix congruence = Matrix::Constant(rank, rank, c);
  congruence.diagonal().setOnes();
  const Matrix upper = Eigen::LLT<Matrix>(congruence).matrixU();
  return q * upper;
}

inline CollinearProblem gen_collinear(const CollinearSpec& spec) {
  if (!(spec.collinearity >= 0.0 && spec.collinearity < 1.0))
    throw ShapeError("gen_collinear: collinearity must lie in [0, 1), got " + std::to_string(spec.collinearity));
  if (spec.noise < 0.0) throw ShapeError("gen_collinear: noise must be nonnegative");
  if (spec.dims.empty() || spec.rank < 1) throw ShapeError("gen_collinear: empty dims or rank < 1");
  for (Index d : spec.dims)
    if (d < spec.rank)
      throw ShapeError("gen_collinear: rank " + std::to_string(spec.rank) + " exceeds dimension " +
                       std::to_string(d));

  CounterRng factor_rng(spec.seed, 10);
  std::vector<Matrix> factors;
  for (Index d : spec.dims) factors.push_back(collinear_factor(d, spec.rank, spec.collinearity, factor_rng));
  CounterRng weight_rng(spec.seed, 11);
  Vector weights(spec.rank);
  for (Index r = 0; r < spec.rank; ++r) weights(r) = weight_rng.uniform();

  KruskalTensor truth(std::move(weights), std::move(factors));
  DenseTensor noisy = kruskal_to_dense(truth);
  if (spec.noise > 0.0) {
    CounterRng noise_rng(spec.seed, 12);
    Vector e(noisy.size());
    for (Index i = 0; i < e.size(); ++i) e(i) = noise_rng.normal();
    noisy.flat() += (spec.noise * noisy.flat().norm() / e.norm()) * e;
  }
  return {std::move(truth), std::move(noisy)};
}

// ---------------------------------------------------------------------------
// Sine of sums
// ---------------------------------------------------------------------------

enum class SineRepresentation {
  RankN,    ///< N terms built from shifted sines, parameterized by alphas
  RankPow2  ///< 2^(N-1) terms from the angle-addition expansion
};

struct SineSumSpec {
  Index modes = 3;
  Index grid = 16;  ///< points per mode, equispaced on [0, 2*pi)
  SineRepresentation representation = SineRepresentation::RankPow2;
  std::vector<double> alphas;  ///< RankN only; empty selects (j-1) * pi / (2N)
};

inline Vector sine_grid(Index n) {
  Vector x(n);
  for (Index i = 0; i < n; ++i) x(i) = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
  return x;
}

inline std::vector<double> default_alphas(Index modes) {
  std::vector<double> a;
  for (Index j = 0; j < modes; ++j)
    a.push_back(static_cast<double>(j) * std::numbers::pi / (2.0 * static_cast<double>(modes)));
  return a;
}

/// Exact CP representation of T(i_1, ..., i_N) = sin(x_{i_1} + ... + x_{i_N}).
inline KruskalTensor sine_of_sums(const SineSumSpec& spec) {
  const Index nd = spec.modes;
  if (nd < 1) throw ShapeError("sine_of_sums: at least one mode required");
  if (spec.grid < 1) throw ShapeError("sine_of_sums: grid must be positive");
  const Vector x = sine_grid(spec.grid);
  const Vector sin_x = x.array().sin().matrix();

  if (spec.representation == SineRepresentation::RankPow2) {
    if (nd > 30) throw ShapeError("sine_of_sums: too many modes for the expanded representation");
    std::vector<std::uint32_t> subsets;
    for (std::uint32_t s = 1; s < (1u << nd); ++s)
      if (std::popcount(s) % 2 == 1) subsets.push_back(s);
    const auto rank = static_cast<Index>(subsets.size());
    Vector weights(rank);
    std::vector<Matrix> factors(static_cast<std::size_t>(nd), Matrix(spec.grid, rank));
    for (Index r = 0; r < rank; ++r) {
      const std::uint32_t s = subsets[static_cast<std::size_t>(r)];
      weights(r) = ((std::popcount(s) - 1) / 2) % 2 == 0 ? 1.0 : -1.0;
      for (Index j = 0; j < nd; ++j)
        factors[static_cast<std::size_t>(j)].col(r) =
            (s >> j) & 1u ? sin_x : Vector(x.array().cos().matrix());
    }
    return KruskalTensor(std::move(weights), std::move(factors));
  }

  const std::vector<double> alphas = spec.alphas.empty() ? default_alphas(nd) : spec.alphas;
  if (static_cast<Index>(alphas.size()) != nd)
    throw ShapeError("sine_of_sums: expected " + std::to_string(nd) + " alphas");
  for (Index j = 0; j < nd; ++j)
    for (Index k = 0; k < nd; ++k)
      if (j != k && std::abs(std::sin(alphas[static_cast<std::size_t>(k)] - alphas[static_cast<std::size_t>(j)])) <
                        64.0 * std::numeric_limits<double>::epsilon())
        throw ShapeError("sine_of_sums: sin(alpha_k - alpha_j) vanishes for j=" + std::to_string(j) +
                         ", k=" + std::to_string(k));
  std::vector<Matrix> factors(static_cast<std::size_t>(nd), Matrix(spec.grid, nd));
  for (Index j = 0; j < nd; ++j) {      // term
    for (Index k = 0; k < nd; ++k) {    // mode
      const double shift = alphas[static_cast<std::size_t>(k)] - alphas[static_cast<std::size_t>(j)];
      factors[static_cast<std::size_t>(k)].col(j) =
          k == j ? sin_x : Vector(((x.array() + shift).sin() / std::sin(shift)).matrix());
    }
  }
  return KruskalTensor(std::move(factors));
}

// ---------------------------------------------------------------------------
// Score
// ---------------------------------------------------------------------------

/// Maximum-weight assignment of rows to distinct columns (rows <= cols),
/// Hungarian algorithm with potentials. Returns the column for each row.
inline std::vector<Index> max_weight_assignment(const Matrix& w) {
  const Index n = w.rows(), m = w.cols();
  if (n > m) throw ShapeError("max_weight_assignment: more rows than columns");
  const double inf = std::numeric_limits<double>::infinity();
  const double top = n ? w.maxCoeff() : 0.0;
  // 1-based arrays; cost = top - w is nonnegative
  std::vector<double> u(static_cast<std::size_t>(n + 1)), v(static_cast<std::size_t>(m + 1));
  std::vector<Index> p(static_cast<std::size_t>(m + 1)), way(static_cast<std::size_t>(m + 1));
  for (Index i = 1; i <= n; ++i) {
    p[0] = i;
    Index j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(m + 1), inf);
    std::vector<char> used(static_cast<std::size_t>(m + 1), 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const Index i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= m; ++j) {
        const auto uj = static_cast<std::size_t>(j);
        if (used[uj]) continue;
        const double cur = (top - w(i0 - 1, j - 1)) - u[static_cast<std::size_t>(i0)] - v[uj];
        if (cur < minv[uj]) {
          minv[uj] = cur;
          way[uj] = j0;
        }
        if (minv[uj] < delta) {
          delta = minv[uj];
          j1 = j;
        }
      }
      for (Index j = 0; j <= m; ++j) {
        const auto uj = static_cast<std::size_t>(j);
        if (used[uj]) {
          u[static_cast<std::size_t>(p[uj])] += delta;
          v[uj] -= delta;
        } else {
          minv[uj] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const Index j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0);
  }
  std::vector<Index> assignment(static_cast<std::size_t>(n), -1);
  for (Index j = 1; j <= m; ++j)
    if (p[static_cast<std::size_t>(j)] > 0) assignment[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  return assignment;
}

struct ScoreOptions {
  bool weight_penalty = true;
};

struct ScoreResult {
  double value = 0.0;
  bool rank_mismatch = false;
  /// matching[r] is the component of the second tensor paired with component r
  /// of the first (-1 when unmatched).
  std::vector<Index> matching;
};

inline double weight_penalty(double a, double b) {
  const double hi = std::max(a, b);
  return hi > 0.0 ? 1.0 - std::abs(a - b) / hi : 1.0;
}

/// Component similarity matrix: penalty(λ_r, μ_s) * prod_n |a_r^(n)ᵀ b_s^(n)| on normalized inputs.
inline Matrix congruence_products(const KruskalTensor& k1, const KruskalTensor& k2, const ScoreOptions& opts = {}) {
  if (k1.dims() != k2.dims())
    throw ShapeError("score: dims " + dims_to_string(k1.dims()) + " vs " + dims_to_string(k2.dims()));
  const KruskalTensor a = normalized(k1), b = normalized(k2);
  Matrix p = Matrix::Ones(a.rank(), b.rank());
  for (Index n = 0; n < a.ndims(); ++n) p.array() *= (a.factor(n).transpose() * b.factor(n)).array().abs();
  if (opts.weight_penalty)
    for (Index r = 0; r < a.rank(); ++r)
      for (Index s = 0; s < b.rank(); ++s) p(r, s) *= weight_penalty(a.weights()(r), b.weights()(s));
  return p;
}

/// Similarity in [0, 1] of two CP models up to component permutation and
/// scaling; 1 means equivalent models. With unequal ranks the min(R1, R2)
/// best-matched components are averaged and rank_mismatch is set.
inline ScoreResult score(const KruskalTensor& k1, const KruskalTensor& k2, const ScoreOptions& opts = {}) {
  const Matrix p = congruence_products(k1, k2, opts);
  ScoreResult out;
  out.rank_mismatch = k1.rank() != k2.rank();
  const bool flip = p.rows() > p.cols();
  const Matrix w = flip ? Matrix(p.transpose()) : p;
  const std::vector<Index> assign = max_weight_assignment(w);
  double total = 0.0;
  for (std::size_t i = 0; i < assign.size(); ++i) total += w(static_cast<Index>(i), assign[i]);
  out.value = assign.empty() ? 0.0 : total / static_cast<double>(assign.size());
  out.matching.assign(static_cast<std::size_t>(k1.rank()), -1);
  for (std::size_t i = 0; i < assign.size(); ++i) {
    if (flip)
      out.matching[static_cast<std::size_t>(assign[i])] = static_cast<Index>(i);
    else
      out.matching[i] = assign[i];
  }
  return out;
}

}  // namespace cpqr
