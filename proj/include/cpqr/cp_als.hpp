// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "cpqr/dense_tensor.hpp"
#include "cpqr/errors.hpp"
#include "cpqr/kernels.hpp"
#include "cpqr/kruskal_tensor.hpp"
#include "cpqr/leastsq.hpp"
#include "cpqr/products.hpp"
#include "cpqr/random.hpp"

namespace cpqr {

enum class Method { NeCholesky, NePinv, Qr, QrSvd };

inline constexpr std::array<Method, 4> kAllMethods = {Method::NeCholesky, Method::NePinv, Method::Qr,
                                                      Method::QrSvd};

inline bool is_qr_method(Method m) { return m == Method::Qr || m == Method::QrSvd; }

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::NeCholesky: return "als";
    case Method::NePinv: return "als-pinv";
    case Method::Qr: return "als-qr";
    case Method::QrSvd: return "als-qr-svd";
  }
  return "?";
}

inline std::optional<Method> parse_method(std::string_view s) {
  for (Method m : kAllMethods)
    if (method_name(m) == s) return m;
  return std::nullopt;
}

enum class ErrorMode { Fast, Direct };

/// How Q0 is represented in the QR-based sweeps. Auto uses the explicit dense
/// Q0 unless it would exceed SolverOptions::explicit_q0_budget entries.
enum class Q0Mode { Auto, Explicit, Chained };

/// Per-iteration timing buckets. The first two read as MTTKRP / Gram for the
/// normal-equation methods and Multi-TTM / factor QR for the QR methods.
enum class Component { Kernel = 0, FactorPrep, ComputeQ0, ApplyQ0, Other };
inline constexpr int kNumComponents = 5;
using Timings = std::array<double, kNumComponents>;

inline std::string_view component_name(Component c, Method m) {
  const bool qr = is_qr_method(m);
  switch (c) {
    case Component::Kernel: return qr ? "multi_ttm" : "mttkrp";
    case Component::FactorPrep: return qr ? "factor_qr" : "gram";
    case Component::ComputeQ0: return "compute_q0";
    case Component::ApplyQ0: return "apply_q0";
    case Component::Other: return "other";
  }
  return "?";
}

class ComponentClock {
 public:
  class Scope {
   public:
    Scope(ComponentClock* clock, Component c) : clock_(clock), c_(c), start_(std::chrono::steady_clock::now()) {}
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;
    ~Scope() {
      if (clock_)
        clock_->totals_[static_cast<std::size_t>(c_)] +=
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

   private:
    ComponentClock* clock_;
    Component c_;
    std::chrono::steady_clock::time_point start_;
  };

  Scope scope(Component c) { return Scope(this, c); }
  const Timings& totals() const { return totals_; }
  void reset() { totals_.fill(0.0); }

 private:
  Timings totals_{};
};

inline ComponentClock::Scope timed(ComponentClock* clock, Component c) { return ComponentClock::Scope(clock, c); }

struct SolverOptions {
  Index rank = 1;
  int max_iters = 500;
  /// Stop when |previous rel_error - rel_error| < tol.
  double tol = 1e-10;
  ErrorMode error_mode = ErrorMode::Fast;
  /// Seed of the uniform [0,1) initial factors; ignored when initial_factors is set.
  std::uint64_t seed = 0;
  std::optional<std::vector<Matrix>> initial_factors;
  /// Truncation threshold (relative to sigma_max) for the pinv and SVD solves.
  std::optional<double> pinv_rtol;
  /// Fall back to pivoted LDL^T when Cholesky breaks down (als only).
  bool ldlt_fallback = true;
  Q0Mode q0_mode = Q0Mode::Auto;
  Index explicit_q0_budget = Index{1} << 26;
  /// Largest compressed core (entries) formed by the accurate Kruskal error.
  Index compressed_core_budget = Index{1} << 22;
};

enum class SolveStatus { Converged, MaxIterations, Diverged, Failed };

inline std::string_view status_name(SolveStatus s) {
  switch (s) {
    case SolveStatus::Converged: return "converged";
    case SolveStatus::MaxIterations: return "max_iters";
    case SolveStatus::Diverged: return "diverged";
    case SolveStatus::Failed: return "failed";
  }
  return "?";
}

struct IterationRecord {
  int iter = 0;
  double rel_error = 0.0;
  Vector lambda;
  Timings seconds{};
  double total_seconds = 0.0;
};

struct SolveTrace {
  std::vector<IterationRecord> records;
  SolveStatus status = SolveStatus::MaxIterations;
  std::string message;
  int cholesky_fallbacks = 0;
  double setup_seconds = 0.0;

  bool converged() const { return status == SolveStatus::Converged; }
  int iterations() const { return static_cast<int>(records.size()); }
  double final_error() const { return records.empty() ? std::nan("") : records.back().rel_error; }
};

struct SolveResult {
  KruskalTensor model;
  SolveTrace trace;
};

/// Per-mode thin QRs of the current factors (Q_n R_n = A_n).
class FactorQRCache {
 public:
  FactorQRCache() = default;
  explicit FactorQRCache(std::span<const Matrix> factors) {
    for (const Matrix& a : factors) entries_.push_back(compact_qr(a));
  }
  void update(Index n, const Matrix& a) { entries_[static_cast<std::size_t>(n)] = compact_qr(a); }
  const CompactQR& operator[](Index n) const { return entries_[static_cast<std::size_t>(n)]; }
  Index size() const { return static_cast<Index>(entries_.size()); }

 private:
  std::vector<CompactQR> entries_;
};

/// Column norms of `ahat` moved into lambda; zero columns become e_1 with weight 0.
inline std::pair<Matrix, Vector> normalize_columns(Matrix ahat) {
  Vector lambda(ahat.cols());
  for (Index r = 0; r < ahat.cols(); ++r) {
    const double nrm = ahat.col(r).norm();
    lambda(r) = nrm;
    if (nrm > 0.0) {
      ahat.col(r) /= nrm;
    } else {
      ahat.col(r).setZero();
      ahat(0, r) = 1.0;
    }
  }
  return {std::move(ahat), std::move(lambda)};
}

// ---------------------------------------------------------------------------
// Normal-equation subiteration
// ---------------------------------------------------------------------------

struct NeStep {
  Matrix factor;  ///< normalized A_n
  Vector lambda;
  Matrix gram;    ///< A_n^T A_n of the normalized factor
  Matrix s;       ///< hadamard of the other modes' Grams
  Matrix m;       ///< MTTKRP result
  bool used_ldlt = false;
};

template <class Tensor>
NeStep subiteration_ne(const Tensor& x, std::span<const Matrix> factors, std::span<const Matrix> grams, Index n,
                       Method variant, const SolverOptions& opts = {}, ComponentClock* clock = nullptr) {
  NeStep st;
  const Index nd = static_cast<Index>(factors.size());
  {
    auto t = timed(clock, Component::FactorPrep);
    const Index rank = factors.front().cols();
    st.s = Matrix::Ones(rank, rank);
    for (Index j = 0; j < nd; ++j)
      if (j != n) st.s.array() *= grams[static_cast<std::size_t>(j)].array();
  }
  {
    auto t = timed(clock, Component::Kernel);
    st.m = mttkrp(x, factors, n);
  }
  Matrix ahat;
  {
    auto t = timed(clock, Component::Other);
    if (variant == Method::NePinv) {
      ahat = solve_gram_pinv(st.s, st.m, opts.pinv_rtol);
    } else {
      try {
        ahat = solve_gram_cholesky(st.s, st.m);
      } catch (const NotPositiveDefinite&) {
        if (!opts.ldlt_fallback) throw;
        ahat = solve_gram_ldlt(st.s, st.m);
        st.used_ldlt = true;
      }
    }
    std::tie(st.factor, st.lambda) = normalize_columns(std::move(ahat));
  }
  {
    auto t = timed(clock, Component::FactorPrep);
    st.gram = st.factor.transpose() * st.factor;
  }
  return st;
}

// ---------------------------------------------------------------------------
// QR subiteration
// ---------------------------------------------------------------------------

struct QrStep {
  Matrix factor;  ///< normalized A_n
  Vector lambda;
  CompactQR factor_qr;  ///< thin QR of the normalized A_n
  Matrix w;             ///< Y_(n) Q0
  Matrix r;             ///< triangular factor of the Khatri-Rao QR
  bool chained = false;
};

namespace detail {

inline bool use_explicit_q0(std::span<const CompactQR> rs_rows_source, Index n, Index rank, Index extra_cols,
                            const SolverOptions& opts) {
  if (opts.q0_mode == Q0Mode::Explicit) return true;
  if (opts.q0_mode == Q0Mode::Chained) return false;
  double rows = 1.0;
  for (Index j = 0; j < static_cast<Index>(rs_rows_source.size()); ++j)
    if (j != n) rows *= static_cast<double>(rs_rows_source[static_cast<std::size_t>(j)].r.rows());
  return rows * static_cast<double>(std::max(rank, extra_cols)) <= static_cast<double>(opts.explicit_q0_budget);
}

// W = Y_(n) Q0 for a dense input.
inline Matrix qr_apply(const DenseTensor& x, std::span<const CompactQR> cache, Index n,
                       const std::variant<KhatriRaoQR, ChainedKRQR>& q0, ComponentClock* clock) {
  Matrix yn;
  {
    auto t = timed(clock, Component::Kernel);
    std::vector<ModeMatrix> mats;
    for (Index j = 0; j < x.ndims(); ++j)
      if (j != n) mats.push_back({j, cache[static_cast<std::size_t>(j)].q.transpose()});
    yn = matricize(multi_ttm(x, std::span<const ModeMatrix>(mats)), n);
  }
  auto t = timed(clock, Component::ApplyQ0);
  if (const auto* e = std::get_if<KhatriRaoQR>(&q0)) return yn * e->q0;
  return std::get<ChainedKRQR>(q0).apply_right(yn);
}

// W = B_n diag(lambda) [(⊙_{j != n} Q_j^T B_j)^T Q0] for a Kruskal input; the
// input tensor and the Multi-TTM result are never formed.
inline Matrix qr_apply(const KruskalTensor& x, std::span<const CompactQR> cache, Index n,
                       const std::variant<KhatriRaoQR, ChainedKRQR>& q0, ComponentClock* clock) {
  std::vector<Matrix> cs;
  {
    auto t = timed(clock, Component::Kernel);
    for (Index j = x.ndims() - 1; j >= 0; --j)
      if (j != n) cs.push_back(cache[static_cast<std::size_t>(j)].q.transpose() * x.factor(j));
  }
  auto t = timed(clock, Component::ApplyQ0);
  std::vector<const Matrix*> ptrs;
  for (const Matrix& c : cs) ptrs.push_back(&c);
  Matrix g;  // R x R_x
  if (const auto* e = std::get_if<KhatriRaoQR>(&q0))
    g = e->q0.transpose() * khatri_rao(std::span<const Matrix* const>(ptrs));
  else
    g = std::get<ChainedKRQR>(q0).transpose_times_khatri_rao(ptrs);
  return x.factor(n) * (x.weights().asDiagonal() * g.transpose());
}

inline Index tensor_rank(const DenseTensor&) { return 0; }
inline Index tensor_rank(const KruskalTensor& k) { return k.rank(); }

}  // namespace detail

template <class Tensor>
QrStep subiteration_qr(const Tensor& x, std::span<const Matrix> factors, std::span<const CompactQR> cache, Index n,
                       Method variant, const SolverOptions& opts = {}, ComponentClock* clock = nullptr) {
  QrStep st;
  const Index nd = static_cast<Index>(factors.size());
  const Index rank = factors.front().cols();

  std::variant<KhatriRaoQR, ChainedKRQR> q0{KhatriRaoQR{}};
  {
    auto t = timed(clock, Component::ComputeQ0);
    std::vector<const Matrix*> rs;
    for (Index j = nd - 1; j >= 0; --j)
      if (j != n) rs.push_back(&cache[static_cast<std::size_t>(j)].r);
    if (rs.empty()) {
      // single-mode tensor: Z is the 1 x R row of ones
      const Matrix ones = Matrix::Ones(1, rank);
      const Matrix* p[] = {&ones};
      q0 = structured_kr_qr(std::span<const Matrix* const>(p));
    } else if (detail::use_explicit_q0(cache, n, rank, detail::tensor_rank(x), opts)) {
      q0 = structured_kr_qr(std::span<const Matrix* const>(rs));
    } else {
      q0 = ChainedKRQR(std::span<const Matrix* const>(rs));
      st.chained = true;
    }
  }
  if (nd == 1) {
    auto t = timed(clock, Component::ApplyQ0);
    if constexpr (std::is_same_v<Tensor, DenseTensor>)
      st.w = x.view(x.dim(0), 1) * std::get<KhatriRaoQR>(q0).q0;
    else
      st.w = (x.factor(0) * x.weights()) * std::get<KhatriRaoQR>(q0).q0;
  } else {
    st.w = detail::qr_apply(x, cache, n, q0, clock);
  }
  st.r = st.chained ? std::get<ChainedKRQR>(q0).r() : std::get<KhatriRaoQR>(q0).r;
  {
    auto t = timed(clock, Component::Other);
    Matrix ahat = variant == Method::QrSvd ? solve_rt_svd(st.r, st.w, opts.pinv_rtol) : solve_triangular_rt(st.r, st.w);
    std::tie(st.factor, st.lambda) = normalize_columns(std::move(ahat));
  }
  {
    auto t = timed(clock, Component::FactorPrep);
    st.factor_qr = compact_qr(st.factor);
  }
  return st;
}

template <class Tensor>
QrStep subiteration_qr(const Tensor& x, std::span<const Matrix> factors, const FactorQRCache& cache, Index n,
                       Method variant, const SolverOptions& opts = {}, ComponentClock* clock = nullptr) {
  const Index nd = static_cast<Index>(factors.size());
  std::vector<CompactQR> entries;
  for (Index j = 0; j < nd; ++j) entries.push_back(cache[j]);
  return subiteration_qr(x, factors, std::span<const CompactQR>(entries), n, variant, opts, clock);
}

// ---------------------------------------------------------------------------
// Relative error
// ---------------------------------------------------------------------------

inline double relative_from_parts(double norm_x_sq, double inner_x_model, double norm_model_sq) {
  const double resid_sq = std::max(0.0, norm_x_sq - 2.0 * inner_x_model + norm_model_sq);
  return std::sqrt(resid_sq) / std::sqrt(norm_x_sq);
}

/// Error after the last-mode normal-equation step: <X, X̂> = <M, Â>,
/// ||X̂||^2 = <S, diag(λ) G diag(λ)>.
inline double rel_error_fast_ne(double norm_x_sq, const Matrix& m, const Matrix& s, const Matrix& factor,
                                const Vector& lambda, const Matrix& gram) {
  const double ip = (m.array() * (factor * lambda.asDiagonal()).array()).sum();
  const double nm = (s.array() * (lambda.asDiagonal() * gram * lambda.asDiagonal()).array()).sum();
  return relative_from_parts(norm_x_sq, ip, nm);
}

inline double rel_error_fast_ne(double norm_x_sq, const NeStep& st) {
  return rel_error_fast_ne(norm_x_sq, st.m, st.s, st.factor, st.lambda, st.gram);
}

/// Error after the last-mode QR step: <X, X̂> = <W, Â R^T>,
/// ||X̂||^2 = <R^T R, diag(λ) R_N^T R_N diag(λ)>.
inline double rel_error_fast_qr(double norm_x_sq, const Matrix& w, const Matrix& r, const Matrix& factor,
                                const Vector& lambda, const Matrix& factor_r) {
  const Matrix ahat = factor * lambda.asDiagonal();
  const double ip = (w.array() * (ahat * r.transpose()).array()).sum();
  const Matrix rtr = r.transpose() * r;
  const Matrix frf = factor_r.transpose() * factor_r;
  const double nm = (rtr.array() * (lambda.asDiagonal() * frf * lambda.asDiagonal()).array()).sum();
  return relative_from_parts(norm_x_sq, ip, nm);
}

inline double rel_error_fast_qr(double norm_x_sq, const QrStep& st) {
  return rel_error_fast_qr(norm_x_sq, st.w, st.r, st.factor, st.lambda, st.factor_qr.r);
}

/// The difference X - K as one Kruskal tensor with concatenated factors.
inline KruskalTensor kruskal_difference(const KruskalTensor& x, const KruskalTensor& k) {
  if (x.dims() != k.dims())
    throw ShapeError("kruskal_difference: dims " + dims_to_string(x.dims()) + " vs " + dims_to_string(k.dims()));
  Vector w(x.rank() + k.rank());
  w << x.weights(), -k.weights();
  std::vector<Matrix> fs;
  for (Index j = 0; j < x.ndims(); ++j) {
    Matrix c(x.dim(j), w.size());
    c << x.factor(j), k.factor(j);
    fs.push_back(std::move(c));
  }
  return KruskalTensor(std::move(w), std::move(fs));
}

/// ||K|| from the triangular factor of the Khatri-Rao product of its factors,
/// built one mode at a time (T_1 = F_1, T_j = R of F_j ⊙ T_{j-1}); nothing is
/// truncated, so terms cancel through orthogonal transformations only.
/// Empty when a stage would exceed `budget` entries.
inline std::optional<double> kruskal_norm_exact(const KruskalTensor& k, Index budget) {
  Matrix t = Matrix::Ones(1, k.rank());
  for (Index j = 0; j < k.ndims(); ++j) {
    if (k.dim(j) * t.rows() * k.rank() > budget) return std::nullopt;
    const Matrix* pair[] = {&k.factor(j), &t};
    Matrix m = khatri_rao(std::span<const Matrix* const>(pair));
    t = m.rows() > m.cols() ? compact_qr(m).r : std::move(m);
  }
  return (t * k.weights()).norm();
}

namespace detail {

// Orthonormal basis of the numerical column space of f (thin SVD, values at or
// below max(rows, cols) * eps * sigma_max dropped).
inline Matrix column_basis(const Matrix& f) {
  const SVDFactors d = svd(f);
  const double cutoff = default_rtol(f.rows(), f.cols()) * (d.sigma.size() ? d.sigma(0) : 0.0);
  Index keep = 0;
  while (keep < d.sigma.size() && d.sigma(keep) > cutoff) ++keep;
  return d.u.leftCols(std::max<Index>(keep, 1));
}

inline KruskalTensor project_factors(const KruskalTensor& k, const std::vector<Matrix>& bases, bool embed) {
  std::vector<Matrix> fs;
  for (Index j = 0; j < k.ndims(); ++j) {
    const Matrix& u = bases[static_cast<std::size_t>(j)];
    Matrix c = u.transpose() * k.factor(j);
    fs.push_back(embed ? Matrix(u * c) : std::move(c));
  }
  return KruskalTensor(k.weights(), std::move(fs));
}

inline double exact_or_gram(const KruskalTensor& k, Index budget) {
  if (auto v = kruskal_norm_exact(k, budget)) return *v;
  return norm(k);
}

}  // namespace detail

/// ||X - K|| (or ||X|| when k is null) for Kruskal X and K without forming
/// either. With P the projection onto the numerical column spaces U_j of X's
/// factors, X - K = (PX - PK) - (I - P)K with orthogonal parts: the first is
/// evaluated as a dense core of prod_j rank(U_j) entries, the second as the
/// exact norm of the rank-2R Kruskal tensor K - PK. Cancellation then happens
/// entrywise or through orthogonal transformations, which keeps the result
/// accurate when the Gram identity would lose it inside an ill-conditioned K.
/// Falls back to the exact contraction of the concatenated difference, then to
/// the Gram identity, when the core exceeds `budget` entries.
inline double kruskal_residual_norm(const KruskalTensor& x, const KruskalTensor* k, Index budget) {
  if (k && x.dims() != k->dims())
    throw ShapeError("kruskal_residual_norm: dims " + dims_to_string(x.dims()) + " vs " + dims_to_string(k->dims()));
  std::vector<Matrix> bases;
  double core = 1.0;
  for (const Matrix& f : x.factors()) {
    bases.push_back(detail::column_basis(f));
    core *= static_cast<double>(bases.back().cols());
  }
  const double work = core * static_cast<double>(x.rank() + (k ? k->rank() : 0));
  if (core > static_cast<double>(budget) || work > 16.0 * static_cast<double>(budget))
    return detail::exact_or_gram(k ? kruskal_difference(x, *k) : x, budget);

  const DenseTensor cx = kruskal_to_dense(detail::project_factors(x, bases, false));
  if (!k) return norm(cx);
  const DenseTensor ck = kruskal_to_dense(detail::project_factors(*k, bases, false));
  const double in_span = (cx.flat() - ck.flat()).norm();
  const double out_of_span = detail::exact_or_gram(kruskal_difference(*k, detail::project_factors(*k, bases, true)), budget);
  return std::hypot(in_span, out_of_span);
}

inline double kruskal_norm_compressed(const KruskalTensor& k, Index budget) {
  return kruskal_residual_norm(k, nullptr, budget);
}

inline double rel_error_direct(const DenseTensor& x, const KruskalTensor& k) {
  const DenseTensor xhat = kruskal_to_dense(k);
  check_same_dims(x, xhat, "rel_error_direct");
  return (x.flat() - xhat.flat()).norm() / x.flat().norm();
}

inline double rel_error_direct(const KruskalTensor& x, const KruskalTensor& k,
                               Index core_budget = Index{1} << 22) {
  return kruskal_residual_norm(x, &k, core_budget) / kruskal_residual_norm(x, nullptr, core_budget);
}

inline double norm_squared(const DenseTensor& x, Index) { return x.flat().squaredNorm(); }
inline double norm_squared(const KruskalTensor& x, Index core_budget) {
  const double n = kruskal_norm_compressed(x, core_budget);
  return n * n;
}

// ---------------------------------------------------------------------------
// ALS driver
// ---------------------------------------------------------------------------

inline std::vector<Matrix> random_factors(std::span<const Index> dims, Index rank, std::uint64_t seed) {
  CounterRng rng(seed, 1);
  std::vector<Matrix> fs;
  for (Index d : dims) {
    Matrix a(d, rank);
    for (Index c = 0; c < rank; ++c)
      for (Index i = 0; i < d; ++i) a(i, c) = rng.uniform();
    fs.push_back(std::move(a));
  }
  return fs;
}

inline bool all_finite(const Matrix& a, const Vector& l) { return a.allFinite() && l.allFinite(); }

/// CP-ALS with the subproblem solved by normal equations (Cholesky or pinv)
/// or by the structured QR of the Khatri-Rao product (substitution or SVD).
template <class Tensor>
SolveResult cp_als(const Tensor& x, const SolverOptions& opts, Method method) {
  using clock_t = std::chrono::steady_clock;
  const Index nd = x.ndims();
  const std::vector<Index> dims = x.dims();
  if (opts.rank < 1) throw ShapeError("cp_als: rank must be >= 1");
  if (!(opts.tol >= 0.0)) throw ShapeError("cp_als: tol must be >= 0");

  std::vector<Matrix> factors;
  if (opts.initial_factors) {
    factors = *opts.initial_factors;
    if (static_cast<Index>(factors.size()) != nd) throw ShapeError("cp_als: initial factor count mismatch");
    for (Index j = 0; j < nd; ++j)
      if (factors[static_cast<std::size_t>(j)].rows() != dims[static_cast<std::size_t>(j)] ||
          factors[static_cast<std::size_t>(j)].cols() != opts.rank)
        throw ShapeError("cp_als: initial factor " + std::to_string(j) + " has the wrong shape");
  } else {
    factors = random_factors(dims, opts.rank, opts.seed);
  }
  Vector lambda = Vector::Ones(opts.rank);

  SolveTrace trace;
  const double norm_x_sq = norm_squared(x, opts.compressed_core_budget);
  if (!(norm_x_sq > 0.0)) throw ShapeError("cp_als: input tensor is zero");

  const bool qr = is_qr_method(method);
  std::vector<Matrix> grams;
  std::vector<CompactQR> cache;
  const auto setup_start = clock_t::now();
  if (qr) {
    for (const Matrix& a : factors) cache.push_back(compact_qr(a));
  } else {
    for (const Matrix& a : factors) grams.push_back(a.transpose() * a);
  }
  trace.setup_seconds = std::chrono::duration<double>(clock_t::now() - setup_start).count();

  auto make_model = [&] { return KruskalTensor(lambda, factors); };
  double prev = std::nan("");
  ComponentClock clock;
  for (int iter = 1; iter <= opts.max_iters; ++iter) {
    clock.reset();
    const auto iter_start = clock_t::now();
    double fast_error = std::nan("");
    bool finite = true;
    try {
      for (Index n = 0; n < nd && finite; ++n) {
        const auto un = static_cast<std::size_t>(n);
        if (qr) {
          QrStep st = subiteration_qr(x, factors, std::span<const CompactQR>(cache), n, method, opts, &clock);
          finite = all_finite(st.factor, st.lambda);
          if (n == nd - 1 && finite && opts.error_mode == ErrorMode::Fast) {
            auto t = clock.scope(Component::Other);
            fast_error = rel_error_fast_qr(norm_x_sq, st);
          }
          factors[un] = std::move(st.factor);
          lambda = std::move(st.lambda);
          cache[un] = std::move(st.factor_qr);
        } else {
          NeStep st = subiteration_ne(x, factors, grams, n, method, opts, &clock);
          trace.cholesky_fallbacks += st.used_ldlt ? 1 : 0;
          finite = all_finite(st.factor, st.lambda);
          if (n == nd - 1 && finite && opts.error_mode == ErrorMode::Fast) {
            auto t = clock.scope(Component::Other);
            fast_error = rel_error_fast_ne(norm_x_sq, st);
          }
          factors[un] = std::move(st.factor);
          lambda = std::move(st.lambda);
          grams[un] = std::move(st.gram);
        }
      }
    } catch (const NumericalError& e) {
      trace.status = SolveStatus::Failed;
      trace.message = e.what();
      return {make_model(), std::move(trace)};
    }

    IterationRecord rec;
    rec.iter = iter;
    if (finite) {
      auto t = clock.scope(Component::Other);
      if (opts.error_mode == ErrorMode::Fast) {
        rec.rel_error = fast_error;
      } else if constexpr (std::is_same_v<Tensor, KruskalTensor>) {
        rec.rel_error = rel_error_direct(x, make_model(), opts.compressed_core_budget);
      } else {
        rec.rel_error = rel_error_direct(x, make_model());
      }
    } else {
      rec.rel_error = std::nan("");
    }
    rec.lambda = lambda;
    rec.total_seconds = std::chrono::duration<double>(clock_t::now() - iter_start).count();
    rec.seconds = clock.totals();
    const double err = rec.rel_error;
    trace.records.push_back(std::move(rec));

    if (!std::isfinite(err)) {
      trace.status = SolveStatus::Diverged;
      trace.message = "non-finite iterate at iteration " + std::to_string(iter);
      break;
    }
    if (std::abs(prev - err) < opts.tol) {
      trace.status = SolveStatus::Converged;
      break;
    }
    prev = err;
  }
  return {make_model(), std::move(trace)};
}

}  // namespace cpqr
