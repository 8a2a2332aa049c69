// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "cpqr/cp_als.hpp"
#include "cpqr/dense_tensor.hpp"
#include "cpqr/kruskal_tensor.hpp"
#include "cpqr/random.hpp"
#include "cpqr/synth.hpp"

namespace cpqr {

/// One experiment grid. Trial i uses seed + i; within a trial every method
/// starts from the same initial factors.
struct ExperimentConfig {
  std::vector<Method> methods{kAllMethods.begin(), kAllMethods.end()};
  std::vector<Index> dims;
  Index rank = 0;
  int trials = 1;
  std::uint64_t seed = 0;
  double tol = 1e-10;
  int max_iters = 500;
  ErrorMode error_mode = ErrorMode::Fast;

  // collinear
  std::vector<double> collinearities;
  std::vector<double> noises;
  bool weight_penalty = true;

  // sinesum
  Index modes = 4;
  Index grid = 32;
  SineRepresentation representation = SineRepresentation::RankPow2;
  std::vector<double> alphas;

  // perf
  std::vector<Index> ranks;
  int warmup_iters = 1;
  int timed_iters = 10;
};

inline std::uint64_t trial_seed(const ExperimentConfig& cfg, int trial) {
  return cfg.seed + static_cast<std::uint64_t>(trial);
}

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Mean seconds per component and per iteration over records[skip..].
struct MeanTimings {
  Timings components{};
  double iteration = kNaN;
  int count = 0;
};

inline MeanTimings mean_timings(const SolveTrace& trace, int skip = 0) {
  MeanTimings out;
  for (std::size_t i = static_cast<std::size_t>(std::max(skip, 0)); i < trace.records.size(); ++i) {
    const IterationRecord& rec = trace.records[i];
    for (int c = 0; c < kNumComponents; ++c) out.components[static_cast<std::size_t>(c)] += rec.seconds[static_cast<std::size_t>(c)];
    out.iteration = out.count ? out.iteration + rec.total_seconds : rec.total_seconds;
    ++out.count;
  }
  if (out.count) {
    for (double& t : out.components) t /= out.count;
    out.iteration /= out.count;
  } else {
    out.components.fill(kNaN);
  }
  return out;
}

inline constexpr const char* kTimingColumns = "t_kernel,t_factor_prep,t_compute_q0,t_apply_q0,t_other,t_iteration";

inline void write_timings(std::ostream& out, const Timings& t, double total) {
  for (double v : t) out << ',' << v;
  out << ',' << total;
}

// ---------------------------------------------------------------------------
// Grid results
// ---------------------------------------------------------------------------

struct ResultRow {
  std::string experiment;
  int trial = 0;
  std::uint64_t seed = 0;
  Method method = Method::NeCholesky;
  Index rank = 0;
  double collinearity = kNaN;
  double noise = kNaN;
  int iterations = 0;
  SolveStatus status = SolveStatus::MaxIterations;
  double rel_error = kNaN;
  double score = kNaN;
  int cholesky_fallbacks = 0;
  MeanTimings timings;
};

inline constexpr const char* kResultHeader =
    "experiment,trial,seed,method,rank,collinearity,noise,iterations,status,converged,rel_error,score,"
    "cholesky_fallbacks";

inline void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows, bool timings = true) {
  const auto precision = out.precision(17);
  out << kResultHeader;
  if (timings) out << ',' << kTimingColumns;
  out << '\n';
  for (const ResultRow& r : rows) {
    out << r.experiment << ',' << r.trial << ',' << r.seed << ',' << method_name(r.method) << ',' << r.rank << ','
        << r.collinearity << ',' << r.noise << ',' << r.iterations << ',' << status_name(r.status) << ','
        << (r.status == SolveStatus::Converged ? 1 : 0) << ',' << r.rel_error << ',' << r.score << ','
        << r.cholesky_fallbacks;
    if (timings) write_timings(out, r.timings.components, r.timings.iteration);
    out << '\n';
  }
  out.precision(precision);
}

inline ResultRow make_row(std::string experiment, int trial, std::uint64_t seed, Method m, Index rank,
                          const SolveTrace& trace) {
  ResultRow row;
  row.experiment = std::move(experiment);
  row.trial = trial;
  row.seed = seed;
  row.method = m;
  row.rank = rank;
  row.iterations = trace.iterations();
  row.status = trace.status;
  row.rel_error = trace.final_error();
  row.cholesky_fallbacks = trace.cholesky_fallbacks;
  row.timings = mean_timings(trace);
  return row;
}

/// Collinear-factor grid: for every (collinearity, noise) cell and trial, one
/// row per method with score against the generating model. rel_error is the
/// direct error of the returned model.
inline std::vector<ResultRow> run_collinear(const ExperimentConfig& cfg) {
  if (cfg.trials < 1) throw ShapeError("collinear: trials must be >= 1");
  std::vector<ResultRow> rows;
  for (double c : cfg.collinearities) {
    for (double eta : cfg.noises) {
      for (int t = 0; t < cfg.trials; ++t) {
        const std::uint64_t seed = trial_seed(cfg, t);
        const CollinearProblem p = gen_collinear({cfg.dims, cfg.rank, c, eta, seed});
        SolverOptions opts;
        opts.rank = cfg.rank;
        opts.max_iters = cfg.max_iters;
        opts.tol = cfg.tol;
        opts.error_mode = cfg.error_mode;
        opts.initial_factors = random_factors(cfg.dims, cfg.rank, seed);
        for (Method m : cfg.methods) {
          const SolveResult res = cp_als(p.noisy, opts, m);
          ResultRow row = make_row("collinear", t, seed, m, cfg.rank, res.trace);
          row.collinearity = c;
          row.noise = eta;
          row.rel_error = rel_error_direct(p.noisy, res.model);
          row.score = score(res.model, p.truth, {cfg.weight_penalty}).value;
          rows.push_back(std::move(row));
        }
      }
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Sine of sums
// ---------------------------------------------------------------------------

struct SineSumRow {
  int trial = 0;
  std::uint64_t seed = 0;
  Method method = Method::NeCholesky;
  Index modes = 0;
  Index grid = 0;
  Index rank = 0;
  int iter = 0;
  double rel_error = kNaN;
  SolveStatus status = SolveStatus::MaxIterations;
};

/// Fit rank used when none is given: the full expanded rank for up to five
/// modes, the mode count beyond that.
inline Index default_sinesum_rank(Index modes) { return modes <= 5 ? Index{1} << (modes - 1) : modes; }

/// Per-iteration direct relative error of every method on the Kruskal
/// sine-of-sums input, with zero tolerance (every run does max_iters sweeps).
inline std::vector<SineSumRow> run_sinesum(const ExperimentConfig& cfg) {
  if (cfg.grid < 2) throw ShapeError("sinesum: grid must be >= 2");
  if (cfg.trials < 1) throw ShapeError("sinesum: trials must be >= 1");
  const KruskalTensor x = sine_of_sums({cfg.modes, cfg.grid, cfg.representation, cfg.alphas});
  const Index rank = cfg.rank > 0 ? cfg.rank : default_sinesum_rank(cfg.modes);
  std::vector<SineSumRow> rows;
  for (int t = 0; t < cfg.trials; ++t) {
    const std::uint64_t seed = trial_seed(cfg, t);
    SolverOptions opts;
    opts.rank = rank;
    opts.max_iters = cfg.max_iters;
    opts.tol = cfg.tol;
    opts.error_mode = cfg.error_mode;
    opts.initial_factors = random_factors(x.dims(), rank, seed);
    for (Method m : cfg.methods) {
      const SolveResult res = cp_als(x, opts, m);
      for (const IterationRecord& rec : res.trace.records)
        rows.push_back({t, seed, m, cfg.modes, cfg.grid, rank, rec.iter, rec.rel_error, res.trace.status});
      if (res.trace.records.empty())
        rows.push_back({t, seed, m, cfg.modes, cfg.grid, rank, 0, kNaN, res.trace.status});
    }
  }
  return rows;
}

inline void write_sinesum_csv(std::ostream& out, const std::vector<SineSumRow>& rows) {
  const auto precision = out.precision(17);
  out << "trial,seed,method,modes,grid,rank,iter,rel_error,status\n";
  for (const SineSumRow& r : rows)
    out << r.trial << ',' << r.seed << ',' << method_name(r.method) << ',' << r.modes << ',' << r.grid << ','
        << r.rank << ',' << r.iter << ',' << r.rel_error << ',' << status_name(r.status) << '\n';
  out.precision(precision);
}

// ---------------------------------------------------------------------------
// Per-iteration cost
// ---------------------------------------------------------------------------

struct PerfRow {
  std::vector<Index> dims;
  Index rank = 0;
  Method method = Method::NeCholesky;
  MeanTimings timings;
  double slowdown = kNaN;  ///< mean iteration time relative to als at the same rank
  SolveStatus status = SolveStatus::MaxIterations;
};

inline DenseTensor random_dense(std::vector<Index> dims, std::uint64_t seed) {
  DenseTensor x(std::move(dims));
  CounterRng rng(seed, 20);
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform();
  return x;
}

/// For each rank and method: warmup_iters untimed sweeps, then the mean of
/// timed_iters sweeps per component.
inline std::vector<PerfRow> run_perf(const ExperimentConfig& cfg) {
  if (cfg.timed_iters < 1) throw ShapeError("perf: timed iterations must be >= 1");
  const DenseTensor x = random_dense(cfg.dims, cfg.seed);
  std::vector<PerfRow> rows;
  for (Index rank : cfg.ranks) {
    SolverOptions opts;
    opts.rank = rank;
    opts.max_iters = cfg.warmup_iters + cfg.timed_iters;
    opts.tol = 0.0;
    opts.error_mode = ErrorMode::Fast;
    opts.initial_factors = random_factors(cfg.dims, rank, cfg.seed);
    const std::size_t first = rows.size();
    for (Method m : cfg.methods) {
      const SolveResult res = cp_als(x, opts, m);
      PerfRow row;
      row.dims = cfg.dims;
      row.rank = rank;
      row.method = m;
      row.status = res.trace.status;
      row.timings = mean_timings(res.trace, cfg.warmup_iters);
      rows.push_back(std::move(row));
    }
    double base = kNaN;
    for (std::size_t i = first; i < rows.size(); ++i)
      if (rows[i].method == Method::NeCholesky) base = rows[i].timings.iteration;
    for (std::size_t i = first; i < rows.size(); ++i) rows[i].slowdown = rows[i].timings.iteration / base;
  }
  return rows;
}

inline void write_perf_csv(std::ostream& out, const std::vector<PerfRow>& rows) {
  const auto precision = out.precision(17);
  out << "dims,rank,method,timed_iters,status," << kTimingColumns << ",kernel_name,factor_prep_name,slowdown\n";
  for (const PerfRow& r : rows) {
    out << dims_to_string(r.dims) << ',' << r.rank << ',' << method_name(r.method) << ',' << r.timings.count << ','
        << status_name(r.status);
    write_timings(out, r.timings.components, r.timings.iteration);
    out << ',' << component_name(Component::Kernel, r.method) << ','
        << component_name(Component::FactorPrep, r.method) << ',' << r.slowdown << '\n';
  }
  out.precision(precision);
}

// ---------------------------------------------------------------------------
// Single decomposition trace
// ---------------------------------------------------------------------------

inline void write_trace_csv(std::ostream& out, Method m, const SolveTrace& trace, bool timings = true) {
  const auto precision = out.precision(17);
  out << "method,iter,rel_error,lambda_max,lambda_min";
  if (timings) out << ',' << kTimingColumns;
  out << '\n';
  for (const IterationRecord& rec : trace.records) {
    out << method_name(m) << ',' << rec.iter << ',' << rec.rel_error << ','
        << (rec.lambda.size() ? rec.lambda.maxCoeff() : kNaN) << ','
        << (rec.lambda.size() ? rec.lambda.minCoeff() : kNaN);
    if (timings) write_timings(out, rec.seconds, rec.total_seconds);
    out << '\n';
  }
  out.precision(precision);
}

}  // namespace cpqr
