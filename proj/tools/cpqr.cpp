// SPDX-License-Identifier: Apache-2.0
// cpqr: CP-ALS decompositions, per-iteration cost benchmarks and the
// ill-conditioned experiment grids, all writing CSV.

#include <CLI11.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <new>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpqr/cpqr.hpp"

namespace {

using cpqr::Index;

enum ExitCode { kOk = 0, kUsage = 1, kNumerical = 2, kIo = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  Index rank = 0;
  std::string method = "all";
  int max_iters = 500;
  double tol = 1e-10;
  std::uint64_t seed = 0;
  int trials = 1;
  std::string error_mode = "fast";
  std::string out;
  std::vector<Index> dims;
  bool no_timings = false;
};

void add_common(CLI::App* cmd, Common& c, bool solver_flags = true) {
  cmd->add_option("--rank", c.rank, "CP rank");
  cmd->add_option("--method", c.method, "als, als-pinv, als-qr, als-qr-svd or all")->capture_default_str();
  cmd->add_option("--seed", c.seed, "base seed; trial i uses seed + i")->capture_default_str();
  cmd->add_option("--out", c.out, "output CSV path (default: stdout)");
  cmd->add_option("--dims", c.dims, "mode sizes d1,d2,...")->delimiter(',');
  if (!solver_flags) return;
  cmd->add_option("--max-iters", c.max_iters, "maximum ALS sweeps")->capture_default_str();
  cmd->add_option("--tol", c.tol, "stop when the change in relative error is below tol")->capture_default_str();
  cmd->add_option("--trials", c.trials, "number of trials")->capture_default_str();
  cmd->add_option("--error-mode", c.error_mode, "fast or direct")->capture_default_str();
  cmd->add_flag("--no-timings", c.no_timings, "omit timing columns (byte-reproducible output)");
}

std::vector<cpqr::Method> methods_from(const std::string& s) {
  if (s == "all") return {cpqr::kAllMethods.begin(), cpqr::kAllMethods.end()};
  if (auto m = cpqr::parse_method(s)) return {*m};
  throw UsageError("unknown method '" + s + "'");
}

cpqr::ErrorMode error_mode_from(const std::string& s) {
  if (s == "fast") return cpqr::ErrorMode::Fast;
  if (s == "direct") return cpqr::ErrorMode::Direct;
  throw UsageError("unknown error mode '" + s + "'");
}

cpqr::ExperimentConfig config_from(const Common& c) {
  cpqr::ExperimentConfig cfg;
  cfg.methods = methods_from(c.method);
  cfg.dims = c.dims;
  cfg.rank = c.rank;
  cfg.trials = c.trials;
  cfg.seed = c.seed;
  cfg.tol = c.tol;
  cfg.max_iters = c.max_iters;
  cfg.error_mode = error_mode_from(c.error_mode);
  if (cfg.trials < 1) throw UsageError("--trials must be >= 1");
  if (cfg.max_iters < 1) throw UsageError("--max-iters must be >= 1");
  if (!(cfg.tol >= 0.0)) throw UsageError("--tol must be >= 0");
  return cfg;
}

/// Runs `write` against the --out file, or stdout when none is given.
template <class F>
void emit(const std::string& path, F&& write) {
  if (path.empty()) {
    write(std::cout);
    std::cout.flush();
    return;
  }
  std::ofstream f(path);
  if (!f) throw cpqr::IoError("cannot open '" + path + "' for writing");
  write(f);
  f.flush();
  if (!f) throw cpqr::IoError("write to '" + path + "' failed");
}

std::string model_path(const std::string& base, cpqr::Method m, bool several) {
  if (!several) return base;
  const std::string ext = ".kten";
  const std::string stem = base.size() > ext.size() && base.ends_with(ext) ? base.substr(0, base.size() - ext.size()) : base;
  return stem + "." + std::string(cpqr::method_name(m)) + ext;
}

bool failed(cpqr::SolveStatus s) { return s == cpqr::SolveStatus::Diverged || s == cpqr::SolveStatus::Failed; }

int decompose(const Common& c, const std::string& input, const std::string& model_out) {
  if (c.rank < 1) throw UsageError("--rank is required and must be >= 1");
  const std::vector<cpqr::Method> methods = methods_from(c.method);
  cpqr::SolverOptions opts;
  opts.rank = c.rank;
  opts.max_iters = c.max_iters;
  opts.tol = c.tol;
  opts.seed = c.seed;
  opts.error_mode = error_mode_from(c.error_mode);

  std::vector<std::pair<cpqr::Method, cpqr::SolveResult>> results;
  if (cpqr::is_kruskal_path(input)) {
    const cpqr::KruskalTensor x = cpqr::load_kruskal(input);
    for (cpqr::Method m : methods) results.emplace_back(m, cpqr::cp_als(x, opts, m));
  } else {
    const cpqr::DenseTensor x = cpqr::load_dense(input);
    for (cpqr::Method m : methods) results.emplace_back(m, cpqr::cp_als(x, opts, m));
  }

  emit(c.out, [&](std::ostream& os) {
    bool header = true;
    for (const auto& [m, res] : results) {
      std::ostringstream part;
      cpqr::write_trace_csv(part, m, res.trace, !c.no_timings);
      std::string text = part.str();
      if (!header) text = text.substr(text.find('\n') + 1);
      os << text;
      header = false;
    }
  });
  if (!model_out.empty())
    for (const auto& [m, res] : results) cpqr::save_kruskal(model_path(model_out, m, results.size() > 1), res.model);

  for (const auto& [m, res] : results) {
    std::cerr << cpqr::method_name(m) << ": " << cpqr::status_name(res.trace.status) << " after "
              << res.trace.iterations() << " iterations, rel_error " << res.trace.final_error() << '\n';
  }
  for (const auto& [m, res] : results)
    if (failed(res.trace.status))
      throw cpqr::NumericalError(std::string(cpqr::method_name(m)) + ": " + std::string(cpqr::status_name(res.trace.status)) +
                                 (res.trace.message.empty() ? "" : ": " + res.trace.message));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CP-ALS with normal-equation and structured-QR subproblem solvers"};
  app.require_subcommand(1);

  Common dec;
  dec.method = "als";
  std::string input, model_out;
  auto* cmd_dec = app.add_subcommand("decompose", "decompose a .dten or .kten tensor");
  add_common(cmd_dec, dec);
  cmd_dec->add_option("--input", input, "input tensor file (.dten or .kten)")->required();
  cmd_dec->add_option("--model", model_out, "write the model(s) to this .kten path");

  Common perf;
  std::vector<Index> ranks;
  int warmup = 1, timed = 10;
  perf.dims = {200, 200, 200};
  auto* cmd_perf = app.add_subcommand("perf", "mean per-iteration component timings");
  add_common(cmd_perf, perf, false);
  cmd_perf->add_option("--ranks", ranks, "ranks to time r1,r2,... (default: --rank, else 10,25)")->delimiter(',');
  cmd_perf->add_option("--warmup", warmup, "untimed sweeps")->capture_default_str();
  cmd_perf->add_option("--iters", timed, "timed sweeps")->capture_default_str();

  Common col;
  col.dims = {50, 50, 50};
  col.rank = 5;
  col.trials = 20;
  col.tol = 1e-15;
  std::vector<double> collinearities{1 - 1e-4, 1 - 1e-7, 1 - 1e-10}, noises{1e-4, 1e-7, 1e-10};
  bool no_penalty = false;
  auto* cmd_col = app.add_subcommand("collinear", "collinear-factor accuracy grid");
  add_common(cmd_col, col);
  cmd_col->add_option("--collinearity", collinearities, "collinearity levels c1,c2,...")->delimiter(',');
  cmd_col->add_option("--noise", noises, "relative noise levels e1,e2,...")->delimiter(',');
  cmd_col->add_flag("--no-weight-penalty", no_penalty, "score without the weight penalty");

  Common sine;
  sine.max_iters = 40;
  sine.tol = 0.0;
  sine.trials = 3;
  sine.error_mode = "direct";
  Index modes = 4, grid = 128;
  std::string representation = "pow2";
  std::vector<double> alphas;
  auto* cmd_sine = app.add_subcommand("sinesum", "sine-of-sums relative error per iteration");
  add_common(cmd_sine, sine);
  cmd_sine->add_option("--modes", modes, "number of modes N")->capture_default_str();
  cmd_sine->add_option("--grid", grid, "points per mode n")->capture_default_str();
  cmd_sine->add_option("--representation", representation, "pow2 or rank-n input representation")->capture_default_str();
  cmd_sine->add_option("--alphas", alphas, "shifts for the rank-n representation")->delimiter(',');

  std::string gen_kind = "collinear", gen_truth;
  double gen_c = 0.9, gen_eta = 0.0;
  Common gen;
  auto* cmd_gen = app.add_subcommand("generate", "write a synthetic tensor (.dten for collinear, .kten for sinesum)");
  add_common(cmd_gen, gen, false);
  cmd_gen->add_option("--kind", gen_kind, "collinear or sinesum")->capture_default_str();
  cmd_gen->add_option("--collinearity", gen_c, "collinearity c")->capture_default_str();
  cmd_gen->add_option("--noise", gen_eta, "relative noise")->capture_default_str();
  cmd_gen->add_option("--truth", gen_truth, "collinear: also write the generating model (.kten)");
  cmd_gen->add_option("--modes", modes, "sinesum: number of modes")->capture_default_str();
  cmd_gen->add_option("--grid", grid, "sinesum: points per mode")->capture_default_str();
  cmd_gen->add_option("--representation", representation, "sinesum: pow2 or rank-n")->capture_default_str();
  cmd_gen->add_option("--alphas", alphas, "sinesum: shifts for rank-n")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << '\n';
    return kUsage;
  }

  auto sine_representation = [&] {
    if (representation == "pow2") return cpqr::SineRepresentation::RankPow2;
    if (representation == "rank-n") return cpqr::SineRepresentation::RankN;
    throw UsageError("unknown representation '" + representation + "'");
  };

  try {
    if (cmd_dec->parsed()) return decompose(dec, input, model_out);

    if (cmd_perf->parsed()) {
      cpqr::ExperimentConfig cfg = config_from(perf);
      cfg.ranks = !ranks.empty() ? ranks : perf.rank > 0 ? std::vector<Index>{perf.rank} : std::vector<Index>{10, 25};
      cfg.warmup_iters = warmup;
      cfg.timed_iters = timed;
      if (warmup < 0 || timed < 1) throw UsageError("--warmup must be >= 0 and --iters >= 1");
      if (cfg.dims.empty()) throw UsageError("--dims is required");
      const auto rows = cpqr::run_perf(cfg);
      emit(perf.out, [&](std::ostream& os) { cpqr::write_perf_csv(os, rows); });
      return kOk;
    }

    if (cmd_col->parsed()) {
      cpqr::ExperimentConfig cfg = config_from(col);
      cfg.collinearities = collinearities;
      cfg.noises = noises;
      cfg.weight_penalty = !no_penalty;
      if (cfg.rank < 1) throw UsageError("--rank must be >= 1");
      const auto rows = cpqr::run_collinear(cfg);
      emit(col.out, [&](std::ostream& os) { cpqr::write_results_csv(os, rows, !col.no_timings); });
      return kOk;
    }

    if (cmd_sine->parsed()) {
      cpqr::ExperimentConfig cfg = config_from(sine);
      cfg.modes = modes;
      cfg.grid = grid;
      cfg.representation = sine_representation();
      cfg.alphas = alphas;
      const auto rows = cpqr::run_sinesum(cfg);
      emit(sine.out, [&](std::ostream& os) { cpqr::write_sinesum_csv(os, rows); });
      return kOk;
    }

    if (cmd_gen->parsed()) {
      if (gen.out.empty()) throw UsageError("--out is required");
      if (gen_kind == "collinear") {
        if (gen.dims.empty()) throw UsageError("--dims is required");
        const cpqr::CollinearProblem p =
            cpqr::gen_collinear({gen.dims, gen.rank > 0 ? gen.rank : 5, gen_c, gen_eta, gen.seed});
        cpqr::save_dense(gen.out, p.noisy);
        if (!gen_truth.empty()) cpqr::save_kruskal(gen_truth, p.truth);
      } else if (gen_kind == "sinesum") {
        cpqr::save_kruskal(gen.out, cpqr::sine_of_sums({modes, grid, sine_representation(), alphas}));
      } else {
        throw UsageError("unknown kind '" + gen_kind + "'");
      }
      return kOk;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: usage: " << e.what() << '\n';
    return kUsage;
  } catch (const cpqr::ShapeError& e) {
    std::cerr << "error: usage: " << e.what() << '\n';
    return kUsage;
  } catch (const cpqr::IoError& e) {
    std::cerr << "error: io: " << e.what() << '\n';
    return kIo;
  } catch (const cpqr::NumericalError& e) {
    std::cerr << "error: numerical: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::bad_alloc&) {
    std::cerr << "error: numerical: out of memory\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: numerical: " << e.what() << '\n';
    return kNumerical;
  }
  return kUsage;
}
