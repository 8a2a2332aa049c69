// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "test_util.hpp"

using namespace cpqr;
using namespace cpqr::testing;

namespace {

namespace fs = std::filesystem;

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("cpqr_cli_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path path(const std::string& name) const { return dir_ / name; }

  Outcome run(const std::string& args) const {
    const fs::path out = path("stdout.txt"), err = path("stderr.txt");
    const std::string cmd = std::string(CPQR_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
  }

  fs::path dir_;
};

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::vector<std::string> fields(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  for (std::string f; std::getline(in, f, ',');) out.push_back(f);
  return out;
}

void expect_one_line_error(const Outcome& r, const std::string& kind) {
  const std::vector<std::string> ls = lines(r.err);
  ASSERT_FALSE(ls.empty());
  EXPECT_EQ(ls.back().rfind("error: " + kind + ": ", 0), 0u) << r.err;
}

}  // namespace

TEST_F(Cli, HelpExitsZero) {
  const Outcome r = run("--help");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("decompose"), std::string::npos);
}

TEST_F(Cli, UsageErrorsExitOne) {
  for (const std::string args : {"", "bogus", "decompose", "decompose --input x.dten --rank 0",
                                 "decompose --input x.dten --rank 2 --method nope", "perf --iters 0",
                                 "collinear --trials 0", "sinesum --representation odd", "decompose --frobnicate"}) {
    const Outcome r = run(args);
    EXPECT_EQ(r.code, 1) << args;
    expect_one_line_error(r, "usage");
  }
}

TEST_F(Cli, IoErrorsExitThree) {
  const Outcome missing = run("decompose --rank 2 --input " + path("absent.dten").string());
  EXPECT_EQ(missing.code, 3);
  expect_one_line_error(missing, "io");

  std::ofstream(path("bad.dten")) << "3\n2 2\n1 2 3\n";
  const Outcome bad = run("decompose --rank 2 --input " + path("bad.dten").string());
  EXPECT_EQ(bad.code, 3);
  expect_one_line_error(bad, "io");

  save_dense(path("ok.dten").string(), random_tensor({3, 3, 3}, 1));
  const Outcome unwritable = run("decompose --rank 1 --max-iters 2 --input " + path("ok.dten").string() +
                             " --out /nonexistent/dir/trace.csv");
  EXPECT_EQ(unwritable.code, 3);
  expect_one_line_error(unwritable, "io");
}

TEST_F(Cli, SolverFailureExitsTwo) {
  DenseTensor ones({4, 4, 4});
  ones.flat().setOnes();
  save_dense(path("ones.dten").string(), ones);
  const Outcome r = run("decompose --rank 2 --method als-qr --input " + path("ones.dten").string());
  EXPECT_EQ(r.code, 2);
  expect_one_line_error(r, "numerical");
  EXPECT_EQ(lines(r.out).front(), "method,iter,rel_error,lambda_max,lambda_min," + std::string(kTimingColumns));
}

TEST_F(Cli, RankOneFileConverges) {
  const KruskalTensor k = random_kruskal({5, 4, 3}, 1, 7);
  save_dense(path("r1.dten").string(), kruskal_to_dense(k));
  for (const std::string method : {"als", "als-pinv", "als-qr", "als-qr-svd"}) {
    const Outcome r = run("decompose --rank 1 --error-mode direct --method " + method + " --input " + path("r1.dten").string() +
                      " --model " + path("m.kten").string());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.err.find(method + ": converged"), std::string::npos) << r.err;
    const std::vector<std::string> ls = lines(r.out);
    ASSERT_GE(ls.size(), 2u);
    EXPECT_LE(ls.size(), 4u);
    EXPECT_LE(std::stod(fields(ls.back())[2]), 1e-12) << method;
    const KruskalTensor model = load_kruskal(path("m.kten").string());
    EXPECT_LE(rel_error_direct(kruskal_to_dense(k), model), 1e-12) << method;
  }
}

TEST_F(Cli, KruskalInputAndAllMethods) {
  save_kruskal(path("x.kten").string(), random_kruskal({6, 5, 4}, 2, 8));
  const Outcome r = run("decompose --rank 2 --method all --max-iters 5 --no-timings --input " + path("x.kten").string() +
                    " --model " + path("m.kten").string());
  ASSERT_EQ(r.code, 0) << r.err;
  const std::vector<std::string> ls = lines(r.out);
  EXPECT_EQ(ls.front(), "method,iter,rel_error,lambda_max,lambda_min");
  for (const char* m : {"als", "als-pinv", "als-qr", "als-qr-svd"})
    EXPECT_TRUE(fs::exists(path(std::string("m.") + m + ".kten"))) << m;
}

TEST_F(Cli, NoTimingsOutputIsByteReproducible) {
  save_dense(path("x.dten").string(), random_tensor({6, 5, 4}, 9));
  const std::string dec = "decompose --rank 3 --method all --max-iters 20 --seed 4 --no-timings --input " +
                          path("x.dten").string();
  const std::string col =
      "collinear --dims 8,7,6 --rank 3 --trials 2 --collinearity 0.9 --noise 1e-3 --max-iters 30 --no-timings";
  const std::string sine = "sinesum --modes 3 --grid 8 --trials 2 --max-iters 5";
  for (const std::string& args : {dec, col, sine}) {
    const Outcome a = run(args + " --out " + path("a.csv").string());
    const Outcome b = run(args + " --out " + path("b.csv").string());
    ASSERT_EQ(a.code, 0) << args << a.err;
    ASSERT_EQ(b.code, 0) << args << b.err;
    const std::string sa = slurp(path("a.csv")), sb = slurp(path("b.csv"));
    EXPECT_FALSE(sa.empty());
    EXPECT_EQ(sa, sb) << args;
  }
  EXPECT_EQ(lines(slurp(path("a.csv"))).front(), "trial,seed,method,modes,grid,rank,iter,rel_error,status");
}

TEST_F(Cli, CollinearAndPerfHeaders) {
  const Outcome col = run("collinear --dims 6,5,4 --rank 2 --trials 1 --collinearity 0.5 --noise 0 --max-iters 5");
  ASSERT_EQ(col.code, 0) << col.err;
  const std::vector<std::string> cl = lines(col.out);
  EXPECT_EQ(cl.front(), std::string(kResultHeader) + "," + kTimingColumns);
  EXPECT_EQ(cl.size(), 5u);

  const Outcome perf = run("perf --dims 20,20,20 --ranks 2,3 --iters 2");
  ASSERT_EQ(perf.code, 0) << perf.err;
  const std::vector<std::string> pl = lines(perf.out);
  ASSERT_EQ(pl.size(), 9u);
  const std::vector<std::string> header = fields(pl.front());
  EXPECT_EQ(header.back(), "slowdown");
  EXPECT_EQ(fields(pl[1])[2], "als");
  EXPECT_EQ(std::stod(fields(pl[1]).back()), 1.0);
}

TEST_F(Cli, GenerateThenDecompose) {
  const Outcome g = run("generate --kind collinear --dims 7,6,5 --rank 3 --collinearity 0.5 --seed 2 --out " +
                    path("c.dten").string() + " --truth " + path("t.kten").string());
  ASSERT_EQ(g.code, 0) << g.err;
  const CollinearProblem p = gen_collinear({{7, 6, 5}, 3, 0.5, 0.0, 2});
  EXPECT_EQ(load_dense(path("c.dten").string()).flat(), p.noisy.flat());
  EXPECT_EQ(load_kruskal(path("t.kten").string()).factor(2), p.truth.factor(2));

  const Outcome s = run("generate --kind sinesum --modes 3 --grid 8 --out " + path("s.kten").string());
  ASSERT_EQ(s.code, 0) << s.err;
  EXPECT_EQ(load_kruskal(path("s.kten").string()).rank(), 4);

  const Outcome d = run("decompose --rank 4 --method als-qr --max-iters 3 --input " + path("s.kten").string());
  EXPECT_EQ(d.code, 0) << d.err;
  EXPECT_EQ(run("generate --kind nope --out " + path("z").string()).code, 1);
}
