#include <benchmark/benchmark.h>

#include "p2pclear/solver.hpp"

#include <random>

namespace {

// Random strictly feasible box-constrained QP of size n.
p2pclear::ConicProgram random_qp(int n, unsigned seed) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  p2pclear::ConicProgram p;
  p.num_vars = n;
  Eigen::MatrixXd M(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) M(i, j) = unif(gen);
  p.Q = M.transpose() * M / n + Eigen::MatrixXd::Identity(n, n) * 0.1;
  p.c = Eigen::VectorXd::NullaryExpr(n, [&](int) { return unif(gen); });
  p.A_in = Eigen::MatrixXd::Zero(2 * n, n);
  p.b_in = Eigen::VectorXd::Constant(2 * n, 5.0);
  for (int i = 0; i < n; ++i) {
    p.A_in(2 * i, i) = 1.0;
    p.A_in(2 * i + 1, i) = -1.0;
  }
  return p;
}

void BM_IpmRandomQp(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const p2pclear::ConicProgram p = random_qp(n, 99);
  const p2pclear::ReferenceIpm ipm;
  for (auto _ : state) {
    p2pclear::SolveResult r = ipm.solve(p, {});
    benchmark::DoNotOptimize(r.objective);
  }
  state.counters["vars"] = n;
}
BENCHMARK(BM_IpmRandomQp)->Arg(50)->Arg(200)->Unit(benchmark::kMillisecond);

void BM_IpmDisc(benchmark::State& state) {
  p2pclear::ConicProgram p = random_qp(40, 5);
  for (int i = 0; i + 1 < 40; i += 8) p.discs.push_back({i, i + 1, 4.0});
  const p2pclear::ReferenceIpm ipm;
  for (auto _ : state) {
    p2pclear::SolveResult r = ipm.solve(p, {});
    benchmark::DoNotOptimize(r.objective);
  }
}
BENCHMARK(BM_IpmDisc)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
