#include <benchmark/benchmark.h>

#include "p2pclear/admm.hpp"
#include "p2pclear/caseio.hpp"
#include "p2pclear/clearing.hpp"

namespace {

p2pclear::ClearingProblem assembled(const p2pclear::CaseFile& c) {
  auto A = p2pclear::build_policy(c.grid, c.agents, c.trades, c.policy, c.chi);
  return p2pclear::assemble(c.grid, c.agents, c.trades, A,
                            p2pclear::clearing_options(c.solver));
}

void BM_AssembleFiveBus(benchmark::State& state) {
  const p2pclear::CaseFile c = p2pclear::generate_five_bus();
  for (auto _ : state) {
    auto prob = assembled(c);
    benchmark::DoNotOptimize(prob.program.num_vars);
  }
}
BENCHMARK(BM_AssembleFiveBus)->Unit(benchmark::kMillisecond);

void BM_SolveFiveBus(benchmark::State& state) {
  const p2pclear::CaseFile c = p2pclear::generate_five_bus();
  const auto prob = assembled(c);
  for (auto _ : state) {
    auto sol = p2pclear::solve(prob);
    benchmark::DoNotOptimize(sol.objective);
  }
}
BENCHMARK(BM_SolveFiveBus)->Unit(benchmark::kMillisecond);

void BM_SolveRandomCommunity(benchmark::State& state) {
  const p2pclear::CaseFile c =
      p2pclear::generate_random_case(4, static_cast<int>(state.range(0)), 7);
  const auto prob = assembled(c);
  for (auto _ : state) {
    auto sol = p2pclear::solve(prob);
    benchmark::DoNotOptimize(sol.objective);
  }
  state.counters["vars"] = prob.program.num_vars;
}
BENCHMARK(BM_SolveRandomCommunity)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_AdmmFiveBusRound(benchmark::State& state) {
  const p2pclear::CaseFile c = p2pclear::generate_five_bus();
  const auto prob = assembled(c);
  p2pclear::AdmmOptions opt;
  opt.max_iterations = 10;  // per-round cost, not convergence
  for (auto _ : state) {
    auto res = p2pclear::admm_run(prob, opt);
    benchmark::DoNotOptimize(res.iterations);
  }
}
BENCHMARK(BM_AdmmFiveBusRound)->Unit(benchmark::kMillisecond);

}  // namespace
