#include <benchmark/benchmark.h>

#include "p2pclear/caseio.hpp"
#include "p2pclear/grid.hpp"

namespace {

void BM_BuildPtdf(benchmark::State& state) {
  const p2pclear::CaseFile c =
      p2pclear::generate_random_case(static_cast<int>(state.range(0)), 2, 7);
  for (auto _ : state) {
    Eigen::MatrixXd n = p2pclear::build_ptdf(c.grid);
    benchmark::DoNotOptimize(n.data());
  }
}
BENCHMARK(BM_BuildPtdf)->Arg(4)->Arg(12)->Arg(30);

void BM_BuildModifiedTf(benchmark::State& state) {
  const p2pclear::CaseFile c = p2pclear::generate_random_case(
      8, static_cast<int>(state.range(0)), 7);
  const Eigen::MatrixXd n = p2pclear::build_ptdf(c.grid);
  for (auto _ : state) {
    Eigen::MatrixXd tf = p2pclear::build_modified_tf(c.grid, n);
    benchmark::DoNotOptimize(tf.data());
  }
}
BENCHMARK(BM_BuildModifiedTf)->Arg(2)->Arg(6);

void BM_LossFit(benchmark::State& state) {
  for (auto _ : state) {
    auto segs = p2pclear::fit_loss_linearization(0.03, 10.0, 4);
    benchmark::DoNotOptimize(segs.data());
  }
}
BENCHMARK(BM_LossFit);

}  // namespace
