#include <doctest.h>

#include "p2pclear/admm.hpp"
#include "p2pclear/caseio.hpp"

#include <cmath>

using namespace p2pclear;

namespace {

ClearingProblem five_bus_problem() {
  CaseFile c = generate_five_bus();
  AllocationMatrix A = build_policy(c.grid, c.agents, c.trades, c.policy, c.chi);
  return assemble(c.grid, c.agents, c.trades, A, clearing_options(c.solver));
}

}  // namespace

TEST_CASE("two-agent no-grid negotiation matches the centralized solve") {
  GridModel g;
  g.slack_bus = 1;
  g.buses = {{1, BusLevel::Transmission, 0}};
  std::vector<Agent> agents = {{1, 1, 0.0, 10.0, -1, 1, 0.2, 10.0},
                               {2, 1, -5.0, -5.0, -1, 1, 0.0, 0.0}};
  TradeGraph t = TradeGraph::from_pairs({{1, 2}});
  ClearingOptions opts;
  opts.include_grid = false;
  opts.include_losses = false;
  ClearingProblem prob = assemble(g, agents, t, {}, opts);
  ClearingSolution central = solve(prob);
  REQUIRE(central.status == SolveStatus::Optimal);

  AdmmOptions admm;
  admm.rho = 1.0;
  AdmmResult res = admm_run(prob, admm);
  REQUIRE(res.converged);
  CHECK(std::abs(res.solution.objective - central.objective) <=
        1e-4 * (1.0 + std::abs(central.objective)));
  CHECK(res.solution.tau_t[0] ==
        doctest::Approx(central.tau_t[0]).epsilon(1e-3));
}

TEST_CASE("five-bus consensus reaches the centralized optimum and prices") {
  ClearingProblem prob = five_bus_problem();
  ClearingSolution central = solve(prob);
  REQUIRE(central.status == SolveStatus::Optimal);

  AdmmOptions admm;
  AdmmResult res = admm_run(prob, admm);
  REQUIRE(res.converged);
  CHECK(res.iterations <= 5000);
  CHECK(std::abs(res.solution.objective - central.objective) <=
        1e-3 * (1.0 + std::abs(central.objective)));
  for (int k = 0; k < prob.vars.n_pairs; ++k)
    CHECK(std::abs(res.solution.tau_t[k] - central.tau_t[k]) <= 1e-2);

  // Residual history invariants.
  CHECK(static_cast<int>(res.history.size()) == res.iterations);
  for (const auto& it : res.history) {
    CHECK(std::isfinite(it.primal_residual));
    CHECK(std::isfinite(it.dual_residual));
  }
  auto [pri, dual] = residuals(res);
  CHECK(pri <= res.history.front().primal_residual + 1e-12);
}

TEST_CASE("penalty scaling changes the path, not the fixed point") {
  ClearingProblem prob = five_bus_problem();
  AdmmOptions a1;
  a1.rho = 1.0;
  AdmmOptions a10;
  a10.rho = 10.0;
  AdmmResult r1 = admm_run(prob, a1);
  AdmmResult r10 = admm_run(prob, a10);
  REQUIRE(r1.converged);
  REQUIRE(r10.converged);
  CHECK(std::abs(r1.solution.objective - r10.solution.objective) <=
        1e-3 * (1.0 + std::abs(r1.solution.objective)));
}

TEST_CASE("iteration cap returns a flagged non-converged iterate") {
  ClearingProblem prob = five_bus_problem();
  AdmmOptions admm;
  admm.max_iterations = 3;
  AdmmResult res = admm_run(prob, admm);
  CHECK(!res.converged);
  CHECK(res.iterations == 3);
  CHECK(res.solution.status != SolveStatus::Optimal);
  CHECK(!res.solution.message.empty());
}
