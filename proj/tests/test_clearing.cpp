#include <doctest.h>

#include "p2pclear/caseio.hpp"
#include "p2pclear/clearing.hpp"

#include <cmath>

using namespace p2pclear;

namespace {

ClearingOptions no_grid_opts() {
  ClearingOptions o;
  o.include_grid = false;
  o.include_losses = false;
  return o;
}

AllocationMatrix empty_allocation() { return {}; }

GridModel bare_bus() {
  GridModel g;
  g.slack_bus = 1;
  g.buses = {{1, BusLevel::Transmission, 0}};
  return g;
}

}  // namespace

TEST_CASE("two agents, one trade, no grid: layout and analytic KKT") {
  std::vector<Agent> agents = {{1, 1, 0.0, 10.0, -1, 1, 0.0, 10.0},
                               {2, 1, -5.0, -5.0, -1, 1, 0.0, 0.0}};
  TradeGraph t = TradeGraph::from_pairs({{1, 2}});
  ClearingProblem prob =
      assemble(bare_bus(), agents, t, empty_allocation(), no_grid_opts());

  // p1, p2, q1, q2, t12, t21, z12, z21.
  CHECK(prob.vars.total == 8);
  // Two balances, one reciprocity, two injection definitions.
  CHECK(prob.eq_rows.total == 5);

  ClearingSolution sol = solve(prob);
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(sol.objective == doctest::Approx(50.0).epsilon(1e-7));
  CHECK(sol.x[prob.vars.t(0)] == doctest::Approx(5.0).epsilon(1e-7));
  CHECK(sol.x[prob.vars.t(1)] == doctest::Approx(-5.0).epsilon(1e-7));
  CHECK(sol.pi[0] == doctest::Approx(10.0).epsilon(1e-6));
  CHECK(sol.pi[1] == doctest::Approx(10.0).epsilon(1e-6));
  CHECK(sol.tau_t[0] == doctest::Approx(10.0).epsilon(1e-6));
  CHECK(sol.tau_z[0] == doctest::Approx(0.0).epsilon(1e-6));

  KktReport kkt = verify_kkt(prob, sol, 1e-8);
  CHECK(kkt.trade_price <= 1e-8);
  CHECK(kkt.stationarity <= 1e-8);
}

TEST_CASE("undersized generator makes the market infeasible") {
  std::vector<Agent> agents = {{1, 1, 0.0, 3.0, 0, 0, 0.0, 10.0},
                               {2, 1, -5.0, -5.0, 0, 0, 0.0, 0.0}};
  TradeGraph t = TradeGraph::from_pairs({{1, 2}});
  ClearingProblem prob =
      assemble(bare_bus(), agents, t, empty_allocation(), no_grid_opts());
  ClearingSolution sol = solve(prob);
  CHECK(sol.status == SolveStatus::Infeasible);
}

TEST_CASE("zero-demand system clears to all zeros") {
  std::vector<Agent> agents = {{1, 1, 0.0, 10.0, 0, 0, 0.5, 10.0},
                               {2, 1, 0.0, 0.0, 0, 0, 0.0, 0.0}};
  TradeGraph t = TradeGraph::from_pairs({{1, 2}});
  ClearingProblem prob =
      assemble(bare_bus(), agents, t, empty_allocation(), no_grid_opts());
  ClearingSolution sol = solve(prob);
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(std::abs(sol.objective) < 1e-7);
  for (int i = 0; i < prob.vars.total; ++i) CHECK(std::abs(sol.x[i]) < 1e-6);
}

TEST_CASE("isolated agents are excluded from the variable layout") {
  std::vector<Agent> agents = {{1, 1, 0.0, 10.0, 0, 0, 0.0, 10.0},
                               {2, 1, -5.0, -5.0, 0, 0, 0.0, 0.0},
                               {9, 1, -1.0, 1.0, 0, 0, 0.0, 0.0}};
  TradeGraph t = TradeGraph::from_pairs({{1, 2}});
  ClearingProblem prob =
      assemble(bare_bus(), agents, t, empty_allocation(), no_grid_opts());
  CHECK(prob.vars.n_agents == 2);
  CHECK(!prob.warnings.empty());
}

TEST_CASE("five-bus loss rows count 2 x segments x lines") {
  CaseFile c = generate_five_bus_tight();  // fitted, 2 segments per line
  AllocationMatrix A = build_policy(c.grid, c.agents, c.trades, c.policy, c.chi);
  ClearingOptions opts;
  ClearingProblem prob = assemble(c.grid, c.agents, c.trades, A, opts);
  int env_rows = 0, nonneg_rows = 0;
  for (const auto& tag : prob.ineq_tags) {
    if (tag.kind == IneqTag::LossEnvPos || tag.kind == IneqTag::LossEnvNeg)
      ++env_rows;
    if (tag.kind == IneqTag::LossNonneg) ++nonneg_rows;
  }
  CHECK(env_rows == 2 * 2 * c.grid.num_lossy_lines());
  CHECK(nonneg_rows == c.grid.num_lossy_lines());
}

TEST_CASE("grid off removes phi, mu and eta from the solution schema") {
  CaseFile c = generate_five_bus();
  ClearingOptions opts;
  opts.include_grid = false;
  opts.include_losses = false;
  ClearingProblem prob =
      assemble(c.grid, c.agents, c.trades, empty_allocation(), opts);
  ClearingSolution sol = solve(prob);
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(sol.phi.size() == 0);
  CHECK(sol.mu_upper.size() == 0);
  CHECK(sol.eta_cone.size() == 0);
  CHECK(sol.tau_e.size() == 0);
  CHECK(sol.lambda.size() == 0);
}

TEST_CASE("uncongested lossless single-SO case: uniform trade prices") {
  CaseFile c = generate_uniform_tso();
  ClearingOptions opts;
  opts.include_losses = false;
  ClearingProblem prob =
      assemble(c.grid, c.agents, c.trades, empty_allocation(), opts);
  ClearingSolution sol = solve(prob);
  REQUIRE(sol.status == SolveStatus::Optimal);
  for (int k = 0; k < prob.vars.n_pairs; ++k)
    CHECK(sol.tau_t[k] == doctest::Approx(20.0).epsilon(1e-6));
  for (int d = 0; d < prob.vars.n_directed; ++d)
    CHECK(std::abs(sol.tau_z[d]) < 1e-6);
}

namespace {

// Classic congested triangle: cheap slack generator, expensive remote one,
// the direct line to the load undersized.
ClearingProblem congested_triangle(ClearingSolution* out) {
  GridModel g;
  g.slack_bus = 1;
  g.buses = {{1, BusLevel::Transmission, 0},
             {2, BusLevel::Transmission, 0},
             {3, BusLevel::Transmission, 0}};
  auto ac = [](int f, int t, double cap) {
    AcLine l;
    l.from = f;
    l.to = t;
    l.reactance = 0.1;
    l.resistance = 0.0;
    l.capacity = cap;
    return l;
  };
  g.ac_lines = {ac(1, 2, 1.5), ac(1, 3, 10.0), ac(2, 3, 10.0)};
  std::vector<Agent> agents = {{1, 1, 0.0, 10.0, -2, 2, 0.0, 10.0},
                               {2, 2, -3.0, -3.0, -2, 2, 0.0, 0.0},
                               {3, 3, 0.0, 10.0, -2, 2, 0.0, 30.0}};
  TradeGraph t = TradeGraph::full(agents);
  ClearingOptions opts;
  opts.include_losses = false;
  ClearingProblem prob = assemble(g, agents, t, {}, opts);
  *out = solve(prob);
  return prob;
}

}  // namespace

TEST_CASE("congested triangle reproduces the LMP pattern") {
  ClearingSolution sol;
  ClearingProblem prob = congested_triangle(&sol);
  REQUIRE(sol.status == SolveStatus::Optimal);

  // Redispatch: both generators at 1.5 MW, objective 15 + 45.
  CHECK(sol.objective == doctest::Approx(60.0).epsilon(1e-6));
  CHECK(sol.pi[0] == doctest::Approx(10.0).epsilon(1e-5));
  CHECK(sol.pi[1] == doctest::Approx(50.0).epsilon(1e-5));
  CHECK(sol.pi[2] == doctest::Approx(30.0).epsilon(1e-5));

  // tau_z differs across the two directions of a trade straddling the
  // congested corridor by exactly the LMP spread.
  const auto& trades = prob.trades;
  for (int d = 0; d < prob.vars.n_directed; ++d) {
    auto [i, j] = trades.directed(d);
    if (i == 2 && j == 1) {
      const int rev = trades.reverse_of(d);
      CHECK(sol.tau_z[d] - sol.tau_z[rev] ==
            doctest::Approx(40.0).epsilon(1e-5));
    }
    if (i == 2 && j == 3) {
      const int rev = trades.reverse_of(d);
      CHECK(sol.tau_z[d] - sol.tau_z[rev] ==
            doctest::Approx(20.0).epsilon(1e-5));
    }
  }

  // Exactly one binding line and the (7d) identity.
  CHECK(sol.mu_upper.lpNorm<Eigen::Infinity>() > 1.0);
  KktReport kkt = verify_kkt(prob, sol, 1e-6);
  CHECK(kkt.grid_price <= 1e-6);
  CHECK(kkt.trade_price <= 1e-6);
}

TEST_CASE("five-bus with losses: KKT identities and conservation") {
  CaseFile c = generate_five_bus();
  AllocationMatrix A = build_policy(c.grid, c.agents, c.trades, c.policy, c.chi);
  ClearingOptions opts;
  ClearingProblem prob = assemble(c.grid, c.agents, c.trades, A, opts);
  ClearingSolution sol = solve(prob);
  REQUIRE(sol.status == SolveStatus::Optimal);

  KktReport kkt = verify_kkt(prob, sol, 1e-6);
  CHECK(kkt.trade_price <= 1e-6);
  CHECK(kkt.loss_price <= 1e-6);
  CHECK(kkt.grid_price <= 1e-6);
  CHECK(kkt.stationarity <= 1e-6);

  const VarMap& vm = prob.vars;
  for (int k = 0; k < vm.n_pairs; ++k)
    CHECK(std::abs(sol.x[vm.t(2 * k)] + sol.x[vm.t(2 * k + 1)]) <= 1e-7);
  for (int d = 0; d < vm.n_directed; ++d)
    CHECK(sol.x[vm.t(d)] + sol.x[vm.w_trade(d)] - sol.x[vm.z(d)] ==
          doctest::Approx(0.0).epsilon(1e-8));

  double w_trades = 0.0, w_lines = 0.0;
  for (int d = 0; d < vm.n_directed; ++d) w_trades += sol.x[vm.w_trade(d)];
  for (int l = 0; l < vm.n_lines; ++l) w_lines += sol.x[vm.w_line(l)];
  CHECK(std::abs(w_trades - w_lines) <= 1e-6 * (1.0 + std::abs(w_lines)));

  // Per-agent balance.
  for (int a = 0; a < vm.n_agents; ++a) {
    double acc = 0.0;
    for (int d : prob.trades.trades_of(prob.cleared_agent(a).id))
      acc += sol.x[vm.t(d)] + sol.x[vm.w_trade(d)];
    CHECK(acc == doctest::Approx(sol.x[vm.p(a)]).epsilon(1e-7));
  }

  // Objective is exactly the sum of production costs.
  double cost = 0.0;
  for (int a = 0; a < vm.n_agents; ++a)
    cost +=
        cost_value_and_gradient(prob.cleared_agent(a), sol.x[vm.p(a)]).first;
  CHECK(sol.objective == doctest::Approx(cost).epsilon(1e-9));
}

TEST_CASE("tight case: limits respected, envelopes tight where priced") {
  CaseFile c = generate_five_bus_tight();
  AllocationMatrix A = build_policy(c.grid, c.agents, c.trades, c.policy, c.chi);
  ClearingOptions opts;
  ClearingProblem prob = assemble(c.grid, c.agents, c.trades, A, opts);
  ClearingSolution sol = solve(prob);
  REQUIRE(sol.status == SolveStatus::Optimal);

  const VarMap& vm = prob.vars;
  for (int k = 0; k < vm.n_ac; ++k)
    CHECK(std::abs(sol.x[vm.f_ac(k)]) <=
          c.grid.ac_lines[k].capacity * (1 + 1e-6));
  for (int d = 0; d < vm.n_dist; ++d)
    CHECK(std::hypot(sol.x[vm.fp(d)], sol.x[vm.fq(d)]) <=
          c.grid.dist_lines[d].apparent_capacity * (1 + 1e-6));

  // Reactive balance forces the q total to the line-charging constant.
  double q_total = 0.0, charging = 0.0;
  for (int a = 0; a < vm.n_agents; ++a) {
    const Agent& ag = prob.cleared_agent(a);
    if (c.grid.bus(ag.bus).level == BusLevel::Distribution)
      q_total += sol.x[vm.q(a)];
  }
  for (const auto& dl : c.grid.dist_lines)
    charging += 2.0 * c.grid.base_mva * dl.shunt_susceptance;
  CHECK(q_total == doctest::Approx(-charging).epsilon(1e-6));

  // Envelope: w >= max segment value; equality when any loss row is priced.
  const int n_ac = static_cast<int>(c.grid.ac_lines.size());
  for (int l = 0; l < vm.n_lines; ++l) {
    const double f =
        l < n_ac ? sol.x[vm.f_ac(l)] : sol.x[vm.fp(l - n_ac)];
    const auto& segs =
        l < n_ac ? c.grid.ac_lines[l].loss : c.grid.dist_lines[l - n_ac].loss;
    double env = 0.0;
    for (const auto& s : segs)
      env = std::max(env, s.slope * std::abs(f) + s.intercept);
    const double w = sol.x[vm.w_line(l)];
    CHECK(w >= env - 1e-6);
    double price = 0.0;
    for (size_t i = 0; i < prob.ineq_tags.size(); ++i) {
      const auto& tag = prob.ineq_tags[i];
      if ((tag.kind == IneqTag::LossEnvPos || tag.kind == IneqTag::LossEnvNeg ||
           tag.kind == IneqTag::LossNonneg) &&
          tag.index == l)
        price += sol.in_duals_raw[static_cast<int>(i)];
    }
    if (price > 1e-5) CHECK(w - env <= 1e-5);
  }
}

TEST_CASE("native and polygonal cone modes agree closely") {
  CaseFile c = generate_five_bus_tight();
  AllocationMatrix A = build_policy(c.grid, c.agents, c.trades, c.policy, c.chi);
  ClearingOptions native;
  ClearingOptions poly;
  poly.soc_mode = SocMode::Polygon;
  poly.polygon_cuts = 16;
  ClearingSolution s1 = solve(assemble(c.grid, c.agents, c.trades, A, native));
  ClearingSolution s2 = solve(assemble(c.grid, c.agents, c.trades, A, poly));
  REQUIRE(s1.status == SolveStatus::Optimal);
  REQUIRE(s2.status == SolveStatus::Optimal);
  CHECK(s2.objective >= s1.objective - 1e-7);  // inner approximation
  CHECK(std::abs(s2.objective - s1.objective) <=
        5e-3 * (1.0 + std::abs(s1.objective)));
}

TEST_CASE("exchange price matches an objective finite difference") {
  CaseFile c = generate_five_bus();
  AllocationMatrix A = build_policy(c.grid, c.agents, c.trades, c.policy, c.chi);
  ClearingOptions opts;
  ClearingProblem prob = assemble(c.grid, c.agents, c.trades, A, opts);
  ClearingSolution sol = solve(prob);
  REQUIRE(sol.status == SolveStatus::Optimal);

  // Perturb the coupling row e_t - e_d = eps and finite-difference the
  // objective: dObj/deps = -y_exch = tau_e.
  const double eps = 1e-4;
  auto perturbed = [&](double e) {
    ClearingProblem p2 = prob;
    p2.program.b_eq[p2.eq_rows.exch0] = e;
    ClearingSolution s = solve(p2);
    REQUIRE(s.status == SolveStatus::Optimal);
    return s.objective;
  };
  const double fd = (perturbed(eps) - perturbed(-eps)) / (2 * eps);
  CHECK(fd == doctest::Approx(sol.tau_e[0]).epsilon(1e-4));
}

TEST_CASE("clearing optimum matches a 2-trade lattice search") {
  std::vector<Agent> agents = {{1, 1, 0.0, 15.0, 0, 0, 1.0, 10.0},
                               {2, 1, -10.0, 0.0, 0, 0, 0.5, 30.0},
                               {3, 1, -10.0, 0.0, 0, 0, 0.25, 25.0}};
  TradeGraph t = TradeGraph::from_pairs({{1, 2}, {1, 3}});
  ClearingProblem prob =
      assemble(bare_bus(), agents, t, empty_allocation(), no_grid_opts());
  ClearingSolution sol = solve(prob);
  REQUIRE(sol.status == SolveStatus::Optimal);

  auto total_cost = [&](double t1, double t2) {
    return cost_value_and_gradient(agents[0], t1 + t2).first +
           cost_value_and_gradient(agents[1], -t1).first +
           cost_value_and_gradient(agents[2], -t2).first;
  };
  double best = 1e100, bt1 = 0, bt2 = 0;
  for (int i = 0; i <= 100; ++i)
    for (int j = 0; j <= 100; ++j) {
      const double v = total_cost(0.1 * i, 0.1 * j);
      if (v < best) {
        best = v;
        bt1 = 0.1 * i;
        bt2 = 0.1 * j;
      }
    }
  CHECK(sol.objective <= best + 1e-9);
  CHECK(best - sol.objective <= 0.05);  // quadratic gap at 0.1 resolution
  CHECK(std::abs(sol.x[prob.vars.t(0)] - bt1) <= 0.1);
  CHECK(std::abs(sol.x[prob.vars.t(2)] - bt2) <= 0.1);
}

TEST_CASE("allocation matrix violating conservation is rejected") {
  CaseFile c = generate_five_bus();
  AllocationMatrix A = build_policy(c.grid, c.agents, c.trades, c.policy, c.chi);
  A.coeff(0, 0) += 0.25;  // break a column sum
  ClearingOptions opts;
  CHECK_THROWS(assemble(c.grid, c.agents, c.trades, A, opts));
}
