#include "p2pclear/clearing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace p2pclear {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument("clearing: " + msg);
}

// Sparse row under construction: (column, coefficient) terms and rhs.
struct Row {
  std::vector<std::pair<int, double>> terms;
  double rhs = 0.0;
  void add(int col, double val) {
    if (val != 0.0) terms.push_back({col, val});
  }
};

}  // namespace

std::vector<int> distribution_bus_slots(const GridModel& grid) {
  std::vector<int> out;
  for (int dso : grid.dso_ids())
    for (int bi : grid.distribution_bus_indices(dso)) out.push_back(bi);
  return out;
}

ClearingProblem assemble(const GridModel& grid,
                         const std::vector<Agent>& agents,
                         const TradeGraph& trades,
                         const AllocationMatrix& allocation,
                         const ClearingOptions& options) {
  grid.validate();
  Diagnostics diag = validate(agents, trades, grid);
  if (!diag.ok()) {
    std::ostringstream os;
    os << "invalid inputs:";
    for (const auto& e : diag.errors) os << "\n  " << e;
    fail(os.str());
  }

  ClearingProblem prob;
  prob.grid = grid;
  prob.agents = agents;
  prob.trades = trades;
  prob.allocation = allocation;
  prob.options = options;
  prob.warnings = diag.warnings;

  for (size_t i = 0; i < agents.size(); ++i) {
    if (trades.is_isolated(agents[i].id)) continue;
    prob.agent_slot[agents[i].id] = static_cast<int>(prob.cleared.size());
    prob.cleared.push_back(static_cast<int>(i));
  }
  if (trades.num_directed() == 0) fail("no trades to clear");

  const bool with_grid = options.include_grid;
  const bool with_losses = options.include_losses;

  VarMap& vm = prob.vars;
  vm.n_agents = static_cast<int>(prob.cleared.size());
  vm.n_pairs = trades.num_pairs();
  vm.n_directed = trades.num_directed();
  vm.n_ac = with_grid ? static_cast<int>(grid.ac_lines.size()) : 0;
  vm.n_dc = with_grid ? static_cast<int>(grid.hvdc_lines.size()) : 0;
  vm.n_lines = (with_grid && with_losses) ? grid.num_lossy_lines() : 0;
  vm.n_dist = with_grid ? static_cast<int>(grid.dist_lines.size()) : 0;
  vm.n_conn = with_grid ? static_cast<int>(grid.connection_points.size()) : 0;
  const std::vector<int> dbus = distribution_bus_slots(grid);
  vm.n_dbus = with_grid ? static_cast<int>(dbus.size()) : 0;

  if (with_losses && with_grid) {
    if (allocation.coeff.rows() != vm.n_directed ||
        allocation.coeff.cols() != grid.num_lossy_lines())
      fail("allocation matrix shape does not match trades/lines");
    for (int l = 0; l < allocation.coeff.cols(); ++l) {
      if (allocation.coeff.col(l).minCoeff() < -1e-12)
        fail("allocation matrix has negative entries");
      if (std::abs(allocation.coeff.col(l).sum() - 1.0) > 1e-8)
        fail("allocation column " + std::to_string(l) +
             " violates loss conservation (sum != 1)");
    }
  }

  int off = 0;
  auto place = [&off](int count) {
    int at = count > 0 ? off : -1;
    off += count;
    return at;
  };
  vm.p0 = place(vm.n_agents);
  vm.q0 = place(vm.n_agents);
  vm.t0 = place(vm.n_directed);
  vm.z0 = place(vm.n_directed);
  vm.w_trade0 = with_losses ? place(vm.n_directed) : -1;
  vm.f_ac0 = place(vm.n_ac);
  vm.f_dc0 = place(vm.n_dc);
  vm.w_line0 = place(vm.n_lines);
  vm.fp0 = place(vm.n_dist);
  vm.fq0 = place(vm.n_dist);
  vm.e_t0 = place(vm.n_conn);
  vm.e_d0 = place(vm.n_conn);
  vm.theta0 = place(vm.n_dbus);
  vm.v0 = place(vm.n_dbus);
  vm.total = off;

  // Lookup tables.
  std::map<int, int> dbus_slot;  // bus index -> theta/v slot
  for (size_t r = 0; r < dbus.size(); ++r)
    dbus_slot[dbus[r]] = static_cast<int>(r);
  std::map<int, std::vector<int>> trades_at_bus;  // bus index -> directed ids
  for (int d = 0; d < vm.n_directed; ++d) {
    const int id = trades.directed(d).first;
    for (const auto& a : agents)
      if (a.id == id) trades_at_bus[grid.bus_index(a.bus)].push_back(d);
  }

  // ---- Objective ----
  ConicProgram& cp = prob.program;
  cp.num_vars = vm.total;
  cp.Q = Eigen::MatrixXd::Zero(vm.total, vm.total);
  cp.c = Eigen::VectorXd::Zero(vm.total);
  for (int a = 0; a < vm.n_agents; ++a) {
    const Agent& ag = prob.cleared_agent(a);
    cp.Q(vm.p(a), vm.p(a)) = 2.0 * ag.cost_quad;
    cp.c[vm.p(a)] = ag.cost_lin;
  }

  // ---- Equality rows ----
  std::vector<Row> eq;
  EqRowMap& em = prob.eq_rows;
  auto begin_family = [&eq](int count) {
    return count > 0 ? static_cast<int>(eq.size()) : -1;
  };

  // Power balance per cleared agent: sum_d (t_d + w_d) - p_i = 0.
  em.balance0 = begin_family(vm.n_agents);
  for (int a = 0; a < vm.n_agents; ++a) {
    Row r;
    for (int d : trades.trades_of(prob.cleared_agent(a).id)) {
      r.add(vm.t(d), 1.0);
      if (with_losses) r.add(vm.w_trade(d), 1.0);
    }
    r.add(vm.p(a), -1.0);
    eq.push_back(std::move(r));
  }

  // Trade reciprocity per pair: t_ij + t_ji = 0.
  em.recip0 = begin_family(vm.n_pairs);
  for (int k = 0; k < vm.n_pairs; ++k) {
    Row r;
    r.add(vm.t(2 * k), 1.0);
    r.add(vm.t(2 * k + 1), 1.0);
    eq.push_back(std::move(r));
  }

  // Injection definition per directed trade: t + w - z = 0.
  em.inject0 = begin_family(vm.n_directed);
  for (int d = 0; d < vm.n_directed; ++d) {
    Row r;
    r.add(vm.t(d), 1.0);
    if (with_losses) r.add(vm.w_trade(d), 1.0);
    r.add(vm.z(d), -1.0);
    eq.push_back(std::move(r));
  }

  // Loss allocation per directed trade: w_d - sum_l A(d,l) w_l = 0.
  if (with_losses) {
    em.loss_link0 = begin_family(vm.n_directed);
    for (int d = 0; d < vm.n_directed; ++d) {
      Row r;
      r.add(vm.w_trade(d), 1.0);
      for (int l = 0; l < vm.n_lines; ++l)
        r.add(vm.w_line(l), -allocation.coeff(d, l));
      eq.push_back(std::move(r));
    }
  }

  if (with_grid) {
    prob.ptdf = build_ptdf(grid);
    prob.loss_dist = build_loss_distribution(grid);
    const double base = grid.base_mva;

    // TSO flows: f_k = sum_n N(k,n) (z at n - hvdc withdrawals - exchanges
    // - loss withdrawals).
    em.tso_flow0 = begin_family(vm.n_ac);
    for (int k = 0; k < vm.n_ac; ++k) {
      Row r;
      r.add(vm.f_ac(k), 1.0);
      for (int bi : grid.transmission_bus_indices()) {
        const double nk = prob.ptdf(k, bi);
        if (nk == 0.0) continue;
        if (auto it = trades_at_bus.find(bi); it != trades_at_bus.end())
          for (int d : it->second) r.add(vm.z(d), -nk);
        for (int h = 0; h < vm.n_dc; ++h) {
          const auto& hv = grid.hvdc_lines[h];
          if (grid.bus_index(hv.from) == bi) r.add(vm.f_dc(h), nk);
          if (grid.bus_index(hv.to) == bi) r.add(vm.f_dc(h), -nk);
        }
        for (int c = 0; c < vm.n_conn; ++c)
          if (grid.bus_index(grid.connection_points[c].transmission_bus) == bi)
            r.add(vm.e_t(c), nk);
        for (int l = 0; l < vm.n_lines; ++l) {
          const double dl = prob.loss_dist(bi, l);
          if (dl != 0.0) r.add(vm.w_line(l), nk * dl);
        }
      }
      eq.push_back(std::move(r));
    }

    // Linearized distribution flows, from-end convention.
    em.dso_fp0 = begin_family(vm.n_dist);
    for (int d = 0; d < vm.n_dist; ++d) {
      const auto& dl = grid.dist_lines[d];
      const int rf = dbus_slot.at(grid.bus_index(dl.from));
      const int rt = dbus_slot.at(grid.bus_index(dl.to));
      Row r;
      r.add(vm.fp(d), 1.0);
      r.add(vm.theta(rf), -base * dl.susceptance);
      r.add(vm.theta(rt), base * dl.susceptance);
      r.add(vm.v(rf), base * dl.conductance);
      r.add(vm.v(rt), -base * dl.conductance);
      eq.push_back(std::move(r));
    }
    em.dso_fq0 = begin_family(vm.n_dist);
    for (int d = 0; d < vm.n_dist; ++d) {
      const auto& dl = grid.dist_lines[d];
      const int rf = dbus_slot.at(grid.bus_index(dl.from));
      const int rt = dbus_slot.at(grid.bus_index(dl.to));
      Row r;
      r.add(vm.fq(d), 1.0);
      r.add(vm.v(rf), -base * dl.b_star());
      r.add(vm.v(rt), base * dl.b_star());
      r.add(vm.theta(rf), -base * dl.conductance);
      r.add(vm.theta(rt), base * dl.conductance);
      r.rhs = -base * dl.shunt_susceptance;
      eq.push_back(std::move(r));
    }

    // Active nodal balance per distribution bus: injections (trades and the
    // import at the feeder) equal line outflow plus loss withdrawals.
    em.dso_bal0 = begin_family(vm.n_dbus);
    for (int rslot = 0; rslot < vm.n_dbus; ++rslot) {
      const int bi = dbus[rslot];
      Row r;
      if (auto it = trades_at_bus.find(bi); it != trades_at_bus.end())
        for (int d : it->second) r.add(vm.z(d), 1.0);
      for (int c = 0; c < vm.n_conn; ++c)
        if (grid.bus_index(grid.connection_points[c].feeder_bus) == bi)
          r.add(vm.e_d(c), 1.0);
      for (int d = 0; d < vm.n_dist; ++d) {
        const auto& dl = grid.dist_lines[d];
        if (grid.bus_index(dl.from) == bi) r.add(vm.fp(d), -1.0);
        if (grid.bus_index(dl.to) == bi) r.add(vm.fp(d), 1.0);
      }
      for (int l = 0; l < vm.n_lines; ++l) {
        const double dl = prob.loss_dist(bi, l);
        if (dl != 0.0) r.add(vm.w_line(l), -dl);
      }
      eq.push_back(std::move(r));
    }

    // TSO-DSO coupling per connection point: e_t = e_d.
    em.exch0 = begin_family(vm.n_conn);
    for (int c = 0; c < vm.n_conn; ++c) {
      Row r;
      r.add(vm.e_t(c), 1.0);
      r.add(vm.e_d(c), -1.0);
      eq.push_back(std::move(r));
    }

    // Reactive balance per distribution bus. The to-end outflow of a line is
    // -f_q - 2*b0 (line charging), so the constants move to the rhs.
    em.react0 = begin_family(vm.n_dbus);
    for (int rslot = 0; rslot < vm.n_dbus; ++rslot) {
      const int bi = dbus[rslot];
      Row r;
      double charging = 0.0;
      for (int d = 0; d < vm.n_dist; ++d) {
        const auto& dl = grid.dist_lines[d];
        if (grid.bus_index(dl.from) == bi) r.add(vm.fq(d), 1.0);
        if (grid.bus_index(dl.to) == bi) {
          r.add(vm.fq(d), -1.0);
          charging += 2.0 * base * dl.shunt_susceptance;
        }
      }
      for (int a = 0; a < vm.n_agents; ++a)
        if (grid.bus_index(prob.cleared_agent(a).bus) == bi)
          r.add(vm.q(a), -1.0);
      r.rhs = charging;
      eq.push_back(std::move(r));
    }

    // Angle reference per DSO: feeder angle pinned to zero.
    const auto dsos = grid.dso_ids();
    em.theta_ref0 = begin_family(static_cast<int>(dsos.size()));
    for (int dso : dsos) {
      Row r;
      const int feeder = grid.bus_index(grid.primary_connection(dso).feeder_bus);
      r.add(vm.theta(dbus_slot.at(feeder)), 1.0);
      eq.push_back(std::move(r));
    }
  }

  em.total = static_cast<int>(eq.size());
  cp.A_eq = Eigen::MatrixXd::Zero(em.total, vm.total);
  cp.b_eq = Eigen::VectorXd::Zero(em.total);
  for (int i = 0; i < em.total; ++i) {
    for (auto [col, val] : eq[i].terms) cp.A_eq(i, col) += val;
    cp.b_eq[i] = eq[i].rhs;
  }

  // ---- Inequality rows ----
  std::vector<Row> in;
  std::vector<IneqTag>& tags = prob.ineq_tags;
  auto add_in = [&](Row r, IneqTag tag) {
    in.push_back(std::move(r));
    tags.push_back(tag);
  };
  auto bound_pair = [&](int var, double lo, double hi, IneqTag::Kind up,
                        IneqTag::Kind down, int idx) {
    if (std::isfinite(hi)) {
      Row r;
      r.add(var, 1.0);
      r.rhs = hi;
      add_in(std::move(r), {up, idx, 0});
    }
    if (std::isfinite(lo)) {
      Row r;
      r.add(var, -1.0);
      r.rhs = -lo;
      add_in(std::move(r), {down, idx, 0});
    }
  };

  for (int a = 0; a < vm.n_agents; ++a) {
    const Agent& ag = prob.cleared_agent(a);
    bound_pair(vm.p(a), ag.p_min, ag.p_max, IneqTag::PUpper, IneqTag::PLower, a);
    bound_pair(vm.q(a), ag.q_min, ag.q_max, IneqTag::QUpper, IneqTag::QLower, a);
  }

  if (with_grid) {
    for (int k = 0; k < vm.n_ac; ++k)
      bound_pair(vm.f_ac(k), -grid.ac_lines[k].capacity,
                 grid.ac_lines[k].capacity, IneqTag::AcFlowUpper,
                 IneqTag::AcFlowLower, k);
    for (int h = 0; h < vm.n_dc; ++h)
      bound_pair(vm.f_dc(h), -grid.hvdc_lines[h].capacity,
                 grid.hvdc_lines[h].capacity, IneqTag::HvdcUpper,
                 IneqTag::HvdcLower, h);

    if (with_losses) {
      // Loss envelope, two inequalities per segment, plus w >= 0.
      const int n_ac_total = static_cast<int>(grid.ac_lines.size());
      for (int l = 0; l < vm.n_lines; ++l) {
        const bool is_ac = l < n_ac_total;
        const int fvar = is_ac ? vm.f_ac(l) : vm.fp(l - n_ac_total);
        const auto& segs = is_ac ? grid.ac_lines[l].loss
                                 : grid.dist_lines[l - n_ac_total].loss;
        for (size_t s = 0; s < segs.size(); ++s) {
          Row rp;
          rp.add(fvar, segs[s].slope);
          rp.add(vm.w_line(l), -1.0);
          rp.rhs = -segs[s].intercept;
          add_in(std::move(rp), {IneqTag::LossEnvPos, l, static_cast<int>(s)});
          Row rn;
          rn.add(fvar, -segs[s].slope);
          rn.add(vm.w_line(l), -1.0);
          rn.rhs = -segs[s].intercept;
          add_in(std::move(rn), {IneqTag::LossEnvNeg, l, static_cast<int>(s)});
        }
        Row rz;
        rz.add(vm.w_line(l), -1.0);
        add_in(std::move(rz), {IneqTag::LossNonneg, l, 0});
      }
    }

    for (int rslot = 0; rslot < vm.n_dbus; ++rslot) {
      const Bus& b = grid.buses[dbus[rslot]];
      bound_pair(vm.theta(rslot), b.theta_min, b.theta_max, IneqTag::ThetaUpper,
                 IneqTag::ThetaLower, rslot);
      bound_pair(vm.v(rslot), b.v_min, b.v_max, IneqTag::VUpper, IneqTag::VLower,
                 rslot);
    }

    // Apparent-power discs per distribution line.
    for (int d = 0; d < vm.n_dist; ++d)
      cp.discs.push_back(
          {vm.fp(d), vm.fq(d), grid.dist_lines[d].apparent_capacity});
  }

  cp.A_in = Eigen::MatrixXd::Zero(static_cast<int>(in.size()), vm.total);
  cp.b_in = Eigen::VectorXd::Zero(static_cast<int>(in.size()));
  for (size_t i = 0; i < in.size(); ++i) {
    for (auto [col, val] : in[i].terms)
      cp.A_in(static_cast<int>(i), col) += val;
    cp.b_in[static_cast<int>(i)] = in[i].rhs;
  }

  cp.validate();
  return prob;
}

ClearingSolution solve(const ClearingProblem& problem) {
  ReferenceIpm backend;
  return solve(problem, backend);
}

ClearingSolution solve(const ClearingProblem& problem,
                       const SolverBackend& backend) {
  const VarMap& vm = problem.vars;
  ConicProgram program = problem.program;
  const bool polygonal = !program.discs.empty() &&
                         (problem.options.soc_mode == SocMode::Polygon ||
                          !backend.supports_native_discs());
  const int n_discs = static_cast<int>(program.discs.size());
  if (polygonal)
    program = polygonalize_cones(program, problem.options.polygon_cuts);

  SolveResult res = backend.solve(program, problem.options.tol);

  ClearingSolution sol;
  sol.status = res.status;
  sol.objective = res.objective;
  sol.iterations = res.iterations;
  sol.message = res.message;
  sol.x = res.x;
  sol.eq_duals_raw = res.eq_duals;
  sol.in_duals_raw = res.in_duals;
  sol.disc_duals_raw = res.disc_duals;
  if (!sol.optimal()) return sol;

  const EqRowMap& em = problem.eq_rows;
  const Eigen::VectorXd& y = res.eq_duals;

  sol.pi.resize(vm.n_agents);
  for (int a = 0; a < vm.n_agents; ++a) sol.pi[a] = y[em.balance0 + a];
  sol.tau_t.resize(vm.n_pairs);
  for (int k = 0; k < vm.n_pairs; ++k) sol.tau_t[k] = -y[em.recip0 + k];
  sol.tau_z.resize(vm.n_directed);
  for (int d = 0; d < vm.n_directed; ++d) sol.tau_z[d] = -y[em.inject0 + d];
  if (em.loss_link0 >= 0) {
    sol.tau_l.resize(vm.n_directed);
    for (int d = 0; d < vm.n_directed; ++d)
      sol.tau_l[d] = -y[em.loss_link0 + d];
  }
  if (em.exch0 >= 0) {
    sol.tau_e.resize(vm.n_conn);
    for (int c = 0; c < vm.n_conn; ++c) sol.tau_e[c] = -y[em.exch0 + c];
  }
  if (em.react0 >= 0) {
    sol.lambda.resize(vm.n_dbus);
    for (int r = 0; r < vm.n_dbus; ++r) sol.lambda[r] = y[em.react0 + r];
  }
  if (em.tso_flow0 >= 0) {
    sol.phi.resize(vm.n_ac);
    for (int k = 0; k < vm.n_ac; ++k) sol.phi[k] = y[em.tso_flow0 + k];
  }

  if (problem.options.include_grid) {
    const int n_tso = vm.n_ac + vm.n_dc;
    sol.mu_upper = Eigen::VectorXd::Zero(n_tso);
    sol.mu_lower = Eigen::VectorXd::Zero(n_tso);
    for (size_t i = 0; i < problem.ineq_tags.size(); ++i) {
      const IneqTag& tag = problem.ineq_tags[i];
      const double mu = res.in_duals[static_cast<int>(i)];
      switch (tag.kind) {
        case IneqTag::AcFlowUpper: sol.mu_upper[tag.index] = mu; break;
        case IneqTag::AcFlowLower: sol.mu_lower[tag.index] = mu; break;
        case IneqTag::HvdcUpper: sol.mu_upper[vm.n_ac + tag.index] = mu; break;
        case IneqTag::HvdcLower: sol.mu_lower[vm.n_ac + tag.index] = mu; break;
        default: break;
      }
    }
    if (n_discs > 0) {
      sol.eta_cone = Eigen::VectorXd::Zero(n_discs);
      if (polygonal) {
        const int cuts = problem.options.polygon_cuts;
        const int base_rows = static_cast<int>(problem.program.A_in.rows());
        for (int d = 0; d < n_discs; ++d)
          sol.eta_cone[d] =
              res.in_duals.segment(base_rows + d * cuts, cuts).sum();
      } else {
        sol.eta_cone = res.disc_duals;
      }
    }
  }
  return sol;
}

PriceTables extract_prices(const ClearingProblem& problem,
                           const ClearingSolution& solution) {
  if (!solution.optimal())
    throw std::logic_error(
        std::string("extract_prices: solution status is ") +
        to_string(solution.status));
  PriceTables t;
  for (int a = 0; a < problem.vars.n_agents; ++a)
    t.agent_ids.push_back(problem.cleared_agent(a).id);
  t.pi = solution.pi;
  t.pairs = problem.trades.pairs();
  t.tau_t = solution.tau_t;
  for (int d = 0; d < problem.vars.n_directed; ++d)
    t.directed.push_back(problem.trades.directed(d));
  t.tau_z = solution.tau_z;
  t.tau_l = solution.tau_l;
  for (const auto& c : problem.grid.connection_points)
    t.connection_ids.push_back(c.id);
  t.tau_e = solution.tau_e;
  for (int bi : distribution_bus_slots(problem.grid))
    t.dso_bus_ids.push_back(problem.grid.buses[bi].id);
  t.lambda = solution.lambda;
  return t;
}

double KktReport::max_residual() const {
  return std::max({trade_price, loss_price, grid_price, stationarity});
}

KktReport verify_kkt(const ClearingProblem& problem,
                     const ClearingSolution& solution, double tol) {
  if (!solution.optimal())
    throw std::logic_error("verify_kkt: solution not optimal");
  KktReport rep;
  rep.tolerance = tol;
  const VarMap& vm = problem.vars;

  for (int d = 0; d < vm.n_directed; ++d) {
    const int a = problem.trade_from_slot(d);
    const int pair = problem.trades.pair_of(d);
    rep.trade_price =
        std::max(rep.trade_price, std::abs(solution.pi[a] - solution.tau_t[pair] -
                                           solution.tau_z[d]));
    if (solution.tau_l.size())
      rep.loss_price =
          std::max(rep.loss_price, std::abs(solution.pi[a] - solution.tau_z[d] -
                                            solution.tau_l[d]));
  }

  if (problem.options.include_grid && solution.phi.size()) {
    for (int d = 0; d < vm.n_directed; ++d) {
      const Agent& ag =
          problem.agents[problem.cleared[problem.trade_from_slot(d)]];
      const int bi = problem.grid.bus_index(ag.bus);
      if (problem.grid.buses[bi].level != BusLevel::Transmission) continue;
      const double nodal = problem.ptdf.col(bi).dot(solution.phi);
      rep.grid_price =
          std::max(rep.grid_price, std::abs(solution.tau_z[d] - nodal));
    }
  }

  for (int a = 0; a < vm.n_agents; ++a) {
    const Agent& ag = problem.cleared_agent(a);
    const double p = solution.x[vm.p(a)];
    const double margin = 1e-3 * (1.0 + std::abs(ag.p_max) + std::abs(ag.p_min));
    if (p - ag.p_min < margin || ag.p_max - p < margin) continue;
    const double grad = cost_value_and_gradient(ag, p).second;
    rep.stationarity =
        std::max(rep.stationarity, std::abs(grad - solution.pi[a]));
  }
  return rep;
}

}  // namespace p2pclear
