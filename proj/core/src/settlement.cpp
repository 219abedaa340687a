#include "p2pclear/settlement.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace p2pclear {

namespace {

void require_optimal(const ClearingSolution& s, const char* who) {
  if (!s.optimal())
    throw std::logic_error(std::string(who) + ": solution status is " +
                           to_string(s.status));
}

}  // namespace

Eigen::VectorXd payments(const ClearingProblem& problem,
                         const ClearingSolution& solution) {
  require_optimal(solution, "payments");
  const VarMap& vm = problem.vars;
  Eigen::VectorXd c = Eigen::VectorXd::Zero(vm.n_agents);
  for (int d = 0; d < vm.n_directed; ++d) {
    const int a = problem.trade_from_slot(d);
    const double t = solution.x[vm.t(d)];
    const double price =
        solution.tau_t[problem.trades.pair_of(d)] + solution.tau_z[d];
    c[a] -= t * price;
  }
  return c;
}

DeltaPayments delta_payments(const ClearingProblem& problem,
                             const ClearingSolution& solution,
                             const ClearingProblem& ref_problem,
                             const ClearingSolution& ref_solution) {
  require_optimal(solution, "delta_payments");
  require_optimal(ref_solution, "delta_payments (reference)");
  if (problem.cleared.size() != ref_problem.cleared.size())
    throw std::invalid_argument("delta_payments: agent sets differ");
  for (size_t i = 0; i < problem.cleared.size(); ++i)
    if (problem.cleared_agent(static_cast<int>(i)).id !=
        ref_problem.cleared_agent(static_cast<int>(i)).id)
      throw std::invalid_argument("delta_payments: agent sets differ");

  const Eigen::VectorXd c = payments(problem, solution);
  const Eigen::VectorXd c0 = payments(ref_problem, ref_solution);
  DeltaPayments out;
  out.delta = c - c0;
  out.pct.resize(c.size());
  const double zero_tol =
      1e-9 * (1.0 + c0.lpNorm<Eigen::Infinity>());  // solver noise floor
  for (int i = 0; i < c.size(); ++i) {
    if (std::abs(c0[i]) > zero_tol)
      out.pct[i] = (c[i] - c0[i]) / std::abs(c0[i]);
    else
      out.pct[i] = std::nullopt;
  }
  return out;
}

std::vector<std::optional<double>> weighted_distance(
    const ClearingProblem& problem, const ClearingSolution& solution) {
  require_optimal(solution, "weighted_distance");
  const VarMap& vm = problem.vars;
  const GridModel& grid = problem.grid;
  const Eigen::MatrixXd tf = build_modified_tf(grid, build_ptdf(grid));

  std::vector<std::optional<double>> out(vm.n_agents);
  for (int a = 0; a < vm.n_agents; ++a) {
    const Agent& ag = problem.cleared_agent(a);
    double num_pos = 0.0, den_pos = 0.0, num_neg = 0.0, den_neg = 0.0;
    for (int d : problem.trades.trades_of(ag.id)) {
      const int partner = problem.trades.directed(d).second;
      const Agent& pa =
          problem.agents[problem.cleared[problem.slot_of(partner)]];
      const double dist = pair_distance(grid, tf, ag.bus, pa.bus);
      const double t = solution.x[vm.t(d)];
      if (t > 0.0) {
        num_pos += dist * t;
        den_pos += t;
      } else if (t < 0.0) {
        num_neg += dist * (-t);
        den_neg += -t;
      }
    }
    if (den_pos > 1e-12)
      out[a] = num_pos / den_pos;
    else if (den_neg > 1e-12)
      out[a] = num_neg / den_neg;
    else
      out[a] = std::nullopt;
  }
  return out;
}

std::vector<LineRecord> line_loading(const ClearingProblem& problem,
                                     const ClearingSolution& solution) {
  require_optimal(solution, "line_loading");
  if (!problem.options.include_grid)
    throw std::logic_error("line_loading: grid was not modeled; use "
                           "implied_line_loading");
  const VarMap& vm = problem.vars;
  const GridModel& grid = problem.grid;
  std::vector<LineRecord> out;
  for (int k = 0; k < vm.n_ac; ++k) {
    LineRecord r;
    r.name = grid.line_name(k);
    r.flow = solution.x[vm.f_ac(k)];
    r.limit = grid.ac_lines[k].capacity;
    r.loading = std::abs(r.flow) / r.limit;
    r.loss = vm.n_lines ? solution.x[vm.w_line(k)] : 0.0;
    out.push_back(r);
  }
  for (int h = 0; h < vm.n_dc; ++h) {
    LineRecord r;
    const auto& hv = grid.hvdc_lines[h];
    r.name = "hvdc:" + std::to_string(hv.from) + "-" + std::to_string(hv.to);
    r.flow = solution.x[vm.f_dc(h)];
    r.limit = hv.capacity;
    r.loading = std::abs(r.flow) / r.limit;
    out.push_back(r);
  }
  const int n_ac_total = static_cast<int>(grid.ac_lines.size());
  for (int d = 0; d < vm.n_dist; ++d) {
    LineRecord r;
    r.name = grid.line_name(n_ac_total + d);
    const double fp = solution.x[vm.fp(d)];
    const double fq = solution.x[vm.fq(d)];
    r.flow = fp;
    r.limit = grid.dist_lines[d].apparent_capacity;
    r.loading = std::hypot(fp, fq) / r.limit;
    r.loss = vm.n_lines ? solution.x[vm.w_line(n_ac_total + d)] : 0.0;
    out.push_back(r);
  }
  return out;
}

std::vector<LineRecord> implied_line_loading(const ClearingProblem& problem,
                                             const ClearingSolution& solution) {
  require_optimal(solution, "implied_line_loading");
  const VarMap& vm = problem.vars;
  const GridModel& grid = problem.grid;
  const double base = grid.base_mva;

  // Net positions: p per bus; per-DSO totals enter at the primary connection.
  const int nb = static_cast<int>(grid.buses.size());
  Eigen::VectorXd inj = Eigen::VectorXd::Zero(nb);
  Eigen::VectorXd qinj = Eigen::VectorXd::Zero(nb);
  for (int a = 0; a < vm.n_agents; ++a) {
    const Agent& ag = problem.cleared_agent(a);
    inj[grid.bus_index(ag.bus)] += solution.x[vm.p(a)];
    qinj[grid.bus_index(ag.bus)] += solution.x[vm.q(a)];
  }
  std::map<int, double> dso_net;  // dso id -> net active injection
  for (int dso : grid.dso_ids()) {
    double net = 0.0;
    for (int bi : grid.distribution_bus_indices(dso)) net += inj[bi];
    dso_net[dso] = net;
  }

  std::vector<LineRecord> out;

  // Transmission: PTDF applied to nodal nets, DSOs collapsed onto their
  // connection bus. HVDC setpoints default to zero without an optimizer.
  Eigen::VectorXd tnet = Eigen::VectorXd::Zero(nb);
  for (int bi : grid.transmission_bus_indices()) tnet[bi] = inj[bi];
  for (const auto& [dso, net] : dso_net) {
    const auto& conn = grid.primary_connection(dso);
    tnet[grid.bus_index(conn.transmission_bus)] += net;
  }
  const Eigen::MatrixXd N = build_ptdf(grid);
  for (int k = 0; k < static_cast<int>(grid.ac_lines.size()); ++k) {
    LineRecord r;
    r.name = grid.line_name(k);
    r.flow = N.row(k).dot(tnet);
    r.limit = grid.ac_lines[k].capacity;
    r.loading = std::abs(r.flow) / r.limit;
    out.push_back(r);
  }
  for (const auto& hv : grid.hvdc_lines) {
    LineRecord r;
    r.name = "hvdc:" + std::to_string(hv.from) + "-" + std::to_string(hv.to);
    r.flow = 0.0;
    r.limit = hv.capacity;
    r.loading = 0.0;
    out.push_back(r);
  }

  // Distribution: solve the linear flow model per DSO in least squares
  // (theta_ref = 0, v_feeder = 1) and evaluate the line expressions.
  for (int dso : grid.dso_ids()) {
    const std::vector<int> dbus = grid.distribution_bus_indices(dso);
    std::map<int, int> slot;
    for (size_t i = 0; i < dbus.size(); ++i)
      slot[dbus[i]] = static_cast<int>(i);
    const int nr = static_cast<int>(dbus.size());
    std::vector<int> lines;
    for (int li = 0; li < static_cast<int>(grid.dist_lines.size()); ++li)
      if (grid.bus(grid.dist_lines[li].from).so_id == dso) lines.push_back(li);

    const int feeder = grid.bus_index(grid.primary_connection(dso).feeder_bus);
    const double import = -dso_net.at(dso);

    // Unknowns: theta then v.
    const int nvar = 2 * nr;
    const int neq = 2 * nr + 2;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(neq, nvar);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(neq);
    auto th = [&](int bi) { return slot.at(bi); };
    auto vv = [&](int bi) { return nr + slot.at(bi); };

    int row = 0;
    for (int bi : dbus) {  // active balance
      for (int li : lines) {
        const auto& dl = grid.dist_lines[li];
        const int fi = grid.bus_index(dl.from), ti = grid.bus_index(dl.to);
        const double sg = (fi == bi) ? 1.0 : (ti == bi ? -1.0 : 0.0);
        if (sg == 0.0) continue;
        A(row, th(fi)) += sg * base * dl.susceptance;
        A(row, th(ti)) -= sg * base * dl.susceptance;
        A(row, vv(fi)) -= sg * base * dl.conductance;
        A(row, vv(ti)) += sg * base * dl.conductance;
      }
      b[row] = inj[bi] + (bi == feeder ? import : 0.0);
      ++row;
    }
    for (int bi : dbus) {  // reactive balance
      for (int li : lines) {
        const auto& dl = grid.dist_lines[li];
        const int fi = grid.bus_index(dl.from), ti = grid.bus_index(dl.to);
        const double sg = (fi == bi) ? 1.0 : (ti == bi ? -1.0 : 0.0);
        if (sg == 0.0) continue;
        A(row, vv(fi)) += sg * base * dl.b_star();
        A(row, vv(ti)) -= sg * base * dl.b_star();
        A(row, th(fi)) += sg * base * dl.conductance;
        A(row, th(ti)) -= sg * base * dl.conductance;
        b[row] += base * dl.shunt_susceptance;  // charging, both ends
      }
      b[row] += qinj[bi];
      ++row;
    }
    A(row, th(feeder)) = 1.0;
    b[row++] = 0.0;
    A(row, vv(feeder)) = 1.0;
    b[row++] = 1.0;

    Eigen::VectorXd sol_tv = A.colPivHouseholderQr().solve(b);
    for (int li : lines) {
      const auto& dl = grid.dist_lines[li];
      const int fi = grid.bus_index(dl.from), ti = grid.bus_index(dl.to);
      const double dth = sol_tv[th(fi)] - sol_tv[th(ti)];
      const double dv = sol_tv[vv(fi)] - sol_tv[vv(ti)];
      const double fp = base * (dl.susceptance * dth - dl.conductance * dv);
      const double fq = base * (dl.b_star() * dv + dl.conductance * dth) -
                        base * dl.shunt_susceptance;
      LineRecord r;
      r.name = grid.line_name(static_cast<int>(grid.ac_lines.size()) + li);
      r.flow = fp;
      r.limit = dl.apparent_capacity;
      r.loading = std::hypot(fp, fq) / r.limit;
      out.push_back(r);
    }
  }
  return out;
}

SettlementReport build_report(const ClearingProblem& problem,
                              const ClearingSolution& solution,
                              const ClearingProblem* ref_problem,
                              const ClearingSolution* ref_solution) {
  require_optimal(solution, "build_report");
  const VarMap& vm = problem.vars;
  const GridModel& grid = problem.grid;

  SettlementReport rep;
  const Eigen::VectorXd C = payments(problem, solution);
  DeltaPayments dp;
  const bool with_ref = ref_problem && ref_solution;
  if (with_ref)
    dp = delta_payments(problem, solution, *ref_problem, *ref_solution);
  const auto dist = weighted_distance(problem, solution);

  for (int a = 0; a < vm.n_agents; ++a) {
    const Agent& ag = problem.cleared_agent(a);
    AgentSettlement s;
    s.agent_id = ag.id;
    s.bus = ag.bus;
    s.payment = C[a];
    if (with_ref) {
      s.delta = dp.delta[a];
      s.delta_pct = dp.pct[a];
    }
    if (vm.w_trade0 >= 0)
      for (int d : problem.trades.trades_of(ag.id))
        s.allocated_losses += solution.x[vm.w_trade(d)];
    s.distance = dist[a];
    s.pi = solution.pi[a];
    rep.agents.push_back(s);
  }

  // Per-SO books keyed by the SO of each directed trade's first agent.
  std::map<int, SoSettlement> so;
  so[0].so_id = 0;
  for (int dso : grid.dso_ids()) so[dso].so_id = dso;
  for (int d = 0; d < vm.n_directed; ++d) {
    const Agent& ag = problem.agents[problem.cleared[problem.trade_from_slot(d)]];
    SoSettlement& s = so[grid.bus(ag.bus).so_id];
    const double z = solution.x[vm.z(d)];
    const double w = vm.w_trade0 >= 0 ? solution.x[vm.w_trade(d)] : 0.0;
    const double tau_z = solution.tau_z[d];
    const double tau_l = solution.tau_l.size() ? solution.tau_l[d] : 0.0;
    s.grid_revenue += z * tau_z + w * tau_l;
    s.loss_procurement += w * (tau_z + tau_l);
  }
  if (vm.n_lines)
    for (int l = 0; l < vm.n_lines; ++l)
      so[grid.line_owner(l)].total_losses += solution.x[vm.w_line(l)];
  if (vm.n_conn && solution.tau_e.size())
    for (int c = 0; c < vm.n_conn; ++c) {
      const double flow = solution.tau_e[c] * solution.x[vm.e_t(c)];
      so[0].exchange_net += flow;
      so[grid.connection_points[c].dso_id].exchange_net -= flow;
    }
  double so_total = 0.0;
  for (auto& [id, s] : so) {
    s.net_revenue = s.grid_revenue - s.loss_procurement + s.exchange_net;
    so_total += s.net_revenue;
    rep.operators.push_back(s);
  }

  if (problem.options.include_grid)
    rep.lines = line_loading(problem, solution);
  else
    rep.lines = implied_line_loading(problem, solution);

  rep.money_residual = std::abs(C.sum() + so_total);
  return rep;
}

}  // namespace p2pclear
