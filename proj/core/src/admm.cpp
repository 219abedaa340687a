#include "p2pclear/admm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace p2pclear {

namespace {

enum class Family { Trade, TradeLoss, Injection, LineLoss, Exchange, Reactive };

struct Copy {
  int local = -1;   // variable index in the actor program
  int global = -1;  // index into the consensus vector
  double sign = 1.0;
  double rho = 1.0;
};

struct Actor {
  ConicProgram program;     // penalty terms are refreshed every round
  Eigen::VectorXd base_c;   // objective without penalties
  Eigen::MatrixXd base_Qd;  // diagonal objective without penalties
  std::vector<Copy> copies;
  Eigen::VectorXd u;        // scaled duals, one per copy
  Eigen::VectorXd x;        // last local solution
  double pi = 0.0;          // balance dual (prosumers)
  int agent_slot = -1;      // prosumers only
  int balance_row = -1;
};

// Layout of the consensus vector.
struct GlobalMap {
  int t0 = -1, w0 = -1, z0 = -1, wl0 = -1, e0 = -1, q0 = -1, fq0 = -1;
  int n_pairs = 0, n_directed = 0, n_lines = 0, n_conn = 0, n_dist = 0;
  std::map<int, int> q_slot;  // cleared agent slot -> q-consensus index
  int total = 0;
};

double trade_sign(int directed) { return directed % 2 == 0 ? 1.0 : -1.0; }

}  // namespace

AdmmResult admm_run(const ClearingProblem& prob, const AdmmOptions& opt) {
  const VarMap& vm = prob.vars;
  const GridModel& grid = prob.grid;
  const bool with_grid = prob.options.include_grid;
  const bool with_losses = prob.options.include_losses;
  const double base = grid.base_mva;
  ReferenceIpm ipm;

  // ---- Consensus layout ----
  GlobalMap gm;
  gm.n_pairs = vm.n_pairs;
  gm.n_directed = vm.n_directed;
  gm.n_lines = with_grid && with_losses ? grid.num_lossy_lines() : 0;
  gm.n_conn = with_grid ? static_cast<int>(grid.connection_points.size()) : 0;
  gm.n_dist = with_grid ? static_cast<int>(grid.dist_lines.size()) : 0;
  int off = 0;
  gm.t0 = off;
  off += gm.n_pairs;
  if (with_losses) {
    gm.w0 = off;
    off += gm.n_directed;
  }
  if (with_grid) {
    gm.z0 = off;
    off += gm.n_directed;
  }
  if (gm.n_lines) {
    gm.wl0 = off;
    off += gm.n_lines;
  }
  if (gm.n_conn) {
    gm.e0 = off;
    off += gm.n_conn;
  }
  if (with_grid) {
    gm.fq0 = off;
    off += gm.n_dist;
    gm.q0 = off;
    for (int a = 0; a < vm.n_agents; ++a) {
      const Agent& ag = prob.cleared_agent(a);
      if (grid.bus(ag.bus).level == BusLevel::Distribution)
        gm.q_slot[a] = off++;
    }
  }
  gm.total = off;

  const double r_t = opt.rho * opt.weight_trade;
  const double r_w = opt.rho * opt.weight_trade_loss;
  const double r_z = opt.rho * opt.weight_injection;
  const double r_wl = opt.rho * opt.weight_line_loss;
  const double r_e = opt.rho * opt.weight_exchange;
  const double r_q = opt.rho * opt.weight_reactive;

  // ---- Prosumer subproblems ----
  std::vector<Actor> actors;
  for (int a = 0; a < vm.n_agents; ++a) {
    const Agent& ag = prob.cleared_agent(a);
    const std::vector<int> mine = prob.trades.trades_of(ag.id);
    const int deg = static_cast<int>(mine.size());
    Actor act;
    act.agent_slot = a;
    const int n = 2 + deg + (with_losses ? deg : 0);  // p, q, t..., w...
    ConicProgram& cp = act.program;
    cp.num_vars = n;
    cp.Q = Eigen::MatrixXd::Zero(n, n);
    cp.c = Eigen::VectorXd::Zero(n);
    cp.Q(0, 0) = 2.0 * ag.cost_quad;
    cp.c[0] = ag.cost_lin;

    cp.A_eq = Eigen::MatrixXd::Zero(1, n);
    cp.b_eq = Eigen::VectorXd::Zero(1);
    act.balance_row = 0;
    cp.A_eq(0, 0) = -1.0;
    for (int k = 0; k < deg; ++k) {
      cp.A_eq(0, 2 + k) = 1.0;
      if (with_losses) cp.A_eq(0, 2 + deg + k) = 1.0;
    }

    std::vector<std::pair<Eigen::VectorXd, double>> rows;
    auto bound = [&](int var, double lo, double hi) {
      if (std::isfinite(hi)) {
        Eigen::VectorXd r = Eigen::VectorXd::Zero(n);
        r[var] = 1.0;
        rows.push_back({r, hi});
      }
      if (std::isfinite(lo)) {
        Eigen::VectorXd r = Eigen::VectorXd::Zero(n);
        r[var] = -1.0;
        rows.push_back({r, -lo});
      }
    };
    bound(0, ag.p_min, ag.p_max);
    bound(1, ag.q_min, ag.q_max);
    for (int k = 0; k < deg && with_losses; ++k)
      bound(2 + deg + k, 0.0, std::numeric_limits<double>::infinity());
    cp.A_in = Eigen::MatrixXd::Zero(static_cast<int>(rows.size()), n);
    cp.b_in = Eigen::VectorXd::Zero(static_cast<int>(rows.size()));
    for (size_t i = 0; i < rows.size(); ++i) {
      cp.A_in.row(static_cast<int>(i)) = rows[i].first.transpose();
      cp.b_in[static_cast<int>(i)] = rows[i].second;
    }

    for (int k = 0; k < deg; ++k) {
      const int d = mine[k];
      act.copies.push_back(
          {2 + k, gm.t0 + prob.trades.pair_of(d), trade_sign(d), r_t});
      if (with_losses)
        act.copies.push_back({2 + deg + k, gm.w0 + d, 1.0, r_w});
    }
    if (with_grid && gm.q_slot.count(a))
      act.copies.push_back({1, gm.q_slot.at(a), 1.0, r_q});
    actors.push_back(std::move(act));
  }

  // Directed trades grouped by the first agent's bus.
  std::map<int, std::vector<int>> trades_at_bus;
  for (int d = 0; d < vm.n_directed; ++d) {
    const Agent& ag = prob.agents[prob.cleared[prob.trade_from_slot(d)]];
    trades_at_bus[grid.bus_index(ag.bus)].push_back(d);
  }

  // ---- TSO subproblem ----
  if (with_grid) {
    const int n_ac = static_cast<int>(grid.ac_lines.size());
    const int n_dc = static_cast<int>(grid.hvdc_lines.size());
    std::vector<int> tso_trades;
    for (int bi : grid.transmission_bus_indices())
      if (auto it = trades_at_bus.find(bi); it != trades_at_bus.end())
        for (int d : it->second) tso_trades.push_back(d);
    const int nz = static_cast<int>(tso_trades.size());
    const int n_conn = gm.n_conn;
    const int nwl = with_losses ? n_ac : 0;

    Actor act;
    // layout: f_ac, f_dc, wl(ac), z(tso trades), e_t
    const int f0 = 0, fdc0 = n_ac, wl0 = n_ac + n_dc, z0 = wl0 + nwl,
              e0 = z0 + nz;
    const int n = e0 + n_conn;
    ConicProgram& cp = act.program;
    cp.num_vars = n;
    cp.Q = Eigen::MatrixXd::Zero(n, n);
    cp.c = Eigen::VectorXd::Zero(n);

    std::map<int, int> zpos;
    for (int i = 0; i < nz; ++i) zpos[tso_trades[i]] = z0 + i;

    cp.A_eq = Eigen::MatrixXd::Zero(n_ac, n);
    cp.b_eq = Eigen::VectorXd::Zero(n_ac);
    for (int k = 0; k < n_ac; ++k) {
      cp.A_eq(k, f0 + k) = 1.0;
      for (int bi : grid.transmission_bus_indices()) {
        const double nk = prob.ptdf(k, bi);
        if (nk == 0.0) continue;
        if (auto it = trades_at_bus.find(bi); it != trades_at_bus.end())
          for (int d : it->second) cp.A_eq(k, zpos.at(d)) -= nk;
        for (int h = 0; h < n_dc; ++h) {
          const auto& hv = grid.hvdc_lines[h];
          if (grid.bus_index(hv.from) == bi) cp.A_eq(k, fdc0 + h) += nk;
          if (grid.bus_index(hv.to) == bi) cp.A_eq(k, fdc0 + h) -= nk;
        }
        for (int c = 0; c < n_conn; ++c)
          if (grid.bus_index(grid.connection_points[c].transmission_bus) == bi)
            cp.A_eq(k, e0 + c) += nk;
        if (with_losses)
          for (int l = 0; l < n_ac; ++l) {
            const double dl = prob.loss_dist(bi, l);
            if (dl != 0.0) cp.A_eq(k, wl0 + l) += nk * dl;
          }
      }
    }

    std::vector<std::pair<Eigen::VectorXd, double>> rows;
    auto lin = [&](std::initializer_list<std::pair<int, double>> terms,
                   double rhs) {
      Eigen::VectorXd r = Eigen::VectorXd::Zero(n);
      for (auto [idx, val] : terms) r[idx] += val;
      rows.push_back({r, rhs});
    };
    for (int k = 0; k < n_ac; ++k) {
      lin({{f0 + k, 1.0}}, grid.ac_lines[k].capacity);
      lin({{f0 + k, -1.0}}, grid.ac_lines[k].capacity);
    }
    for (int h = 0; h < n_dc; ++h) {
      lin({{fdc0 + h, 1.0}}, grid.hvdc_lines[h].capacity);
      lin({{fdc0 + h, -1.0}}, grid.hvdc_lines[h].capacity);
    }
    if (with_losses)
      for (int k = 0; k < n_ac; ++k) {
        for (const auto& seg : grid.ac_lines[k].loss) {
          lin({{f0 + k, seg.slope}, {wl0 + k, -1.0}}, -seg.intercept);
          lin({{f0 + k, -seg.slope}, {wl0 + k, -1.0}}, -seg.intercept);
        }
        lin({{wl0 + k, -1.0}}, 0.0);
      }
    cp.A_in = Eigen::MatrixXd::Zero(static_cast<int>(rows.size()), n);
    cp.b_in = Eigen::VectorXd::Zero(static_cast<int>(rows.size()));
    for (size_t i = 0; i < rows.size(); ++i) {
      cp.A_in.row(static_cast<int>(i)) = rows[i].first.transpose();
      cp.b_in[static_cast<int>(i)] = rows[i].second;
    }

    for (int i = 0; i < nz; ++i)
      act.copies.push_back({z0 + i, gm.z0 + tso_trades[i], 1.0, r_z});
    if (with_losses)
      for (int k = 0; k < n_ac; ++k)
        act.copies.push_back({wl0 + k, gm.wl0 + k, 1.0, r_wl});
    for (int c = 0; c < n_conn; ++c)
      act.copies.push_back({e0 + c, gm.e0 + c, 1.0, r_e});
    actors.push_back(std::move(act));
  }

  // ---- DSO subproblems ----
  if (with_grid) {
    const int n_ac = static_cast<int>(grid.ac_lines.size());
    for (int dso : grid.dso_ids()) {
      std::vector<int> dbus = grid.distribution_bus_indices(dso);
      std::map<int, int> bslot;
      for (size_t i = 0; i < dbus.size(); ++i)
        bslot[dbus[i]] = static_cast<int>(i);
      const int nr = static_cast<int>(dbus.size());
      std::vector<int> lines;
      for (int li = 0; li < static_cast<int>(grid.dist_lines.size()); ++li)
        if (grid.bus(grid.dist_lines[li].from).so_id == dso)
          lines.push_back(li);
      const int nl = static_cast<int>(lines.size());
      std::vector<int> my_trades;
      for (int bi : dbus)
        if (auto it = trades_at_bus.find(bi); it != trades_at_bus.end())
          for (int d : it->second) my_trades.push_back(d);
      const int nz = static_cast<int>(my_trades.size());
      std::vector<int> conns;
      for (int c = 0; c < gm.n_conn; ++c)
        if (grid.connection_points[c].dso_id == dso) conns.push_back(c);
      const int nc = static_cast<int>(conns.size());
      const int nwl = with_losses ? nl : 0;

      Actor act;
      // layout: fp, fq, wl, z, e_d, theta, v
      const int fp0 = 0, fq0 = nl, wl0 = 2 * nl, z0 = wl0 + nwl, e0 = z0 + nz,
                th0 = e0 + nc, v0 = th0 + nr;
      const int n = v0 + nr;
      ConicProgram& cp = act.program;
      cp.num_vars = n;
      cp.Q = Eigen::MatrixXd::Zero(n, n);
      cp.c = Eigen::VectorXd::Zero(n);

      std::map<int, int> zpos;
      for (int i = 0; i < nz; ++i) zpos[my_trades[i]] = z0 + i;

      // flow definitions, nodal balances, angle reference
      const int neq = 2 * nl + nr + 1;
      cp.A_eq = Eigen::MatrixXd::Zero(neq, n);
      cp.b_eq = Eigen::VectorXd::Zero(neq);
      int row = 0;
      for (int i = 0; i < nl; ++i) {
        const auto& dl = grid.dist_lines[lines[i]];
        const int rf = bslot.at(grid.bus_index(dl.from));
        const int rt = bslot.at(grid.bus_index(dl.to));
        cp.A_eq(row, fp0 + i) = 1.0;
        cp.A_eq(row, th0 + rf) -= base * dl.susceptance;
        cp.A_eq(row, th0 + rt) += base * dl.susceptance;
        cp.A_eq(row, v0 + rf) += base * dl.conductance;
        cp.A_eq(row, v0 + rt) -= base * dl.conductance;
        ++row;
        cp.A_eq(row, fq0 + i) = 1.0;
        cp.A_eq(row, v0 + rf) -= base * dl.b_star();
        cp.A_eq(row, v0 + rt) += base * dl.b_star();
        cp.A_eq(row, th0 + rf) -= base * dl.conductance;
        cp.A_eq(row, th0 + rt) += base * dl.conductance;
        cp.b_eq[row] = -base * dl.shunt_susceptance;
        ++row;
      }
      for (int bi : dbus) {
        if (auto it = trades_at_bus.find(bi); it != trades_at_bus.end())
          for (int d : it->second) cp.A_eq(row, zpos.at(d)) += 1.0;
        for (int i = 0; i < nc; ++i)
          if (grid.bus_index(grid.connection_points[conns[i]].feeder_bus) == bi)
            cp.A_eq(row, e0 + i) += 1.0;
        for (int i = 0; i < nl; ++i) {
          const auto& dl = grid.dist_lines[lines[i]];
          if (grid.bus_index(dl.from) == bi) cp.A_eq(row, fp0 + i) -= 1.0;
          if (grid.bus_index(dl.to) == bi) cp.A_eq(row, fp0 + i) += 1.0;
          if (with_losses) {
            const double w = prob.loss_dist(bi, n_ac + lines[i]);
            if (w != 0.0) cp.A_eq(row, wl0 + i) -= w;
          }
        }
        ++row;
      }
      const int feeder = grid.bus_index(grid.primary_connection(dso).feeder_bus);
      cp.A_eq(row, th0 + bslot.at(feeder)) = 1.0;
      ++row;

      std::vector<std::pair<Eigen::VectorXd, double>> rows;
      auto lin = [&](std::initializer_list<std::pair<int, double>> terms,
                     double rhs) {
        Eigen::VectorXd r = Eigen::VectorXd::Zero(n);
        for (auto [idx, val] : terms) r[idx] += val;
        rows.push_back({r, rhs});
      };
      for (int i = 0; i < nr; ++i) {
        const Bus& b = grid.buses[dbus[i]];
        lin({{th0 + i, 1.0}}, b.theta_max);
        lin({{th0 + i, -1.0}}, -b.theta_min);
        lin({{v0 + i, 1.0}}, b.v_max);
        lin({{v0 + i, -1.0}}, -b.v_min);
      }
      if (with_losses)
        for (int i = 0; i < nl; ++i) {
          for (const auto& seg : grid.dist_lines[lines[i]].loss) {
            lin({{fp0 + i, seg.slope}, {wl0 + i, -1.0}}, -seg.intercept);
            lin({{fp0 + i, -seg.slope}, {wl0 + i, -1.0}}, -seg.intercept);
          }
          lin({{wl0 + i, -1.0}}, 0.0);
        }
      cp.A_in = Eigen::MatrixXd::Zero(static_cast<int>(rows.size()), n);
      cp.b_in = Eigen::VectorXd::Zero(static_cast<int>(rows.size()));
      for (size_t i = 0; i < rows.size(); ++i) {
        cp.A_in.row(static_cast<int>(i)) = rows[i].first.transpose();
        cp.b_in[static_cast<int>(i)] = rows[i].second;
      }
      for (int i = 0; i < nl; ++i)
        cp.discs.push_back(
            {fp0 + i, fq0 + i, grid.dist_lines[lines[i]].apparent_capacity});

      for (int i = 0; i < nz; ++i)
        act.copies.push_back({z0 + i, gm.z0 + my_trades[i], 1.0, r_z});
      if (with_losses)
        for (int i = 0; i < nl; ++i)
          act.copies.push_back({wl0 + i, gm.wl0 + n_ac + lines[i], 1.0, r_wl});
      for (int i = 0; i < nc; ++i)
        act.copies.push_back({e0 + i, gm.e0 + conns[i], 1.0, r_e});
      for (int i = 0; i < nl; ++i)
        act.copies.push_back({fq0 + i, gm.fq0 + lines[i], 1.0, r_q});
      actors.push_back(std::move(act));
    }
  }

  for (auto& act : actors) {
    act.base_c = act.program.c;
    act.base_Qd = act.program.Q;
    act.u = Eigen::VectorXd::Zero(static_cast<int>(act.copies.size()));
    for (const auto& cp : act.copies) {
      act.program.Q(cp.local, cp.local) += cp.rho;
    }
  }

  // ---- Coupling manifold over the consensus vector ----
  std::vector<Eigen::VectorXd> mrows;
  std::vector<double> mrhs;
  std::vector<Family> mfam;
  std::vector<int> mindex;
  auto manifold_row = [&](Family fam, int index) -> Eigen::VectorXd& {
    mrows.push_back(Eigen::VectorXd::Zero(gm.total));
    mrhs.push_back(0.0);
    mfam.push_back(fam);
    mindex.push_back(index);
    return mrows.back();
  };
  if (with_grid) {
    for (int d = 0; d < gm.n_directed; ++d) {  // t + w = z
      Eigen::VectorXd& r = manifold_row(Family::Injection, d);
      r[gm.t0 + prob.trades.pair_of(d)] = trade_sign(d);
      if (with_losses) r[gm.w0 + d] = 1.0;
      r[gm.z0 + d] = -1.0;
    }
  }
  if (with_losses) {
    for (int d = 0; d < gm.n_directed; ++d) {  // w = A w_l
      Eigen::VectorXd& r = manifold_row(Family::LineLoss, d);
      r[gm.w0 + d] = 1.0;
      for (int l = 0; l < gm.n_lines; ++l)
        if (prob.allocation.coeff(d, l) != 0.0)
          r[gm.wl0 + l] = -prob.allocation.coeff(d, l);
    }
  }
  if (with_grid) {
    const std::vector<int> dbus = distribution_bus_slots(grid);
    for (size_t rs = 0; rs < dbus.size(); ++rs) {  // reactive balance
      const int bi = dbus[rs];
      Eigen::VectorXd& r = manifold_row(Family::Reactive, static_cast<int>(rs));
      double charging = 0.0;
      for (int li = 0; li < gm.n_dist; ++li) {
        const auto& dl = grid.dist_lines[li];
        if (grid.bus_index(dl.from) == bi) r[gm.fq0 + li] += 1.0;
        if (grid.bus_index(dl.to) == bi) {
          r[gm.fq0 + li] -= 1.0;
          charging += 2.0 * base * dl.shunt_susceptance;
        }
      }
      for (const auto& [slot, gidx] : gm.q_slot) {
        const Agent& ag = prob.cleared_agent(slot);
        if (grid.bus_index(ag.bus) == bi) r[gidx] -= 1.0;
      }
      mrhs.back() = charging;
    }
  }

  const int nm = static_cast<int>(mrows.size());
  Eigen::MatrixXd M(nm, gm.total);
  Eigen::VectorXd m_rhs(nm);
  for (int i = 0; i < nm; ++i) {
    M.row(i) = mrows[i].transpose();
    m_rhs[i] = mrhs[i];
  }

  // Copy-count weights for the projection.
  Eigen::VectorXd W = Eigen::VectorXd::Zero(gm.total);
  for (const auto& act : actors)
    for (const auto& cp : act.copies) W[cp.global] += cp.rho;
  for (int g = 0; g < gm.total; ++g)
    if (W[g] == 0.0) W[g] = opt.rho;  // quantities pinned by the manifold only

  Eigen::MatrixXd PK = Eigen::MatrixXd::Zero(gm.total + nm, gm.total + nm);
  PK.topLeftCorner(gm.total, gm.total) = W.asDiagonal();
  if (nm) {
    PK.topRightCorner(gm.total, nm) = M.transpose();
    PK.bottomLeftCorner(nm, gm.total) = M;
  }
  Eigen::PartialPivLU<Eigen::MatrixXd> proj(PK);

  Eigen::VectorXd G = Eigen::VectorXd::Zero(gm.total);
  Eigen::VectorXd nu = Eigen::VectorXd::Zero(nm);

  AdmmResult result;
  int total_copies = 0;
  for (const auto& act : actors)
    total_copies += static_cast<int>(act.copies.size());

  int iter = 0;
  for (; iter < opt.max_iterations; ++iter) {
    // Local solves (independent given the previous consensus state).
    for (auto& act : actors) {
      act.program.c = act.base_c;
      for (size_t k = 0; k < act.copies.size(); ++k) {
        const Copy& cp = act.copies[k];
        act.program.c[cp.local] -=
            cp.rho * (cp.sign * G[cp.global] - act.u[static_cast<int>(k)]);
      }
      SolveResult sub = ipm.solve(act.program, opt.subproblem_tol);
      if (!sub.optimal()) {
        std::ostringstream os;
        os << "subproblem failed at iteration " << iter << ": " << sub.message;
        result.solution.status = SolveStatus::NumericalFailure;
        result.solution.message = os.str();
        result.iterations = iter;
        return result;
      }
      act.x = sub.x;
      if (act.balance_row >= 0) act.pi = sub.eq_duals[act.balance_row];
    }

    // Weighted average of copies, then projection onto the manifold.
    Eigen::VectorXd v = Eigen::VectorXd::Zero(gm.total);
    for (auto& act : actors)
      for (size_t k = 0; k < act.copies.size(); ++k) {
        const Copy& cp = act.copies[k];
        v[cp.global] += cp.rho * cp.sign *
                        (act.x[cp.local] + act.u[static_cast<int>(k)]);
      }
    Eigen::VectorXd rhs(gm.total + nm);
    rhs.head(gm.total) = v;
    if (nm) rhs.tail(nm) = m_rhs;
    Eigen::VectorXd sol = proj.solve(rhs);
    Eigen::VectorXd G_new = sol.head(gm.total);
    if (nm) nu = sol.tail(nm);

    // Residuals and dual update.
    double pri2 = 0.0, dual2 = 0.0, xnorm2 = 0.0, gnorm2 = 0.0, unorm2 = 0.0;
    for (auto& act : actors)
      for (size_t k = 0; k < act.copies.size(); ++k) {
        const Copy& cp = act.copies[k];
        const double gap = act.x[cp.local] - cp.sign * G_new[cp.global];
        pri2 += gap * gap;
        const double move = cp.rho * (G_new[cp.global] - G[cp.global]);
        dual2 += move * move;
        act.u[static_cast<int>(k)] += gap;
        xnorm2 += act.x[cp.local] * act.x[cp.local];
        gnorm2 += G_new[cp.global] * G_new[cp.global];
        unorm2 += cp.rho * cp.rho * act.u[static_cast<int>(k)] *
                  act.u[static_cast<int>(k)];
      }
    G = G_new;

    double objective = 0.0;
    for (const auto& act : actors)
      if (act.agent_slot >= 0)
        objective +=
            cost_value_and_gradient(prob.cleared_agent(act.agent_slot),
                                    act.x[0])
                .first;

    const double pri = std::sqrt(pri2);
    const double dual = std::sqrt(dual2);
    result.history.push_back({iter, pri, dual, objective});

    const double eps_pri =
        opt.eps_primal * std::sqrt(std::max(1, total_copies)) +
        opt.eps_relative * std::max(std::sqrt(xnorm2), std::sqrt(gnorm2));
    const double eps_dual =
        opt.eps_dual * std::sqrt(std::max(1, total_copies)) +
        opt.eps_relative * std::sqrt(unorm2);
    if (pri <= eps_pri && dual <= eps_dual) {
      result.converged = true;
      ++iter;
      break;
    }
  }
  result.iterations = iter;

  // ---- Assemble the solution from consensus values and local solves ----
  ClearingSolution& sol = result.solution;
  sol.status = result.converged ? SolveStatus::Optimal
                                : SolveStatus::NumericalFailure;
  if (!result.converged)
    sol.message = "admm: iteration limit reached before consensus";
  sol.iterations = result.iterations;
  sol.x = Eigen::VectorXd::Zero(vm.total);
  sol.pi.resize(vm.n_agents);
  for (const auto& act : actors) {
    if (act.agent_slot >= 0) {
      sol.pi[act.agent_slot] = act.pi;
      sol.x[vm.p(act.agent_slot)] = act.x[0];
      sol.x[vm.q(act.agent_slot)] = act.x[1];
    }
  }
  for (int d = 0; d < vm.n_directed; ++d) {
    const double t = trade_sign(d) * G[gm.t0 + prob.trades.pair_of(d)];
    sol.x[vm.t(d)] = t;
    double w = 0.0;
    if (with_losses) {
      w = G[gm.w0 + d];
      sol.x[vm.w_trade(d)] = w;
    }
    sol.x[vm.z(d)] = with_grid ? G[gm.z0 + d] : t + w;
  }
  if (gm.n_lines)
    for (int l = 0; l < gm.n_lines; ++l) sol.x[vm.w_line(l)] = G[gm.wl0 + l];
  if (with_grid) {
    for (int c = 0; c < gm.n_conn; ++c) {
      sol.x[vm.e_t(c)] = G[gm.e0 + c];
      sol.x[vm.e_d(c)] = G[gm.e0 + c];
    }
    // Grid-internal variables from the SO locals.
    int ai = vm.n_agents;  // TSO actor position
    {
      const Actor& tso = actors[ai];
      const int n_ac = static_cast<int>(grid.ac_lines.size());
      for (int k = 0; k < n_ac; ++k) sol.x[vm.f_ac(k)] = tso.x[k];
      for (int h = 0; h < static_cast<int>(grid.hvdc_lines.size()); ++h)
        sol.x[vm.f_dc(h)] = tso.x[n_ac + h];
    }
    const std::vector<int> dbus_order = distribution_bus_slots(grid);
    std::map<int, int> dbus_global;
    for (size_t i = 0; i < dbus_order.size(); ++i)
      dbus_global[dbus_order[i]] = static_cast<int>(i);
    int dso_pos = 0;
    for (int dso : grid.dso_ids()) {
      const Actor& act = actors[ai + 1 + dso_pos];
      ++dso_pos;
      std::vector<int> dbus = grid.distribution_bus_indices(dso);
      std::vector<int> lines;
      for (int li = 0; li < static_cast<int>(grid.dist_lines.size()); ++li)
        if (grid.bus(grid.dist_lines[li].from).so_id == dso)
          lines.push_back(li);
      const int nl = static_cast<int>(lines.size());
      const int nr = static_cast<int>(dbus.size());
      int nz = 0, nc = 0;
      for (int bi : dbus)
        if (auto it = trades_at_bus.find(bi); it != trades_at_bus.end())
          nz += static_cast<int>(it->second.size());
      for (const auto& c : grid.connection_points)
        if (c.dso_id == dso) ++nc;
      const int nwl = with_losses ? nl : 0;
      const int th0 = 2 * nl + nwl + nz + nc;
      const int v0 = th0 + nr;
      for (int i = 0; i < nl; ++i) {
        sol.x[vm.fp(lines[i])] = act.x[i];
        sol.x[vm.fq(lines[i])] = G[gm.fq0 + lines[i]];
      }
      for (int i = 0; i < nr; ++i) {
        const int gslot = dbus_global.at(dbus[i]);
        sol.x[vm.theta(gslot)] = act.x[th0 + i];
        sol.x[vm.v(gslot)] = act.x[v0 + i];
      }
    }
  }
  if (gm.q_slot.size())
    for (const auto& [slot, gidx] : gm.q_slot) sol.x[vm.q(slot)] = G[gidx];

  double objective = 0.0;
  for (int a = 0; a < vm.n_agents; ++a)
    objective +=
        cost_value_and_gradient(prob.cleared_agent(a), sol.x[vm.p(a)]).first;
  sol.objective = objective;

  // Prices from the consensus duals.
  sol.tau_z = Eigen::VectorXd::Zero(vm.n_directed);
  if (with_losses) sol.tau_l = Eigen::VectorXd::Zero(vm.n_directed);
  if (with_grid) sol.lambda = Eigen::VectorXd::Zero(vm.n_dbus);
  // The projection multipliers play the role of the centralized coupling-row
  // duals, so the same sign adapter applies.
  for (int i = 0; i < nm; ++i) {
    switch (mfam[i]) {
      case Family::Injection: sol.tau_z[mindex[i]] = -nu[i]; break;
      case Family::LineLoss: sol.tau_l[mindex[i]] = -nu[i]; break;
      case Family::Reactive: sol.lambda[mindex[i]] = nu[i]; break;
      default: break;
    }
  }
  sol.tau_t.resize(vm.n_pairs);
  for (int k = 0; k < vm.n_pairs; ++k) {
    const int d_fwd = 2 * k, d_rev = 2 * k + 1;
    const double a = sol.pi[prob.trade_from_slot(d_fwd)] - sol.tau_z[d_fwd];
    const double b = sol.pi[prob.trade_from_slot(d_rev)] - sol.tau_z[d_rev];
    sol.tau_t[k] = 0.5 * (a + b);
  }
  if (with_grid && gm.n_conn) {
    sol.tau_e = Eigen::VectorXd::Zero(gm.n_conn);
    const Actor& tso = actors[vm.n_agents];
    for (size_t k = 0; k < tso.copies.size(); ++k) {
      const Copy& cp = tso.copies[k];
      if (cp.global >= gm.e0 && cp.global < gm.e0 + gm.n_conn)
        sol.tau_e[cp.global - gm.e0] =
            -cp.rho * tso.u[static_cast<int>(k)];
    }
  }
  return result;
}

std::pair<double, double> residuals(const AdmmResult& result) {
  if (result.history.empty()) return {0.0, 0.0};
  const AdmmIterate& last = result.history.back();
  return {last.primal_residual, last.dual_residual};
}

}  // namespace p2pclear
