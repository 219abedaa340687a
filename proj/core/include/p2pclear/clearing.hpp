#pragma once

#include "p2pclear/agents.hpp"
#include "p2pclear/grid.hpp"
#include "p2pclear/policy.hpp"
#include "p2pclear/solver.hpp"

#include <Eigen/Dense>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace p2pclear {

enum class SocMode { Native, Polygon };

struct ClearingOptions {
  bool include_grid = true;
  bool include_losses = true;
  SocMode soc_mode = SocMode::Native;
  int polygon_cuts = 16;
  Tolerances tol;
};

/// Offsets into the primal vector; -1 marks an absent family.
/// Directed trades follow the TradeGraph order; lossy lines the canonical
/// grid order; per-agent slots cover cleared (non-isolated) agents only.
struct VarMap {
  int n_agents = 0, n_pairs = 0, n_directed = 0;
  int n_ac = 0, n_dc = 0, n_lines = 0, n_dist = 0, n_conn = 0, n_dbus = 0;
  int p0 = -1, q0 = -1, t0 = -1, z0 = -1, w_trade0 = -1;
  int f_ac0 = -1, f_dc0 = -1, w_line0 = -1, fp0 = -1, fq0 = -1;
  int e_t0 = -1, e_d0 = -1, theta0 = -1, v0 = -1;
  int total = 0;

  int p(int a) const { return p0 + a; }
  int q(int a) const { return q0 + a; }
  int t(int d) const { return t0 + d; }
  int z(int d) const { return z0 + d; }
  int w_trade(int d) const { return w_trade0 + d; }
  int f_ac(int k) const { return f_ac0 + k; }
  int f_dc(int h) const { return f_dc0 + h; }
  int w_line(int l) const { return w_line0 + l; }
  int fp(int d) const { return fp0 + d; }
  int fq(int d) const { return fq0 + d; }
  int e_t(int c) const { return e_t0 + c; }
  int e_d(int c) const { return e_d0 + c; }
  int theta(int r) const { return theta0 + r; }
  int v(int r) const { return v0 + r; }
};

/// Offsets into the equality-dual vector, same conventions as VarMap.
struct EqRowMap {
  int balance0 = -1;    // per cleared agent        -> pi
  int recip0 = -1;      // per pair                 -> tau_t
  int inject0 = -1;     // per directed trade       -> tau_z
  int loss_link0 = -1;  // per directed trade       -> tau_l
  int tso_flow0 = -1;   // per ac line              -> phi
  int dso_fp0 = -1;     // per dist line
  int dso_fq0 = -1;     // per dist line
  int dso_bal0 = -1;    // per distribution bus
  int exch0 = -1;       // per connection point     -> tau_e
  int react0 = -1;      // per distribution bus     -> lambda
  int theta_ref0 = -1;  // per DSO
  int total = 0;
};

struct IneqTag {
  enum Kind {
    PUpper, PLower, QUpper, QLower,
    AcFlowUpper, AcFlowLower, HvdcUpper, HvdcLower,
    LossEnvPos, LossEnvNeg, LossNonneg,
    ThetaUpper, ThetaLower, VUpper, VLower,
  };
  Kind kind;
  int index = 0;    // family-local index (agent slot, line, bus, ...)
  int segment = 0;  // loss envelope segment
};

/// Assembled instance of the joint market-clearing problem. Owns copies of
/// all inputs; safe to solve from several threads.
struct ClearingProblem {
  GridModel grid;
  std::vector<Agent> agents;  // input order, including isolated ones
  TradeGraph trades;
  AllocationMatrix allocation;
  ClearingOptions options;

  std::vector<int> cleared;       // indices into agents, isolated excluded
  std::map<int, int> agent_slot;  // agent id -> cleared slot
  std::vector<std::string> warnings;

  VarMap vars;
  EqRowMap eq_rows;
  std::vector<IneqTag> ineq_tags;
  ConicProgram program;

  Eigen::MatrixXd ptdf;       // empty when grid off
  Eigen::MatrixXd loss_dist;  // D, empty when grid or losses off

  const Agent& cleared_agent(int slot) const { return agents[cleared[slot]]; }
  int slot_of(int agent_id) const { return agent_slot.at(agent_id); }
  /// Cleared slot of the first agent of directed trade d.
  int trade_from_slot(int d) const {
    return agent_slot.at(trades.directed(d).first);
  }
};

/// Duals are reported so the first-order price identities hold as written:
/// pi = tau_t + tau_z per directed trade, pi = tau_z + tau_l with losses on,
/// and tau_z = sum_k N(k, bus) * phi_k for transmission-bus trades.
struct ClearingSolution {
  SolveStatus status = SolveStatus::NumericalFailure;
  double objective = 0.0;
  int iterations = 0;
  std::string message;

  Eigen::VectorXd x;  // primal, VarMap layout
  Eigen::VectorXd eq_duals_raw, in_duals_raw, disc_duals_raw;

  Eigen::VectorXd pi;               // per cleared agent
  Eigen::VectorXd tau_t;            // per pair
  Eigen::VectorXd tau_z;            // per directed trade
  Eigen::VectorXd tau_l;            // per directed trade, empty if losses off
  Eigen::VectorXd tau_e;            // per connection point
  Eigen::VectorXd lambda;           // per distribution bus
  Eigen::VectorXd phi;              // per ac line
  Eigen::VectorXd mu_upper, mu_lower;  // per TSO line: [ac..., hvdc...]
  Eigen::VectorXd eta_cone;         // per dist line (sum of cut duals in
                                    // polygon mode)

  bool optimal() const { return status == SolveStatus::Optimal; }
};

/// Bus indices of all distribution buses in their per-DSO slot order (the
/// order used by the theta/v variables and the per-bus dual vectors).
std::vector<int> distribution_bus_slots(const GridModel& grid);

/// Builds the equivalent optimization problem. The allocation matrix must
/// cover exactly the directed trades and lossy lines and conserve losses
/// (columns sum to 1); it is ignored when losses are off.
/// Throws std::invalid_argument on structural problems.
ClearingProblem assemble(const GridModel& grid, const std::vector<Agent>& agents,
                         const TradeGraph& trades, const AllocationMatrix& allocation,
                         const ClearingOptions& options);

ClearingSolution solve(const ClearingProblem& problem,
                       const SolverBackend& backend);
ClearingSolution solve(const ClearingProblem& problem);  // reference backend

struct PriceTables {
  std::vector<int> agent_ids;
  Eigen::VectorXd pi;
  std::vector<std::pair<int, int>> pairs;
  Eigen::VectorXd tau_t;
  std::vector<std::pair<int, int>> directed;
  Eigen::VectorXd tau_z;
  Eigen::VectorXd tau_l;  // empty if losses off
  std::vector<int> connection_ids;
  Eigen::VectorXd tau_e;
  std::vector<int> dso_bus_ids;
  Eigen::VectorXd lambda;
};

/// Throws std::logic_error when the solution is not optimal.
PriceTables extract_prices(const ClearingProblem& problem,
                           const ClearingSolution& solution);

struct KktReport {
  double trade_price = 0.0;   // max |pi - tau_t - tau_z|
  double loss_price = 0.0;    // max |pi - tau_z - tau_l| (losses on)
  double grid_price = 0.0;    // max |tau_z - N'phi| over transmission trades
  double stationarity = 0.0;  // max |df/dp - pi| over interior setpoints
  double tolerance = 0.0;

  double max_residual() const;
  bool pass() const { return max_residual() <= tolerance; }
};

KktReport verify_kkt(const ClearingProblem& problem,
                     const ClearingSolution& solution, double tol);

}  // namespace p2pclear
