#pragma once

#include "p2pclear/clearing.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace p2pclear {

/// Payments are cost-positive: a buyer's C_i is positive, a seller's negative
/// C_i is revenue. C_i = -sum_j t_ij (tau_t + tau_z).
Eigen::VectorXd payments(const ClearingProblem& problem,
                         const ClearingSolution& solution);

struct DeltaPayments {
  Eigen::VectorXd delta;                     // C - C0, per cleared agent
  std::vector<std::optional<double>> pct;    // undefined when C0 == 0
};

/// Reference must be a clearing of the same agents (typically losses off).
DeltaPayments delta_payments(const ClearingProblem& problem,
                             const ClearingSolution& solution,
                             const ClearingProblem& ref_problem,
                             const ClearingSolution& ref_solution);

/// Trade-energy-weighted electrical distance per agent. Weights are the
/// positive-side trades; an agent with only negative trades is weighted by
/// its purchase magnitudes instead. Undefined for agents with no traded
/// energy.
std::vector<std::optional<double>> weighted_distance(
    const ClearingProblem& problem, const ClearingSolution& solution);

struct LineRecord {
  std::string name;
  double flow = 0.0;     // MW (signed active flow; HVDC setpoint)
  double limit = 0.0;    // MW or MVA
  double loading = 0.0;  // |f|/limit, apparent for distribution lines
  double loss = 0.0;     // MW
};

/// Loadings of every line: [ac..., hvdc..., dist...].
std::vector<LineRecord> line_loading(const ClearingProblem& problem,
                                     const ClearingSolution& solution);

/// Flows a grid-off clearing would cause, reconstructed from the solved net
/// positions (PTDF flows on the transmission side, a linear power-flow solve
/// per DSO; HVDC setpoints are taken as zero, DSO imports enter at the
/// primary connection point).
std::vector<LineRecord> implied_line_loading(const ClearingProblem& problem,
                                             const ClearingSolution& solution);

struct AgentSettlement {
  int agent_id = -1;
  int bus = -1;
  double payment = 0.0;
  std::optional<double> delta;
  std::optional<double> delta_pct;
  double allocated_losses = 0.0;  // MW
  std::optional<double> distance;
  double pi = 0.0;  // EUR/MWh
};

/// Per-SO books. grid_revenue collects tau_z on injections plus tau_l on
/// allocated losses; loss_procurement is paid out to agents for the loss
/// product; exchange_net transfers tau_e * e between the TSO and each DSO.
struct SoSettlement {
  int so_id = 0;
  double total_losses = 0.0;      // MW
  double grid_revenue = 0.0;      // EUR
  double loss_procurement = 0.0;  // EUR, paid to agents
  double exchange_net = 0.0;      // EUR
  double net_revenue = 0.0;       // grid_revenue - loss_procurement + exchange
};

struct SettlementReport {
  std::vector<AgentSettlement> agents;
  std::vector<SoSettlement> operators;
  std::vector<LineRecord> lines;
  double money_residual = 0.0;  // |sum C_i + sum net_revenue| (EUR)
};

/// Full report; pass the losses-off reference to fill the payment deltas.
SettlementReport build_report(const ClearingProblem& problem,
                              const ClearingSolution& solution,
                              const ClearingProblem* ref_problem = nullptr,
                              const ClearingSolution* ref_solution = nullptr);

}  // namespace p2pclear
