#pragma once

#include "p2pclear/agents.hpp"
#include "p2pclear/grid.hpp"

#include <Eigen/Dense>

#include <string>

namespace p2pclear {

enum class PolicyKind { Socialization, Individual, CapacityScaled, Mixture };

const char* to_string(PolicyKind kind);

/// Loss-allocation coefficients: rows are directed trades (TradeGraph order),
/// columns the canonical lossy lines. Every column of a line owned by SO s
/// sums to 1 over the directed trades whose first agent belongs to s, and is
/// zero on all other rows.
struct AllocationMatrix {
  Eigen::MatrixXd coeff;  // 2T x L
  PolicyKind kind = PolicyKind::Socialization;
  double chi = 1.0;  // meaningful for Mixture

  int num_trades() const { return static_cast<int>(coeff.rows()); }
  int num_lines() const { return static_cast<int>(coeff.cols()); }
};

/// Every directed trade of an SO gets an equal share of each of that SO's
/// lines. The trade count is directed (rows with the first agent in the SO),
/// which keeps column sums at exactly 1 even with cross-SO trades.
/// Throws if an SO owns lines but has no trades.
AllocationMatrix build_socialization(const GridModel& grid,
                                     const std::vector<Agent>& agents,
                                     const TradeGraph& graph);

/// Grid-usage-proportional shares |TF_l,bus(i) - TF_l,bus(j)| normalized per
/// column over the owning SO's trades. Columns nothing loads fall back to the
/// socialization coefficients.
AllocationMatrix build_individual(const GridModel& grid,
                                  const std::vector<Agent>& agents,
                                  const TradeGraph& graph,
                                  const Eigen::MatrixXd& tf);

/// Individual shares scaled by the first agent's capacity K_i, then each
/// column renormalized to sum 1 so every MW of line loss stays procured.
AllocationMatrix build_capacity_scaled(const GridModel& grid,
                                       const std::vector<Agent>& agents,
                                       const TradeGraph& graph,
                                       const Eigen::MatrixXd& tf);

/// chi * A_soc + (1 - chi) * A_ind, chi in [0, 1].
AllocationMatrix mix(const AllocationMatrix& soc, const AllocationMatrix& ind,
                     double chi);

}  // namespace p2pclear
