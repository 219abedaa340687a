#pragma once

#include "p2pclear/clearing.hpp"

#include <vector>

namespace p2pclear {

/// Scaled consensus ADMM over the market coupling constraints. Actors are
/// the prosumers, the TSO and each DSO; every coupled quantity (trades,
/// trade losses, injections, line losses, exchanges, reactive terms) gets a
/// local copy per touching actor plus a global consensus value that is
/// projected onto the coupling manifold each round. Rounds are synchronous;
/// within a round the subproblems are independent of each other.
struct AdmmOptions {
  double rho = 1.0;
  int max_iterations = 5000;
  double eps_primal = 1e-5;  // absolute part of the stopping rule
  double eps_dual = 1e-5;
  double eps_relative = 1e-6;
  // Per-constraint-family penalty weights (multiply rho).
  double weight_trade = 1.0;
  double weight_trade_loss = 1.0;
  double weight_injection = 1.0;
  double weight_line_loss = 1.0;
  double weight_exchange = 1.0;
  double weight_reactive = 1.0;
  Tolerances subproblem_tol;
};

struct AdmmIterate {
  int iteration = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double objective = 0.0;
};

struct AdmmResult {
  ClearingSolution solution;  // prices from the consensus duals
  std::vector<AdmmIterate> history;
  bool converged = false;
  int iterations = 0;
};

/// Runs the decentralized negotiation on an assembled problem. Returns the
/// best iterate flagged non-converged when the iteration limit is reached.
AdmmResult admm_run(const ClearingProblem& problem, const AdmmOptions& options);

/// Consensus residual norms of the last iterate (primal: stacked
/// copy-vs-consensus gaps; dual: rho-scaled consensus movement).
std::pair<double, double> residuals(const AdmmResult& result);

}  // namespace p2pclear
