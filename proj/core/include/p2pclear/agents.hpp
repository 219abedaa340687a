#pragma once

#include <string>
#include <utility>
#include <vector>

namespace p2pclear {

class GridModel;

/// Prosumer with quadratic cost f(p) = cost_quad * p^2 + cost_lin * p.
/// Sign convention: p > 0 generates, p < 0 consumes.
struct Agent {
  int id = -1;
  int bus = -1;
  double p_min = 0.0, p_max = 0.0;  // MW
  double q_min = 0.0, q_max = 0.0;  // MVAr
  double cost_quad = 0.0;           // EUR/MW^2 h, >= 0
  double cost_lin = 0.0;            // EUR/MWh
};

double capacity(const Agent& agent);  // max(|p_min|, |p_max|)

/// (f(p), df/dp)
std::pair<double, double> cost_value_and_gradient(const Agent& agent, double p);

/// Bilateral trading topology. Directed trades come in (i,j)/(j,i) pairs;
/// trade indices are stable and shared with the clearing variable layout.
class TradeGraph {
 public:
  /// Builds the directed index from symmetric partner pairs (i, j), i != j.
  /// Duplicate pairs are collapsed. Pair k owns directed trades 2k and 2k+1.
  static TradeGraph from_pairs(const std::vector<std::pair<int, int>>& pairs);
  /// Builds from per-agent partner sets Omega_i. One-sided entries
  /// (j in Omega_i but i not in Omega_j) are recorded and flagged by
  /// validate(); they do not become trades.
  static TradeGraph from_partner_sets(
      const std::vector<std::pair<int, std::vector<int>>>& omega);
  /// Every agent trades with every other agent.
  static TradeGraph full(const std::vector<Agent>& agents);

  int num_pairs() const { return static_cast<int>(pairs_.size()); }
  int num_directed() const { return 2 * num_pairs(); }
  const std::vector<std::pair<int, int>>& pairs() const { return pairs_; }

  /// Directed trade d -> (from agent id, to agent id).
  std::pair<int, int> directed(int d) const;
  int pair_of(int d) const { return d / 2; }
  int reverse_of(int d) const { return d ^ 1; }
  /// Directed trades originating at agent `id`.
  std::vector<int> trades_of(int id) const;
  bool is_isolated(int id) const { return trades_of(id).empty(); }
  const std::vector<std::pair<int, int>>& asymmetric_claims() const {
    return asymmetric_;
  }

 private:
  std::vector<std::pair<int, int>> pairs_;
  std::vector<std::pair<int, int>> asymmetric_;  // j in Omega_i, i not in Omega_j
};

struct Diagnostics {
  std::vector<std::string> errors;
  std::vector<std::string> warnings;
  bool ok() const { return errors.empty(); }
};

/// Checks agent bounds, convexity, graph symmetry/self-trades and flags
/// isolated agents. Never throws; every violation is named.
Diagnostics validate(const std::vector<Agent>& agents, const TradeGraph& graph);

/// As above, additionally checking bus attachment against the grid.
Diagnostics validate(const std::vector<Agent>& agents, const TradeGraph& graph,
                     const GridModel& grid);

}  // namespace p2pclear
