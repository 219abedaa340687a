#include "p2pclear/policy.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace p2pclear {

namespace {

const Agent& agent_by_id(const std::vector<Agent>& agents, int id) {
  for (const auto& a : agents)
    if (a.id == id) return a;
  throw std::invalid_argument("policy: unknown agent id " + std::to_string(id));
}

// SO of the first agent of each directed trade.
std::vector<int> trade_owners(const GridModel& grid,
                              const std::vector<Agent>& agents,
                              const TradeGraph& graph) {
  std::vector<int> owner(graph.num_directed());
  for (int d = 0; d < graph.num_directed(); ++d) {
    const auto& a = agent_by_id(agents, graph.directed(d).first);
    owner[d] = grid.bus(a.bus).so_id;
  }
  return owner;
}

// Directed-trade count per SO; throws when an SO owns lines but no trades.
std::map<int, int> directed_counts(const GridModel& grid,
                                   const std::vector<int>& owner) {
  std::map<int, int> count;
  for (int so : owner) ++count[so];
  for (int l = 0; l < grid.num_lossy_lines(); ++l) {
    const int so = grid.line_owner(l);
    if (!count.count(so) || count.at(so) == 0)
      throw std::invalid_argument(
          "policy: SO " + std::to_string(so) +
          " owns lines but has no trades to allocate losses to");
  }
  return count;
}

}  // namespace

const char* to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::Socialization: return "soc";
    case PolicyKind::Individual: return "ind";
    case PolicyKind::CapacityScaled: return "cap";
    case PolicyKind::Mixture: return "mix";
  }
  return "unknown";
}

AllocationMatrix build_socialization(const GridModel& grid,
                                     const std::vector<Agent>& agents,
                                     const TradeGraph& graph) {
  const int nt = graph.num_directed();
  const int nl = grid.num_lossy_lines();
  const std::vector<int> owner = trade_owners(grid, agents, graph);
  const std::map<int, int> count = directed_counts(grid, owner);

  AllocationMatrix A;
  A.kind = PolicyKind::Socialization;
  A.chi = 1.0;
  A.coeff = Eigen::MatrixXd::Zero(nt, nl);
  for (int l = 0; l < nl; ++l) {
    const int so = grid.line_owner(l);
    for (int d = 0; d < nt; ++d)
      if (owner[d] == so) A.coeff(d, l) = 1.0 / count.at(so);
  }
  return A;
}

AllocationMatrix build_individual(const GridModel& grid,
                                  const std::vector<Agent>& agents,
                                  const TradeGraph& graph,
                                  const Eigen::MatrixXd& tf) {
  const int nt = graph.num_directed();
  const int nl = grid.num_lossy_lines();
  if (tf.rows() != nl)
    throw std::invalid_argument("build_individual: TF rows != lossy lines");
  const std::vector<int> owner = trade_owners(grid, agents, graph);
  const AllocationMatrix soc = build_socialization(grid, agents, graph);

  AllocationMatrix A;
  A.kind = PolicyKind::Individual;
  A.chi = 0.0;
  A.coeff = Eigen::MatrixXd::Zero(nt, nl);
  for (int l = 0; l < nl; ++l) {
    const int so = grid.line_owner(l);
    double denom = 0.0;
    for (int d = 0; d < nt; ++d) {
      if (owner[d] != so) continue;
      auto [i, j] = graph.directed(d);
      const int bi = grid.bus_index(agent_by_id(agents, i).bus);
      const int bj = grid.bus_index(agent_by_id(agents, j).bus);
      const double usage = std::abs(tf(l, bi) - tf(l, bj));
      A.coeff(d, l) = usage;
      denom += usage;
    }
    if (denom > 1e-12) {
      A.coeff.col(l) /= denom;
    } else {
      A.coeff.col(l) = soc.coeff.col(l);  // nothing loads this line
    }
  }
  return A;
}

AllocationMatrix build_capacity_scaled(const GridModel& grid,
                                       const std::vector<Agent>& agents,
                                       const TradeGraph& graph,
                                       const Eigen::MatrixXd& tf) {
  AllocationMatrix A = build_individual(grid, agents, graph, tf);
  A.kind = PolicyKind::CapacityScaled;
  const AllocationMatrix soc = build_socialization(grid, agents, graph);

  double total_capacity = 0.0;
  for (const auto& a : agents) total_capacity += capacity(a);
  if (!(total_capacity > 0.0))
    throw std::invalid_argument("build_capacity_scaled: all capacities zero");

  const int nt = graph.num_directed();
  Eigen::VectorXd k(nt);
  for (int d = 0; d < nt; ++d)
    k[d] = capacity(agent_by_id(agents, graph.directed(d).first)) /
           total_capacity;

  for (int l = 0; l < A.num_lines(); ++l) {
    Eigen::VectorXd col = A.coeff.col(l).cwiseProduct(k);
    const double sum = col.sum();
    if (sum > 1e-12)
      A.coeff.col(l) = col / sum;
    else
      A.coeff.col(l) = soc.coeff.col(l);
  }
  return A;
}

AllocationMatrix mix(const AllocationMatrix& soc, const AllocationMatrix& ind,
                     double chi) {
  if (chi < 0.0 || chi > 1.0)
    throw std::invalid_argument("mix: chi must lie in [0, 1]");
  if (soc.coeff.rows() != ind.coeff.rows() ||
      soc.coeff.cols() != ind.coeff.cols())
    throw std::invalid_argument("mix: shape mismatch");
  AllocationMatrix out;
  out.kind = PolicyKind::Mixture;
  out.chi = chi;
  out.coeff = chi * soc.coeff + (1.0 - chi) * ind.coeff;
  return out;
}

}  // namespace p2pclear
