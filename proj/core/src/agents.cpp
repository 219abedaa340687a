#include "p2pclear/agents.hpp"

#include "p2pclear/grid.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

namespace p2pclear {

double capacity(const Agent& agent) {
  return std::max(std::abs(agent.p_min), std::abs(agent.p_max));
}

std::pair<double, double> cost_value_and_gradient(const Agent& agent,
                                                  double p) {
  const double f = agent.cost_quad * p * p + agent.cost_lin * p;
  const double df = 2.0 * agent.cost_quad * p + agent.cost_lin;
  return {f, df};
}

TradeGraph TradeGraph::from_pairs(
    const std::vector<std::pair<int, int>>& pairs) {
  TradeGraph g;
  std::set<std::pair<int, int>> seen;
  for (auto [a, b] : pairs) {
    if (a == b) continue;  // self-trades are rejected by validate()
    auto key = std::minmax(a, b);
    if (seen.insert(key).second) g.pairs_.push_back(key);
  }
  return g;
}

TradeGraph TradeGraph::from_partner_sets(
    const std::vector<std::pair<int, std::vector<int>>>& omega) {
  std::set<std::pair<int, int>> claimed;
  for (const auto& [i, partners] : omega)
    for (int j : partners) claimed.insert({i, j});

  TradeGraph g;
  std::set<std::pair<int, int>> seen;
  for (const auto& [i, j] : claimed) {
    if (i == j) continue;
    if (claimed.count({j, i})) {
      auto key = std::minmax(i, j);
      if (seen.insert(key).second) g.pairs_.push_back(key);
    } else {
      g.asymmetric_.push_back({i, j});
    }
  }
  return g;
}

TradeGraph TradeGraph::full(const std::vector<Agent>& agents) {
  std::vector<std::pair<int, int>> pairs;
  for (size_t i = 0; i < agents.size(); ++i)
    for (size_t j = i + 1; j < agents.size(); ++j)
      pairs.push_back({agents[i].id, agents[j].id});
  return from_pairs(pairs);
}

std::pair<int, int> TradeGraph::directed(int d) const {
  const auto& [a, b] = pairs_.at(d / 2);
  return (d % 2 == 0) ? std::make_pair(a, b) : std::make_pair(b, a);
}

std::vector<int> TradeGraph::trades_of(int id) const {
  std::vector<int> out;
  for (int d = 0; d < num_directed(); ++d)
    if (directed(d).first == id) out.push_back(d);
  return out;
}

Diagnostics validate(const std::vector<Agent>& agents,
                     const TradeGraph& graph) {
  Diagnostics diag;
  auto err = [&](const std::string& m) { diag.errors.push_back(m); };

  std::set<int> ids;
  for (const auto& a : agents) {
    std::ostringstream who;
    who << "agent " << a.id;
    if (!ids.insert(a.id).second) err(who.str() + ": duplicate id");
    if (a.p_min > a.p_max)
      err(who.str() + ": active power bounds inverted (p_min > p_max)");
    if (a.q_min > a.q_max)
      err(who.str() + ": reactive power bounds inverted (q_min > q_max)");
    if (a.cost_quad < 0.0)
      err(who.str() + ": quadratic cost coefficient must be >= 0 (convexity)");
  }

  for (const auto& [a, b] : graph.pairs()) {
    if (a == b) err("self-trade on agent " + std::to_string(a));
    for (int id : {a, b})
      if (!ids.count(id))
        err("trade (" + std::to_string(a) + ", " + std::to_string(b) +
            ") references unknown agent " + std::to_string(id));
  }

  for (const auto& [i, j] : graph.asymmetric_claims())
    err("asymmetric partner sets: " + std::to_string(j) + " in Omega_" +
        std::to_string(i) + " but " + std::to_string(i) + " not in Omega_" +
        std::to_string(j));

  for (const auto& a : agents)
    if (graph.is_isolated(a.id))
      diag.warnings.push_back("agent " + std::to_string(a.id) +
                              " is isolated (no trading partners); it will be "
                              "excluded from clearing");
  return diag;
}

Diagnostics validate(const std::vector<Agent>& agents, const TradeGraph& graph,
                     const GridModel& grid) {
  Diagnostics diag = validate(agents, graph);
  for (const auto& a : agents)
    if (!grid.has_bus(a.bus))
      diag.errors.push_back("agent " + std::to_string(a.id) +
                            ": unknown bus " + std::to_string(a.bus));
  return diag;
}

}  // namespace p2pclear
