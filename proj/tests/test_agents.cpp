#include <doctest.h>

#include "p2pclear/agents.hpp"

#include <random>

using namespace p2pclear;

TEST_CASE("capacity is the larger setpoint magnitude") {
  CHECK(capacity({1, 1, -5.0, 0.0, 0, 0, 0, 0}) == 5.0);
  CHECK(capacity({1, 1, 0.0, 3.0, 0, 0, 0, 0}) == 3.0);
  CHECK(capacity({1, 1, -2.0, 7.0, 0, 0, 0, 0}) == 7.0);
}

TEST_CASE("cost evaluation and gradient") {
  Agent a{1, 1, -10, 10, 0, 0, 0.0, 20.0};
  auto [f1, g1] = cost_value_and_gradient(a, 2.0);
  CHECK(f1 == 40.0);
  CHECK(g1 == 20.0);

  Agent b{2, 1, -10, 10, 0, 0, 1.0, 0.0};
  auto [f2, g2] = cost_value_and_gradient(b, 3.0);
  CHECK(f2 == 9.0);
  CHECK(g2 == 6.0);

  // Central finite difference at p = 1.7.
  Agent c{3, 1, -10, 10, 0, 0, 0.8, 13.0};
  const double h = 1e-6;
  const double fd = (cost_value_and_gradient(c, 1.7 + h).first -
                     cost_value_and_gradient(c, 1.7 - h).first) /
                    (2 * h);
  CHECK(cost_value_and_gradient(c, 1.7).second ==
        doctest::Approx(fd).epsilon(1e-6));
}

TEST_CASE("cost convexity on sampled pairs") {
  std::mt19937 gen(3);
  std::uniform_real_distribution<double> unif(-5.0, 5.0);
  Agent a{1, 1, -10, 10, 0, 0, 0.7, -3.0};
  for (int i = 0; i < 50; ++i) {
    const double p1 = unif(gen), p2 = unif(gen);
    const double mid = cost_value_and_gradient(a, 0.5 * (p1 + p2)).first;
    const double avg = 0.5 * (cost_value_and_gradient(a, p1).first +
                              cost_value_and_gradient(a, p2).first);
    CHECK(mid <= avg + 1e-12);
  }
}

TEST_CASE("trade graph pairing is a bijection with even cardinality") {
  TradeGraph g = TradeGraph::from_pairs({{1, 2}, {1, 3}, {2, 3}});
  CHECK(g.num_directed() == 6);
  CHECK(g.num_directed() % 2 == 0);
  for (int d = 0; d < g.num_directed(); ++d) {
    const int rev = g.reverse_of(d);
    CHECK(g.reverse_of(rev) == d);
    CHECK(g.directed(d).first == g.directed(rev).second);
    CHECK(g.directed(d).second == g.directed(rev).first);
  }
}

TEST_CASE("validate accepts a symmetric two-agent graph") {
  std::vector<Agent> agents = {{1, 1, 0, 5, 0, 0, 0, 10},
                               {2, 1, -5, 0, 0, 0, 0, 0}};
  TradeGraph g = TradeGraph::from_partner_sets({{1, {2}}, {2, {1}}});
  CHECK(validate(agents, g).ok());
}

TEST_CASE("validate names an asymmetric partner set") {
  std::vector<Agent> agents = {{1, 1, 0, 5, 0, 0, 0, 10},
                               {2, 1, -5, 0, 0, 0, 0, 0}};
  TradeGraph g = TradeGraph::from_partner_sets({{1, {2}}, {2, {}}});
  Diagnostics d = validate(agents, g);
  REQUIRE(!d.ok());
  bool named = false;
  for (const auto& e : d.errors)
    if (e.find("Omega_1") != std::string::npos &&
        e.find("asymmetric") != std::string::npos)
      named = true;
  CHECK(named);
}

TEST_CASE("validate names inverted bounds") {
  std::vector<Agent> agents = {{1, 1, 3.0, -3.0, 0, 0, 0, 10},
                               {2, 1, -5, 0, 0, 0, 0, 0}};
  TradeGraph g = TradeGraph::from_pairs({{1, 2}});
  Diagnostics d = validate(agents, g);
  REQUIRE(!d.ok());
  CHECK(d.errors[0].find("agent 1") != std::string::npos);
  CHECK(d.errors[0].find("p_min > p_max") != std::string::npos);
}

TEST_CASE("isolated agents are flagged as warnings") {
  std::vector<Agent> agents = {{1, 1, 0, 5, 0, 0, 0, 10},
                               {2, 1, -5, 0, 0, 0, 0, 0},
                               {9, 1, -1, 1, 0, 0, 0, 0}};
  TradeGraph g = TradeGraph::from_pairs({{1, 2}});
  Diagnostics d = validate(agents, g);
  CHECK(d.ok());
  REQUIRE(d.warnings.size() == 1);
  CHECK(d.warnings[0].find("agent 9") != std::string::npos);
}
