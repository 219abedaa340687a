#include <doctest.h>

#include "p2pclear/caseio.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <string>

using namespace p2pclear;

#ifndef P2PCLEAR_CASES_DIR
#define P2PCLEAR_CASES_DIR "cases"
#endif

TEST_CASE("bundled five_bus loads without diagnostics") {
  CaseFile c = load_case(std::string(P2PCLEAR_CASES_DIR) + "/five_bus.json");
  CHECK(c.name == "five_bus");
  CHECK(c.agents.size() == 4);
  CHECK(c.grid.connection_points.size() == 1);
  CHECK(c.trades.num_pairs() == 6);
}

TEST_CASE("round-trip is semantically identical") {
  CaseFile a = generate_five_bus_tight();
  CaseFile b = case_from_json_text(case_to_json_text(a));
  CHECK(case_to_json_text(a) == case_to_json_text(b));
  CHECK(case_hash(a) == case_hash(b));
}

TEST_CASE("unknown fields are rejected with the offending name") {
  CaseFile a = generate_five_bus();
  std::string text = case_to_json_text(a);
  text.insert(text.find("\"name\""), "\"ramp\": 3,\n  ");
  try {
    case_from_json_text(text);
    FAIL("expected a schema error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("ramp") != std::string::npos);
  }
}

TEST_CASE("asymmetric partner sets are rejected with the named pair") {
  const char* text = R"({
    "schema_version": 1,
    "name": "bad",
    "grid": {
      "slack_bus": 1,
      "buses": [{"id": 1, "level": "transmission"}],
      "ac_lines": [], "hvdc_lines": [], "dist_lines": [],
      "connection_points": []
    },
    "agents": [
      {"id": 1, "bus": 1, "p_min": 0, "p_max": 5, "cost_lin": 10},
      {"id": 2, "bus": 1, "p_min": -5, "p_max": 0}
    ],
    "trades": {"partners": {"1": [2], "2": []}},
    "policy": {"kind": "soc"}
  })";
  try {
    case_from_json_text(text);
    FAIL("expected a semantic error");
  } catch (const std::invalid_argument& e) {
    const std::string what = e.what();
    CHECK(what.find("asymmetric") != std::string::npos);
    CHECK(what.find("Omega_1") != std::string::npos);
  }
}

TEST_CASE("five-bus construction invariants") {
  CaseFile c = generate_five_bus();
  // One generator, three loads, one connection point.
  int gens = 0;
  for (const auto& a : c.agents)
    if (a.p_max > 0) ++gens;
  CHECK(gens == 1);
  CHECK(c.agents.size() == 4);
  CHECK(c.grid.connection_points.size() == 1);

  // Agent 4's path to the feeder is strictly longer in ohmic terms.
  const Eigen::MatrixXd tf = build_modified_tf(c.grid, build_ptdf(c.grid));
  const int feeder = c.grid.primary_connection(1).feeder_bus;
  CHECK(pair_distance(c.grid, tf, c.agents[3].bus, feeder) >
        pair_distance(c.grid, tf, c.agents[2].bus, feeder));

  // Generator capacity exceeds total load plus worst-case modeled losses.
  double load = 0.0;
  for (const auto& a : c.agents) load += std::max(0.0, -a.p_min);
  double losses = 0.0;
  for (const auto& l : c.grid.ac_lines)
    for (const auto& s : l.loss)
      losses += std::max(0.0, s.slope * l.capacity + s.intercept);
  for (const auto& l : c.grid.dist_lines)
    for (const auto& s : l.loss)
      losses += std::max(0.0, s.slope * l.apparent_capacity + s.intercept);
  CHECK(c.agents[0].p_max > load + losses);
}

TEST_CASE("random case generation is deterministic and in-spec") {
  CaseFile a = generate_random_case(4, 2, 7);
  CaseFile b = generate_random_case(4, 2, 7);
  CHECK(case_to_json_text(a) == case_to_json_text(b));
  CHECK(case_hash(a) != case_hash(generate_random_case(4, 2, 8)));

  for (const auto& ag : a.agents) {
    if (ag.cost_lin != 0.0) {
      CHECK(ag.cost_lin >= 10.0);
      CHECK(ag.cost_lin <= 50.0);
    }
    const double band = ag.p_max - ag.p_min;
    CHECK(band >= 0.0);
    CHECK(band <= 1.0 + 15.0);  // generators carry wide bands by design
  }
  // Sampled (non-generator, non-manager) agents stay within U(0,1).
  for (const auto& ag : a.agents) {
    if (ag.p_max > 1.5 || (ag.p_min == 0.0 && ag.p_max == 0.0)) continue;
    CHECK(ag.p_max - ag.p_min <= 1.0);
  }
}

TEST_CASE("topology keywords expand to the expected graphs") {
  CaseFile base = generate_random_case(4, 1, 3);
  nlohmann::ordered_json doc =
      nlohmann::ordered_json::parse(case_to_json_text(base));

  // Swap the explicit pairs for the community keyword: members must connect
  // only to their feeder manager, managers and TSO agents to each other.
  doc["trades"] = {{"topology", "community"}};
  CaseFile c = case_from_json_text(doc.dump());
  CHECK(c.trades.num_pairs() == base.trades.num_pairs());
  for (const auto& [i, j] : c.trades.pairs()) {
    const bool i_member = i > 100 && i % 100 != 0;
    const bool j_member = j > 100 && j % 100 != 0;
    if (i_member) CHECK(j == (i / 100) * 100);
    if (j_member) CHECK(i == (j / 100) * 100);
  }

  doc["trades"] = {{"topology", "full"}};
  CaseFile f = case_from_json_text(doc.dump());
  const int n = static_cast<int>(f.agents.size());
  CHECK(f.trades.num_pairs() == n * (n - 1) / 2);
}

TEST_CASE("community topology routes members through their manager") {
  CaseFile c = generate_random_case(4, 2, 7);
  // Members (ids 101..106, 201..206) trade only with their manager.
  for (const auto& [i, j] : c.trades.pairs()) {
    const bool i_member = i > 100 && i % 100 != 0;
    const bool j_member = j > 100 && j % 100 != 0;
    if (i_member) CHECK(j == (i / 100) * 100);
    if (j_member) CHECK(i == (j / 100) * 100);
  }
}

TEST_CASE("csv emitters are stable and carry the documented headers") {
  CaseFile c = generate_five_bus();
  AllocationMatrix A = build_policy(c.grid, c.agents, c.trades, c.policy, c.chi);
  ClearingProblem prob =
      assemble(c.grid, c.agents, c.trades, A, clearing_options(c.solver));
  ClearingSolution sol = solve(prob);
  REQUIRE(sol.status == SolveStatus::Optimal);
  SettlementReport rep = build_report(prob, sol);

  const std::string csv = settlement_csv(rep);
  CHECK(csv.rfind("agent,bus,payment,delta,delta_pct,losses,delta_distance,pi",
                  0) == 0);
  CHECK(settlement_csv(rep) == csv);  // deterministic

  CHECK(lines_csv(rep.lines).rfind("line,flow,limit,loading,loss", 0) == 0);
  CHECK(trades_csv(prob, sol).rfind("i,j,t,w,z,tau_t,tau_z,tau_l", 0) == 0);
  CHECK(prices_json_text(prob, sol).find("tau_e") != std::string::npos);
}
