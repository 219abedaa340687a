#pragma once

#include "p2pclear/admm.hpp"
#include "p2pclear/agents.hpp"
#include "p2pclear/clearing.hpp"
#include "p2pclear/grid.hpp"
#include "p2pclear/policy.hpp"
#include "p2pclear/settlement.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace p2pclear {

struct SolverConfig {
  std::string backend = "reference";
  double tol = 1e-9;
  int max_iter = 200;
  SocMode soc_mode = SocMode::Native;
  int cuts = 16;
  int loss_segments = 2;  // used when a line carries no explicit segments
  double admm_rho = 1.0;
  int admm_max_iter = 5000;
  double admm_eps_primal = 1e-5;
  double admm_eps_dual = 1e-5;
};

/// One self-describing JSON case: grid, agents, trade topology, policy and
/// solver settings. Powers in MW/MVAr, impedances in p.u. on base_mva.
struct CaseFile {
  int schema_version = 1;
  std::string name;
  std::uint64_t seed = 0;
  GridModel grid;  // loss segments resolved (explicit or fitted)
  std::vector<Agent> agents;
  TradeGraph trades;
  PolicyKind policy = PolicyKind::Socialization;
  double chi = 1.0;
  SolverConfig solver;
};

/// Strict parse: unknown fields are rejected, every violation names its
/// JSON path. Semantic validation (grid + agents) runs before returning.
CaseFile load_case(const std::string& path);
CaseFile case_from_json_text(const std::string& text,
                             const std::string& origin = "<memory>");

/// Canonical emission; load(save(c)) is semantically identical to c
/// (topology keywords expand to explicit pairs, fitted loss segments are
/// written out).
std::string case_to_json_text(const CaseFile& c);
void save_case(const CaseFile& c, const std::string& path);

/// FNV-1a hash of the canonical text, hex-encoded.
std::string case_hash(const CaseFile& c);

/// Allocation matrix for the case's configured (or an overridden) policy.
/// soc ignores chi; ind/cap are mixed with the socialization matrix when
/// chi > 0.
AllocationMatrix build_policy(const GridModel& grid,
                              const std::vector<Agent>& agents,
                              const TradeGraph& trades, PolicyKind kind,
                              double chi);

ClearingOptions clearing_options(const SolverConfig& solver);
AdmmOptions admm_options(const SolverConfig& solver);

// ---- Tabular output (deterministic formatting, %.12g) ----

std::string settlement_csv(const SettlementReport& report);
std::string lines_csv(const std::vector<LineRecord>& lines);
std::string trades_csv(const ClearingProblem& problem,
                       const ClearingSolution& solution);
std::string prices_json_text(const ClearingProblem& problem,
                             const ClearingSolution& solution);
std::string admm_log_csv(const AdmmResult& result);

void write_file(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

// ---- Bundled case generators (deterministic) ----

/// Meshed 3-bus TSO plus a 2-bus radial DSO; one generator, one remote TSO
/// load and two DSO loads (near/far from the feeder). Line losses use
/// constant segments with equal TSO and DSO totals, which makes the
/// socialization policy's payment split exact.
CaseFile generate_five_bus();

/// Same topology with fitted (sloped) loss models, a second peaking
/// generator, reactive demand and line limits tight enough to bind.
CaseFile generate_five_bus_tight();

/// Single-SO lossless-friendly case: uncongested 3-bus TSO, a saturated
/// cheap generator and an interior marginal one.
CaseFile generate_uniform_tso();

/// One TSO bus feeding a 5-bus radial DSO chain with one load per chain bus.
CaseFile generate_radial_six();

/// Seeded random case: meshed TSO ring with chords and one HVDC link,
/// n_dso radial feeders gathered into energy communities (a zero-capacity
/// manager at each feeder), generator costs U(10, 50) EUR/MWh and agent
/// flexibility bands U(0, 1) MW.
CaseFile generate_random_case(int n_tso_bus, int n_dso, std::uint64_t seed);

}  // namespace p2pclear
