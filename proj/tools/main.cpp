// Command-line driver for the market-clearing engine: clears cases, compares
// grid-aware and copper-plate outcomes, sweeps loss-allocation policies and
// runs the decentralized negotiation. Outputs are CSV/JSON files in --out-dir.

#include <CLI11.hpp>

#include "p2pclear/admm.hpp"
#include "p2pclear/caseio.hpp"
#include "p2pclear/clearing.hpp"
#include "p2pclear/settlement.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using p2pclear::AdmmOptions;
using p2pclear::AdmmResult;
using p2pclear::AllocationMatrix;
using p2pclear::CaseFile;
using p2pclear::ClearingOptions;
using p2pclear::ClearingProblem;
using p2pclear::ClearingSolution;
using p2pclear::PolicyKind;
using p2pclear::SettlementReport;
using p2pclear::SocMode;
using p2pclear::SolveStatus;
using json = nlohmann::ordered_json;

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitInfeasible = 2;

struct CommonArgs {
  std::string case_path;
  std::string out_dir = "out";
  std::optional<std::string> policy;
  std::optional<double> chi;
  bool no_grid = false;
  bool no_losses = false;
  std::optional<std::string> soc_mode;
  std::optional<int> cuts;
  std::optional<std::uint64_t> seed;
  std::optional<double> tol;
  std::optional<int> max_iter;
  std::optional<double> rho;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--case", args.case_path, "case file (JSON)")->required();
  cmd->add_option("--out-dir", args.out_dir, "output directory");
  cmd->add_option("--policy", args.policy, "loss policy: soc|ind|cap");
  cmd->add_option("--chi", args.chi, "socialization factor in [0,1]");
  cmd->add_flag("--no-grid", args.no_grid, "drop all network constraints");
  cmd->add_flag("--no-losses", args.no_losses, "drop the loss products");
  cmd->add_option("--soc-mode", args.soc_mode,
                  "apparent-power limits: native|polygon");
  cmd->add_option("--cuts", args.cuts, "polygon cut count (even, >= 4)");
  cmd->add_option("--seed", args.seed, "override the case seed");
  cmd->add_option("--tol", args.tol, "solver tolerance");
  cmd->add_option("--max-iter", args.max_iter, "solver iteration cap");
  cmd->add_option("--rho", args.rho, "negotiation penalty parameter");
}

CaseFile load_with_overrides(const CommonArgs& args) {
  CaseFile c = p2pclear::load_case(args.case_path);
  if (args.policy) {
    if (*args.policy == "soc")
      c.policy = PolicyKind::Socialization;
    else if (*args.policy == "ind")
      c.policy = PolicyKind::Individual;
    else if (*args.policy == "cap")
      c.policy = PolicyKind::CapacityScaled;
    else
      throw std::invalid_argument("--policy must be soc, ind or cap");
    if (!args.chi) c.chi = *args.policy == "soc" ? 1.0 : 0.0;
  }
  if (args.chi) c.chi = *args.chi;
  if (args.soc_mode) {
    if (*args.soc_mode == "native")
      c.solver.soc_mode = SocMode::Native;
    else if (*args.soc_mode == "polygon")
      c.solver.soc_mode = SocMode::Polygon;
    else
      throw std::invalid_argument("--soc-mode must be native or polygon");
  }
  if (args.cuts) c.solver.cuts = *args.cuts;
  if (args.seed) c.seed = *args.seed;
  if (args.tol) c.solver.tol = *args.tol;
  if (args.max_iter) {
    c.solver.max_iter = *args.max_iter;
    c.solver.admm_max_iter = *args.max_iter;
  }
  if (args.rho) c.solver.admm_rho = *args.rho;
  return c;
}

struct Cleared {
  ClearingProblem problem;
  ClearingSolution solution;
};

Cleared clear(const CaseFile& c, PolicyKind kind, double chi, bool grid,
              bool losses) {
  ClearingOptions opts = p2pclear::clearing_options(c.solver);
  opts.include_grid = grid;
  opts.include_losses = losses;
  AllocationMatrix A;
  if (grid && losses)
    A = p2pclear::build_policy(c.grid, c.agents, c.trades, kind, chi);
  Cleared out{p2pclear::assemble(c.grid, c.agents, c.trades, A, opts), {}};
  out.solution = p2pclear::solve(out.problem);
  return out;
}

json options_json(const CaseFile& c, const CommonArgs& args) {
  json j;
  j["policy"] = p2pclear::to_string(c.policy);
  j["chi"] = c.chi;
  j["grid"] = !args.no_grid;
  j["losses"] = !args.no_losses;
  j["soc_mode"] = c.solver.soc_mode == SocMode::Native ? "native" : "polygon";
  j["cuts"] = c.solver.cuts;
  j["tol"] = c.solver.tol;
  j["seed"] = c.seed;
  return j;
}

void write_run_record(const CaseFile& c, const CommonArgs& args,
                      const std::string& status, double objective, double ms,
                      const json& summary) {
  json rec;
  rec["case"] = c.name;
  rec["case_hash"] = p2pclear::case_hash(c);
  rec["options"] = options_json(c, args);
  rec["status"] = status;
  rec["objective"] = objective;
  rec["summary"] = summary;
  rec["timing_ms"] = ms;
  p2pclear::write_file(args.out_dir + "/run_record.json", rec.dump(2) + "\n");
}

int report_failure(const ClearingSolution& sol) {
  std::cerr << "clearing failed: " << p2pclear::to_string(sol.status);
  if (!sol.message.empty()) std::cerr << " (" << sol.message << ")";
  std::cerr << "\n";
  return sol.status == SolveStatus::Infeasible ? kExitInfeasible : kExitError;
}

int cmd_clear(const CommonArgs& args) {
  const auto t0 = std::chrono::steady_clock::now();
  CaseFile c = load_with_overrides(args);
  std::filesystem::create_directories(args.out_dir);

  Cleared main = clear(c, c.policy, c.chi, !args.no_grid, !args.no_losses);
  if (!main.solution.optimal()) return report_failure(main.solution);

  // The losses-off reference fills the payment-delta columns.
  std::optional<Cleared> ref;
  if (!args.no_losses) {
    Cleared r = clear(c, c.policy, c.chi, !args.no_grid, false);
    if (r.solution.optimal()) ref.emplace(std::move(r));
  }

  SettlementReport rep = p2pclear::build_report(
      main.problem, main.solution, ref ? &ref->problem : nullptr,
      ref ? &ref->solution : nullptr);

  p2pclear::write_file(args.out_dir + "/settlement.csv",
                       p2pclear::settlement_csv(rep));
  p2pclear::write_file(args.out_dir + "/lines.csv",
                       p2pclear::lines_csv(rep.lines));
  p2pclear::write_file(args.out_dir + "/trades.csv",
                       p2pclear::trades_csv(main.problem, main.solution));
  p2pclear::write_file(args.out_dir + "/prices.json",
                       p2pclear::prices_json_text(main.problem, main.solution));

  const auto kkt = p2pclear::verify_kkt(main.problem, main.solution, 1e-6);
  json summary;
  summary["agents"] = static_cast<int>(rep.agents.size());
  summary["money_residual"] = rep.money_residual;
  summary["kkt_max_residual"] = kkt.max_residual();
  const double ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
  write_run_record(c, args, "optimal", main.solution.objective, ms, summary);

  std::cout << "status optimal, objective " << main.solution.objective
            << ", kkt residual " << kkt.max_residual() << "\n"
            << "wrote settlement.csv lines.csv trades.csv prices.json to "
            << args.out_dir << "\n";
  return kExitOk;
}

int cmd_compare_grid(const CommonArgs& args) {
  const auto t0 = std::chrono::steady_clock::now();
  CaseFile c = load_with_overrides(args);
  std::filesystem::create_directories(args.out_dir);

  Cleared on = clear(c, c.policy, c.chi, true, !args.no_losses);
  if (!on.solution.optimal()) return report_failure(on.solution);
  Cleared off = clear(c, c.policy, c.chi, false, false);
  if (!off.solution.optimal()) return report_failure(off.solution);

  auto lines_on = p2pclear::line_loading(on.problem, on.solution);
  auto lines_off = p2pclear::implied_line_loading(off.problem, off.solution);

  std::ostringstream lines;
  lines << "line,limit,flow_grid,loading_grid,flow_free,loading_free,"
           "violation_free\n";
  int violations = 0;
  for (size_t i = 0; i < lines_on.size(); ++i) {
    const bool violated = lines_off[i].loading > 1.0 + 1e-6;
    violations += violated;
    char buf[220];
    std::snprintf(buf, sizeof(buf), "%s,%.12g,%.12g,%.12g,%.12g,%.12g,%d\n",
                  lines_on[i].name.c_str(), lines_on[i].limit,
                  lines_on[i].flow, lines_on[i].loading, lines_off[i].flow,
                  lines_off[i].loading, violated ? 1 : 0);
    lines << buf;
  }
  p2pclear::write_file(args.out_dir + "/grid_lines.csv", lines.str());

  std::ostringstream prices;
  prices << "agent,bus,pi_grid,pi_free,delta_pct\n";
  for (int a = 0; a < on.problem.vars.n_agents; ++a) {
    const auto& ag = on.problem.cleared_agent(a);
    const double pg = on.solution.pi[a], pf = off.solution.pi[a];
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%d,%d,%.12g,%.12g,%.12g\n", ag.id, ag.bus,
                  pg, pf,
                  std::abs(pf) > 1e-12 ? (pg - pf) / std::abs(pf) : 0.0);
    prices << buf;
  }
  p2pclear::write_file(args.out_dir + "/grid_prices.csv", prices.str());

  json summary;
  summary["violations_without_grid"] = violations;
  const double ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
  write_run_record(c, args, "optimal", on.solution.objective, ms, summary);
  std::cout << "grid-on vs grid-off written to " << args.out_dir << " ("
            << violations << " free-clearing limit violations)\n";
  return kExitOk;
}

int cmd_compare_policies(const CommonArgs& args) {
  const auto t0 = std::chrono::steady_clock::now();
  CaseFile c = load_with_overrides(args);
  std::filesystem::create_directories(args.out_dir);

  Cleared ref = clear(c, c.policy, c.chi, !args.no_grid, false);
  if (!ref.solution.optimal()) return report_failure(ref.solution);

  const std::vector<std::pair<std::string, std::pair<PolicyKind, double>>>
      runs = {{"soc", {PolicyKind::Socialization, 1.0}},
              {"ind", {PolicyKind::Individual, 0.0}},
              {"cap", {PolicyKind::CapacityScaled, 0.0}}};

  std::ostringstream os;
  os << "policy,agent,bus,payment,delta,delta_pct,losses,delta_distance\n";
  json summary;
  for (const auto& [name, cfg] : runs) {
    Cleared run = clear(c, cfg.first, cfg.second, !args.no_grid, true);
    if (!run.solution.optimal()) return report_failure(run.solution);
    SettlementReport rep = p2pclear::build_report(run.problem, run.solution,
                                                  &ref.problem, &ref.solution);
    double traded = 0.0;
    std::vector<double> energy, pct;
    for (const auto& a : rep.agents) {
      char buf[240];
      std::snprintf(buf, sizeof(buf),
                    "%s,%d,%d,%.12g,%.12g,%.12g,%.12g,%.12g\n", name.c_str(),
                    a.agent_id, a.bus, a.payment, a.delta.value_or(0.0),
                    a.delta_pct.value_or(0.0), a.allocated_losses,
                    a.distance.value_or(0.0));
      os << buf;
      if (a.delta_pct) {
        double gross = 0.0;
        const auto& vm = run.problem.vars;
        for (int d : run.problem.trades.trades_of(a.agent_id))
          gross += std::abs(run.solution.x[vm.t(d)]);
        energy.push_back(gross);
        pct.push_back(*a.delta_pct);
        traded += gross;
      }
    }
    // Pearson correlation between percentage increase and traded energy
    // (the size-vs-charge trend).
    double corr = 0.0;
    if (energy.size() > 2) {
      const auto n = static_cast<double>(energy.size());
      double me = 0, mp = 0;
      for (size_t i = 0; i < energy.size(); ++i) {
        me += energy[i];
        mp += pct[i];
      }
      me /= n;
      mp /= n;
      double se = 0, sp = 0, cv = 0;
      for (size_t i = 0; i < energy.size(); ++i) {
        se += (energy[i] - me) * (energy[i] - me);
        sp += (pct[i] - mp) * (pct[i] - mp);
        cv += (energy[i] - me) * (pct[i] - mp);
      }
      if (se > 1e-15 && sp > 1e-15) corr = cv / std::sqrt(se * sp);
    }
    summary[name] = json{{"traded_energy", traded},
                         {"corr_delta_pct_vs_energy", corr}};
  }
  p2pclear::write_file(args.out_dir + "/policies.csv", os.str());
  p2pclear::write_file(args.out_dir + "/policy_summary.json",
                       summary.dump(2) + "\n");

  const double ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
  write_run_record(c, args, "optimal", ref.solution.objective, ms, summary);
  std::cout << "policy comparison written to " << args.out_dir << "\n";
  return kExitOk;
}

int cmd_sweep_chi(const CommonArgs& args, const std::vector<double>& grid) {
  const auto t0 = std::chrono::steady_clock::now();
  CaseFile c = load_with_overrides(args);
  std::filesystem::create_directories(args.out_dir);

  Cleared ref = clear(c, c.policy, c.chi, !args.no_grid, false);
  if (!ref.solution.optimal()) return report_failure(ref.solution);

  const PolicyKind base = c.policy == PolicyKind::Socialization
                              ? PolicyKind::Individual
                              : c.policy;
  std::ostringstream os;
  os << "chi,agent,bus,payment,delta,delta_pct\n";
  for (double chi : grid) {
    Cleared run = clear(c, base, chi, !args.no_grid, true);
    if (!run.solution.optimal()) return report_failure(run.solution);
    SettlementReport rep = p2pclear::build_report(run.problem, run.solution,
                                                  &ref.problem, &ref.solution);
    for (const auto& a : rep.agents) {
      char buf[200];
      std::snprintf(buf, sizeof(buf), "%.12g,%d,%d,%.12g,%.12g,%.12g\n", chi,
                    a.agent_id, a.bus, a.payment, a.delta.value_or(0.0),
                    a.delta_pct.value_or(0.0));
      os << buf;
    }
  }
  p2pclear::write_file(args.out_dir + "/chi_sweep.csv", os.str());
  const double ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
  write_run_record(c, args, "optimal", ref.solution.objective, ms, json{});
  std::cout << "chi sweep written to " << args.out_dir << "\n";
  return kExitOk;
}

int cmd_admm(const CommonArgs& args) {
  const auto t0 = std::chrono::steady_clock::now();
  CaseFile c = load_with_overrides(args);
  std::filesystem::create_directories(args.out_dir);

  ClearingOptions opts = p2pclear::clearing_options(c.solver);
  opts.include_grid = !args.no_grid;
  opts.include_losses = !args.no_losses;
  AllocationMatrix A;
  if (opts.include_grid && opts.include_losses)
    A = p2pclear::build_policy(c.grid, c.agents, c.trades, c.policy, c.chi);
  ClearingProblem prob = p2pclear::assemble(c.grid, c.agents, c.trades, A, opts);

  ClearingSolution central = p2pclear::solve(prob);
  if (!central.optimal()) return report_failure(central);

  AdmmOptions admm = p2pclear::admm_options(c.solver);
  AdmmResult res = p2pclear::admm_run(prob, admm);
  p2pclear::write_file(args.out_dir + "/admm_log.csv",
                       p2pclear::admm_log_csv(res));

  const double gap = std::abs(res.solution.objective - central.objective) /
                     (1.0 + std::abs(central.objective));
  double price_gap = 0.0;
  if (res.converged)
    for (int k = 0; k < prob.vars.n_pairs; ++k)
      price_gap = std::max(price_gap,
                           std::abs(res.solution.tau_t[k] - central.tau_t[k]));

  json summary;
  summary["converged"] = res.converged;
  summary["iterations"] = res.iterations;
  summary["objective_gap_rel"] = gap;
  summary["trade_price_gap"] = price_gap;
  auto [pri, dual] = p2pclear::residuals(res);
  summary["primal_residual"] = pri;
  summary["dual_residual"] = dual;
  const double ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
  write_run_record(c, args, res.converged ? "optimal" : "non-converged",
                   res.solution.objective, ms, summary);

  std::cout << (res.converged ? "converged" : "NOT converged") << " in "
            << res.iterations << " iterations, objective gap " << gap
            << ", trade price gap " << price_gap << "\n"
            << "residual log written to " << args.out_dir << "/admm_log.csv\n";
  return res.converged ? kExitOk : kExitError;
}

int cmd_gen(const std::string& which, const std::string& out, int tso_buses,
            int dsos, std::uint64_t seed) {
  CaseFile c;
  if (which == "five-bus")
    c = p2pclear::generate_five_bus();
  else if (which == "five-bus-tight")
    c = p2pclear::generate_five_bus_tight();
  else if (which == "uniform-tso")
    c = p2pclear::generate_uniform_tso();
  else if (which == "radial-six")
    c = p2pclear::generate_radial_six();
  else if (which == "random")
    c = p2pclear::generate_random_case(tso_buses, dsos, seed);
  else
    throw std::invalid_argument("unknown case name: " + which);
  p2pclear::save_case(c, out);
  std::cout << "wrote " << out << " (hash " << p2pclear::case_hash(c) << ")\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"peer-to-peer market clearing with grid and loss products"};
  app.require_subcommand(1);

  CommonArgs clear_args, grid_args, pol_args, chi_args, admm_args;
  std::vector<double> chi_grid = {0.0, 0.25, 0.5, 0.75, 1.0};

  CLI::App* c1 = app.add_subcommand("clear", "solve one case and settle it");
  add_common(c1, clear_args);
  CLI::App* c2 = app.add_subcommand("compare-grid",
                                    "clear with and without grid constraints");
  add_common(c2, grid_args);
  CLI::App* c3 = app.add_subcommand(
      "compare-policies", "socialization vs individual vs capacity-scaled");
  add_common(c3, pol_args);
  CLI::App* c4 =
      app.add_subcommand("sweep-chi", "sweep the socialization factor");
  add_common(c4, chi_args);
  c4->add_option("--chi-grid", chi_grid, "chi values to sweep");
  CLI::App* c5 = app.add_subcommand("admm",
                                    "decentralized negotiation, residual log");
  add_common(c5, admm_args);

  std::string gen_name, gen_out = "case.json";
  int gen_tso = 4, gen_dsos = 2;
  std::uint64_t gen_seed = 7;
  CLI::App* c6 = app.add_subcommand("gen", "write a bundled or random case");
  c6->add_option("--name", gen_name,
                 "five-bus|five-bus-tight|uniform-tso|radial-six|random")
      ->required();
  c6->add_option("--out", gen_out, "output path");
  c6->add_option("--tso-buses", gen_tso, "random case: TSO bus count");
  c6->add_option("--dsos", gen_dsos, "random case: DSO count");
  c6->add_option("--seed", gen_seed, "random case: seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (c1->parsed()) return cmd_clear(clear_args);
    if (c2->parsed()) return cmd_compare_grid(grid_args);
    if (c3->parsed()) return cmd_compare_policies(pol_args);
    if (c4->parsed()) return cmd_sweep_chi(chi_args, chi_grid);
    if (c5->parsed()) return cmd_admm(admm_args);
    if (c6->parsed())
      return cmd_gen(gen_name, gen_out, gen_tso, gen_dsos, gen_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
