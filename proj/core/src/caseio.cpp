#include "p2pclear/caseio.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace p2pclear {

namespace {

using json = nlohmann::ordered_json;

[[noreturn]] void schema_error(const std::string& ctx, const std::string& msg) {
  throw std::invalid_argument("case file: " + ctx + ": " + msg);
}

void check_keys(const json& obj, const std::vector<std::string>& allowed,
                const std::string& ctx) {
  if (!obj.is_object()) schema_error(ctx, "expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const auto& k : allowed)
      if (it.key() == k) {
        ok = true;
        break;
      }
    if (!ok) schema_error(ctx, "unknown field \"" + it.key() + "\"");
  }
}

const json& require(const json& obj, const std::string& key,
                    const std::string& ctx) {
  auto it = obj.find(key);
  if (it == obj.end()) schema_error(ctx, "missing field \"" + key + "\"");
  return *it;
}

double num(const json& obj, const std::string& key, const std::string& ctx) {
  const json& v = require(obj, key, ctx);
  if (!v.is_number()) schema_error(ctx + "." + key, "expected a number");
  return v.get<double>();
}

double num_or(const json& obj, const std::string& key, double fallback,
              const std::string& ctx) {
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  if (!it->is_number()) schema_error(ctx + "." + key, "expected a number");
  return it->get<double>();
}

int integer(const json& obj, const std::string& key, const std::string& ctx) {
  const json& v = require(obj, key, ctx);
  if (!v.is_number_integer()) schema_error(ctx + "." + key, "expected an integer");
  return v.get<int>();
}

std::string text(const json& obj, const std::string& key,
                 const std::string& ctx) {
  const json& v = require(obj, key, ctx);
  if (!v.is_string()) schema_error(ctx + "." + key, "expected a string");
  return v.get<std::string>();
}

std::vector<LossSegment> parse_segments(const json& arr,
                                        const std::string& ctx) {
  if (!arr.is_array()) schema_error(ctx, "expected an array");
  std::vector<LossSegment> out;
  for (size_t i = 0; i < arr.size(); ++i) {
    const std::string sctx = ctx + "[" + std::to_string(i) + "]";
    check_keys(arr[i], {"slope", "intercept"}, sctx);
    out.push_back({num(arr[i], "slope", sctx), num(arr[i], "intercept", sctx)});
  }
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

json segments_json(const std::vector<LossSegment>& segs) {
  json arr = json::array();
  for (const auto& s : segs)
    arr.push_back(json{{"slope", s.slope}, {"intercept", s.intercept}});
  return arr;
}

}  // namespace

CaseFile case_from_json_text(const std::string& content,
                             const std::string& origin) {
  json root;
  try {
    root = json::parse(content);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("case file: " + origin +
                                ": JSON parse error: " + e.what());
  }

  CaseFile c;
  check_keys(root,
             {"schema_version", "name", "base_mva", "seed", "grid", "agents",
              "trades", "policy", "solver"},
             origin);
  c.schema_version = integer(root, "schema_version", origin);
  if (c.schema_version != 1)
    schema_error(origin, "unsupported schema_version " +
                             std::to_string(c.schema_version));
  c.name = text(root, "name", origin);
  c.seed = root.contains("seed") ? root["seed"].get<std::uint64_t>() : 0;
  c.grid.base_mva = num_or(root, "base_mva", 100.0, origin);

  // ---- grid ----
  const json& g = require(root, "grid", origin);
  check_keys(g,
             {"slack_bus", "buses", "ac_lines", "hvdc_lines", "dist_lines",
              "connection_points"},
             "grid");
  c.grid.slack_bus = integer(g, "slack_bus", "grid");
  for (size_t i = 0; i < require(g, "buses", "grid").size(); ++i) {
    const json& jb = g["buses"][i];
    const std::string ctx = "grid.buses[" + std::to_string(i) + "]";
    check_keys(jb, {"id", "level", "dso", "v_min", "v_max", "theta_min",
                    "theta_max"},
               ctx);
    Bus b;
    b.id = integer(jb, "id", ctx);
    const std::string level = text(jb, "level", ctx);
    if (level == "transmission") {
      b.level = BusLevel::Transmission;
      b.so_id = 0;
    } else if (level == "distribution") {
      b.level = BusLevel::Distribution;
      b.so_id = integer(jb, "dso", ctx);
      b.v_min = num_or(jb, "v_min", 0.9, ctx);
      b.v_max = num_or(jb, "v_max", 1.1, ctx);
      b.theta_min = num_or(jb, "theta_min", -0.6, ctx);
      b.theta_max = num_or(jb, "theta_max", 0.6, ctx);
    } else {
      schema_error(ctx, "level must be \"transmission\" or \"distribution\"");
    }
    c.grid.buses.push_back(b);
  }

  int default_segments = 2;
  if (root.contains("solver") && root["solver"].contains("loss_segments"))
    default_segments = root["solver"]["loss_segments"].get<int>();

  if (g.contains("ac_lines"))
    for (size_t i = 0; i < g["ac_lines"].size(); ++i) {
      const json& jl = g["ac_lines"][i];
      const std::string ctx = "grid.ac_lines[" + std::to_string(i) + "]";
      check_keys(jl, {"from", "to", "reactance", "resistance", "capacity",
                      "loss_segments"},
                 ctx);
      AcLine l;
      l.from = integer(jl, "from", ctx);
      l.to = integer(jl, "to", ctx);
      l.reactance = num(jl, "reactance", ctx);
      l.resistance = num(jl, "resistance", ctx);
      l.capacity = num(jl, "capacity", ctx);
      if (jl.contains("loss_segments"))
        l.loss = parse_segments(jl["loss_segments"], ctx + ".loss_segments");
      else
        l.loss = fit_loss_linearization(l.resistance / c.grid.base_mva,
                                        l.capacity, default_segments);
      c.grid.ac_lines.push_back(l);
    }
  if (g.contains("hvdc_lines"))
    for (size_t i = 0; i < g["hvdc_lines"].size(); ++i) {
      const json& jl = g["hvdc_lines"][i];
      const std::string ctx = "grid.hvdc_lines[" + std::to_string(i) + "]";
      check_keys(jl, {"from", "to", "capacity"}, ctx);
      c.grid.hvdc_lines.push_back({integer(jl, "from", ctx),
                                   integer(jl, "to", ctx),
                                   num(jl, "capacity", ctx)});
    }
  if (g.contains("dist_lines"))
    for (size_t i = 0; i < g["dist_lines"].size(); ++i) {
      const json& jl = g["dist_lines"][i];
      const std::string ctx = "grid.dist_lines[" + std::to_string(i) + "]";
      check_keys(jl,
                 {"from", "to", "susceptance", "conductance",
                  "shunt_susceptance", "apparent_capacity", "resistance",
                  "loss_segments"},
                 ctx);
      DistLine l;
      l.from = integer(jl, "from", ctx);
      l.to = integer(jl, "to", ctx);
      l.susceptance = num(jl, "susceptance", ctx);
      l.conductance = num_or(jl, "conductance", 0.0, ctx);
      l.shunt_susceptance = num_or(jl, "shunt_susceptance", 0.0, ctx);
      l.apparent_capacity = num(jl, "apparent_capacity", ctx);
      l.resistance = num(jl, "resistance", ctx);
      if (jl.contains("loss_segments"))
        l.loss = parse_segments(jl["loss_segments"], ctx + ".loss_segments");
      else
        l.loss = fit_loss_linearization(l.resistance / c.grid.base_mva,
                                        l.apparent_capacity, default_segments);
      c.grid.dist_lines.push_back(l);
    }
  if (g.contains("connection_points"))
    for (size_t i = 0; i < g["connection_points"].size(); ++i) {
      const json& jc = g["connection_points"][i];
      const std::string ctx = "grid.connection_points[" + std::to_string(i) + "]";
      check_keys(jc, {"id", "transmission_bus", "dso", "feeder_bus"}, ctx);
      c.grid.connection_points.push_back(
          {integer(jc, "id", ctx), integer(jc, "transmission_bus", ctx),
           integer(jc, "dso", ctx), integer(jc, "feeder_bus", ctx)});
    }

  // ---- agents ----
  for (size_t i = 0; i < require(root, "agents", origin).size(); ++i) {
    const json& ja = root["agents"][i];
    const std::string ctx = "agents[" + std::to_string(i) + "]";
    check_keys(ja, {"id", "bus", "p_min", "p_max", "q_min", "q_max",
                    "cost_quad", "cost_lin"},
               ctx);
    Agent a;
    a.id = integer(ja, "id", ctx);
    a.bus = integer(ja, "bus", ctx);
    a.p_min = num(ja, "p_min", ctx);
    a.p_max = num(ja, "p_max", ctx);
    a.q_min = num_or(ja, "q_min", 0.0, ctx);
    a.q_max = num_or(ja, "q_max", 0.0, ctx);
    a.cost_quad = num_or(ja, "cost_quad", 0.0, ctx);
    a.cost_lin = num_or(ja, "cost_lin", 0.0, ctx);
    c.agents.push_back(a);
  }

  // ---- trades ----
  const json& jt = require(root, "trades", origin);
  check_keys(jt, {"topology", "pairs", "partners"}, "trades");
  if (jt.contains("pairs")) {
    std::vector<std::pair<int, int>> pairs;
    for (const auto& p : jt["pairs"]) {
      if (!p.is_array() || p.size() != 2)
        schema_error("trades.pairs", "each pair must be [i, j]");
      pairs.push_back({p[0].get<int>(), p[1].get<int>()});
    }
    c.trades = TradeGraph::from_pairs(pairs);
  } else if (jt.contains("partners")) {
    std::vector<std::pair<int, std::vector<int>>> omega;
    for (auto it = jt["partners"].begin(); it != jt["partners"].end(); ++it) {
      std::vector<int> ps;
      for (const auto& v : it.value()) ps.push_back(v.get<int>());
      omega.push_back({std::stoi(it.key()), ps});
    }
    c.trades = TradeGraph::from_partner_sets(omega);
  } else if (jt.contains("topology")) {
    const std::string topo = jt["topology"].get<std::string>();
    if (topo == "full") {
      c.trades = TradeGraph::full(c.agents);
    } else if (topo == "community") {
      // Agents within each DSO trade with their feeder agents; feeder agents
      // and transmission agents form a full graph among themselves.
      std::vector<std::pair<int, int>> pairs;
      std::vector<int> hub;  // transmission agents and feeder-bus agents
      for (const auto& a : c.agents) {
        const Bus& b = c.grid.bus(a.bus);
        bool is_hub = b.level == BusLevel::Transmission;
        for (const auto& cp : c.grid.connection_points)
          if (cp.feeder_bus == a.bus) is_hub = true;
        if (is_hub) hub.push_back(a.id);
      }
      for (size_t i = 0; i < hub.size(); ++i)
        for (size_t j = i + 1; j < hub.size(); ++j)
          pairs.push_back({hub[i], hub[j]});
      for (const auto& a : c.agents) {
        const Bus& b = c.grid.bus(a.bus);
        if (b.level != BusLevel::Distribution) continue;
        if (std::find(hub.begin(), hub.end(), a.id) != hub.end()) continue;
        for (const auto& m : c.agents) {
          if (m.id == a.id) continue;
          const Bus& mb = c.grid.bus(m.bus);
          if (mb.level == BusLevel::Distribution && mb.so_id == b.so_id &&
              std::find(hub.begin(), hub.end(), m.id) != hub.end())
            pairs.push_back({a.id, m.id});
        }
      }
      c.trades = TradeGraph::from_pairs(pairs);
    } else {
      schema_error("trades.topology", "must be \"full\" or \"community\"");
    }
  } else {
    schema_error("trades", "needs \"topology\", \"pairs\" or \"partners\"");
  }

  // ---- policy ----
  const json& jp = require(root, "policy", origin);
  check_keys(jp, {"kind", "chi"}, "policy");
  const std::string kind = text(jp, "kind", "policy");
  if (kind == "soc")
    c.policy = PolicyKind::Socialization;
  else if (kind == "ind")
    c.policy = PolicyKind::Individual;
  else if (kind == "cap")
    c.policy = PolicyKind::CapacityScaled;
  else
    schema_error("policy.kind", "must be \"soc\", \"ind\" or \"cap\"");
  c.chi = num_or(jp, "chi", kind == "soc" ? 1.0 : 0.0, "policy");
  if (c.chi < 0.0 || c.chi > 1.0)
    schema_error("policy.chi", "must lie in [0, 1]");

  // ---- solver ----
  if (root.contains("solver")) {
    const json& js = root["solver"];
    check_keys(js,
               {"backend", "tol", "max_iter", "soc_mode", "cuts",
                "loss_segments", "admm_rho", "admm_max_iter",
                "admm_eps_primal", "admm_eps_dual"},
               "solver");
    if (js.contains("backend"))
      c.solver.backend = js["backend"].get<std::string>();
    c.solver.tol = num_or(js, "tol", c.solver.tol, "solver");
    if (js.contains("max_iter")) c.solver.max_iter = js["max_iter"].get<int>();
    if (js.contains("soc_mode")) {
      const std::string m = js["soc_mode"].get<std::string>();
      if (m == "native")
        c.solver.soc_mode = SocMode::Native;
      else if (m == "polygon")
        c.solver.soc_mode = SocMode::Polygon;
      else
        schema_error("solver.soc_mode", "must be \"native\" or \"polygon\"");
    }
    if (js.contains("cuts")) c.solver.cuts = js["cuts"].get<int>();
    if (js.contains("loss_segments"))
      c.solver.loss_segments = js["loss_segments"].get<int>();
    c.solver.admm_rho = num_or(js, "admm_rho", c.solver.admm_rho, "solver");
    if (js.contains("admm_max_iter"))
      c.solver.admm_max_iter = js["admm_max_iter"].get<int>();
    c.solver.admm_eps_primal =
        num_or(js, "admm_eps_primal", c.solver.admm_eps_primal, "solver");
    c.solver.admm_eps_dual =
        num_or(js, "admm_eps_dual", c.solver.admm_eps_dual, "solver");
  }

  c.grid.validate();
  Diagnostics diag = validate(c.agents, c.trades, c.grid);
  if (!diag.ok()) {
    std::ostringstream os;
    os << "case file: " << origin << ": semantic errors:";
    for (const auto& e : diag.errors) os << "\n  " << e;
    throw std::invalid_argument(os.str());
  }
  return c;
}

CaseFile load_case(const std::string& path) {
  return case_from_json_text(read_file(path), path);
}

std::string case_to_json_text(const CaseFile& c) {
  json root;
  root["schema_version"] = c.schema_version;
  root["name"] = c.name;
  root["base_mva"] = c.grid.base_mva;
  root["seed"] = c.seed;

  json buses = json::array();
  for (const auto& b : c.grid.buses) {
    json jb;
    jb["id"] = b.id;
    if (b.level == BusLevel::Transmission) {
      jb["level"] = "transmission";
    } else {
      jb["level"] = "distribution";
      jb["dso"] = b.so_id;
      jb["v_min"] = b.v_min;
      jb["v_max"] = b.v_max;
      jb["theta_min"] = b.theta_min;
      jb["theta_max"] = b.theta_max;
    }
    buses.push_back(jb);
  }
  json ac = json::array();
  for (const auto& l : c.grid.ac_lines)
    ac.push_back(json{{"from", l.from},
                      {"to", l.to},
                      {"reactance", l.reactance},
                      {"resistance", l.resistance},
                      {"capacity", l.capacity},
                      {"loss_segments", segments_json(l.loss)}});
  json dc = json::array();
  for (const auto& l : c.grid.hvdc_lines)
    dc.push_back(
        json{{"from", l.from}, {"to", l.to}, {"capacity", l.capacity}});
  json dist = json::array();
  for (const auto& l : c.grid.dist_lines)
    dist.push_back(json{{"from", l.from},
                        {"to", l.to},
                        {"susceptance", l.susceptance},
                        {"conductance", l.conductance},
                        {"shunt_susceptance", l.shunt_susceptance},
                        {"apparent_capacity", l.apparent_capacity},
                        {"resistance", l.resistance},
                        {"loss_segments", segments_json(l.loss)}});
  json conns = json::array();
  for (const auto& cp : c.grid.connection_points)
    conns.push_back(json{{"id", cp.id},
                         {"transmission_bus", cp.transmission_bus},
                         {"dso", cp.dso_id},
                         {"feeder_bus", cp.feeder_bus}});
  root["grid"] = json{{"slack_bus", c.grid.slack_bus},
                      {"buses", buses},
                      {"ac_lines", ac},
                      {"hvdc_lines", dc},
                      {"dist_lines", dist},
                      {"connection_points", conns}};

  json agents = json::array();
  for (const auto& a : c.agents)
    agents.push_back(json{{"id", a.id},
                          {"bus", a.bus},
                          {"p_min", a.p_min},
                          {"p_max", a.p_max},
                          {"q_min", a.q_min},
                          {"q_max", a.q_max},
                          {"cost_quad", a.cost_quad},
                          {"cost_lin", a.cost_lin}});
  root["agents"] = agents;

  json pairs = json::array();
  for (const auto& [i, j] : c.trades.pairs())
    pairs.push_back(json::array({i, j}));
  root["trades"] = json{{"pairs", pairs}};

  root["policy"] = json{{"kind", to_string(c.policy)}, {"chi", c.chi}};
  root["solver"] =
      json{{"backend", c.solver.backend},
           {"tol", c.solver.tol},
           {"max_iter", c.solver.max_iter},
           {"soc_mode", c.solver.soc_mode == SocMode::Native ? "native"
                                                             : "polygon"},
           {"cuts", c.solver.cuts},
           {"loss_segments", c.solver.loss_segments},
           {"admm_rho", c.solver.admm_rho},
           {"admm_max_iter", c.solver.admm_max_iter},
           {"admm_eps_primal", c.solver.admm_eps_primal},
           {"admm_eps_dual", c.solver.admm_eps_dual}};
  return root.dump(2) + "\n";
}

void save_case(const CaseFile& c, const std::string& path) {
  write_file(path, case_to_json_text(c));
}

std::string case_hash(const CaseFile& c) {
  const std::string text = case_to_json_text(c);
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

AllocationMatrix build_policy(const GridModel& grid,
                              const std::vector<Agent>& agents,
                              const TradeGraph& trades, PolicyKind kind,
                              double chi) {
  const AllocationMatrix soc = build_socialization(grid, agents, trades);
  if (kind == PolicyKind::Socialization) return soc;
  const Eigen::MatrixXd tf = build_modified_tf(grid, build_ptdf(grid));
  AllocationMatrix ind = kind == PolicyKind::CapacityScaled
                             ? build_capacity_scaled(grid, agents, trades, tf)
                             : build_individual(grid, agents, trades, tf);
  if (chi == 0.0) return ind;
  AllocationMatrix mixed = mix(soc, ind, chi);
  return mixed;
}

ClearingOptions clearing_options(const SolverConfig& solver) {
  ClearingOptions opt;
  opt.soc_mode = solver.soc_mode;
  opt.polygon_cuts = solver.cuts;
  opt.tol.feasibility = solver.tol;
  opt.tol.gap = solver.tol;
  opt.tol.max_iterations = solver.max_iter;
  return opt;
}

AdmmOptions admm_options(const SolverConfig& solver) {
  AdmmOptions opt;
  opt.rho = solver.admm_rho;
  opt.max_iterations = solver.admm_max_iter;
  opt.eps_primal = solver.admm_eps_primal;
  opt.eps_dual = solver.admm_eps_dual;
  opt.subproblem_tol.feasibility = std::max(solver.tol, 1e-10);
  opt.subproblem_tol.gap = std::max(solver.tol, 1e-10);
  opt.subproblem_tol.max_iterations = solver.max_iter;
  return opt;
}

std::string settlement_csv(const SettlementReport& report) {
  std::ostringstream os;
  os << "agent,bus,payment,delta,delta_pct,losses,delta_distance,pi\n";
  for (const auto& a : report.agents) {
    os << a.agent_id << "," << a.bus << "," << fmt(a.payment) << ",";
    if (a.delta) os << fmt(*a.delta);
    os << ",";
    if (a.delta_pct) os << fmt(*a.delta_pct);
    os << "," << fmt(a.allocated_losses) << ",";
    if (a.distance) os << fmt(*a.distance);
    os << "," << fmt(a.pi) << "\n";
  }
  return os.str();
}

std::string lines_csv(const std::vector<LineRecord>& lines) {
  std::ostringstream os;
  os << "line,flow,limit,loading,loss\n";
  for (const auto& l : lines)
    os << l.name << "," << fmt(l.flow) << "," << fmt(l.limit) << ","
       << fmt(l.loading) << "," << fmt(l.loss) << "\n";
  return os.str();
}

std::string trades_csv(const ClearingProblem& problem,
                       const ClearingSolution& solution) {
  const VarMap& vm = problem.vars;
  std::ostringstream os;
  os << "i,j,t,w,z,tau_t,tau_z,tau_l\n";
  for (int d = 0; d < vm.n_directed; ++d) {
    auto [i, j] = problem.trades.directed(d);
    os << i << "," << j << "," << fmt(solution.x[vm.t(d)]) << ",";
    if (vm.w_trade0 >= 0) os << fmt(solution.x[vm.w_trade(d)]);
    os << "," << fmt(solution.x[vm.z(d)]) << ","
       << fmt(solution.tau_t[problem.trades.pair_of(d)]) << ","
       << fmt(solution.tau_z[d]) << ",";
    if (solution.tau_l.size()) os << fmt(solution.tau_l[d]);
    os << "\n";
  }
  return os.str();
}

std::string prices_json_text(const ClearingProblem& problem,
                             const ClearingSolution& solution) {
  const PriceTables t = extract_prices(problem, solution);
  json root;
  json pis = json::object();
  for (size_t a = 0; a < t.agent_ids.size(); ++a)
    pis[std::to_string(t.agent_ids[a])] = t.pi[static_cast<int>(a)];
  root["pi"] = pis;
  json taus = json::array();
  for (size_t k = 0; k < t.pairs.size(); ++k)
    taus.push_back(json{{"i", t.pairs[k].first},
                        {"j", t.pairs[k].second},
                        {"tau_t", t.tau_t[static_cast<int>(k)]}});
  root["tau_t"] = taus;
  json dir = json::array();
  for (size_t d = 0; d < t.directed.size(); ++d) {
    json row{{"i", t.directed[d].first},
             {"j", t.directed[d].second},
             {"tau_z", t.tau_z[static_cast<int>(d)]}};
    if (t.tau_l.size()) row["tau_l"] = t.tau_l[static_cast<int>(d)];
    dir.push_back(row);
  }
  root["trades"] = dir;
  if (t.tau_e.size()) {
    json e = json::object();
    for (size_t c = 0; c < t.connection_ids.size(); ++c)
      e[std::to_string(t.connection_ids[c])] = t.tau_e[static_cast<int>(c)];
    root["tau_e"] = e;
  }
  if (t.lambda.size()) {
    json lam = json::object();
    for (size_t r = 0; r < t.dso_bus_ids.size(); ++r)
      lam[std::to_string(t.dso_bus_ids[r])] = t.lambda[static_cast<int>(r)];
    root["lambda"] = lam;
  }
  return root.dump(2) + "\n";
}

std::string admm_log_csv(const AdmmResult& result) {
  std::ostringstream os;
  os << "iteration,primal_residual,dual_residual,objective\n";
  for (const auto& it : result.history)
    os << it.iteration << "," << fmt(it.primal_residual) << ","
       << fmt(it.dual_residual) << "," << fmt(it.objective) << "\n";
  return os.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace p2pclear
