#include "p2pclear/caseio.hpp"

#include <cmath>
#include <cstdint>
#include <random>

namespace p2pclear {

namespace {

// Portable uniform draw (library distributions are not bit-stable across
// standard library implementations).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}
  double uniform(double lo, double hi) {
    const double u = (eng_() >> 11) * 0x1.0p-53;
    return lo + u * (hi - lo);
  }

 private:
  std::mt19937_64 eng_;
};

Bus tbus(int id) { return {id, BusLevel::Transmission, 0}; }

Bus dbus(int id, int dso) {
  Bus b{id, BusLevel::Distribution, dso};
  b.v_min = 0.9;
  b.v_max = 1.1;
  b.theta_min = -0.6;
  b.theta_max = 0.6;
  return b;
}

}  // namespace

CaseFile generate_five_bus() {
  CaseFile c;
  c.name = "five_bus";
  c.seed = 1;
  c.grid.base_mva = 100.0;
  c.grid.slack_bus = 1;
  c.grid.buses = {tbus(1), tbus(2), tbus(3), dbus(4, 1), dbus(5, 1)};

  // Constant loss segments (zero slope): losses do not move with flow, so
  // nodal prices stay flat and the per-SO loss totals are parameters. The
  // TSO total (0.10 MW) equals the DSO total by construction, which makes
  // the socialization policy charge the remote TSO load and the two DSO
  // loads identically.
  auto ac = [](int f, int t, double x, double r, double q) {
    AcLine l;
    l.from = f;
    l.to = t;
    l.reactance = x;
    l.resistance = r;
    l.capacity = 50.0;
    l.loss = {{0.0, q}};
    return l;
  };
  c.grid.ac_lines = {ac(1, 2, 0.30, 0.030, 0.04), ac(1, 3, 0.10, 0.010, 0.04),
                     ac(2, 3, 0.10, 0.010, 0.02)};
  DistLine d;
  d.from = 4;
  d.to = 5;
  d.susceptance = 25.0;
  d.conductance = 2.0;
  d.shunt_susceptance = 0.0;
  d.apparent_capacity = 10.0;
  d.resistance = 0.040;
  d.loss = {{0.0, 0.10}};
  c.grid.dist_lines = {d};
  c.grid.connection_points = {{1, 3, 1, 4}};

  c.agents = {
      {1, 1, 0.0, 20.0, -5.0, 5.0, 0.0, 20.0},  // generator
      {2, 2, -1.5, -1.5, 0.0, 0.0, 0.0, 0.0},   // remote TSO load
      {3, 4, -0.8, -0.8, 0.0, 0.0, 0.0, 0.0},   // at the feeder
      {4, 5, -1.2, -1.2, 0.0, 0.0, 0.0, 0.0},   // end of the feeder
  };
  c.trades = TradeGraph::full(c.agents);
  c.policy = PolicyKind::Socialization;
  c.chi = 1.0;
  return c;
}

CaseFile generate_five_bus_tight() {
  CaseFile c;
  c.name = "five_bus_tight";
  c.seed = 1;
  c.grid.base_mva = 100.0;
  c.grid.slack_bus = 1;
  c.grid.buses = {tbus(1), tbus(2), tbus(3), dbus(4, 1), dbus(5, 1)};

  auto ac = [&](int f, int t, double x, double r, double cap) {
    AcLine l;
    l.from = f;
    l.to = t;
    l.reactance = x;
    l.resistance = r;
    l.capacity = cap;
    l.loss = fit_loss_linearization(r / c.grid.base_mva, cap, 2);
    return l;
  };
  // Line 1-2 is sized below the unconstrained dispatch.
  c.grid.ac_lines = {ac(1, 2, 0.30, 0.030, 1.4), ac(1, 3, 0.10, 0.010, 4.0),
                     ac(2, 3, 0.10, 0.010, 4.0)};
  DistLine d;
  d.from = 4;
  d.to = 5;
  d.susceptance = 25.0;
  d.conductance = 2.0;
  d.shunt_susceptance = 0.001;
  d.apparent_capacity = 1.0;
  d.resistance = 0.040;
  d.loss = fit_loss_linearization(d.resistance / c.grid.base_mva,
                                  d.apparent_capacity, 2);
  c.grid.dist_lines = {d};
  c.grid.connection_points = {{1, 3, 1, 4}};

  c.agents = {
      {1, 1, 0.0, 20.0, -5.0, 5.0, 0.05, 15.0},    // cheap generator
      {2, 2, -3.0, -3.0, 0.0, 0.0, 0.0, 0.0},      // TSO load
      {3, 4, -0.5, -0.5, -0.1, 0.4, 0.0, 0.0},     // DSO load, some VAr room
      {4, 5, -0.8, -0.8, -0.35, -0.25, 0.0, 0.0},  // DSO load, needs VAr
      {5, 2, 0.0, 10.0, -3.0, 3.0, 0.10, 40.0},    // peaker at the TSO load
  };
  c.trades = TradeGraph::full(c.agents);
  c.policy = PolicyKind::Individual;
  c.chi = 0.0;
  return c;
}

CaseFile generate_uniform_tso() {
  CaseFile c;
  c.name = "uniform_tso";
  c.seed = 1;
  c.grid.base_mva = 100.0;
  c.grid.slack_bus = 1;
  c.grid.buses = {tbus(1), tbus(2), tbus(3)};
  auto ac = [&](int f, int t) {
    AcLine l;
    l.from = f;
    l.to = t;
    l.reactance = 0.10;
    l.resistance = 0.010;
    l.capacity = 100.0;
    l.loss = fit_loss_linearization(l.resistance / c.grid.base_mva,
                                    l.capacity, 2);
    return l;
  };
  c.grid.ac_lines = {ac(1, 2), ac(1, 3), ac(2, 3)};

  c.agents = {
      {1, 1, 0.0, 4.0, -2.0, 2.0, 0.0, 12.0},   // cheap, saturates
      {2, 2, 0.0, 10.0, -3.0, 3.0, 0.0, 20.0},  // marginal, interior
      {3, 2, -3.0, -3.0, 0.0, 0.0, 0.0, 0.0},
      {4, 3, -4.0, -4.0, 0.0, 0.0, 0.0, 0.0},
  };
  c.trades = TradeGraph::full(c.agents);
  c.policy = PolicyKind::Socialization;
  c.chi = 1.0;
  return c;
}

CaseFile generate_radial_six() {
  CaseFile c;
  c.name = "radial_six";
  c.seed = 1;
  c.grid.base_mva = 100.0;
  c.grid.slack_bus = 1;
  c.grid.buses = {tbus(1),      dbus(11, 1), dbus(12, 1),
                  dbus(13, 1), dbus(14, 1), dbus(15, 1)};
  auto dl = [&](int f, int t) {
    DistLine l;
    l.from = f;
    l.to = t;
    l.susceptance = 20.0;
    l.conductance = 1.0;
    l.shunt_susceptance = 0.0;
    l.apparent_capacity = 10.0;
    l.resistance = 0.050;
    l.loss = fit_loss_linearization(l.resistance / c.grid.base_mva,
                                    l.apparent_capacity, 2);
    return l;
  };
  c.grid.dist_lines = {dl(11, 12), dl(12, 13), dl(13, 14), dl(14, 15)};
  c.grid.connection_points = {{1, 1, 1, 11}};

  c.agents = {
      {1, 1, 0.0, 20.0, -5.0, 5.0, 0.0, 25.0},
      {2, 12, -1.0, -1.0, 0.0, 0.0, 0.0, 0.0},
      {3, 13, -1.0, -1.0, 0.0, 0.0, 0.0, 0.0},
      {4, 14, -1.0, -1.0, 0.0, 0.0, 0.0, 0.0},
      {5, 15, -1.0, -1.0, 0.0, 0.0, 0.0, 0.0},
  };
  c.trades = TradeGraph::from_pairs({{1, 2}, {1, 3}, {1, 4}, {1, 5}});
  c.policy = PolicyKind::Individual;
  c.chi = 0.0;
  return c;
}

CaseFile generate_random_case(int n_tso_bus, int n_dso, std::uint64_t seed) {
  if (n_tso_bus < 3 || n_dso < 1)
    throw std::invalid_argument(
        "generate_random_case: need >= 3 TSO buses and >= 1 DSO");
  Rng rng(seed);
  CaseFile c;
  c.name = "random_" + std::to_string(n_tso_bus) + "t_" +
           std::to_string(n_dso) + "d_s" + std::to_string(seed);
  c.seed = seed;
  c.grid.base_mva = 100.0;
  c.grid.slack_bus = 1;

  for (int b = 1; b <= n_tso_bus; ++b) c.grid.buses.push_back(tbus(b));
  auto ac = [&](int f, int t) {
    AcLine l;
    l.from = f;
    l.to = t;
    l.reactance = rng.uniform(0.05, 0.20);
    l.resistance = l.reactance / 10.0;
    l.capacity = 8.0;
    l.loss = fit_loss_linearization(l.resistance / c.grid.base_mva,
                                    l.capacity, 2);
    return l;
  };
  for (int b = 1; b <= n_tso_bus; ++b)
    c.grid.ac_lines.push_back(ac(b, b % n_tso_bus + 1));
  if (n_tso_bus >= 4) {
    c.grid.ac_lines.push_back(ac(1, 3));
    c.grid.hvdc_lines.push_back({2, n_tso_bus, 4.0});
  }

  // Feeders: 4 buses each, a short chain with one branch.
  for (int k = 1; k <= n_dso; ++k) {
    const int base_id = 100 * k;
    c.grid.buses.push_back(dbus(base_id + 1, k));  // feeder
    c.grid.buses.push_back(dbus(base_id + 2, k));
    c.grid.buses.push_back(dbus(base_id + 3, k));
    c.grid.buses.push_back(dbus(base_id + 4, k));
    auto dl = [&](int f, int t, double cap) {
      DistLine l;
      l.from = f;
      l.to = t;
      l.susceptance = rng.uniform(15.0, 30.0);
      l.conductance = rng.uniform(0.5, 2.0);
      l.shunt_susceptance = 0.0;
      l.apparent_capacity = cap;
      l.resistance = rng.uniform(0.02, 0.08);
      l.loss = fit_loss_linearization(l.resistance / c.grid.base_mva, cap, 2);
      return l;
    };
    c.grid.dist_lines.push_back(dl(base_id + 1, base_id + 2, 8.0));
    c.grid.dist_lines.push_back(dl(base_id + 2, base_id + 3, 5.0));
    c.grid.dist_lines.push_back(dl(base_id + 2, base_id + 4, 5.0));
    const int conn_bus = 2 + ((k - 1) % (n_tso_bus - 1));
    c.grid.connection_points.push_back({k, conn_bus, k, base_id + 1});
  }

  // Transmission-level agents: two generators, two flexible loads.
  c.agents.push_back({1, 1, 0.0, 15.0, -5.0, 5.0, 0.01, rng.uniform(10, 50)});
  c.agents.push_back({2, 3, 0.0, 15.0, -5.0, 5.0, 0.01, rng.uniform(10, 50)});
  for (int i = 0; i < 2; ++i) {
    const double demand = rng.uniform(2.0, 4.0);
    const double band = rng.uniform(0.0, 1.0);
    c.agents.push_back({3 + i, 2 + 2 * i <= n_tso_bus ? 2 + 2 * i : 2,
                        -demand, -demand + band, -1.0, 1.0, 0.05,
                        rng.uniform(10, 50)});
  }

  // Community members: two prosumers per non-feeder bus plus a zero-capacity
  // manager at each feeder.
  for (int k = 1; k <= n_dso; ++k) {
    const int base_id = 100 * k;
    c.agents.push_back(
        {100 * k, base_id + 1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0});  // manager
    int member = 1;
    for (int bus = base_id + 2; bus <= base_id + 4; ++bus)
      for (int rep = 0; rep < 2; ++rep) {
        const double demand = rng.uniform(0.6, 1.1);
        const double band = rng.uniform(0.0, 1.0);
        c.agents.push_back({100 * k + member++, bus, -demand, -demand + band,
                            -0.3, 0.3, 0.05, rng.uniform(10, 50)});
      }
  }

  // Community topology: members trade with their manager; managers and
  // transmission agents form a full graph.
  std::vector<std::pair<int, int>> pairs;
  std::vector<int> hub = {1, 2, 3, 4};
  for (int k = 1; k <= n_dso; ++k) hub.push_back(100 * k);
  for (size_t i = 0; i < hub.size(); ++i)
    for (size_t j = i + 1; j < hub.size(); ++j)
      pairs.push_back({hub[i], hub[j]});
  for (int k = 1; k <= n_dso; ++k)
    for (int member = 1; member <= 6; ++member)
      pairs.push_back({100 * k + member, 100 * k});
  c.trades = TradeGraph::from_pairs(pairs);

  c.policy = PolicyKind::CapacityScaled;
  c.chi = 0.0;
  return c;
}

}  // namespace p2pclear
