#include "p2pclear/grid.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <queue>
#include <set>
#include <sstream>
#include <stdexcept>

namespace p2pclear {

namespace {

[[noreturn]] void structural_error(const std::string& msg) {
  throw std::invalid_argument("GridModel: " + msg);
}

std::string join_ids(const std::vector<int>& ids) {
  std::ostringstream os;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) os << ", ";
    os << ids[i];
  }
  return os.str();
}

// Buses not reachable from `root` over the given edges (indices into `nodes`).
std::vector<int> unreachable(const std::vector<int>& nodes,
                             const std::vector<std::pair<int, int>>& edges,
                             int root) {
  std::map<int, std::vector<int>> adj;
  for (const auto& [a, b] : edges) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  std::set<int> seen;
  std::queue<int> q;
  q.push(root);
  seen.insert(root);
  while (!q.empty()) {
    int u = q.front();
    q.pop();
    for (int v : adj[u]) {
      if (seen.insert(v).second) q.push(v);
    }
  }
  std::vector<int> missing;
  for (int n : nodes)
    if (!seen.count(n)) missing.push_back(n);
  return missing;
}

}  // namespace

int GridModel::bus_index(int bus_id) const {
  for (size_t i = 0; i < buses.size(); ++i)
    if (buses[i].id == bus_id) return static_cast<int>(i);
  structural_error("unknown bus id " + std::to_string(bus_id));
}

bool GridModel::has_bus(int bus_id) const {
  for (const auto& b : buses)
    if (b.id == bus_id) return true;
  return false;
}

std::vector<int> GridModel::transmission_bus_indices() const {
  std::vector<int> out;
  for (size_t i = 0; i < buses.size(); ++i)
    if (buses[i].level == BusLevel::Transmission)
      out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> GridModel::distribution_bus_indices(int dso_id) const {
  std::vector<int> out;
  for (size_t i = 0; i < buses.size(); ++i)
    if (buses[i].level == BusLevel::Distribution && buses[i].so_id == dso_id)
      out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> GridModel::dso_ids() const {
  std::set<int> ids;
  for (const auto& b : buses)
    if (b.level == BusLevel::Distribution) ids.insert(b.so_id);
  return {ids.begin(), ids.end()};
}

const ConnectionPoint& GridModel::primary_connection(int dso_id) const {
  for (const auto& c : connection_points)
    if (c.dso_id == dso_id) return c;
  structural_error("DSO " + std::to_string(dso_id) + " has no connection point");
}

bool GridModel::line_owned_by(int line, int so_id) const {
  return line_owner(line) == so_id;
}

int GridModel::line_owner(int line) const {
  const int n_ac = static_cast<int>(ac_lines.size());
  if (line < n_ac) return 0;
  return bus(dist_lines[line - n_ac].from).so_id;
}

Eigen::VectorXd GridModel::line_resistances() const {
  Eigen::VectorXd r(num_lossy_lines());
  int i = 0;
  for (const auto& l : ac_lines) r[i++] = l.resistance;
  for (const auto& l : dist_lines) r[i++] = l.resistance;
  return r;
}

std::pair<int, int> GridModel::line_endpoints(int line) const {
  const int n_ac = static_cast<int>(ac_lines.size());
  if (line < n_ac)
    return {bus_index(ac_lines[line].from), bus_index(ac_lines[line].to)};
  const auto& d = dist_lines[line - n_ac];
  return {bus_index(d.from), bus_index(d.to)};
}

std::string GridModel::line_name(int line) const {
  const int n_ac = static_cast<int>(ac_lines.size());
  std::ostringstream os;
  if (line < n_ac)
    os << "ac:" << ac_lines[line].from << "-" << ac_lines[line].to;
  else
    os << "dist:" << dist_lines[line - n_ac].from << "-"
       << dist_lines[line - n_ac].to;
  return os.str();
}

void GridModel::validate() const {
  if (buses.empty()) structural_error("no buses");
  std::set<int> ids;
  for (const auto& b : buses) {
    if (!ids.insert(b.id).second)
      structural_error("duplicate bus id " + std::to_string(b.id));
    if (b.level == BusLevel::Distribution) {
      if (b.so_id <= 0)
        structural_error("distribution bus " + std::to_string(b.id) +
                         " needs a DSO id >= 1");
      if (!(b.v_min < b.v_max))
        structural_error("bus " + std::to_string(b.id) + ": V bounds inverted");
      if (!(b.theta_min < b.theta_max))
        structural_error("bus " + std::to_string(b.id) +
                         ": angle bounds inverted");
    } else if (b.so_id != 0) {
      structural_error("transmission bus " + std::to_string(b.id) +
                       " must have so_id 0");
    }
  }

  if (!has_bus(slack_bus) || bus(slack_bus).level != BusLevel::Transmission)
    structural_error("slack bus must be an existing transmission bus");

  auto check_level = [&](int id, BusLevel level, const std::string& what) {
    if (!has_bus(id))
      structural_error(what + " references unknown bus " + std::to_string(id));
    if (bus(id).level != level)
      structural_error(what + " endpoint " + std::to_string(id) +
                       " has the wrong level");
  };

  for (const auto& l : ac_lines) {
    check_level(l.from, BusLevel::Transmission, "ac line");
    check_level(l.to, BusLevel::Transmission, "ac line");
    if (!(l.reactance > 0.0)) structural_error("ac line reactance must be > 0");
    if (!(l.capacity > 0.0)) structural_error("ac line capacity must be > 0");
    if (l.resistance < 0.0) structural_error("ac line resistance must be >= 0");
    for (size_t s = 1; s < l.loss.size(); ++s)
      if (l.loss[s].slope < l.loss[s - 1].slope)
        structural_error("ac line loss slopes must be nondecreasing");
  }
  for (const auto& h : hvdc_lines) {
    check_level(h.from, BusLevel::Transmission, "hvdc line");
    check_level(h.to, BusLevel::Transmission, "hvdc line");
    if (!(h.capacity > 0.0)) structural_error("hvdc capacity must be > 0");
  }
  for (const auto& d : dist_lines) {
    check_level(d.from, BusLevel::Distribution, "dist line");
    check_level(d.to, BusLevel::Distribution, "dist line");
    if (bus(d.from).so_id != bus(d.to).so_id)
      structural_error("dist line must stay within one DSO");
    if (!(d.apparent_capacity > 0.0))
      structural_error("dist line apparent capacity must be > 0");
    if (!(d.susceptance > 0.0))
      structural_error("dist line susceptance must be > 0");
  }

  std::set<int> conn_dsos;
  for (const auto& c : connection_points) {
    check_level(c.transmission_bus, BusLevel::Transmission, "connection point");
    check_level(c.feeder_bus, BusLevel::Distribution, "connection point");
    if (bus(c.feeder_bus).so_id != c.dso_id)
      structural_error("connection point " + std::to_string(c.id) +
                       ": feeder bus belongs to another DSO");
    conn_dsos.insert(c.dso_id);
  }
  for (int dso : dso_ids())
    if (!conn_dsos.count(dso))
      structural_error("DSO " + std::to_string(dso) + " has no connection point");

  // Transmission connectivity (AC and HVDC lines both connect).
  std::vector<int> tnodes;
  for (const auto& b : buses)
    if (b.level == BusLevel::Transmission) tnodes.push_back(b.id);
  std::vector<std::pair<int, int>> tedges;
  for (const auto& l : ac_lines) tedges.push_back({l.from, l.to});
  for (const auto& h : hvdc_lines) tedges.push_back({h.from, h.to});
  if (auto missing = unreachable(tnodes, tedges, slack_bus); !missing.empty())
    structural_error("transmission graph disconnected; unreachable buses: " +
                     join_ids(missing));

  for (int dso : dso_ids()) {
    std::vector<int> nodes;
    for (const auto& b : buses)
      if (b.level == BusLevel::Distribution && b.so_id == dso)
        nodes.push_back(b.id);
    std::vector<std::pair<int, int>> edges;
    for (const auto& d : dist_lines)
      if (bus(d.from).so_id == dso) edges.push_back({d.from, d.to});
    const int root = primary_connection(dso).feeder_bus;
    if (auto missing = unreachable(nodes, edges, root); !missing.empty())
      structural_error("DSO " + std::to_string(dso) +
                       " disconnected; unreachable buses: " + join_ids(missing));
  }
}

Eigen::MatrixXd build_ptdf(const GridModel& grid) {
  const int nb = static_cast<int>(grid.buses.size());
  const int nk = static_cast<int>(grid.ac_lines.size());
  Eigen::MatrixXd N = Eigen::MatrixXd::Zero(nk, nb);
  if (nk == 0) return N;

  // Connectivity over AC lines alone: PTDF needs an AC path to the slack.
  std::vector<int> tnodes;
  for (const auto& b : grid.buses)
    if (b.level == BusLevel::Transmission) tnodes.push_back(b.id);
  std::vector<std::pair<int, int>> edges;
  for (const auto& l : grid.ac_lines) edges.push_back({l.from, l.to});
  if (auto missing = unreachable(tnodes, edges, grid.slack_bus);
      !missing.empty())
    structural_error("AC transmission graph disconnected; unreachable buses: " +
                     join_ids(missing));

  // Local index of transmission buses, slack removed.
  std::vector<int> tbus = grid.transmission_bus_indices();
  const int slack_idx = grid.bus_index(grid.slack_bus);
  std::map<int, int> reduced;  // bus index -> reduced index
  int r = 0;
  for (int bi : tbus)
    if (bi != slack_idx) reduced[bi] = r++;
  const int nr = r;

  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(nr, nr);
  for (const auto& l : grid.ac_lines) {
    const double y = 1.0 / l.reactance;
    const int fi = grid.bus_index(l.from);
    const int ti = grid.bus_index(l.to);
    const bool f_red = reduced.count(fi), t_red = reduced.count(ti);
    if (f_red) B(reduced[fi], reduced[fi]) += y;
    if (t_red) B(reduced[ti], reduced[ti]) += y;
    if (f_red && t_red) {
      B(reduced[fi], reduced[ti]) -= y;
      B(reduced[ti], reduced[fi]) -= y;
    }
  }
  Eigen::MatrixXd X = B.ldlt().solve(Eigen::MatrixXd::Identity(nr, nr));

  for (int k = 0; k < nk; ++k) {
    const auto& l = grid.ac_lines[k];
    const double y = 1.0 / l.reactance;
    const int fi = grid.bus_index(l.from);
    const int ti = grid.bus_index(l.to);
    for (const auto& [bi, ri] : reduced) {
      double theta_f = reduced.count(fi) ? X(reduced.at(fi), ri) : 0.0;
      double theta_t = reduced.count(ti) ? X(reduced.at(ti), ri) : 0.0;
      N(k, bi) = y * (theta_f - theta_t);
    }
  }
  return N;
}

Eigen::MatrixXd build_modified_tf(const GridModel& grid,
                                  const Eigen::MatrixXd& ptdf) {
  const int nb = static_cast<int>(grid.buses.size());
  const int n_ac = static_cast<int>(grid.ac_lines.size());
  const int n_lines = grid.num_lossy_lines();
  Eigen::MatrixXd tf = Eigen::MatrixXd::Zero(n_lines, nb);

  // Transmission rows: PTDF values, distribution buses inherit the column of
  // their DSO's connection bus.
  tf.topRows(n_ac) = ptdf.topRows(n_ac);
  for (int dso : grid.dso_ids()) {
    const auto& conn = grid.primary_connection(dso);
    const int conn_idx = grid.bus_index(conn.transmission_bus);
    for (int bi : grid.distribution_bus_indices(dso))
      tf.col(bi).head(n_ac) = ptdf.col(conn_idx).head(n_ac);
  }

  // One PTDF block per DSO, feeder bus as reference, 1/B as reactance analog.
  for (int dso : grid.dso_ids()) {
    std::vector<int> dbus = grid.distribution_bus_indices(dso);
    const int feeder_idx = grid.bus_index(grid.primary_connection(dso).feeder_bus);
    std::map<int, int> reduced;
    int r = 0;
    for (int bi : dbus)
      if (bi != feeder_idx) reduced[bi] = r++;
    const int nr = r;
    if (nr == 0) continue;

    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(nr, nr);
    std::vector<int> lines;  // canonical indices of this DSO's lines
    for (int li = 0; li < static_cast<int>(grid.dist_lines.size()); ++li) {
      const auto& d = grid.dist_lines[li];
      if (grid.bus(d.from).so_id != dso) continue;
      lines.push_back(n_ac + li);
      const double y = d.susceptance;
      const int fi = grid.bus_index(d.from);
      const int ti = grid.bus_index(d.to);
      if (reduced.count(fi)) B(reduced[fi], reduced[fi]) += y;
      if (reduced.count(ti)) B(reduced[ti], reduced[ti]) += y;
      if (reduced.count(fi) && reduced.count(ti)) {
        B(reduced[fi], reduced[ti]) -= y;
        B(reduced[ti], reduced[fi]) -= y;
      }
    }
    Eigen::MatrixXd X = B.ldlt().solve(Eigen::MatrixXd::Identity(nr, nr));
    for (int line : lines) {
      const auto& d = grid.dist_lines[line - n_ac];
      const double y = d.susceptance;
      const int fi = grid.bus_index(d.from);
      const int ti = grid.bus_index(d.to);
      for (const auto& [bi, ri] : reduced) {
        double theta_f = reduced.count(fi) ? X(reduced.at(fi), ri) : 0.0;
        double theta_t = reduced.count(ti) ? X(reduced.at(ti), ri) : 0.0;
        tf(line, bi) = y * (theta_f - theta_t);
      }
    }
  }
  return tf;
}

std::vector<LossSegment> fit_loss_linearization(double resistance,
                                                double capacity, int segments) {
  if (resistance < 0.0)
    throw std::invalid_argument("fit_loss_linearization: resistance < 0");
  if (!(capacity > 0.0))
    throw std::invalid_argument("fit_loss_linearization: capacity must be > 0");
  if (segments < 1)
    throw std::invalid_argument("fit_loss_linearization: segments must be >= 1");

  // Continuous least squares of r f^2 against M f + Q on [a, b]:
  //   M = r (a + b),  Q = -r (a^2 + 4ab + b^2) / 6.
  std::vector<LossSegment> out;
  out.reserve(segments);
  for (int s = 0; s < segments; ++s) {
    const double a = capacity * s / segments;
    const double b = capacity * (s + 1) / segments;
    LossSegment seg;
    seg.slope = resistance * (a + b);
    seg.intercept = -resistance * (a * a + 4.0 * a * b + b * b) / 6.0;
    out.push_back(seg);
  }
  return out;
}

Eigen::MatrixXd build_loss_distribution(const GridModel& grid) {
  const int nb = static_cast<int>(grid.buses.size());
  const int nl = grid.num_lossy_lines();
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(nb, nl);
  for (int l = 0; l < nl; ++l) {
    auto [fi, ti] = grid.line_endpoints(l);
    D(fi, l) = 0.5;
    D(ti, l) = 0.5;
  }
  return D;
}

double pair_distance(const GridModel& grid, const Eigen::MatrixXd& tf,
                     int bus_a, int bus_b) {
  const int ia = grid.bus_index(bus_a);
  const int ib = grid.bus_index(bus_b);
  const Eigen::VectorXd r = grid.line_resistances();
  if (tf.rows() != r.size())
    throw std::invalid_argument("pair_distance: matrix rows != lossy lines");
  double d = 0.0;
  for (int l = 0; l < tf.rows(); ++l)
    d += std::abs(tf(l, ia) - tf(l, ib)) * r[l];
  return d;
}

}  // namespace p2pclear
