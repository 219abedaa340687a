#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace p2pclear {

/// One linear piece of a line-loss model: w >= slope*|f| + intercept.
/// The modelled loss is the max over segments, clipped at zero.
struct LossSegment {
  double slope = 0.0;      // MW per MW
  double intercept = 0.0;  // MW
};

enum class BusLevel { Transmission, Distribution };

/// so_id 0 is the transmission operator; distribution buses carry the id of
/// their DSO (>= 1). Angle/voltage bounds apply to distribution buses only.
struct Bus {
  int id = -1;
  BusLevel level = BusLevel::Transmission;
  int so_id = 0;
  double theta_min = -0.6, theta_max = 0.6;  // rad
  double v_min = 0.9, v_max = 1.1;           // p.u.
};

struct AcLine {
  int from = -1, to = -1;       // bus ids; flow is positive from -> to
  double reactance = 0.0;       // p.u.
  double resistance = 0.0;      // p.u.
  double capacity = 0.0;        // MW
  std::vector<LossSegment> loss;
};

/// Controllable injection pair: flow f withdraws at `from` and injects at
/// `to`. No loss model (spec'd as a pure transfer).
struct HvdcLine {
  int from = -1, to = -1;
  double capacity = 0.0;  // MW
};

struct DistLine {
  int from = -1, to = -1;
  double susceptance = 0.0;        // B, p.u. (> 0)
  double conductance = 0.0;        // G, p.u.
  double shunt_susceptance = 0.0;  // b0, p.u.
  double apparent_capacity = 0.0;  // MVA
  double resistance = 0.0;         // p.u.
  std::vector<LossSegment> loss;

  double b_star() const { return susceptance + 2.0 * shunt_susceptance; }
};

/// Coupling between a transmission bus and the root (feeder) bus of a DSO.
struct ConnectionPoint {
  int id = -1;
  int transmission_bus = -1;
  int dso_id = -1;
  int feeder_bus = -1;
};

/// Joint transmission/distribution network. Lossy lines are indexed in the
/// canonical order [ac lines..., dist lines...]; HVDC lines are kept apart
/// (no loss model, no allocation column).
class GridModel {
 public:
  double base_mva = 100.0;
  int slack_bus = -1;
  std::vector<Bus> buses;
  std::vector<AcLine> ac_lines;
  std::vector<HvdcLine> hvdc_lines;
  std::vector<DistLine> dist_lines;
  std::vector<ConnectionPoint> connection_points;

  /// Throws std::invalid_argument on structural problems (unknown bus ids,
  /// disconnected transmission graph, disconnected DSO, bad bounds, ...).
  void validate() const;

  int bus_index(int bus_id) const;  // throws on unknown id
  const Bus& bus(int bus_id) const { return buses[bus_index(bus_id)]; }
  bool has_bus(int bus_id) const;

  std::vector<int> transmission_bus_indices() const;
  std::vector<int> distribution_bus_indices(int dso_id) const;
  std::vector<int> dso_ids() const;  // sorted, distinct
  /// First connection point of a DSO (its feeder is the block reference).
  const ConnectionPoint& primary_connection(int dso_id) const;

  int num_lossy_lines() const {
    return static_cast<int>(ac_lines.size() + dist_lines.size());
  }
  /// true if lossy line `line` (canonical order) belongs to `so_id`.
  bool line_owned_by(int line, int so_id) const;
  int line_owner(int line) const;
  /// Resistances aligned with the canonical lossy-line order.
  Eigen::VectorXd line_resistances() const;
  /// Endpoint bus indices of lossy line `line` (canonical order).
  std::pair<int, int> line_endpoints(int line) const;
  std::string line_name(int line) const;
};

/// PTDF of the transmission system: row k gives the MW flow on AC line k per
/// 1 MW injected at a bus and withdrawn at the slack. Columns follow the full
/// bus vector; distribution-bus columns are zero, the slack column is zero.
/// Flow orientation: from -> to positive, so a 2-bus grid with slack at the
/// `from` end has N = [0, -1].
Eigen::MatrixXd build_ptdf(const GridModel& grid);

/// Block-per-SO extension of the PTDF (rows: canonical lossy lines,
/// columns: all buses). Distribution buses inherit their DSO's connection-bus
/// values on transmission-line rows; distribution blocks use per-DSO PTDFs
/// with 1/B as the reactance analog and the feeder bus as block reference.
/// Entries coupling a line to buses of a foreign SO block are zero.
Eigen::MatrixXd build_modified_tf(const GridModel& grid,
                                  const Eigen::MatrixXd& ptdf);

/// Least-squares piecewise-linear fit of the quadratic loss curve
/// w(f) = r f^2 over |f| in [0, capacity], split into `segments` equal
/// intervals. Single segment: slope = r*F, intercept = -r*F^2/6.
std::vector<LossSegment> fit_loss_linearization(double resistance,
                                                double capacity,
                                                int segments);

/// D: buses x lossy lines, 0.5 at each endpoint of a line. Columns sum to 1.
Eigen::MatrixXd build_loss_distribution(const GridModel& grid);

/// Resistance-weighted L1 distance between two bus columns of a PTDF-like
/// matrix whose rows follow the canonical lossy-line order.
double pair_distance(const GridModel& grid, const Eigen::MatrixXd& tf,
                     int bus_a, int bus_b);

}  // namespace p2pclear
