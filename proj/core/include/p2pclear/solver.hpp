#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace p2pclear {

/// Disc (second-order cone in two variables): x_u^2 + x_v^2 <= radius^2.
struct DiscConstraint {
  int var_x = -1;
  int var_y = -1;
  double radius = 0.0;
};

/// Convex quadratic program with linear equalities/inequalities and disc
/// constraints. Quadratic term must be positive semidefinite.
///
///   min 1/2 x'Qx + c'x
///   s.t. A_eq x = b_eq
///        A_in x <= b_in
///        x_u^2 + x_v^2 <= r^2  for each disc
struct ConicProgram {
  int num_vars = 0;
  Eigen::MatrixXd Q;  // n x n, empty means zero
  Eigen::VectorXd c;
  Eigen::MatrixXd A_eq;
  Eigen::VectorXd b_eq;
  Eigen::MatrixXd A_in;
  Eigen::VectorXd b_in;
  std::vector<DiscConstraint> discs;

  /// Throws std::invalid_argument on inconsistent dimensions or invalid discs.
  void validate() const;
};

enum class SolveStatus {
  Optimal,
  Infeasible,
  Unbounded,
  NumericalFailure,
};

const char* to_string(SolveStatus status);

struct Tolerances {
  double feasibility = 1e-9;  // primal residual, scaled
  double gap = 1e-9;          // mean complementarity, scaled
  int max_iterations = 200;
};

/// Dual conventions: with Lagrangian
///   L = f(x) + y'(A_eq x - b_eq) + mu'(A_in x - b_in) + eta'(g(x))
/// eq_duals = y (free sign), in_duals = mu >= 0, disc_duals = eta >= 0.
struct SolveResult {
  SolveStatus status = SolveStatus::NumericalFailure;
  Eigen::VectorXd x;
  Eigen::VectorXd eq_duals;
  Eigen::VectorXd in_duals;
  Eigen::VectorXd disc_duals;
  double objective = 0.0;
  int iterations = 0;
  std::string message;

  bool optimal() const { return status == SolveStatus::Optimal; }
};

class SolverBackend {
 public:
  virtual ~SolverBackend() = default;
  virtual SolveResult solve(const ConicProgram& program,
                            const Tolerances& tol) const = 0;
  virtual bool supports_native_discs() const = 0;
  virtual std::string name() const = 0;
};

/// Dense primal-dual interior-point method (Mehrotra predictor-corrector)
/// for convex QPs. Disc constraints are handled natively as convex quadratic
/// inequality rows. Deterministic: identical inputs and tolerances produce
/// bit-identical results.
///
/// Infeasibility is certified with a phase-1 solve (minimize the maximum
/// constraint violation) whenever the main iteration fails to converge.
class ReferenceIpm final : public SolverBackend {
 public:
  SolveResult solve(const ConicProgram& program,
                    const Tolerances& tol) const override;
  bool supports_native_discs() const override { return true; }
  std::string name() const override { return "reference-ipm"; }
};

/// Replaces every disc by `cuts` half-planes tangent to the chords of the
/// inscribed regular polygon with a vertex on the positive x axis. The
/// resulting feasible set is the polygon: it under-approximates the disc
/// radius by at most a factor cos(pi/cuts) in any direction.
/// Requires cuts >= 4 and even.
ConicProgram polygonalize_cones(const ConicProgram& program, int cuts);

}  // namespace p2pclear
