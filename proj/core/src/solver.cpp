#include "p2pclear/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace p2pclear {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Internal form: inequality rows may carry a convex quadratic part
// g(x) = x_u^2 + x_v^2 + a'x - b <= 0 (quad == false drops the square term).
struct IneqRow {
  bool quad = false;
  int u = -1, v = -1;
  Eigen::VectorXd a;
  double b = 0.0;
};

struct Internal {
  int n = 0;
  Eigen::MatrixXd Q;
  Eigen::VectorXd c;
  Eigen::MatrixXd A_eq;
  Eigen::VectorXd b_eq;
  std::vector<IneqRow> rows;
};

double eval_row(const IneqRow& r, const Eigen::VectorXd& x) {
  double g = r.a.dot(x) - r.b;
  if (r.quad) g += x[r.u] * x[r.u] + x[r.v] * x[r.v];
  return g;
}

void row_gradient(const IneqRow& r, const Eigen::VectorXd& x,
                  Eigen::VectorXd& out) {
  out = r.a;
  if (r.quad) {
    out[r.u] += 2.0 * x[r.u];
    out[r.v] += 2.0 * x[r.v];
  }
}

double max_step(const Eigen::VectorXd& v, const Eigen::VectorXd& dv) {
  double alpha = kInf;
  for (int i = 0; i < v.size(); ++i) {
    if (dv[i] < 0.0) alpha = std::min(alpha, -v[i] / dv[i]);
  }
  return alpha;
}

struct IpmOutcome {
  bool converged = false;
  bool diverged = false;
  Eigen::VectorXd x, y, mu;
  int iterations = 0;
  std::string note;
};

// Mehrotra predictor-corrector on
//   min 1/2 x'Qx + c'x  s.t.  A_eq x = b_eq,  g(x) + s = 0,  s >= 0.
IpmOutcome run_ipm(const Internal& prob, const Tolerances& tol) {
  const int n = prob.n;
  const int me = static_cast<int>(prob.A_eq.rows());
  const int mi = static_cast<int>(prob.rows.size());

  IpmOutcome out;

  // Start from a least-squares solution of the equalities.
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  if (me > 0) {
    x = prob.A_eq.colPivHouseholderQr().solve(prob.b_eq);
    if (!x.allFinite()) x.setZero();
  }
  Eigen::VectorXd y = Eigen::VectorXd::Zero(me);
  Eigen::VectorXd s(mi), mu(mi);
  for (int k = 0; k < mi; ++k) {
    const double g = eval_row(prob.rows[k], x);
    s[k] = std::max(1.0, -g);
    mu[k] = 1.0;
  }

  const double obj_scale =
      1.0 + prob.c.lpNorm<Eigen::Infinity>() +
      (prob.Q.size() ? prob.Q.lpNorm<Eigen::Infinity>() : 0.0);
  const double eq_scale = 1.0 + (me ? prob.b_eq.lpNorm<Eigen::Infinity>() : 0.0);
  double in_scale = 1.0;
  for (const auto& r : prob.rows) in_scale = std::max(in_scale, std::abs(r.b));

  Eigen::MatrixXd G(mi, n);
  Eigen::VectorXd g(mi), grad(n);

  const int np = n + me;
  Eigen::MatrixXd K(np, np);
  Eigen::VectorXd rhs(np), sol(np);

  for (int iter = 0; iter < tol.max_iterations; ++iter) {
    out.iterations = iter;

    for (int k = 0; k < mi; ++k) {
      g[k] = eval_row(prob.rows[k], x);
      row_gradient(prob.rows[k], x, grad);
      G.row(k) = grad.transpose();
    }

    Eigen::VectorXd r_dual = prob.c;
    if (prob.Q.size()) r_dual += prob.Q * x;
    if (me) r_dual += prob.A_eq.transpose() * y;
    if (mi) r_dual += G.transpose() * mu;
    Eigen::VectorXd r_eq = me ? (prob.A_eq * x - prob.b_eq).eval()
                              : Eigen::VectorXd();
    Eigen::VectorXd r_prim = g + s;
    const double comp = mi ? mu.dot(s) / mi : 0.0;

    const double nd = r_dual.lpNorm<Eigen::Infinity>();
    const double ne = me ? r_eq.lpNorm<Eigen::Infinity>() : 0.0;
    const double ni = mi ? r_prim.lpNorm<Eigen::Infinity>() : 0.0;
    if (nd <= 10.0 * tol.feasibility * obj_scale &&
        ne <= tol.feasibility * eq_scale &&
        ni <= tol.feasibility * in_scale && comp <= tol.gap * obj_scale) {
      out.converged = true;
      break;
    }
    if (!x.allFinite() || !mu.allFinite() ||
        mu.lpNorm<Eigen::Infinity>() > 1e14 ||
        x.lpNorm<Eigen::Infinity>() > 1e14) {
      out.diverged = true;
      out.note = "iterates diverged";
      break;
    }

    // H = Q + sum mu_k Hess g_k + regularization
    Eigen::MatrixXd H = prob.Q.size()
                            ? prob.Q
                            : Eigen::MatrixXd::Zero(n, n).eval();
    for (int k = 0; k < mi; ++k) {
      const auto& r = prob.rows[k];
      if (r.quad) {
        H(r.u, r.u) += 2.0 * mu[k];
        H(r.v, r.v) += 2.0 * mu[k];
      }
    }
    const double reg_p = 1e-11 * obj_scale;
    const double reg_d = 1e-11 * std::max(1.0, eq_scale);

    K.setZero();
    K.topLeftCorner(n, n) = H;
    if (mi) {
      // H + G' diag(mu/s) G
      Eigen::VectorXd w = (mu.array() / s.array()).matrix();
      K.topLeftCorner(n, n).noalias() += G.transpose() * w.asDiagonal() * G;
    }
    K.topLeftCorner(n, n).diagonal().array() += reg_p;
    if (me) {
      K.topRightCorner(n, me) = prob.A_eq.transpose();
      K.bottomLeftCorner(me, n) = prob.A_eq;
      K.bottomRightCorner(me, me).diagonal().array() -= reg_d;
    }
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(K);

    auto solve_step = [&](const Eigen::VectorXd& r_comp, Eigen::VectorXd& dx,
                          Eigen::VectorXd& dy, Eigen::VectorXd& ds,
                          Eigen::VectorXd& dmu) {
      rhs.head(n) = -r_dual;
      if (mi) {
        Eigen::VectorXd tmp =
            ((r_comp.array() - mu.array() * r_prim.array()) / s.array())
                .matrix();
        rhs.head(n).noalias() += G.transpose() * tmp;
      }
      if (me) rhs.tail(me) = -r_eq;
      sol = lu.solve(rhs);
      dx = sol.head(n);
      dy = me ? sol.tail(me).eval() : Eigen::VectorXd();
      if (mi) {
        ds = -r_prim - G * dx;
        dmu = ((-r_comp.array() - mu.array() * ds.array()) / s.array())
                  .matrix();
      }
    };

    Eigen::VectorXd dx, dy, ds, dmu;
    Eigen::VectorXd r_comp = (mu.array() * s.array()).matrix();  // affine
    solve_step(r_comp, dx, dy, ds, dmu);

    double sigma = 0.0;
    if (mi) {
      const double ap = std::min(1.0, max_step(s, ds));
      const double ad = std::min(1.0, max_step(mu, dmu));
      const double comp_aff =
          (mu + ad * dmu).dot(s + ap * ds) / mi;
      sigma = std::pow(std::max(comp_aff, 0.0) / std::max(comp, 1e-300), 3.0);
      sigma = std::clamp(sigma, 1e-8, 1.0 - 1e-8);
      r_comp = (mu.array() * s.array() + dmu.array() * ds.array() -
                sigma * comp)
                   .matrix();
      solve_step(r_comp, dx, dy, ds, dmu);
    }

    const double eta = 0.995;
    double ap = 1.0, ad = 1.0;
    if (mi) {
      ap = std::min(1.0, eta * max_step(s, ds));
      ad = std::min(1.0, eta * max_step(mu, dmu));
    }
    x += ap * dx;
    if (mi) {
      s += ap * ds;
      mu += ad * dmu;
    }
    if (me) y += ad * dy;
  }

  out.x = x;
  out.y = y;
  out.mu = mu;
  return out;
}

// Phase-1: minimize t subject to all constraints relaxed by t, t >= -1.
// A strictly positive optimum certifies infeasibility of the original.
double phase1_violation(const Internal& prob, const Tolerances& tol) {
  Internal p1;
  p1.n = prob.n + 1;
  const int tvar = prob.n;
  p1.Q = Eigen::MatrixXd();
  p1.c = Eigen::VectorXd::Zero(p1.n);
  p1.c[tvar] = 1.0;

  auto pad = [&](const Eigen::VectorXd& a) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(p1.n);
    out.head(prob.n) = a;
    return out;
  };

  for (int i = 0; i < prob.A_eq.rows(); ++i) {
    IneqRow r1;
    r1.a = pad(prob.A_eq.row(i).transpose());
    r1.a[tvar] = -1.0;
    r1.b = prob.b_eq[i];
    p1.rows.push_back(r1);
    IneqRow r2;
    r2.a = pad((-prob.A_eq.row(i)).transpose());
    r2.a[tvar] = -1.0;
    r2.b = -prob.b_eq[i];
    p1.rows.push_back(r2);
  }
  for (const auto& r : prob.rows) {
    IneqRow rr = r;
    rr.a = pad(r.a);
    rr.a[tvar] = -1.0;
    p1.rows.push_back(rr);
  }
  IneqRow cap;  // t >= -1
  cap.a = Eigen::VectorXd::Zero(p1.n);
  cap.a[tvar] = -1.0;
  cap.b = 1.0;
  p1.rows.push_back(cap);

  Tolerances t1 = tol;
  t1.feasibility = std::max(tol.feasibility, 1e-9);
  t1.gap = std::max(tol.gap, 1e-9);
  IpmOutcome res = run_ipm(p1, t1);
  if (!res.converged) return kInf;  // inconclusive
  return res.x[tvar];
}

Internal to_internal(const ConicProgram& prog) {
  Internal p;
  p.n = prog.num_vars;
  p.Q = prog.Q;
  p.c = prog.c.size() ? prog.c : Eigen::VectorXd::Zero(p.n);
  p.A_eq = prog.A_eq;
  p.b_eq = prog.b_eq;
  p.rows.reserve(prog.A_in.rows() + prog.discs.size());
  for (int i = 0; i < prog.A_in.rows(); ++i) {
    IneqRow r;
    r.a = prog.A_in.row(i).transpose();
    r.b = prog.b_in[i];
    p.rows.push_back(std::move(r));
  }
  for (const auto& d : prog.discs) {
    IneqRow r;
    r.quad = true;
    r.u = d.var_x;
    r.v = d.var_y;
    r.a = Eigen::VectorXd::Zero(p.n);
    r.b = d.radius * d.radius;
    p.rows.push_back(std::move(r));
  }
  return p;
}

}  // namespace

void ConicProgram::validate() const {
  auto fail = [](const std::string& msg) {
    throw std::invalid_argument("ConicProgram: " + msg);
  };
  if (num_vars <= 0) fail("num_vars must be positive");
  if (Q.size() && (Q.rows() != num_vars || Q.cols() != num_vars))
    fail("Q dimension mismatch");
  if (c.size() && c.size() != num_vars) fail("c dimension mismatch");
  if (A_eq.rows() != b_eq.size()) fail("A_eq/b_eq row mismatch");
  if (A_eq.size() && A_eq.cols() != num_vars) fail("A_eq column mismatch");
  if (A_in.rows() != b_in.size()) fail("A_in/b_in row mismatch");
  if (A_in.size() && A_in.cols() != num_vars) fail("A_in column mismatch");
  for (const auto& d : discs) {
    if (d.var_x < 0 || d.var_x >= num_vars || d.var_y < 0 ||
        d.var_y >= num_vars)
      fail("disc variable out of range");
    if (d.radius <= 0.0) fail("disc radius must be positive");
  }
}

const char* to_string(SolveStatus status) {
  switch (status) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::Infeasible: return "infeasible";
    case SolveStatus::Unbounded: return "unbounded";
    case SolveStatus::NumericalFailure: return "numerical-failure";
  }
  return "unknown";
}

SolveResult ReferenceIpm::solve(const ConicProgram& program,
                                const Tolerances& tol) const {
  program.validate();
  Internal prob = to_internal(program);
  const int n = prob.n;
  const int me = static_cast<int>(prob.A_eq.rows());
  const int mi_lin = static_cast<int>(program.A_in.rows());
  const int mi = static_cast<int>(prob.rows.size());

  SolveResult res;

  // Equality-constrained or unconstrained QP: direct KKT solve.
  if (mi == 0) {
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + me, n + me);
    if (prob.Q.size()) K.topLeftCorner(n, n) = prob.Q;
    K.topLeftCorner(n, n).diagonal().array() += 1e-12;
    if (me) {
      K.topRightCorner(n, me) = prob.A_eq.transpose();
      K.bottomLeftCorner(me, n) = prob.A_eq;
      K.bottomRightCorner(me, me).diagonal().array() -= 1e-12;
    }
    Eigen::VectorXd rhs(n + me);
    rhs.head(n) = -prob.c;
    if (me) rhs.tail(me) = prob.b_eq;
    Eigen::VectorXd sol = Eigen::PartialPivLU<Eigen::MatrixXd>(K).solve(rhs);
    res.x = sol.head(n);
    res.eq_duals = me ? sol.tail(me).eval() : Eigen::VectorXd();
    res.in_duals = Eigen::VectorXd();
    res.disc_duals = Eigen::VectorXd();
    if (!res.x.allFinite()) {
      res.status = SolveStatus::NumericalFailure;
      res.message = "singular KKT system";
      return res;
    }
    // A descent direction that stays feasible means unbounded.
    Eigen::VectorXd grad = prob.c;
    if (prob.Q.size()) grad += prob.Q * res.x;
    if (me) grad += prob.A_eq.transpose() * res.eq_duals;
    if (grad.lpNorm<Eigen::Infinity>() >
        1e-6 * (1.0 + prob.c.lpNorm<Eigen::Infinity>())) {
      res.status = SolveStatus::Unbounded;
      res.message = "stationarity unreachable (objective unbounded below)";
      return res;
    }
    res.status = SolveStatus::Optimal;
    res.objective = 0.5 * (prob.Q.size() ? res.x.dot(prob.Q * res.x) : 0.0) +
                    prob.c.dot(res.x);
    return res;
  }

  IpmOutcome out = run_ipm(prob, tol);
  res.iterations = out.iterations;
  res.x = out.x;
  res.eq_duals = out.y;
  res.in_duals = mi_lin ? out.mu.head(mi_lin).eval() : Eigen::VectorXd();
  res.disc_duals = (mi > mi_lin) ? out.mu.tail(mi - mi_lin).eval()
                                 : Eigen::VectorXd();
  res.objective = 0.5 * (prob.Q.size() ? out.x.dot(prob.Q * out.x) : 0.0) +
                  prob.c.dot(out.x);

  if (out.converged) {
    res.status = SolveStatus::Optimal;
    return res;
  }

  // Distinguish infeasible from numerical trouble.
  const double viol = phase1_violation(prob, tol);
  double scale = 1.0;
  for (const auto& r : prob.rows) scale = std::max(scale, std::abs(r.b));
  scale = std::max(scale, 1.0 + (me ? prob.b_eq.lpNorm<Eigen::Infinity>() : 0.0));
  if (std::isfinite(viol) && viol > 1e-6 * scale) {
    res.status = SolveStatus::Infeasible;
    std::ostringstream os;
    os << "phase-1 minimum violation " << viol;
    res.message = os.str();
    return res;
  }
  if (out.diverged && std::isfinite(viol) && viol <= 1e-6 * scale) {
    // Feasible but diverging iterates: objective has no finite minimum.
    res.status = SolveStatus::Unbounded;
    res.message = "feasible with diverging iterates";
    return res;
  }
  res.status = SolveStatus::NumericalFailure;
  res.message = out.note.empty() ? "iteration limit reached" : out.note;
  return res;
}

ConicProgram polygonalize_cones(const ConicProgram& program, int cuts) {
  if (cuts < 4 || cuts % 2 != 0)
    throw std::invalid_argument("polygonalize_cones: cuts must be even, >= 4");
  ConicProgram out = program;
  if (program.discs.empty()) return out;

  const int extra = cuts * static_cast<int>(program.discs.size());
  const int m0 = static_cast<int>(program.A_in.rows());
  Eigen::MatrixXd A(m0 + extra, program.num_vars);
  Eigen::VectorXd b(m0 + extra);
  if (m0) {
    A.topRows(m0) = program.A_in;
    b.head(m0) = program.b_in;
  }
  A.bottomRows(extra).setZero();

  // Polygon vertices sit on the circle at angles 2*pi*m/cuts (one on the
  // positive x axis); each constraint is the chord between two neighbours.
  const double apothem = std::cos(std::numbers::pi / cuts);
  int row = m0;
  for (const auto& d : program.discs) {
    for (int m = 0; m < cuts; ++m) {
      const double theta = (2.0 * m + 1.0) * std::numbers::pi / cuts;
      A(row, d.var_x) = std::cos(theta);
      A(row, d.var_y) = std::sin(theta);
      b[row] = d.radius * apothem;
      ++row;
    }
  }
  out.A_in = std::move(A);
  out.b_in = std::move(b);
  out.discs.clear();
  return out;
}

}  // namespace p2pclear
