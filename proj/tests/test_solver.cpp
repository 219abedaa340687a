#include <doctest.h>

#include "p2pclear/solver.hpp"

#include <cmath>
#include <cstring>
#include <random>

using namespace p2pclear;

namespace {

ConicProgram empty_program(int n) {
  ConicProgram p;
  p.num_vars = n;
  p.c = Eigen::VectorXd::Zero(n);
  p.A_eq.resize(0, n);
  p.b_eq.resize(0);
  p.A_in.resize(0, n);
  p.b_in.resize(0);
  return p;
}

void add_ineq(ConicProgram& p, const Eigen::VectorXd& a, double b) {
  const int m = static_cast<int>(p.A_in.rows());
  p.A_in.conservativeResize(m + 1, p.num_vars);
  p.A_in.row(m) = a.transpose();
  p.b_in.conservativeResize(m + 1);
  p.b_in[m] = b;
}

}  // namespace

TEST_CASE("min x subject to x >= 1") {
  ConicProgram p = empty_program(1);
  p.c << 1.0;
  Eigen::VectorXd a(1);
  a << -1.0;
  add_ineq(p, a, -1.0);  // -x <= -1

  ReferenceIpm ipm;
  SolveResult r = ipm.solve(p, {});
  REQUIRE(r.status == SolveStatus::Optimal);
  CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(r.in_duals[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(r.objective == doctest::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("min x^2 - 2x subject to x <= 0") {
  ConicProgram p = empty_program(1);
  p.Q.resize(1, 1);
  p.Q << 2.0;
  p.c << -2.0;
  Eigen::VectorXd a(1);
  a << 1.0;
  add_ineq(p, a, 0.0);

  ReferenceIpm ipm;
  SolveResult r = ipm.solve(p, {});
  REQUIRE(r.status == SolveStatus::Optimal);
  CHECK(std::abs(r.x[0]) < 1e-7);
  // Stationarity 2x - 2 + mu = 0 at x = 0.
  CHECK(r.in_duals[0] == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("random feasible LP has vanishing duality gap") {
  std::mt19937 gen(12345);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  const int n = 20, m = 30;
  ConicProgram p = empty_program(n);
  for (int i = 0; i < n; ++i) p.c[i] = unif(gen);
  Eigen::MatrixXd A(m, n);
  Eigen::VectorXd x0(n);
  for (int i = 0; i < n; ++i) x0[i] = unif(gen);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = unif(gen);
  Eigen::VectorXd b = A * x0;
  b.array() += 0.5;  // strict interior
  p.A_in = A;
  p.b_in = b;
  // Box to keep it bounded.
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
    e[i] = 1.0;
    add_ineq(p, e, 10.0);
    e[i] = -1.0;
    add_ineq(p, e, 10.0);
  }

  ReferenceIpm ipm;
  SolveResult r = ipm.solve(p, {});
  REQUIRE(r.status == SolveStatus::Optimal);
  const double primal = p.c.dot(r.x);
  const double dual = -p.b_in.dot(r.in_duals);
  CHECK(std::abs(primal - dual) <= 1e-7 * (1.0 + std::abs(primal)));
  // Complementarity componentwise.
  Eigen::VectorXd slack = p.b_in - p.A_in * r.x;
  for (int i = 0; i < slack.size(); ++i)
    CHECK(r.in_duals[i] * slack[i] <= 1e-6);
}

TEST_CASE("equality-constrained QP solves by direct KKT") {
  // min (x-1)^2 + (y-2)^2 s.t. x + y = 1
  ConicProgram p = empty_program(2);
  p.Q.resize(2, 2);
  p.Q << 2, 0, 0, 2;
  p.c << -2, -4;
  p.A_eq.resize(1, 2);
  p.A_eq << 1, 1;
  p.b_eq.resize(1);
  p.b_eq << 1;
  ReferenceIpm ipm;
  SolveResult r = ipm.solve(p, {});
  REQUIRE(r.status == SolveStatus::Optimal);
  CHECK(r.x[0] == doctest::Approx(0.0).epsilon(1e-8));
  CHECK(r.x[1] == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("infeasible program is certified") {
  ConicProgram p = empty_program(1);
  p.c << 1.0;
  Eigen::VectorXd a(1);
  a << 1.0;
  add_ineq(p, a, -1.0);  // x <= -1
  a << -1.0;
  add_ineq(p, a, -1.0);  // x >= 1
  ReferenceIpm ipm;
  SolveResult r = ipm.solve(p, {});
  CHECK(r.status == SolveStatus::Infeasible);
}

TEST_CASE("disc constraint is handled natively") {
  // min -x - y s.t. x^2 + y^2 <= 4: optimum at (sqrt2, sqrt2).
  ConicProgram p = empty_program(2);
  p.c << -1.0, -1.0;
  p.discs.push_back({0, 1, 2.0});
  ReferenceIpm ipm;
  SolveResult r = ipm.solve(p, {});
  REQUIRE(r.status == SolveStatus::Optimal);
  CHECK(r.x[0] == doctest::Approx(std::sqrt(2.0)).epsilon(1e-6));
  CHECK(r.x[1] == doctest::Approx(std::sqrt(2.0)).epsilon(1e-6));
  CHECK(r.disc_duals[0] > 0.0);
}

TEST_CASE("determinism: identical inputs give bit-identical output") {
  ConicProgram p = empty_program(3);
  p.Q = Eigen::MatrixXd::Identity(3, 3);
  p.c << -1.0, 0.5, 2.0;
  Eigen::VectorXd a(3);
  a << 1.0, 1.0, 1.0;
  add_ineq(p, a, 1.5);
  p.discs.push_back({0, 1, 1.0});
  ReferenceIpm ipm;
  SolveResult r1 = ipm.solve(p, {});
  SolveResult r2 = ipm.solve(p, {});
  REQUIRE(r1.status == SolveStatus::Optimal);
  REQUIRE(r1.x.size() == r2.x.size());
  CHECK(std::memcmp(r1.x.data(), r2.x.data(),
                    sizeof(double) * r1.x.size()) == 0);
  CHECK(r1.objective == r2.objective);
}

TEST_CASE("polygonalize_cones geometry") {
  ConicProgram p = empty_program(2);
  p.discs.push_back({0, 1, 3.0});

  SUBCASE("rejects bad cut counts") {
    CHECK_THROWS(polygonalize_cones(p, 3));
    CHECK_THROWS(polygonalize_cones(p, 5));
  }

  ConicProgram poly = polygonalize_cones(p, 16);
  CHECK(poly.discs.empty());
  CHECK(poly.A_in.rows() == 16);

  auto feasible = [&](double x, double y) {
    Eigen::VectorXd v(2);
    v << x, y;
    return ((poly.A_in * v - poly.b_in).array() <= 1e-12).all();
  };
  // Vertex on the axis stays feasible.
  CHECK(feasible(3.0, 0.0));
  CHECK(feasible(0.0, 3.0));
  CHECK(feasible(-3.0, 0.0));
  // A point on the circle between vertices is cut off.
  const double mid = std::numbers::pi / 16;
  CHECK(!feasible(3.0 * std::cos(mid), 3.0 * std::sin(mid)));
  // Support in every direction is at least r cos(pi/cuts).
  const double r_min = 3.0 * std::cos(std::numbers::pi / 16) - 1e-12;
  for (int k = 0; k < 64; ++k) {
    const double ang = 2.0 * std::numbers::pi * k / 64;
    CHECK(feasible(r_min * std::cos(ang), r_min * std::sin(ang)));
  }
}

TEST_CASE("polygonal relaxation is inner: objective no better than native") {
  ConicProgram p = empty_program(2);
  p.c << -1.0, -0.3;
  p.discs.push_back({0, 1, 2.0});
  ReferenceIpm ipm;
  SolveResult native = ipm.solve(p, {});
  SolveResult poly = ipm.solve(polygonalize_cones(p, 16), {});
  REQUIRE(native.status == SolveStatus::Optimal);
  REQUIRE(poly.status == SolveStatus::Optimal);
  CHECK(poly.objective >= native.objective - 1e-9);
  CHECK(poly.objective - native.objective <
        0.05 * (1.0 + std::abs(native.objective)));
}
