#include <doctest.h>

#include "p2pclear/grid.hpp"

#include <cmath>
#include <random>

using namespace p2pclear;

namespace {

GridModel two_bus() {
  GridModel g;
  g.slack_bus = 1;
  g.buses = {{1, BusLevel::Transmission, 0}, {2, BusLevel::Transmission, 0}};
  AcLine l;
  l.from = 1;
  l.to = 2;
  l.reactance = 0.1;
  l.resistance = 0.1;
  l.capacity = 10.0;
  g.ac_lines = {l};
  return g;
}

GridModel triangle(double x12 = 0.1, double x13 = 0.1, double x23 = 0.1) {
  GridModel g;
  g.slack_bus = 1;
  g.buses = {{1, BusLevel::Transmission, 0},
             {2, BusLevel::Transmission, 0},
             {3, BusLevel::Transmission, 0}};
  auto mk = [](int f, int t, double x) {
    AcLine l;
    l.from = f;
    l.to = t;
    l.reactance = x;
    l.resistance = x / 10;
    l.capacity = 10.0;
    return l;
  };
  g.ac_lines = {mk(1, 2, x12), mk(1, 3, x13), mk(2, 3, x23)};
  return g;
}

// Direct DC solve: angles from the susceptance matrix, flows from angle
// differences. Independent of the PTDF construction path.
Eigen::VectorXd dc_flows(const GridModel& g, const Eigen::VectorXd& injection) {
  const int nb = static_cast<int>(g.buses.size());
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(nb, nb);
  for (const auto& l : g.ac_lines) {
    const int f = g.bus_index(l.from), t = g.bus_index(l.to);
    const double y = 1.0 / l.reactance;
    B(f, f) += y;
    B(t, t) += y;
    B(f, t) -= y;
    B(t, f) -= y;
  }
  const int slack = g.bus_index(g.slack_bus);
  Eigen::MatrixXd Br = B;
  Br.row(slack).setZero();
  Br.col(slack).setZero();
  Br(slack, slack) = 1.0;
  Eigen::VectorXd inj = injection;
  inj[slack] = 0.0;
  Eigen::VectorXd theta = Br.ldlt().solve(inj);
  Eigen::VectorXd f(g.ac_lines.size());
  for (size_t k = 0; k < g.ac_lines.size(); ++k) {
    const auto& l = g.ac_lines[k];
    f[k] = (theta[g.bus_index(l.from)] - theta[g.bus_index(l.to)]) /
           l.reactance;
  }
  return f;
}

}  // namespace

TEST_CASE("2-bus PTDF is [0, -1] under from->to orientation") {
  const GridModel g = two_bus();
  const Eigen::MatrixXd N = build_ptdf(g);
  REQUIRE(N.rows() == 1);
  CHECK(N(0, 0) == doctest::Approx(0.0));
  CHECK(N(0, 1) == doctest::Approx(-1.0));
}

TEST_CASE("triangle PTDF splits 2/3 - 1/3") {
  const GridModel g = triangle();
  const Eigen::MatrixXd N = build_ptdf(g);
  // Injection at bus 2, withdrawal at slack bus 1: direct line carries 2/3
  // against its orientation, the two-hop path 1/3.
  CHECK(N(0, 1) == doctest::Approx(-2.0 / 3).epsilon(1e-9));
  CHECK(N(1, 1) == doctest::Approx(-1.0 / 3).epsilon(1e-9));
  CHECK(N(2, 1) == doctest::Approx(1.0 / 3).epsilon(1e-9));
}

TEST_CASE("PTDF reproduces direct susceptance-matrix flows") {
  GridModel g = triangle(0.13, 0.21, 0.08);
  std::mt19937 gen(7);
  std::uniform_real_distribution<double> unif(-2.0, 2.0);
  for (int rep = 0; rep < 5; ++rep) {
    Eigen::VectorXd inj(3);
    inj << unif(gen), unif(gen), unif(gen);
    inj[0] = -(inj[1] + inj[2]);  // balanced
    const Eigen::VectorXd via_ptdf = build_ptdf(g) * inj;
    const Eigen::VectorXd direct = dc_flows(g, inj);
    for (int k = 0; k < 3; ++k)
      CHECK(via_ptdf[k] == doctest::Approx(direct[k]).epsilon(1e-9));
  }
}

TEST_CASE("cut property: column sums to -1 across slack-separating cut") {
  // In the 2-bus case the single line is the cut; injection at bus 2 must
  // reach the slack in full.
  const GridModel g = two_bus();
  const Eigen::MatrixXd N = build_ptdf(g);
  CHECK(std::abs(N(0, 1)) == doctest::Approx(1.0));
}

TEST_CASE("disconnected transmission graph names the isolated buses") {
  GridModel g = two_bus();
  g.buses.push_back({7, BusLevel::Transmission, 0});
  try {
    g.validate();
    FAIL("expected a structural error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("7") != std::string::npos);
  }
}

TEST_CASE("loss fit: r = 0 gives all-zero coefficients") {
  const auto segs = fit_loss_linearization(0.0, 10.0, 3);
  REQUIRE(segs.size() == 3);
  for (const auto& s : segs) {
    CHECK(s.slope == 0.0);
    CHECK(s.intercept == 0.0);
  }
}

TEST_CASE("loss fit single segment matches closed form") {
  const double r = 0.07, cap = 12.0;
  const auto segs = fit_loss_linearization(r, cap, 1);
  REQUIRE(segs.size() == 1);
  CHECK(segs[0].slope == doctest::Approx(r * cap).epsilon(1e-12));
  CHECK(segs[0].intercept ==
        doctest::Approx(-r * cap * cap / 6.0).epsilon(1e-12));
}

TEST_CASE("loss fit matches a numerical least-squares oracle per segment") {
  const double r = 0.05, cap = 8.0;
  const int segments = 2;
  const auto segs = fit_loss_linearization(r, cap, segments);
  for (int s = 0; s < segments; ++s) {
    const double a = cap * s / segments, b = cap * (s + 1) / segments;
    // Normal equations of min int_a^b (r f^2 - M f - Q)^2 df, moments by
    // Simpson quadrature (exact for these polynomial integrands).
    const int n = 2000;  // panels
    const double h = (b - a) / n;
    double s11 = 0, s10 = 0, s00 = 0, r1 = 0, r0 = 0;
    auto accumulate = [&](double f, double w) {
      s11 += w * f * f;
      s10 += w * f;
      s00 += w;
      r1 += w * r * f * f * f;
      r0 += w * r * f * f;
    };
    for (int i = 0; i <= n; ++i) {
      const double f = a + h * i;
      const double w = (i == 0 || i == n) ? h / 3
                       : (i % 2 == 1)     ? 4 * h / 3
                                          : 2 * h / 3;
      accumulate(f, w);
    }
    const double det = s11 * s00 - s10 * s10;
    const double M = (r1 * s00 - r0 * s10) / det;
    const double Q = (s11 * r0 - s10 * r1) / det;
    CHECK(segs[s].slope == doctest::Approx(M).epsilon(1e-9));
    CHECK(segs[s].intercept == doctest::Approx(Q).epsilon(1e-9));
  }
}

TEST_CASE("two segments beat one in L2 on the full interval") {
  const double r = 0.05, cap = 8.0;
  auto envelope = [](const std::vector<LossSegment>& segs, double f) {
    double w = 0.0;
    for (const auto& s : segs)
      w = std::max(w, s.slope * std::abs(f) + s.intercept);
    return w;
  };
  auto l2err = [&](const std::vector<LossSegment>& segs) {
    double acc = 0.0;
    const int n = 4001;
    for (int i = 0; i < n; ++i) {
      const double f = cap * i / (n - 1);
      const double d = envelope(segs, f) - r * f * f;
      acc += d * d;
    }
    return acc / n;
  };
  CHECK(l2err(fit_loss_linearization(r, cap, 2)) <
        l2err(fit_loss_linearization(r, cap, 1)));
}

TEST_CASE("slopes are nondecreasing across segments") {
  const auto segs = fit_loss_linearization(0.03, 9.0, 4);
  for (size_t s = 1; s < segs.size(); ++s)
    CHECK(segs[s].slope >= segs[s - 1].slope);
}

namespace {

GridModel with_feeder() {
  GridModel g = triangle();
  g.buses.push_back({4, BusLevel::Distribution, 1});
  g.buses.push_back({5, BusLevel::Distribution, 1});
  g.buses.push_back({6, BusLevel::Distribution, 1});
  g.buses.push_back({7, BusLevel::Distribution, 1});
  auto dl = [](int f, int t) {
    DistLine l;
    l.from = f;
    l.to = t;
    l.susceptance = 20.0;
    l.conductance = 1.0;
    l.apparent_capacity = 5.0;
    l.resistance = 0.05;
    return l;
  };
  g.dist_lines = {dl(4, 5), dl(5, 6), dl(6, 7)};
  g.connection_points = {{1, 3, 1, 4}};
  return g;
}

}  // namespace

TEST_CASE("loss distribution: half at each endpoint, columns sum to 1") {
  const GridModel g = with_feeder();
  const Eigen::MatrixXd D = build_loss_distribution(g);
  REQUIRE(D.rows() == 7);
  REQUIRE(D.cols() == 6);
  for (int l = 0; l < D.cols(); ++l)
    CHECK(D.col(l).sum() == doctest::Approx(1.0));
  // Single line between buses 1 and 2.
  CHECK(D(0, 0) == 0.5);
  CHECK(D(1, 0) == 0.5);
  // Bus 1 touches lines 1-2 and 1-3.
  CHECK(D.row(0).sum() == doctest::Approx(1.0));
  // Bus 5 touches dist lines 4-5 and 5-6.
  CHECK(D(4, 3) == 0.5);
  CHECK(D(4, 4) == 0.5);
}

TEST_CASE("modified TF: inheritance, radial path, block sparsity") {
  const GridModel g = with_feeder();
  const Eigen::MatrixXd N = build_ptdf(g);
  const Eigen::MatrixXd TF = build_modified_tf(g, N);
  REQUIRE(TF.rows() == 6);
  REQUIRE(TF.cols() == 7);

  const int conn = g.bus_index(3);
  for (int dbusid : {4, 5, 6, 7}) {
    const int bi = g.bus_index(dbusid);
    for (int k = 0; k < 3; ++k)
      CHECK(TF(k, bi) == doctest::Approx(N(k, conn)).epsilon(1e-12));
  }

  // Radial feeder: a distribution line on the unique path to the feeder has
  // entry +-1, off-path lines 0. Bus 6 reaches the feeder through 4-5, 5-6.
  const int b6 = g.bus_index(6);
  CHECK(std::abs(TF(3, b6)) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(std::abs(TF(4, b6)) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(TF(5, b6) == doctest::Approx(0.0).epsilon(1e-9));

  // Distribution rows are zero on transmission-bus columns.
  for (int l = 3; l < 6; ++l)
    for (int t = 0; t < 3; ++t) CHECK(TF(l, t) == 0.0);
}

TEST_CASE("pair distance: identity, hand value, triangle inequality") {
  const GridModel g = with_feeder();
  const Eigen::MatrixXd TF = build_modified_tf(g, build_ptdf(g));
  CHECK(pair_distance(g, TF, 5, 5) == 0.0);

  // 2-bus case, r = 0.1 and PTDF column difference of magnitude 1.
  GridModel g2 = two_bus();
  const Eigen::MatrixXd tf2 = build_modified_tf(g2, build_ptdf(g2));
  CHECK(pair_distance(g2, tf2, 1, 2) == doctest::Approx(0.1).epsilon(1e-12));

  for (int a : {1, 2, 3, 4, 5, 6, 7})
    for (int b : {1, 2, 3, 4, 5, 6, 7})
      for (int c : {1, 2, 3, 4, 5, 6, 7}) {
        const double ab = pair_distance(g, TF, a, b);
        const double bc = pair_distance(g, TF, b, c);
        const double ac = pair_distance(g, TF, a, c);
        CHECK(ac <= ab + bc + 1e-12);
      }

  CHECK_THROWS(pair_distance(g, TF, 1, 99));
}

TEST_CASE("co-located agents have identical TF columns") {
  const GridModel g = with_feeder();
  const Eigen::MatrixXd TF = build_modified_tf(g, build_ptdf(g));
  // Same bus means zero distance, hence zero usage difference on every line.
  CHECK(pair_distance(g, TF, 6, 6) == 0.0);
}
