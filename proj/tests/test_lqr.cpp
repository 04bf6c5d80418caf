#include <catch_amalgamated.hpp>

#include <random>

#include "magc/lqr.hpp"
#include "magc/simcore.hpp"

using namespace magc;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

MatrixXd scalar(double v) { return MatrixXd::Constant(1, 1, v); }

MatrixXd care_residual(const MatrixXd& a, const MatrixXd& b, const MatrixXd& q, const MatrixXd& r,
                       const MatrixXd& p) {
  return a.transpose() * p + p * a - p * b * r.inverse() * b.transpose() * p + q;
}

}  // namespace

TEST_CASE("scalar Riccati equations", "[lqr]") {
  // Stable plant, no state penalty: P = 0.
  CareResult c = solve_care(scalar(-1), scalar(1), scalar(0), scalar(1));
  CHECK_THAT(c.p(0, 0), WithinAbs(0.0, 1e-12));

  // Integrator with unit weights: P = 1.
  c = solve_care(scalar(0), scalar(1), scalar(1), scalar(1));
  CHECK_THAT(c.p(0, 0), WithinRel(1.0, 1e-12));

  // a = 1, b = 1, q = 1, r = 1: P = 1 + sqrt(2).
  c = solve_care(scalar(1), scalar(1), scalar(1), scalar(1));
  CHECK_THAT(c.p(0, 0), WithinRel(1.0 + std::sqrt(2.0), 1e-12));
}

TEST_CASE("random Riccati problems are solved to tolerance", "[lqr]") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 10; ++trial) {
    const MatrixXd a = MatrixXd::NullaryExpr(4, 4, [&] { return g(rng); });
    const MatrixXd b = MatrixXd::NullaryExpr(4, 2, [&] { return g(rng); });
    const MatrixXd l = MatrixXd::NullaryExpr(4, 4, [&] { return g(rng); });
    const MatrixXd q = l * l.transpose() + 0.1 * MatrixXd::Identity(4, 4);
    const MatrixXd r = Eigen::Vector2d(1.0, 2.0).asDiagonal();
    const CareResult c = solve_care(a, b, q, r);
    CHECK(c.residual < 1e-8);
    CHECK(care_residual(a, b, q, r, c.p).norm() <= 1e-8 * c.p.norm());
    CHECK((c.p - c.p.transpose()).norm() <= 1e-12 * c.p.norm());
    CHECK(Eigen::SelfAdjointEigenSolver<MatrixXd>(c.p).eigenvalues().minCoeff() > 0.0);
    CHECK(spectral_abscissa(a - b * r.inverse() * b.transpose() * c.p) < 0.0);
  }
}

TEST_CASE("uncontrollable unstable mode is reported", "[lqr]") {
  MatrixXd a = MatrixXd::Zero(2, 2);
  a(0, 0) = 1.0;
  a(1, 1) = -1.0;
  MatrixXd b = MatrixXd::Zero(2, 1);
  b(1, 0) = 1.0;
  try {
    solve_care(a, b, MatrixXd::Identity(2, 2), scalar(1));
    FAIL("expected a stabilisability failure");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("not stabilizable") != std::string::npos);
  }
}

TEST_CASE("projected gain satisfies the normal equations", "[lqr]") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  const MatrixXd kp = MatrixXd::NullaryExpr(3, 6, [&] { return g(rng); });
  std::vector<IbrParams> ibrs(3);
  ibrs[1].omega_c = 20;
  ibrs[2].omega_c = 50;
  const Transform t = make_transform(ibrs);
  const MatrixXd k = project_gain(kp, t.t);
  CHECK(((kp - k * t.t) * t.t.transpose()).norm() <= 1e-12 * kp.norm());
  // A gain already of the form K T is recovered exactly.
  const MatrixXd k0 = MatrixXd::NullaryExpr(3, 3, [&] { return g(rng); });
  CHECK((project_gain(k0 * t.t, t.t) - k0).norm() <= 1e-12 * k0.norm());
}

TEST_CASE("optimal gain on the three-IBR grid", "[lqr]") {
  const Microgrid mg = build_microgrid(default_microgrid_1());
  const Transform t = make_transform(mg.ibrs);
  const ControllerGain g = lqr_gain(mg.plant, CostWeights::uniform(3), t);
  CHECK(g.warnings.empty());
  CHECK(g.residual < defaults::kRiccatiRelTolerance);
  CHECK(g.abscissa_state < 0.0);
  CHECK(g.abscissa_z < 0.0);
  REQUIRE(g.k.rows() == 3);
  REQUIRE(g.k.cols() == 3);
  // K' = R^-1 B1' P.
  CHECK((g.k_prime - mg.plant.b1.transpose() * g.care_solution).norm() <= 1e-12 * g.k_prime.norm());
  // Symmetric network: swapping the two identical IBRs g1, g2 permutes K.
  CHECK_THAT(g.k(0, 0), WithinRel(g.k(1, 1), 1e-6));
}

TEST_CASE("gain is invariant to a common scaling of the weights", "[lqr]") {
  const Microgrid mg = build_microgrid(default_microgrid_1());
  const Transform t = make_transform(mg.ibrs);
  const ControllerGain g1 = lqr_gain(mg.plant, CostWeights::uniform(3, 2.0, 0.5), t);
  const ControllerGain g2 = lqr_gain(mg.plant, CostWeights::uniform(3, 20.0, 5.0), t);
  CHECK((g1.k - g2.k).norm() <= 1e-8 * g1.k.norm());
  CHECK((10.0 * g1.care_solution - g2.care_solution).norm() <= 1e-8 * g2.care_solution.norm());
}

TEST_CASE("larger q gives a faster closed loop", "[lqr]") {
  const Microgrid mg = build_microgrid(default_microgrid_1());
  const Transform t = make_transform(mg.ibrs);
  const ControllerGain g1 = lqr_gain(mg.plant, CostWeights::uniform(3, 1.0, 1.0), t);
  const ControllerGain g10 = lqr_gain(mg.plant, CostWeights::uniform(3, 10.0, 1.0), t);
  CHECK(g10.k.norm() > g1.k.norm());
}

TEST_CASE("invalid weights are rejected", "[lqr]") {
  CHECK_THROWS_AS(validate(CostWeights::uniform(2, 0.0, 1.0), 2), ConfigError);
  CHECK_THROWS_AS(validate(CostWeights::uniform(2, 1.0, -1.0), 2), ConfigError);
  CHECK_THROWS_AS(validate(CostWeights::uniform(2), 3), DimensionError);
}

TEST_CASE("decentralised law", "[lqr]") {
  std::vector<IbrParams> ibrs(2);
  for (auto& i : ibrs) i.m_p = 1e-3;
  const VectorXd u = control_decentralized(ibrs, Eigen::Vector2d(100, -100));
  CHECK_THAT(u(0), WithinRel(0.1, 1e-15));
  CHECK_THAT(u(1), WithinRel(-0.1, 1e-15));
}

TEST_CASE("optimal law is linear in z", "[lqr]") {
  ControllerGain g;
  g.k = Eigen::Matrix2d{{1.0, 2.0}, {0.0, 3.0}};
  const VectorXd u = control_optimal(g, Eigen::Vector2d(1.0, -1.0));
  CHECK(u(0) == 1.0);
  CHECK(u(1) == 3.0);
  CHECK_THROWS_AS(control_optimal(g, Eigen::Vector3d::Zero()), DimensionError);
}

TEST_CASE("PI controller closed form", "[lqr]") {
  PiController pi;
  pi.kp = 0.5;
  pi.ki = 5.0;
  const VectorXd err = VectorXd::Constant(2, 0.01);
  VectorXd u;
  for (int n = 1; n <= 10; ++n) {
    u = control_pi_baseline(pi, err, 0.005);
    CHECK_THAT(u(0), WithinRel(0.5 * 0.01 + 5.0 * n * 0.005 * 0.01, 1e-12));
  }
  pi.clamp = 1e-5;
  u = control_pi_baseline(pi, err, 0.005);
  CHECK_THAT(u(1), WithinRel(0.5 * 0.01 + 5.0 * 1e-5, 1e-12));
}

TEST_CASE("observer follows the model it runs", "[lqr]") {
  DiscreteModel m;
  m.order = 2;
  m.a_d = Eigen::Matrix2d{{0.9, 0.1}, {0.0, 0.8}};
  m.b_d = Eigen::Matrix2d{{1.0, 0.0}, {0.0, 1.0}};
  m.c_d = Eigen::Matrix2d{{100.0, 0.0}, {0.0, 50.0}};
  std::vector<IbrParams> ibrs(2);
  ObserverState obs = make_observer(m, 2);
  const VectorXd u = Eigen::Vector2d(0.01, -0.02);
  VectorXd x = VectorXd::Zero(2), z = VectorXd::Zero(2), p = VectorXd::Zero(2);
  for (int k = 0; k < 20; ++k) {
    observer_step(obs, m, ibrs, u, m.dt);
    z += z_rate(ibrs, u, p) * m.dt;
    x = m.a_d * x + m.b_d * u;
    p = m.c_d * x;
  }
  CHECK((obs.x_hat - x).norm() <= 1e-15);
  CHECK((obs.z_hat - z).norm() <= 1e-15);
  CHECK((obs.p_hat - p).norm() <= 1e-12);
}
