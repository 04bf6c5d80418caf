#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>

#include "magc/errors.hpp"
#include "magc/netmodel.hpp"
#include "magc/simcore.hpp"

using namespace magc;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

NetworkSpec two_node() {
  NetworkSpec net;
  net.n_ibr = 1;
  net.n_load = 1;
  net.branches = {{0, 1, 1.0, std::numbers::pi / 2}};
  net.g_self = VectorXd::Zero(2);
  net.v_star = VectorXd::Ones(2);
  return net;
}

// Random connected network with n_ibr + n_load nodes and lossy branches.
NetworkSpec random_network(std::mt19937_64& rng, Index n_ibr, Index n_load) {
  std::uniform_real_distribution<double> y(0.5, 3.0), th(1.2, 1.5), v(0.95, 1.05);
  NetworkSpec net;
  net.n_ibr = n_ibr;
  net.n_load = n_load;
  const Index n = n_ibr + n_load;
  for (Index i = 1; i < n; ++i) net.branches.push_back({i - 1, i, y(rng), th(rng)});
  net.branches.push_back({0, n - 1, y(rng), th(rng)});
  net.g_self = VectorXd::Zero(n);
  net.v_star = VectorXd::NullaryExpr(n, [&] { return v(rng); });
  return net;
}

}  // namespace

TEST_CASE("injection of a lossless two-node link", "[netmodel]") {
  const NetworkSpec net = two_node();
  VectorXd p = nonlinear_injection(net, VectorXd::Zero(2));
  CHECK_THAT(p(0), WithinAbs(0.0, 1e-15));
  CHECK_THAT(p(1), WithinAbs(0.0, 1e-15));

  p = nonlinear_injection(net, Eigen::Vector2d(0.1, 0.0));
  CHECK_THAT(p(0), WithinRel(std::cos(0.1 - std::numbers::pi / 2), 1e-12));
  CHECK_THAT(p(0), WithinAbs(0.09983, 1e-5));
  CHECK_THAT(p(1), WithinAbs(-0.09983, 1e-5));
}

TEST_CASE("injection is invariant to a common angle shift", "[netmodel]") {
  std::mt19937_64 rng(3);
  const NetworkSpec net = random_network(rng, 3, 2);
  const VectorXd d = VectorXd::LinSpaced(5, -0.1, 0.2);
  const VectorXd p0 = nonlinear_injection(net, d);
  const VectorXd p1 = nonlinear_injection(net, (d.array() + 0.7).matrix());
  CHECK((p0 - p1).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("H of the two-node link", "[netmodel]") {
  const HMatrix h = build_h_matrix(two_node(), VectorXd::Zero(2));
  Eigen::Matrix2d expect;
  expect << 1, -1, -1, 1;
  CHECK((h.h - expect).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("H rows sum to zero and match central differences", "[netmodel]") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const NetworkSpec net = random_network(rng, 3, 3);
    const VectorXd d = VectorXd::Random(6) * 0.1;
    const HMatrix h = build_h_matrix(net, d);
    CHECK((h.h * VectorXd::Ones(6)).cwiseAbs().maxCoeff() <= 1e-12 * h.h.cwiseAbs().maxCoeff());

    const double step = 1e-6;
    MatrixXd fd(6, 6);
    for (Index k = 0; k < 6; ++k) {
      VectorXd dp = d, dm = d;
      dp(k) += step;
      dm(k) -= step;
      fd.col(k) = (nonlinear_injection(net, dp) - nonlinear_injection(net, dm)) / (2 * step);
    }
    CHECK((fd - h.h).norm() <= 1e-4 * h.h.norm());
  }
}

TEST_CASE("linearisation error is second order", "[netmodel]") {
  const Microgrid mg = build_microgrid(default_microgrid_1());
  const HMatrix h = build_h_matrix(mg.network, mg.op);
  auto remainder = [&](double s) {
    const VectorXd dd = VectorXd::LinSpaced(5, -s, s);
    return (nonlinear_injection(mg.network, mg.op.delta_star + dd) -
            nonlinear_injection(mg.network, mg.op.delta_star) - h.h * dd)
        .norm();
  };
  // Halving the perturbation quarters the remainder.
  const double r1 = remainder(1e-4), r2 = remainder(5e-5);
  CHECK(r1 > 0.0);
  CHECK_THAT(r1 / r2, WithinAbs(4.0, 0.1));
}

TEST_CASE("Kron reduction by hand", "[netmodel]") {
  HMatrix h;
  h.n_gen = 1;
  h.h.resize(2, 2);
  h.h << 2, -2, -2, 2;
  const KronReduction k = kron_reduce(h);
  CHECK_THAT(k.h_red(0, 0), WithinAbs(0.0, 1e-15));
  CHECK_THAT(k.f_map(0, 0), WithinAbs(-1.0, 1e-15));
}

TEST_CASE("Kron reduction of a block-diagonal H", "[netmodel]") {
  HMatrix h;
  h.n_gen = 2;
  h.h = MatrixXd::Zero(4, 4);
  h.h.topLeftCorner(2, 2) << 3, -3, -3, 3;
  h.h.bottomRightCorner(2, 2) << 2, -1, -1, 2;
  const KronReduction k = kron_reduce(h);
  CHECK((k.h_red - h.h.topLeftCorner(2, 2)).norm() == 0.0);
  CHECK(k.f_map.norm() == 0.0);
}

TEST_CASE("Kron reduction agrees with the full linear solve", "[netmodel]") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const NetworkSpec net = random_network(rng, 3, 2);
    const HMatrix h = build_h_matrix(net, VectorXd::Random(5) * 0.05);
    const KronReduction k = kron_reduce(h);
    const VectorXd dg = VectorXd::Random(3), pl = VectorXd::Random(2) * 100;
    // Full system: [P_G; P_L] = H [δ_G; δ_L] with P_L given.
    const VectorXd dl = h.ll().partialPivLu().solve(pl - h.lg() * dg);
    const VectorXd full = h.gg() * dg + h.gl() * dl;
    const VectorXd red = k.h_red * dg + k.f_map * pl;
    CHECK((full - red).norm() <= 1e-10 * std::max(1.0, full.norm()));
  }
}

TEST_CASE("singular H_LL is reported", "[netmodel]") {
  HMatrix h;
  h.n_gen = 1;
  h.h = MatrixXd::Zero(3, 3);
  h.h(0, 0) = 1;
  try {
    kron_reduce(h);
    FAIL("expected a reduction failure");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("smallest singular value") != std::string::npos);
  }
}

TEST_CASE("isolated IBR block", "[netmodel]") {
  IbrParams ibr;
  ibr.omega_c = 10;
  ibr.m_p = 1e-3;
  KronReduction k;
  k.h_red = MatrixXd::Zero(1, 1);
  k.f_map = MatrixXd::Zero(1, 0);
  const LinearPlant p = assemble_plant({ibr}, k);
  Eigen::Matrix2d expect;
  expect << 0, 1, 0, -10;
  CHECK((p.a - expect).norm() == 0.0);
  const Eigen::Vector2cd ev = Eigen::Matrix2d(ibr_block(ibr)).eigenvalues();
  CHECK(std::min(std::abs(ev(0)), std::abs(ev(1))) == 0.0);
  CHECK_THAT(std::max(std::abs(ev(0)), std::abs(ev(1))), WithinRel(10.0, 1e-14));
}

TEST_CASE("plant assembly matches its symbolic definition", "[netmodel]") {
  const Microgrid mg = build_microgrid(default_microgrid_1());
  const LinearPlant& p = mg.plant;
  const HMatrix h = build_h_matrix(mg.network, mg.op);
  const KronReduction k = kron_reduce(h);
  MatrixXd a_g = MatrixXd::Zero(6, 6);
  for (Index i = 0; i < 3; ++i) a_g.block<2, 2>(2 * i, 2 * i) = ibr_block(mg.ibrs[i]);
  CHECK((p.a - (a_g + p.b2 * k.h_red * p.e)).norm() == 0.0);
  CHECK((p.f - p.b2 * k.f_map).norm() == 0.0);
  // Load map columns sum to -1: a load change is picked up entirely by the IBRs.
  CHECK(((p.f_map.colwise().sum().array() + 1.0).abs() < 1e-9).all());
}

TEST_CASE("generator power is consistent along a trajectory", "[netmodel]") {
  const Microgrid mg = build_microgrid(default_microgrid_1());
  const LinearPlant& p = mg.plant;
  VectorXd x = VectorXd::Zero(6);
  const VectorXd pl = Eigen::Vector2d(-500, 200);
  const HMatrix h = build_h_matrix(mg.network, mg.op);
  for (int k = 0; k < 50; ++k) {
    x = integrate_step(p, x, Eigen::Vector3d(0.01, -0.02, 0.0), pl, 1e-3);
    const VectorXd dg = p.e * x;
    const VectorXd dl = h.ll().partialPivLu().solve(pl - h.lg() * dg);
    const VectorXd full = h.gg() * dg + h.gl() * dl;
    CHECK((generator_power(p, x, pl) - full).norm() <= 1e-10 * std::max(1.0, full.norm()));
  }
}

TEST_CASE("operating point satisfies the power-flow equations", "[netmodel]") {
  const Microgrid mg = build_microgrid(default_microgrid_1());
  const VectorXd p = nonlinear_injection(mg.network, mg.op.delta_star);
  CHECK((p - mg.op.p_i_star).cwiseAbs().maxCoeff() < 1e-9 * 8000);
  CHECK_THAT(p(3), WithinRel(-6400.0, 1e-9));
  CHECK_THAT(p(4), WithinRel(-8000.0, 1e-9));
  for (Index i = 0; i < 3; ++i) CHECK_THAT(mg.ibrs[i].p_g_star, WithinRel(p(i), 1e-9));
  CHECK_THAT(mg.ibrs[0].omega_s_star(), WithinRel(mg.ibrs[0].omega_nom + mg.ibrs[0].m_p * p(0), 1e-15));
}

TEST_CASE("invalid parameters are rejected", "[netmodel]") {
  IbrParams bad;
  bad.omega_c = 0;
  CHECK_THROWS_AS(validate(bad), ConfigError);
  NetworkSpec net = two_node();
  net.v_star(1) = 0;
  CHECK_THROWS_AS(validate(net), ConfigError);
  CHECK_THROWS_AS(nonlinear_injection(two_node(), VectorXd::Zero(3)), DimensionError);
}
