#include <catch_amalgamated.hpp>

#include "magc/lqr.hpp"
#include "magc/simcore.hpp"
#include "magc/transform.hpp"

using namespace magc;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

std::vector<IbrParams> ibrs_with(std::initializer_list<double> omega_c) {
  std::vector<IbrParams> out;
  for (double w : omega_c) {
    IbrParams p;
    p.omega_c = w;
    out.push_back(p);
  }
  return out;
}

}  // namespace

TEST_CASE("T_i is a left null vector of A_i", "[transform]") {
  const auto ibrs = ibrs_with({31.4, 10.0, 123.0});
  const Transform t = make_transform(ibrs);
  CHECK(t.t_blocks[0](0) == 31.4);
  CHECK(t.t_blocks[0](1) == 1.0);
  for (std::size_t i = 0; i < ibrs.size(); ++i)
    CHECK((t.t_blocks[i] * ibr_block(ibrs[i])).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("T is block diagonal", "[transform]") {
  const Transform t = make_transform(ibrs_with({31.4, 20.0}));
  REQUIRE(t.t.rows() == 2);
  REQUIRE(t.t.cols() == 4);
  CHECK(t.t(0, 2) == 0.0);
  CHECK(t.t(0, 3) == 0.0);
  CHECK(t.t(1, 0) == 0.0);
  CHECK(t.t(1, 1) == 0.0);
}

TEST_CASE("transform works for other scalar types", "[transform]") {
  const auto t = make_transform<float>(ibrs_with({31.4}));
  const Eigen::Vector2f dx(0.01f, 0.5f);
  CHECK_THAT(z_from_state(t, dx)(0), WithinAbs(0.814, 1e-6));
}

TEST_CASE("z from state", "[transform]") {
  const Transform t = make_transform(ibrs_with({31.4}));
  CHECK(z_from_state(t, Eigen::Vector2d::Zero())(0) == 0.0);
  CHECK_THAT(z_from_state(t, Eigen::Vector2d(0.01, 0.5))(0), WithinRel(0.814, 1e-14));
  CHECK_THROWS_AS(z_from_state(t, Eigen::Vector3d::Zero()), DimensionError);
}

TEST_CASE("z update", "[transform]") {
  auto ibrs = ibrs_with({10.0});
  ibrs[0].m_p = 1e-3;
  ZAccumulator acc(1);
  CHECK(acc.z(0) == 0.0);

  // Decentralised law: integrand vanishes.
  const VectorXd p = VectorXd::Constant(1, 100.0);
  const VectorXd u = control_decentralized(ibrs, p);
  CHECK(z_update(acc, u, p, 0.005, ibrs).z(0) == 0.0);

  const ZAccumulator one = z_update(acc, VectorXd::Zero(1), p, 0.005, ibrs);
  CHECK_THAT(one.z(0), WithinRel(-0.005, 1e-12));
  CHECK_THAT(one.t_now, WithinRel(0.005, 1e-15));

  const ZAccumulator half = z_update(z_update(acc, VectorXd::Zero(1), p, 0.0025, ibrs),
                                     VectorXd::Zero(1), p, 0.0025, ibrs);
  CHECK_THAT(half.z(0), WithinRel(one.z(0), 1e-14));
  CHECK_THROWS_AS(z_update(acc, VectorXd::Zero(1), p, 0.0, ibrs), DimensionError);
}

TEST_CASE("integrated z tracks T dx along a trajectory", "[transform]") {
  const Microgrid mg = build_microgrid(default_microgrid_1());
  const LinearPlant& p = mg.plant;
  const Transform t = make_transform(mg.ibrs);
  const double h = 5e-4;
  VectorXd x = VectorXd::Zero(6);
  x(1) = 0.05;
  x(3) = -0.03;
  ZAccumulator acc(3);
  acc.z = z_from_state(t, x);
  const VectorXd pl = Eigen::Vector2d(-300, 0);
  double scale = acc.z.cwiseAbs().maxCoeff(), err = 0.0;
  for (int k = 0; k < 2000; ++k) {
    const VectorXd u = Eigen::Vector3d(0.02 * std::sin(0.01 * k), 0.0, -0.01);
    acc = z_update(acc, u, generator_power(p, x, pl), h, mg.ibrs);
    x = integrate_step(p, x, u, pl, h);
    const VectorXd z = z_from_state(t, x);
    scale = std::max(scale, z.cwiseAbs().maxCoeff());
    err = std::max(err, (z - acc.z).cwiseAbs().maxCoeff());
  }
  CHECK(err < 1e-3 * scale);
}

TEST_CASE("zero z rate gives the first-order frequency decay", "[transform]") {
  // Single decoupled IBR under the decentralised law in continuous time.
  IbrParams ibr;
  KronReduction k;
  k.h_red = MatrixXd::Zero(1, 1);
  k.f_map = MatrixXd::Zero(1, 0);
  const LinearPlant p = assemble_plant({ibr}, k);
  const MatrixXd a_cl = p.a + p.b1 * ibr.m_p * p.h_red * p.e;
  const ZohStepper zoh = make_zoh(a_cl, MatrixXd::Zero(2, 1), 1e-3);
  VectorXd x(2);
  x << 0.0, 0.1;
  for (int k = 1; k <= 200; ++k) {
    x = zoh.step(x, VectorXd::Zero(1));
    const double bound = 0.1 * std::exp(-ibr.omega_c * 1e-3 * k) * 1.05;
    CHECK(std::abs(x(1)) <= bound);
  }
}
