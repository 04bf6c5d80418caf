#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "magc/errors.hpp"
#include "magc/sysid.hpp"

using namespace magc;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

// Stable 3rd-order, 2-input, 2-output system.
DiscreteModel reference_system() {
  DiscreteModel m;
  m.order = 3;
  m.a_d = Eigen::Matrix3d{{0.9, 0.1, 0.0}, {-0.1, 0.9, 0.0}, {0.0, 0.0, 0.5}};
  m.b_d = MatrixXd{{1.0, 0.0}, {0.0, 1.0}, {1.0, -1.0}};
  m.c_d = MatrixXd{{100.0, 0.0, 50.0}, {0.0, 80.0, -30.0}};
  return m;
}

MatrixXd excitation(Index rows, std::uint64_t seed) {
  ExcitationSpec spec;
  spec.k0 = static_cast<int>(rows - 1);
  spec.seed = seed;
  return generate_excitation(spec, 2);
}

}  // namespace

TEST_CASE("zero amplitude gives zero excitation", "[sysid]") {
  ExcitationSpec spec;
  spec.beta = 0.0;
  spec.k0 = 50;
  const MatrixXd u = generate_excitation(spec, 3);
  CHECK(u.rows() == 51);
  CHECK(u.cols() == 3);
  CHECK(u.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("excitation is a bounded staircase", "[sysid]") {
  ExcitationSpec spec;  // dt = 5 ms, pulses of 50 ms
  spec.k0 = 399;
  const MatrixXd u = generate_excitation(spec, 2);
  CHECK(u.cwiseAbs().maxCoeff() <= spec.beta);
  for (Index k = 0; k < u.rows(); ++k) {
    const Index start = (k / 10) * 10;
    CHECK((u.row(k) - u.row(start)).norm() == 0.0);
  }
  CHECK((u.row(0) - u.row(10)).norm() > 0.0);
  CHECK((generate_excitation(spec, 2) - u).norm() == 0.0);
  spec.seed = 2;
  CHECK((generate_excitation(spec, 2) - u).norm() > 0.0);
}

TEST_CASE("invalid excitation settings are rejected", "[sysid]") {
  ExcitationSpec spec;
  spec.dt_prime = spec.dt;
  CHECK_THROWS_AS(generate_excitation(spec, 1), ConfigError);
  spec = {};
  spec.beta = -1;
  CHECK_THROWS_AS(generate_excitation(spec, 1), ConfigError);
}

TEST_CASE("prediction closed form", "[sysid]") {
  DiscreteModel m;
  m.order = 1;
  m.a_d = MatrixXd::Constant(1, 1, 0.5);
  m.b_d = MatrixXd::Constant(1, 1, 1.0);
  m.c_d = MatrixXd::Constant(1, 1, 2.0);
  const MatrixXd y = predict(m, VectorXd::Constant(1, 1.0), MatrixXd::Zero(6, 1));
  for (Index k = 0; k < 6; ++k) CHECK_THAT(y(k, 0), WithinRel(2.0 * std::pow(0.5, k), 1e-15));

  const MatrixXd step = predict(m, VectorXd::Zero(1), MatrixXd::Ones(4, 1));
  CHECK(step(0, 0) == 0.0);
  CHECK(step(1, 0) == 2.0);
  CHECK(step(2, 0) == 3.0);
  CHECK(step(3, 0) == 3.5);
}

TEST_CASE("Markov parameters of a known system", "[sysid]") {
  DiscreteModel m;
  m.order = 1;
  m.a_d = MatrixXd::Constant(1, 1, 0.5);
  m.b_d = MatrixXd::Constant(1, 1, 1.0);
  m.c_d = MatrixXd::Constant(1, 1, 2.0);
  const MatrixXd h = markov_parameters(m, 3);
  CHECK(h(0, 0) == 2.0);
  CHECK(h(1, 0) == 1.0);
  CHECK(h(2, 0) == 0.5);
}

TEST_CASE("identification recovers a system up to similarity", "[sysid]") {
  const DiscreteModel ref = reference_system();
  const MatrixXd u = excitation(800, 4);
  const MatrixXd y = predict(ref, VectorXd::Zero(3), u);
  SubspaceDiagnostics diag;
  const DiscreteModel id = identify(u, y, 3, ref.dt, {}, &diag);
  REQUIRE(id.order == 3);
  const MatrixXd h_ref = markov_parameters(ref, 10), h_id = markov_parameters(id, 10);
  CHECK((h_ref - h_id).norm() <= 1e-6 * h_ref.norm());
  CHECK_THAT(spectral_radius(id.a_d), WithinRel(spectral_radius(ref.a_d), 1e-6));
  CHECK(diag.singular_values.size() >= 3);

  const MatrixXd y_hat = predict(id, diag.x0, u);
  CHECK(prediction_error(y_hat, y) <= 1e-6 * y.cwiseAbs().maxCoeff());
}

TEST_CASE("identification from a nonzero initial state", "[sysid]") {
  const DiscreteModel ref = reference_system();
  const MatrixXd u = excitation(800, 9);
  const MatrixXd y = predict(ref, Eigen::Vector3d(0.3, -0.2, 0.1), u);
  SubspaceDiagnostics diag;
  const DiscreteModel id = identify(u, y, 3, ref.dt, {}, &diag);
  CHECK(prediction_error(predict(id, diag.x0, u), y) <= 1e-6 * y.cwiseAbs().maxCoeff());
  const VectorXd x0 = estimate_initial_state(id, u, y, initial_state_samples(3));
  CHECK(prediction_error(predict(id, x0, u), y) <= 1e-6 * y.cwiseAbs().maxCoeff());
}

TEST_CASE("all-zero output gives the zero model", "[sysid]") {
  const MatrixXd u = excitation(400, 5);
  const DiscreteModel id = identify(u, MatrixXd::Zero(400, 2), 2, 0.005);
  CHECK(predict(id, VectorXd::Zero(id.order), u).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("constant input is insufficient excitation", "[sysid]") {
  const MatrixXd u = MatrixXd::Ones(400, 2);
  const MatrixXd y = predict(reference_system(), VectorXd::Zero(3), u);
  try {
    identify(u, y, 3, 0.005);
    FAIL("expected an excitation failure");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("insufficient excitation") != std::string::npos);
  }
}

TEST_CASE("order selection picks the true order", "[sysid]") {
  const DiscreteModel ref = reference_system();
  const MatrixXd u = excitation(800, 6);
  const MatrixXd y = predict(ref, VectorXd::Zero(3), u);
  const OrderSelection sel = select_order(u, y, {1, 2, 3, 4, 5, 6}, ref.dt);
  CHECK(sel.report.d_star == 3);
  CHECK(sel.model.order == 3);
  const double scale = y.cwiseAbs().maxCoeff();
  // Under-fitted orders leave a large error, over-fitted ones do not degrade.
  CHECK(sel.report.eta[0] > 1e-3 * scale);
  CHECK(sel.report.eta[1] > 1e-3 * scale);
  for (std::size_t i = 2; i < 6; ++i) {
    CHECK(sel.report.failures[i].empty());
    CHECK(sel.report.eta[i] <= 1e-6 * scale);
  }
}

TEST_CASE("strict rank mode refuses orders above the data rank", "[sysid]") {
  const DiscreteModel ref = reference_system();
  const MatrixXd u = excitation(800, 7);
  const MatrixXd y = predict(ref, VectorXd::Zero(3), u);
  IdentifyOptions opts;
  opts.strict_rank = true;
  CHECK_THROWS_AS(identify(u, y, 6, ref.dt, opts), NumericalError);
  opts.strict_rank = false;
  SubspaceDiagnostics diag;
  const DiscreteModel padded = identify(u, y, 6, ref.dt, opts, &diag);
  CHECK(padded.order == 6);
  CHECK_FALSE(diag.warnings.empty());
}

TEST_CASE("identification is deterministic", "[sysid]") {
  const DiscreteModel ref = reference_system();
  const MatrixXd u = excitation(600, 8);
  const MatrixXd y = predict(ref, VectorXd::Zero(3), u);
  const DiscreteModel a = identify(u, y, 3, ref.dt), b = identify(u, y, 3, ref.dt);
  CHECK((a.a_d - b.a_d).norm() == 0.0);
  CHECK((a.b_d - b.b_d).norm() == 0.0);
  CHECK((a.c_d - b.c_d).norm() == 0.0);
}

TEST_CASE("identification argument checks", "[sysid]") {
  const MatrixXd u = excitation(200, 1);
  CHECK_THROWS_AS(identify(u, MatrixXd::Zero(200, 2), 0, 0.005), ConfigError);
  CHECK_THROWS_AS(identify(u, MatrixXd::Zero(150, 2), 2, 0.005), DimensionError);
  CHECK_THROWS_AS(select_order(u, MatrixXd::Zero(200, 2), {}, 0.005), ConfigError);
}
