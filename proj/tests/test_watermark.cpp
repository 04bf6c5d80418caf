#include <catch_amalgamated.hpp>

#include <random>

#include "magc/errors.hpp"
#include "magc/watermark.hpp"

using namespace magc;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

DiscreteModel small_model() {
  DiscreteModel m;
  m.order = 2;
  m.a_d = Eigen::Matrix2d{{0.95, 0.02}, {-0.01, 0.9}};
  m.b_d = Eigen::Matrix2d{{1.0, 0.2}, {0.0, 1.0}};
  m.c_d = Eigen::Matrix2d{{300.0, 0.0}, {50.0, 200.0}};
  return m;
}

}  // namespace

TEST_CASE("zero covariance draws zero", "[watermark]") {
  WatermarkGenerator gen({MatrixXd::Zero(3, 3), 4, WatermarkPlacement::kInput});
  for (int i = 0; i < 10; ++i) CHECK(gen.draw().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sample covariance matches the configured one", "[watermark]") {
  MatrixXd sigma(3, 3);
  sigma << 4.0, 1.0, 0.5, 1.0, 2.0, -0.3, 0.5, -0.3, 1.0;
  sigma *= 1e-4;
  WatermarkGenerator gen({sigma, 123, WatermarkPlacement::kInput});
  const int n = 200000;
  VectorXd mean = VectorXd::Zero(3);
  MatrixXd cov = MatrixXd::Zero(3, 3);
  for (int i = 0; i < n; ++i) {
    const VectorXd e = gen.draw();
    mean += e;
    cov += e * e.transpose();
  }
  mean /= n;
  cov /= n;
  for (Index i = 0; i < 3; ++i) {
    CHECK(std::abs(mean(i)) < 0.01 * std::sqrt(sigma(i, i)));
    for (Index j = 0; j < 3; ++j) {
      const double scale = std::sqrt(sigma(i, i) * sigma(j, j));
      CHECK(std::abs(cov(i, j) - sigma(i, j)) <= 0.05 * scale);
    }
  }
}

TEST_CASE("semidefinite covariance is supported", "[watermark]") {
  MatrixXd sigma = MatrixXd::Ones(2, 2) * 1e-4;  // rank one
  WatermarkGenerator gen({sigma, 5, WatermarkPlacement::kInput});
  for (int i = 0; i < 20; ++i) {
    const VectorXd e = gen.draw();
    CHECK_THAT(e(0), WithinAbs(e(1), 1e-15));
  }
}

TEST_CASE("indefinite or asymmetric covariance is rejected", "[watermark]") {
  MatrixXd bad(2, 2);
  bad << 1.0, 2.0, 2.0, 1.0;
  CHECK_THROWS_AS(WatermarkGenerator({bad, 1, WatermarkPlacement::kInput}), ConfigError);
  bad << 1.0, 0.5, 0.0, 1.0;
  CHECK_THROWS_AS(WatermarkGenerator({bad, 1, WatermarkPlacement::kInput}), ConfigError);
}

TEST_CASE("watermark streams are reproducible", "[watermark]") {
  WatermarkGenerator a(WatermarkConfig::isotropic(3, 0.02, 9));
  WatermarkGenerator b(WatermarkConfig::isotropic(3, 0.02, 9));
  WatermarkGenerator c(WatermarkConfig::isotropic(3, 0.02, 10));
  bool differs = false;
  for (int i = 0; i < 50; ++i) {
    const VectorXd ea = a.draw();
    CHECK((ea - b.draw()).norm() == 0.0);
    differs = differs || (ea - c.draw()).norm() > 0.0;
  }
  CHECK(differs);
}

TEST_CASE("predictor step is linear in state, command and watermark", "[watermark]") {
  const DiscreteModel m = small_model();
  const VectorXd x = Eigen::Vector2d(0.3, -0.1), u = Eigen::Vector2d(0.01, 0.02),
                 e = Eigen::Vector2d(-0.005, 0.003);
  for (auto placement : {WatermarkPlacement::kInput, WatermarkPlacement::kState}) {
    const auto full = predict_step(m, x, u, e, placement);
    const auto no_e = predict_step(m, x, u, VectorXd::Zero(2), placement);
    const auto only_e = predict_step(m, VectorXd::Zero(2), VectorXd::Zero(2), e, placement);
    CHECK((full.first - no_e.first - only_e.first).norm() <= 1e-15);
    CHECK((full.second - m.c_d * full.first).norm() == 0.0);
  }
  const auto in = predict_step(m, x, u, e, WatermarkPlacement::kInput);
  CHECK((in.first - (m.a_d * x + m.b_d * (u + e))).norm() <= 1e-15);
  const auto st = predict_step(m, x, u, e, WatermarkPlacement::kState);
  CHECK((st.first - (m.a_d * x + m.b_d * u + e)).norm() <= 1e-15);
}

TEST_CASE("ring window keeps the newest W entries in order", "[watermark]") {
  RingWindow w(3, 1);
  CHECK(w.count() == 0);
  CHECK_FALSE(w.full());
  for (int i = 1; i <= 2; ++i) w.push(VectorXd::Constant(1, i));
  CHECK(w.ordered().col(0) == Eigen::Vector2d(1, 2));
  for (int i = 3; i <= 5; ++i) w.push(VectorXd::Constant(1, i));
  CHECK(w.full());
  CHECK(w.count() == 3);
  CHECK(w.ordered().col(0) == Eigen::Vector3d(3, 4, 5));
  CHECK(w.at(0)(0) == 3.0);
  CHECK(w.at(2)(0) == 5.0);
  CHECK_THROWS_AS(w.push(VectorXd::Zero(2)), DimensionError);
}

TEST_CASE("baseline statistics use 1/W normalisation", "[watermark]") {
  MatrixXd nu(4, 1);
  nu << 1, 2, 3, 4;
  const BaselineStats b = calibrate_baseline(nu, 4);
  CHECK(b.mu_star(0) == 2.5);
  CHECK_THAT(b.sigma_star(0, 0), WithinRel(1.25, 1e-15));
  CHECK_THROWS_AS(calibrate_baseline(nu, 5), ConfigError);
  CHECK_THROWS_AS(calibrate_baseline(nu, 0), ConfigError);
}

TEST_CASE("thresholds from calibration peaks", "[watermark]") {
  const Thresholds t = thresholds_from_peaks(1.5, 0.25);
  CHECK(t.eps1 == 3.0);
  CHECK(t.eps2 == 0.5);
  const Thresholds z = thresholds_from_peaks(0.0, 0.0);
  CHECK(z.eps1 == defaults::kThresholdFloor);
  CHECK(z.eps2 == defaults::kThresholdFloor);
}

namespace {

struct LoopRun {
  std::vector<bool> flags;
  std::vector<double> xi1, xi2;
};

// Plant identical to the model, driven by a random command plus watermark.
LoopRun run_loop(const DiscreteModel& m, int steps, int w, double eps1, double eps2,
                 std::optional<BaselineStats> baseline, double bias_from, double bias) {
  WatermarkGenerator gen(WatermarkConfig::isotropic(2, 0.02, 3));
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> cmd(-0.05, 0.05);
  DetectorState det = make_detector(m, w, eps1, eps2);
  VectorXd x = VectorXd::Zero(2), u_prev = VectorXd::Zero(2), e_prev = VectorXd::Zero(2);
  LoopRun out;
  for (int k = 0; k < steps; ++k) {
    if (k > 0) x = m.a_d * x + m.b_d * (u_prev + e_prev);
    VectorXd received = m.c_d * x;
    if (k >= bias_from) received(0) += bias;
    out.flags.push_back(dw_step(det, baseline, m, received, u_prev, e_prev));
    out.xi1.push_back(det.xi1);
    out.xi2.push_back(det.xi2);
    u_prev = Eigen::Vector2d(cmd(rng), cmd(rng));
    e_prev = gen.draw();
  }
  return out;
}

}  // namespace

TEST_CASE("exact model never flags", "[watermark]") {
  const DiscreteModel m = small_model();
  const Thresholds t = thresholds_from_peaks(0.0, 0.0);
  const LoopRun r = run_loop(m, 500, 50, t.eps1, t.eps2, std::nullopt, 1e9, 0.0);
  for (std::size_t k = 0; k < r.flags.size(); ++k) {
    CHECK_FALSE(r.flags[k]);
    CHECK(r.xi1[k] < 1e-12);
    CHECK(r.xi2[k] < 1e-12);
  }
}

TEST_CASE("no decision before the window fills", "[watermark]") {
  const DiscreteModel m = small_model();
  BaselineStats b{VectorXd::Constant(2, 100.0), MatrixXd::Zero(2, 2), 10};
  const LoopRun r = run_loop(m, 30, 10, 1.0, 1.0, b, 0, 0.0);
  for (int k = 0; k < 9; ++k) CHECK_FALSE(r.flags[k]);
  CHECK(r.flags[9]);
}

TEST_CASE("a reading bias is flagged within one window", "[watermark]") {
  const DiscreteModel m = small_model();
  const LoopRun r = run_loop(m, 400, 50, 1.0, 1.0, std::nullopt, 200, 5.0);
  for (int k = 0; k < 200; ++k) CHECK_FALSE(r.flags[k]);
  int first = -1;
  for (int k = 200; k < 400 && first < 0; ++k)
    if (r.flags[k]) first = k;
  CHECK(first >= 200);
  CHECK(first < 250);
  // ξ1 reaches bias · (fraction of window) = 5 W at full window.
  CHECK_THAT(r.xi1[300], WithinRel(5.0, 1e-9));
}
