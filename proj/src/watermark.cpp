#include "magc/watermark.hpp"

#include <algorithm>
#include <cmath>

#include "magc/errors.hpp"

namespace magc {

WatermarkGenerator::WatermarkGenerator(const WatermarkConfig& cfg) : rng_(cfg.seed) {
  const Index n = cfg.sigma.rows();
  require_dims(cfg.sigma.cols() == n, "watermark covariance is square");
  if (!cfg.sigma.isApprox(cfg.sigma.transpose(), 1e-12) && cfg.sigma.norm() > 0.0)
    throw ConfigError("watermark covariance must be symmetric");
  if (n == 0 || cfg.sigma.isZero(0.0)) {
    color_ = MatrixXd::Zero(n, n);
    return;
  }
  // Σ = Pᵀ L D Lᵀ P
  Eigen::LDLT<MatrixXd> ldlt(cfg.sigma);
  const VectorXd d = ldlt.vectorD();
  if (d.minCoeff() < -1e-12 * std::max(1.0, d.cwiseAbs().maxCoeff()))
    throw ConfigError("watermark covariance must be positive semidefinite");
  const MatrixXd l = ldlt.matrixL();
  color_ = ldlt.transpositionsP().transpose() * (l * d.cwiseMax(0.0).cwiseSqrt().asDiagonal());
}

VectorXd WatermarkGenerator::draw() {
  VectorXd n(color_.cols());
  for (Index i = 0; i < n.size(); ++i) n(i) = normal_(rng_);
  return color_ * n;
}

std::pair<VectorXd, VectorXd> predict_step(const DiscreteModel& model, const VectorXd& x_hat,
                                           const VectorXd& d_omega_s, const VectorXd& e,
                                           WatermarkPlacement placement) {
  require_dims(x_hat.size() == model.order, "predictor state has model order");
  require_dims(d_omega_s.size() == model.n_inputs() && e.size() == model.n_inputs(),
               "command and watermark match model inputs");
  VectorXd next;
  if (placement == WatermarkPlacement::kInput) {
    next = model.a_d * x_hat + model.b_d * (d_omega_s + e);
  } else {
    require_dims(model.order == model.n_inputs(), "state-additive watermark needs order == inputs");
    next = model.a_d * x_hat + model.b_d * d_omega_s + e;
  }
  VectorXd p_hat = model.c_d * next;
  return {std::move(next), std::move(p_hat)};
}

BaselineStats calibrate_baseline(const MatrixXd& innovations, int w) {
  if (w < 1) throw ConfigError("detector window must be >= 1");
  if (innovations.rows() < w) throw ConfigError("baseline needs at least W innovations");
  const MatrixXd first = innovations.topRows(w);
  BaselineStats b;
  b.w = w;
  b.mu_star = first.colwise().mean().transpose();
  const MatrixXd centered = first.rowwise() - b.mu_star.transpose();
  b.sigma_star = centered.transpose() * centered / static_cast<double>(w);
  return b;
}

void RingWindow::push(const VectorXd& v) {
  require_dims(v.size() == data_.cols(), "window entry dimension");
  data_.row(head_) = v.transpose();
  head_ = (head_ + 1) % data_.rows();
  count_ = std::min<Index>(count_ + 1, data_.rows());
}

Eigen::VectorXd RingWindow::at(Index i) const {
  const Index start = full() ? head_ : 0;
  return data_.row((start + i) % data_.rows()).transpose();
}

MatrixXd RingWindow::ordered() const {
  MatrixXd out(count_, data_.cols());
  for (Index i = 0; i < count_; ++i) out.row(i) = at(i).transpose();
  return out;
}

DetectorState make_detector(const DiscreteModel& model, int w, double eps1, double eps2,
                            WatermarkPlacement placement) {
  if (w < 1) throw ConfigError("detector window must be >= 1");
  DetectorState s;
  s.m_window = RingWindow(w, model.n_outputs());
  s.m_hat_window = RingWindow(w, model.n_outputs());
  s.x_hat = VectorXd::Zero(model.order);
  s.eps1 = eps1;
  s.eps2 = eps2;
  s.placement = placement;
  return s;
}

std::pair<VectorXd, MatrixXd> window_statistics(const DetectorState& state) {
  const MatrixXd nu = state.m_window.ordered() - state.m_hat_window.ordered();
  const double w = static_cast<double>(nu.rows());
  VectorXd mu = nu.colwise().mean().transpose();
  const MatrixXd centered = nu.rowwise() - mu.transpose();
  MatrixXd sigma = centered.transpose() * centered / w;
  return {std::move(mu), std::move(sigma)};
}

bool dw_step(DetectorState& state, std::optional<BaselineStats>& baseline,
             const DiscreteModel& model, const VectorXd& received_p,
             const VectorXd& d_omega_s, const VectorXd& e) {
  if (state.steps > 0) {
    state.x_hat = predict_step(model, state.x_hat, d_omega_s, e, state.placement).first;
  }
  ++state.steps;
  const VectorXd p_hat = model.c_d * state.x_hat;
  state.m_window.push(received_p);
  state.m_hat_window.push(p_hat);

  if (!state.m_window.full()) {
    state.flag = false;
    state.xi1 = 0.0;
    state.xi2 = 0.0;
    return false;
  }
  const auto [mu, sigma] = window_statistics(state);
  if (!baseline) baseline = BaselineStats{mu, sigma, static_cast<int>(state.m_window.capacity())};
  state.xi1 = (mu - baseline->mu_star).norm();
  state.xi2 = std::abs((sigma - baseline->sigma_star).trace());
  state.flag = !(state.xi1 < state.eps1 && state.xi2 < state.eps2);
  return state.flag;
}

Thresholds thresholds_from_peaks(double xi1_peak, double xi2_peak, double factor, double floor) {
  return {std::max(factor * xi1_peak, floor), std::max(factor * xi2_peak, floor)};
}

}  // namespace magc
