#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <utility>

#include "magc/defaults.hpp"
#include "magc/sysid.hpp"

namespace magc {

/// Where the watermark enters the predictor: through B' with the command
/// (default), or added to the state directly (requires order == inputs).
enum class WatermarkPlacement { kInput, kState };

struct WatermarkConfig {
  MatrixXd sigma;  // covariance of e[k]
  std::uint64_t seed = defaults::kSeed;
  WatermarkPlacement placement = WatermarkPlacement::kInput;

  static WatermarkConfig isotropic(Index n, double std_dev = defaults::kWatermarkSigma,
                                   std::uint64_t seed = defaults::kSeed) {
    return {std_dev * std_dev * MatrixXd::Identity(n, n), seed, WatermarkPlacement::kInput};
  }
};

/// Draws e ~ N(0, Σ) by colouring standard normals with an LDLᵀ factor of Σ.
class WatermarkGenerator {
 public:
  explicit WatermarkGenerator(const WatermarkConfig& cfg);

  VectorXd draw();
  Index size() const { return color_.rows(); }

 private:
  MatrixXd color_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// One step of the watermarked predictor. Returns (x̂[k], p̂[k]).
std::pair<VectorXd, VectorXd> predict_step(const DiscreteModel& model, const VectorXd& x_hat,
                                           const VectorXd& d_omega_s, const VectorXd& e,
                                           WatermarkPlacement placement = WatermarkPlacement::kInput);

struct BaselineStats {
  VectorXd mu_star;
  MatrixXd sigma_star;
  int w = defaults::kWindow;
};

/// Mean and (1/W-normalised) covariance of the first W innovations
/// (rows of `innovations`).
BaselineStats calibrate_baseline(const MatrixXd& innovations, int w);

/// Fixed-length FIFO of vectors.
class RingWindow {
 public:
  RingWindow() = default;
  RingWindow(int w, Index dim) : data_(MatrixXd::Zero(w, dim)) {}

  void push(const VectorXd& v);
  bool full() const { return count_ == data_.rows(); }
  Index count() const { return count_; }
  Index capacity() const { return data_.rows(); }
  /// Entries oldest first.
  MatrixXd ordered() const;
  /// Entry i, counted from the oldest.
  Eigen::VectorXd at(Index i) const;

 private:
  MatrixXd data_;
  Index head_ = 0;  // next write position
  Index count_ = 0;
};

struct DetectorState {
  RingWindow m_window;      // received measurements
  RingWindow m_hat_window;  // predictions
  VectorXd x_hat;
  double eps1 = std::numeric_limits<double>::infinity();
  double eps2 = std::numeric_limits<double>::infinity();
  bool flag = false;
  double xi1 = 0.0;
  double xi2 = 0.0;
  long steps = 0;
  WatermarkPlacement placement = WatermarkPlacement::kInput;
};

DetectorState make_detector(const DiscreteModel& model, int w, double eps1, double eps2,
                            WatermarkPlacement placement = WatermarkPlacement::kInput);

/// Innovation statistics of a full window: (mean, 1/W covariance).
std::pair<VectorXd, MatrixXd> window_statistics(const DetectorState& state);

/// One detector step. `d_omega_s` and `e` are the command and watermark
/// applied over the previous control interval; the first call only records.
/// When `baseline` is empty the first full window becomes the baseline.
bool dw_step(DetectorState& state, std::optional<BaselineStats>& baseline,
             const DiscreteModel& model, const VectorXd& received_p,
             const VectorXd& d_omega_s, const VectorXd& e);

struct Thresholds {
  double eps1 = 0.0;
  double eps2 = 0.0;
};

/// ε_j = factor · max ξ_j, floored.
Thresholds thresholds_from_peaks(double xi1_peak, double xi2_peak,
                                 double factor = defaults::kThresholdFactor,
                                 double floor = defaults::kThresholdFloor);

}  // namespace magc
