#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "magc/defaults.hpp"
#include "magc/errors.hpp"

namespace magc {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Staircase excitation: pulses of width dt_prime with i.i.d. levels
/// uniform in [-beta, beta], sampled every dt.
struct ExcitationSpec {
  double dt = defaults::kControlPeriod;
  double dt_prime = defaults::kExcitationPulseWidth;
  double beta = defaults::kExcitationBeta;
  int k0 = defaults::kExcitationSamples;
  std::uint64_t seed = defaults::kSeed;
};

void validate(const ExcitationSpec& spec);

/// Returns (k0 + 1) x n_channels samples, one row per time step.
MatrixXd generate_excitation(const ExcitationSpec& spec, Index n_channels);

/// x[k] = A x[k-1] + B u[k-1],  y[k] = C x[k].
struct DiscreteModel {
  MatrixXd a_d;
  MatrixXd b_d;
  MatrixXd c_d;
  double dt = defaults::kControlPeriod;
  Index order = 0;

  Index n_inputs() const { return b_d.cols(); }
  Index n_outputs() const { return c_d.rows(); }
};

double spectral_radius(const MatrixXd& a);

/// Simulates the model from x0; row k of the result is y[k] (k = 0 .. rows-1).
/// Input row k drives the transition into step k + 1.
template <typename DerivedU>
MatrixXd predict(const DiscreteModel& model, const VectorXd& x0,
                 const Eigen::MatrixBase<DerivedU>& u) {
  require_dims(x0.size() == model.order, "initial state has model order");
  require_dims(u.cols() == model.n_inputs(), "input columns match B'");
  const Index k = u.rows();
  MatrixXd y(k, model.n_outputs());
  VectorXd x = x0;
  for (Index i = 0; i < k; ++i) {
    if (i > 0) x = model.a_d * x + model.b_d * u.row(i - 1).transpose();
    y.row(i) = (model.c_d * x).transpose();
  }
  return y;
}

/// Markov parameters C A^k B for k = 0 .. count-1, stacked vertically.
MatrixXd markov_parameters(const DiscreteModel& model, int count);

struct IdentifyOptions {
  int block_rows = defaults::kBlockRows;
  // Requested orders above the numerical rank of the data either throw
  // (strict) or get decoupled zero modes appended.
  bool strict_rank = false;
};

struct SubspaceDiagnostics {
  VectorXd singular_values;  // of the weighted oblique projection
  VectorXd x0;               // initial state fitted alongside B'
  std::vector<std::string> warnings;
};

/// Deterministic subspace identification of an order-d model from records
/// u (K x m) and y (K x p) sampled at dt.
DiscreteModel identify(const MatrixXd& u, const MatrixXd& y, Index d, double dt,
                       const IdentifyOptions& opts = {},
                       SubspaceDiagnostics* diag = nullptr);

/// Least-squares initial state from the first n_samples of the record.
VectorXd estimate_initial_state(const DiscreteModel& model, const MatrixXd& u,
                                const MatrixXd& y, Index n_samples);

/// Mean over samples of the per-sample Euclidean prediction error.
double prediction_error(const MatrixXd& y_hat, const MatrixXd& y);

struct OrderReport {
  std::vector<Index> candidates;
  std::vector<double> eta;           // NaN where identification failed
  std::vector<std::string> failures;  // empty string on success
  Index d_star = 0;
  Index x0_samples_rule_min = defaults::kInitialStateSamplesMin;
};

struct OrderSelection {
  OrderReport report;
  DiscreteModel model;
};

/// Fits every candidate order, scores it by re-simulation and keeps the
/// minimiser of the mean prediction error (smallest order on ties).
OrderSelection select_order(const MatrixXd& u, const MatrixXd& y,
                            const std::vector<Index>& candidates, double dt,
                            const IdentifyOptions& opts = {});

/// Number of initial samples used to estimate x̂[0] for an order-d model.
inline Index initial_state_samples(Index d) {
  return std::max<Index>(2 * d, defaults::kInitialStateSamplesMin);
}

}  // namespace magc
