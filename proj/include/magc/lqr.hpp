#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "magc/defaults.hpp"
#include "magc/errors.hpp"
#include "magc/netmodel.hpp"
#include "magc/sysid.hpp"
#include "magc/transform.hpp"

namespace magc {

/// Diagonal LQR weights in z-space: q_i for quality of service, r_i for
/// generation cost.
struct CostWeights {
  VectorXd q;
  VectorXd r;

  static CostWeights uniform(Index n, double q = defaults::kWeightQ,
                             double r = defaults::kWeightR) {
    return {VectorXd::Constant(n, q), VectorXd::Constant(n, r)};
  }
};

void validate(const CostWeights& w, Index n);

struct CareResult {
  MatrixXd p;
  double residual = 0.0;  // ||A'P + PA - PBR^-1B'P + Q||_F / max(||P||_F, ||Q||_F)
  int refinement_steps = 0;
};

/// Stabilising solution of A'P + PA - P B R^-1 B' P + Q = 0.
CareResult solve_care(const MatrixXd& a, const MatrixXd& b, const MatrixXd& q,
                      const MatrixXd& r);

double spectral_abscissa(const MatrixXd& a);

struct ControllerGain {
  MatrixXd k_prime;        // N x 2N, dω_s = -K' dx
  MatrixXd k;              // N x N,  dω_s = -K z
  MatrixXd care_solution;  // P
  double residual = 0.0;
  double abscissa_state = 0.0;  // of A - B1 K'
  double abscissa_z = 0.0;      // of A - B1 K T
  Eigen::VectorXcd spectrum_z;
  std::vector<std::string> warnings;
};

ControllerGain lqr_gain(const LinearPlant& plant, const CostWeights& weights,
                        const Transform& t);

/// K = K' T^T (T T^T)^-1, the least-squares fit of K T to K'.
MatrixXd project_gain(const MatrixXd& k_prime, const MatrixXd& t);

template <typename Derived>
VectorXd control_optimal(const ControllerGain& gain, const Eigen::MatrixBase<Derived>& z) {
  require_dims(z.size() == gain.k.cols(), "z matches gain");
  return -gain.k * z;
}

template <typename Derived>
VectorXd control_decentralized(const std::vector<IbrParams>& ibrs,
                               const Eigen::MatrixBase<Derived>& d_p_g) {
  require_dims(d_p_g.size() == static_cast<Index>(ibrs.size()), "one power per IBR");
  VectorXd u(d_p_g.size());
  for (Index i = 0; i < u.size(); ++i) u(i) = ibrs[static_cast<std::size_t>(i)].m_p * d_p_g(i);
  return u;
}

/// Model-based corrective controller state: x_hat runs the identified model,
/// z_hat integrates the z dynamics against the predicted powers.
struct ObserverState {
  VectorXd x_hat;
  VectorXd z_hat;
  VectorXd p_hat;
};

ObserverState make_observer(const DiscreteModel& model, Index n_ibr);

/// Advances the observer one control period given the command applied over
/// that period; p_hat and z_hat are updated from the model prediction.
void observer_step(ObserverState& obs, const DiscreteModel& model,
                   const std::vector<IbrParams>& ibrs, const VectorXd& d_omega_s,
                   double dt);

VectorXd control_observer(const ControllerGain& gain, const ObserverState& obs);

/// Discrete PI acting on a regulation error (the simulator feeds it the
/// negated lagged frequency measurement). Integrator first, then output.
struct PiController {
  double kp = defaults::kPiKp;
  double ki = defaults::kPiKi;
  double clamp = 0.0;  // |integrator| bound; 0 disables
  VectorXd integrator;
};

VectorXd control_pi_baseline(PiController& pi, const VectorXd& error, double dt);

}  // namespace magc
