#include "magc/lqr.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <complex>
#include <limits>
#include <sstream>

namespace magc {

namespace {

using Eigen::MatrixXcd;
using cd = std::complex<double>;

double relative_residual(const MatrixXd& a, const MatrixXd& b, const MatrixXd& q,
                         const MatrixXd& r_inv, const MatrixXd& p) {
  const MatrixXd res = a.transpose() * p + p * a - p * b * r_inv * b.transpose() * p + q;
  const double scale = p.norm() > 0.0 ? p.norm() : 1.0;
  return res.norm() / scale;
}

// Throws when an eigenvalue of A in the closed right half plane cannot be
// moved by B (PBH test).
void check_stabilizable(const MatrixXd& a, const MatrixXd& b) {
  const Index n = a.rows();
  const Eigen::VectorXcd lambda = Eigen::EigenSolver<MatrixXd>(a, false).eigenvalues();
  const double scale = std::max({1.0, a.norm(), b.norm()});
  for (Index i = 0; i < n; ++i) {
    if (lambda(i).real() < -1e-12 * scale) continue;
    MatrixXcd pbh(n, n + b.cols());
    pbh << a.cast<cd>() - lambda(i) * MatrixXcd::Identity(n, n), b.cast<cd>();
    Eigen::JacobiSVD<MatrixXcd> svd(pbh);
    const double smin = svd.singularValues()(n - 1);
    if (smin <= 1e-10 * scale) {
      std::ostringstream msg;
      msg << "LQR design failed: (A, B) not stabilizable, uncontrollable mode at lambda = "
          << lambda(i).real() << (lambda(i).imag() < 0 ? " - " : " + ")
          << std::abs(lambda(i).imag()) << "i";
      throw NumericalError(msg.str());
    }
  }
}

// Reorders a complex Schur form so that eigenvalues with negative real part
// lead. Adjacent diagonal entries are exchanged with a Givens rotation.
void order_stable_first(MatrixXcd& t, MatrixXcd& u) {
  const Index n = t.rows();
  for (Index sweep = 0; sweep < n; ++sweep) {
    bool swapped = false;
    for (Index k = 0; k + 1 < n; ++k) {
      const cd a = t(k, k), b = t(k + 1, k + 1);
      if (!(a.real() >= 0.0 && b.real() < 0.0)) continue;
      cd v1 = t(k, k + 1), v2 = b - a;
      const double nv = std::hypot(std::abs(v1), std::abs(v2));
      v1 /= nv;
      v2 /= nv;
      Eigen::Matrix2cd g;
      g << v1, -std::conj(v2), v2, std::conj(v1);
      t.middleRows(k, 2) = g.adjoint() * t.middleRows(k, 2);
      t.middleCols(k, 2) = t.middleCols(k, 2) * g;
      u.middleCols(k, 2) = u.middleCols(k, 2) * g;
      t(k + 1, k) = 0.0;
      swapped = true;
    }
    if (!swapped) break;
  }
}

// Solves Ak' X + X Ak + W = 0 through its Kronecker form.
MatrixXd solve_lyapunov(const MatrixXd& ak, const MatrixXd& w) {
  const Index n = ak.rows();
  const MatrixXd id = MatrixXd::Identity(n, n);
  MatrixXd lhs(n * n, n * n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      lhs.block(i * n, j * n, n, n) = ak(j, i) * id + (i == j ? MatrixXd(ak.transpose()) : MatrixXd::Zero(n, n));
  const VectorXd vec_w = Eigen::Map<const VectorXd>(w.data(), n * n);
  const VectorXd x = lhs.partialPivLu().solve(-vec_w);
  MatrixXd out = Eigen::Map<const MatrixXd>(x.data(), n, n);
  return 0.5 * (out + out.transpose());
}

}  // namespace

void validate(const CostWeights& w, Index n) {
  require_dims(w.q.size() == n && w.r.size() == n, "one q and one r weight per IBR");
  for (Index i = 0; i < n; ++i) {
    if (!(w.q(i) > 0.0)) throw ConfigError("LQR weight q must be positive");
    if (!(w.r(i) > 0.0)) throw ConfigError("LQR weight r must be positive");
  }
}

double spectral_abscissa(const MatrixXd& a) {
  if (a.size() == 0) return -std::numeric_limits<double>::infinity();
  return Eigen::EigenSolver<MatrixXd>(a, false).eigenvalues().real().maxCoeff();
}

CareResult solve_care(const MatrixXd& a, const MatrixXd& b, const MatrixXd& q,
                      const MatrixXd& r) {
  const Index n = a.rows();
  require_dims(a.cols() == n && b.rows() == n, "A square, B rows match");
  require_dims(q.rows() == n && q.cols() == n, "Q matches A");
  require_dims(r.rows() == b.cols() && r.cols() == b.cols(), "R matches B");

  Eigen::LLT<MatrixXd> r_llt(r);
  if (r_llt.info() != Eigen::Success) throw NumericalError("LQR design failed: R is not positive definite");
  const MatrixXd r_inv = r_llt.solve(MatrixXd::Identity(r.rows(), r.cols()));
  check_stabilizable(a, b);

  MatrixXd ham(2 * n, 2 * n);
  ham << a, -b * r_inv * b.transpose(), -q, -a.transpose();
  Eigen::ComplexSchur<MatrixXcd> schur(ham.cast<cd>());
  if (schur.info() != Eigen::Success) throw NumericalError("LQR design failed: Schur decomposition did not converge");
  MatrixXcd t = schur.matrixT();
  MatrixXcd u = schur.matrixU();

  const double axis_tol = 1e-10 * std::max(1.0, ham.norm());
  for (Index i = 0; i < 2 * n; ++i) {
    if (std::abs(t(i, i).real()) <= axis_tol) {
      std::ostringstream msg;
      msg << "LQR design failed: Hamiltonian eigenvalue on the imaginary axis ("
          << t(i, i).real() << " + " << t(i, i).imag() << "i); (Q, A) not detectable";
      throw NumericalError(msg.str());
    }
  }
  order_stable_first(t, u);

  const MatrixXcd u11 = u.topLeftCorner(n, n);
  const MatrixXcd u21 = u.bottomLeftCorner(n, n);
  Eigen::FullPivLU<MatrixXcd> lu(u11.transpose());
  if (!lu.isInvertible()) throw NumericalError("LQR design failed: stable invariant subspace is not a graph");
  // P = U21 U11^-1  <=>  U11^T P^T = U21^T
  MatrixXd p = lu.solve(u21.transpose()).transpose().real();
  p = 0.5 * (p + p.transpose());

  CareResult out;
  out.p = p;
  out.residual = relative_residual(a, b, q, r_inv, p);

  // Newton-Kleinman polishing from the Schur solution.
  for (int it = 0; it < 8 && out.residual > 1e-13; ++it) {
    const MatrixXd k = r_inv * b.transpose() * out.p;
    const MatrixXd ak = a - b * k;
    if (spectral_abscissa(ak) >= 0.0) break;
    const MatrixXd next = solve_lyapunov(ak, q + k.transpose() * r * k);
    const double res = relative_residual(a, b, q, r_inv, next);
    if (!(res < out.residual)) break;
    out.p = next;
    out.residual = res;
    out.refinement_steps = it + 1;
  }
  return out;
}

MatrixXd project_gain(const MatrixXd& k_prime, const MatrixXd& t) {
  require_dims(k_prime.cols() == t.cols(), "K' columns match T");
  const MatrixXd ttt = t * t.transpose();
  // K (T T') = K' T'  <=>  (T T') K' = T K'^T
  return ttt.llt().solve(t * k_prime.transpose()).transpose();
}

ControllerGain lqr_gain(const LinearPlant& plant, const CostWeights& weights,
                        const Transform& t) {
  const Index n = plant.n_ibr();
  validate(weights, n);
  require_dims(t.t.rows() == n && t.t.cols() == plant.n_state(), "transform matches plant");

  const MatrixXd q_prime = t.t.transpose() * weights.q.asDiagonal() * t.t;
  const MatrixXd r = weights.r.asDiagonal();
  const CareResult care = solve_care(plant.a, plant.b1, q_prime, r);

  ControllerGain g;
  g.care_solution = care.p;
  g.residual = care.residual;
  g.k_prime = weights.r.cwiseInverse().asDiagonal() * plant.b1.transpose() * care.p;
  g.k = project_gain(g.k_prime, t.t);

  const double min_eig = Eigen::SelfAdjointEigenSolver<MatrixXd>(care.p, Eigen::EigenvaluesOnly)
                             .eigenvalues()
                             .minCoeff();
  if (min_eig < -1e-10 * std::max(1.0, care.p.norm())) {
    std::ostringstream msg;
    msg << "Riccati solution is not positive semidefinite (min eigenvalue " << min_eig << ")";
    g.warnings.push_back(msg.str());
  }
  if (care.residual > defaults::kRiccatiRelTolerance) {
    std::ostringstream msg;
    msg << "Riccati residual " << care.residual << " exceeds " << defaults::kRiccatiRelTolerance;
    g.warnings.push_back(msg.str());
  }

  const MatrixXd cl_state = plant.a - plant.b1 * g.k_prime;
  const MatrixXd cl_z = plant.a - plant.b1 * g.k * t.t;
  g.abscissa_state = spectral_abscissa(cl_state);
  g.spectrum_z = Eigen::EigenSolver<MatrixXd>(cl_z, false).eigenvalues();
  g.abscissa_z = g.spectrum_z.real().maxCoeff();
  if (!(g.abscissa_z < 0.0)) {
    std::ostringstream msg;
    msg << "projected z-gain does not stabilise the plant: spectral abscissa of A - B1 K T is "
        << g.abscissa_z << "; spectrum:";
    for (Index i = 0; i < g.spectrum_z.size(); ++i)
      msg << ' ' << g.spectrum_z(i).real() << (g.spectrum_z(i).imag() < 0 ? "-" : "+")
          << std::abs(g.spectrum_z(i).imag()) << 'i';
    g.warnings.push_back(msg.str());
  }
  return g;
}

ObserverState make_observer(const DiscreteModel& model, Index n_ibr) {
  ObserverState obs;
  obs.x_hat = VectorXd::Zero(model.order);
  obs.z_hat = VectorXd::Zero(n_ibr);
  obs.p_hat = VectorXd::Zero(model.n_outputs());
  return obs;
}

void observer_step(ObserverState& obs, const DiscreteModel& model,
                   const std::vector<IbrParams>& ibrs, const VectorXd& d_omega_s,
                   double dt) {
  require_dims(d_omega_s.size() == model.n_inputs(), "command matches model inputs");
  require_dims(obs.x_hat.size() == model.order, "observer state matches model order");
  obs.z_hat += z_rate(ibrs, d_omega_s, obs.p_hat) * dt;
  obs.x_hat = model.a_d * obs.x_hat + model.b_d * d_omega_s;
  obs.p_hat = model.c_d * obs.x_hat;
}

VectorXd control_observer(const ControllerGain& gain, const ObserverState& obs) {
  return control_optimal(gain, obs.z_hat);
}

VectorXd control_pi_baseline(PiController& pi, const VectorXd& error, double dt) {
  if (pi.integrator.size() != error.size()) pi.integrator = VectorXd::Zero(error.size());
  pi.integrator += error * dt;
  if (pi.clamp > 0.0) pi.integrator = pi.integrator.cwiseMax(-pi.clamp).cwiseMin(pi.clamp);
  return pi.kp * error + pi.ki * pi.integrator;
}

}  // namespace magc
