#include "magc/sysid.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

namespace magc {

namespace {

// Singular values below this fraction of the largest count as zero when the
// projection rank is assessed.
constexpr double kRankTolerance = 1e-9;

// Block Hankel matrix with `rows` block rows built from the columns of `w`
// (channels x samples), starting at sample `first`.
MatrixXd block_hankel(const MatrixXd& w, Index first, Index rows, Index cols) {
  const Index c = w.rows();
  MatrixXd h(rows * c, cols);
  for (Index r = 0; r < rows; ++r) h.middleRows(r * c, c) = w.middleCols(first + r, cols);
  return h;
}

VectorXd channel_scale(const MatrixXd& w) {
  VectorXd s(w.cols());
  for (Index c = 0; c < w.cols(); ++c) {
    const double rms = std::sqrt(w.col(c).squaredNorm() / static_cast<double>(w.rows()));
    s(c) = rms > 0.0 ? rms : 1.0;
  }
  return s;
}

// Responses of y[k] = C x[k] to the unit initial states and to each entry of
// B, for the record u. Columns: d initial-state regressors, then d*m entries
// of B in column-major order. Rows: output-major stacking of K samples.
MatrixXd output_regressors(const MatrixXd& a, const MatrixXd& c, const MatrixXd& u,
                           Index n_samples, bool with_b) {
  const Index d = a.rows();
  const Index m = u.cols();
  const Index p = c.rows();
  const Index n_cols = d + (with_b ? d * m : 0);
  MatrixXd phi(n_samples * p, n_cols);

  // Initial-state part: C A^k.
  MatrixXd ak = MatrixXd::Identity(d, d);
  for (Index k = 0; k < n_samples; ++k) {
    phi.block(k * p, 0, p, d) = c * ak;
    ak = a * ak;
  }
  if (!with_b) return phi;

  // State response to B = e_r e_c^T: x[k+1] = A x[k] + e_r u_c[k].
  // All d responses for one input channel c evolve together as the columns of X.
  for (Index ch = 0; ch < m; ++ch) {
    MatrixXd x = MatrixXd::Zero(d, d);
    for (Index k = 0; k < n_samples; ++k) {
      if (k > 0) {
        x = a * x;
        x.diagonal().array() += u(k - 1, ch);
      }
      phi.block(k * p, d + ch * d, p, d) = c * x;
    }
  }
  return phi;
}

}  // namespace

void validate(const ExcitationSpec& spec) {
  if (!(spec.dt > 0.0)) throw ConfigError("excitation dt must be positive");
  if (!(spec.dt_prime > spec.dt))
    throw ConfigError("excitation pulse width must exceed the sample time");
  if (!(spec.beta >= 0.0)) throw ConfigError("excitation amplitude must be >= 0");
  if (spec.k0 < 0) throw ConfigError("excitation length must be >= 0");
}

MatrixXd generate_excitation(const ExcitationSpec& spec, Index n_channels) {
  validate(spec);
  const Index k = spec.k0 + 1;
  MatrixXd u(k, n_channels);
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> level(-spec.beta, spec.beta);
  const double ratio = spec.dt_prime / spec.dt;
  const double rounded = std::round(ratio);
  const bool integral = std::abs(ratio - rounded) < 1e-9 * ratio;
  Index current = -1;
  VectorXd alpha = VectorXd::Zero(n_channels);
  for (Index i = 0; i < k; ++i) {
    const Index pulse =
        integral ? i / static_cast<Index>(rounded)
                 : static_cast<Index>(std::floor(static_cast<double>(i) * spec.dt / spec.dt_prime));
    while (current < pulse) {
      for (Index c = 0; c < n_channels; ++c)
        alpha(c) = spec.beta > 0.0 ? level(rng) : 0.0;
      ++current;
    }
    u.row(i) = alpha.transpose();
  }
  return u;
}

double spectral_radius(const MatrixXd& a) {
  if (a.size() == 0) return 0.0;
  return Eigen::EigenSolver<MatrixXd>(a, false).eigenvalues().cwiseAbs().maxCoeff();
}

MatrixXd markov_parameters(const DiscreteModel& model, int count) {
  const Index p = model.n_outputs();
  MatrixXd out(p * count, model.n_inputs());
  MatrixXd ak_b = model.b_d;
  for (int k = 0; k < count; ++k) {
    out.middleRows(k * p, p) = model.c_d * ak_b;
    ak_b = model.a_d * ak_b;
  }
  return out;
}

DiscreteModel identify(const MatrixXd& u_in, const MatrixXd& y_in, Index d, double dt,
                       const IdentifyOptions& opts, SubspaceDiagnostics* diag) {
  require_dims(u_in.rows() == y_in.rows(), "input and output records have equal length");
  if (d < 1) throw ConfigError("model order must be >= 1");
  if (!(dt > 0.0)) throw ConfigError("sample time must be positive");
  const Index m = u_in.cols();
  const Index p = y_in.cols();
  const Index n_samples = u_in.rows();

  DiscreteModel model;
  model.dt = dt;
  model.order = d;

  if (n_samples < 10 * d * std::max(m, p)) {
    std::ostringstream msg;
    msg << "identification needs at least " << 10 * d * std::max(m, p)
        << " samples for order " << d << ", got " << n_samples;
    throw NumericalError(msg.str());
  }

  if (y_in.cwiseAbs().maxCoeff() == 0.0) {
    // Nothing to explain: the zero model reproduces the record exactly.
    model.a_d = MatrixXd::Zero(d, d);
    model.b_d = MatrixXd::Zero(d, m);
    model.c_d = MatrixXd::Zero(p, d);
    if (diag) {
      diag->singular_values = VectorXd::Zero(0);
      diag->x0 = VectorXd::Zero(d);
    }
    return model;
  }

  const Index i = std::max<Index>(opts.block_rows, d + 1);
  const Index j = n_samples - 2 * i + 1;
  if (j < 2 * i * (m + p)) throw NumericalError("record too short for the Hankel horizon");

  const VectorXd su = channel_scale(u_in);
  const VectorXd sy = channel_scale(y_in);
  const MatrixXd u = (u_in * su.cwiseInverse().asDiagonal()).transpose();  // m x K
  const MatrixXd y = (y_in * sy.cwiseInverse().asDiagonal()).transpose();  // p x K

  const MatrixXd uh = block_hankel(u, 0, 2 * i, j);
  const MatrixXd yh = block_hankel(y, 0, 2 * i, j);

  {
    Eigen::BDCSVD<MatrixXd> svd(uh);
    const auto& s = svd.singularValues();
    if (!(s(s.size() - 1) > 1e-8 * s(0))) {
      std::ostringstream msg;
      msg << "insufficient excitation: input Hankel matrix is rank deficient (sigma_min/sigma_max = "
          << (s(0) > 0 ? s(s.size() - 1) / s(0) : 0.0) << ")";
      throw NumericalError(msg.str());
    }
  }

  const MatrixXd up = uh.topRows(i * m);
  const MatrixXd uf = uh.bottomRows(i * m);
  const MatrixXd yp = yh.topRows(i * p);
  const MatrixXd yf = yh.bottomRows(i * p);

  // Oblique projection of future outputs along future inputs onto past data:
  // regress Yf on [Wp; Uf] and keep the Wp part.
  MatrixXd regressors(i * (2 * m + p), j);
  regressors << up, yp, uf;
  Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod;
  cod.setThreshold(1e-10);
  cod.compute(regressors.transpose());
  const MatrixXd coeff = cod.solve(yf.transpose()).transpose();  // (ip) x (i(2m+p))
  const MatrixXd projection = coeff.leftCols(i * (m + p)) * regressors.topRows(i * (m + p));

  Eigen::BDCSVD<MatrixXd> svd(projection, Eigen::ComputeThinU);
  const VectorXd sv = svd.singularValues();
  if (diag) diag->singular_values = sv;
  Index rank = 0;
  while (rank < sv.size() && sv(rank) > kRankTolerance * sv(0)) ++rank;
  if (rank == 0) throw NumericalError("Hankel projection is numerically zero");
  if (d > rank) {
    std::ostringstream msg;
    msg << "Hankel projection has numerical rank " << rank << ", below the requested order " << d;
    if (opts.strict_rank) throw NumericalError(msg.str());
    if (diag) diag->warnings.push_back(msg.str() + "; padded with decoupled zero modes");
  }
  const Index r = std::min(d, rank);

  const MatrixXd gamma =
      svd.matrixU().leftCols(r) * sv.head(r).cwiseSqrt().asDiagonal();  // (ip) x r
  MatrixXd c = MatrixXd::Zero(p, d);
  MatrixXd a = MatrixXd::Zero(d, d);
  c.leftCols(r) = gamma.topRows(p);
  a.topLeftCorner(r, r) = gamma.topRows((i - 1) * p)
                              .completeOrthogonalDecomposition()
                              .solve(gamma.bottomRows((i - 1) * p));

  // B and x0 jointly by least squares on the whole record.
  const MatrixXd u_rows = u.transpose();
  const MatrixXd phi = output_regressors(a, c, u_rows, n_samples, true);
  VectorXd target(n_samples * p);
  for (Index k = 0; k < n_samples; ++k) target.segment(k * p, p) = y.col(k);
  const VectorXd theta = phi.completeOrthogonalDecomposition().solve(target);
  MatrixXd b(d, m);
  for (Index ch = 0; ch < m; ++ch) b.col(ch) = theta.segment(d + ch * d, d);

  model.a_d = a;
  model.b_d = b * su.cwiseInverse().asDiagonal();
  model.c_d = sy.asDiagonal() * c;
  if (diag) {
    diag->x0 = theta.head(d);
    const double rho = spectral_radius(a);
    if (rho >= 1.0) {
      std::ostringstream msg;
      msg << "identified A' has spectral radius " << rho << " (>= 1)";
      diag->warnings.push_back(msg.str());
    }
  }
  return model;
}

VectorXd estimate_initial_state(const DiscreteModel& model, const MatrixXd& u,
                                const MatrixXd& y, Index n_samples) {
  require_dims(u.rows() == y.rows(), "input and output records have equal length");
  require_dims(y.cols() == model.n_outputs(), "output columns match C'");
  n_samples = std::min(n_samples, y.rows());
  const Index d = model.order;
  const Index p = model.n_outputs();
  const MatrixXd forced = predict(model, VectorXd::Zero(d), u.topRows(n_samples));
  const MatrixXd obs = output_regressors(model.a_d, model.c_d, u, n_samples, false);
  VectorXd rhs(n_samples * p);
  for (Index k = 0; k < n_samples; ++k)
    rhs.segment(k * p, p) = (y.row(k) - forced.row(k)).transpose();
  return obs.completeOrthogonalDecomposition().solve(rhs);
}

double prediction_error(const MatrixXd& y_hat, const MatrixXd& y) {
  require_dims(y_hat.rows() == y.rows() && y_hat.cols() == y.cols(),
               "prediction and record have the same shape");
  if (y.rows() == 0) return 0.0;
  return (y_hat - y).rowwise().norm().sum() / static_cast<double>(y.rows());
}

OrderSelection select_order(const MatrixXd& u, const MatrixXd& y,
                            const std::vector<Index>& candidates, double dt,
                            const IdentifyOptions& opts) {
  if (candidates.empty()) throw ConfigError("order candidate set is empty");
  OrderSelection out;
  out.report.candidates = candidates;
  std::vector<DiscreteModel> models(candidates.size());
  const double nan = std::numeric_limits<double>::quiet_NaN();

  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const Index d = candidates[c];
    try {
      models[c] = identify(u, y, d, dt, opts);
      const VectorXd x0 = estimate_initial_state(models[c], u, y, initial_state_samples(d));
      const double eta = prediction_error(predict(models[c], x0, u), y);
      out.report.eta.push_back(std::isfinite(eta) ? eta : nan);
      out.report.failures.push_back(std::isfinite(eta) ? "" : "prediction diverged");
    } catch (const std::exception& ex) {
      out.report.eta.push_back(nan);
      out.report.failures.push_back(ex.what());
    }
  }

  double best = std::numeric_limits<double>::infinity();
  for (double e : out.report.eta)
    if (std::isfinite(e)) best = std::min(best, e);
  if (!std::isfinite(best)) {
    std::ostringstream msg;
    msg << "identification failed for every candidate order";
    for (std::size_t c = 0; c < candidates.size(); ++c)
      msg << "; d=" << candidates[c] << ": " << out.report.failures[c];
    throw NumericalError(msg.str());
  }
  // Scores that differ only at round-off level count as ties.
  const double scale = std::sqrt(y.squaredNorm() / std::max<double>(1.0, static_cast<double>(y.rows())));
  const double tie = 1e-9 * scale;
  std::size_t pick = candidates.size();
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const double e = out.report.eta[c];
    if (!std::isfinite(e) || e > best + tie) continue;
    if (pick == candidates.size() || candidates[c] < candidates[pick]) pick = c;
  }
  out.report.d_star = candidates[pick];
  out.model = models[pick];
  return out;
}

}  // namespace magc
