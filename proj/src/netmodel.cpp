#include "magc/netmodel.hpp"

#include <cmath>
#include <complex>
#include <numeric>
#include <sstream>

#include "magc/errors.hpp"

namespace magc {

void validate(const IbrParams& ibr) {
  if (!(ibr.omega_c > 0.0)) throw ConfigError("IBR omega_c must be positive");
  if (!(ibr.m_p > 0.0)) throw ConfigError("IBR droop m_p must be positive");
  if (!std::isfinite(ibr.omega_nom) || !std::isfinite(ibr.p_g_star))
    throw ConfigError("IBR nominal values must be finite");
}

void validate(const NetworkSpec& net) {
  const Index n = net.n_nodes();
  if (net.n_ibr < 0 || net.n_load < 0 || n == 0)
    throw ConfigError("network must have at least one node");
  require_dims(net.v_star.size() == n, "v_star has one entry per node");
  require_dims(net.g_self.size() == n, "g_self has one entry per node");
  for (Index i = 0; i < n; ++i) {
    if (!(net.v_star(i) > 0.0))
      throw ConfigError("nominal voltage must be positive at node " +
                        std::to_string(i));
  }
  for (const auto& b : net.branches) {
    if (b.from < 0 || b.to < 0 || b.from >= n || b.to >= n || b.from == b.to)
      throw ConfigError("branch endpoints out of range");
    if (!(b.y >= 0.0) || !std::isfinite(b.theta))
      throw ConfigError("branch admittance must be non-negative and finite");
  }
}

void admittance_matrices(const NetworkSpec& net, MatrixXd& y, MatrixXd& theta) {
  const Index n = net.n_nodes();
  Eigen::MatrixXcd yc = Eigen::MatrixXcd::Zero(n, n);
  for (const auto& b : net.branches) {
    const std::complex<double> v = std::polar(b.y, b.theta);
    yc(b.from, b.to) += v;
    yc(b.to, b.from) += v;
  }
  y = yc.cwiseAbs();
  theta.resize(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index k = 0; k < n; ++k) theta(i, k) = std::arg(yc(i, k));
}

VectorXd nonlinear_injection(const NetworkSpec& net, const VectorXd& delta) {
  const Index n = net.n_nodes();
  require_dims(delta.size() == n, "angle vector has N+M entries");
  MatrixXd y, theta;
  admittance_matrices(net, y, theta);
  VectorXd p(n);
  for (Index i = 0; i < n; ++i) {
    double s = net.v_star(i) * net.v_star(i) * net.g_self(i);
    for (Index k = 0; k < n; ++k) {
      if (k == i || y(i, k) == 0.0) continue;
      s += net.v_star(i) * net.v_star(k) * y(i, k) *
           std::cos(delta(i) - delta(k) - theta(i, k));
    }
    p(i) = s;
  }
  return p;
}

std::vector<Index> islands(const NetworkSpec& net) {
  const Index n = net.n_nodes();
  std::vector<Index> parent(static_cast<std::size_t>(n));
  std::iota(parent.begin(), parent.end(), Index{0});
  auto find = [&](Index a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  for (const auto& b : net.branches) {
    if (b.y == 0.0) continue;
    const Index ra = find(b.from), rb = find(b.to);
    if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
  }
  std::vector<Index> id(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) id[i] = find(i);
  return id;
}

HMatrix build_h_matrix(const NetworkSpec& net, const VectorXd& delta_star) {
  const Index n = net.n_nodes();
  require_dims(delta_star.size() == n, "operating point matches network");
  MatrixXd y, theta;
  admittance_matrices(net, y, theta);
  HMatrix out;
  out.n_gen = net.n_ibr;
  out.h = MatrixXd::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    double diag = 0.0;
    for (Index k = 0; k < n; ++k) {
      if (k == i || y(i, k) == 0.0) continue;
      const double hik = net.v_star(i) * net.v_star(k) * y(i, k) *
                         std::sin(delta_star(i) - delta_star(k) - theta(i, k));
      out.h(i, k) = hik;
      diag -= hik;
    }
    out.h(i, i) = diag;
  }
  return out;
}

HMatrix build_h_matrix(const NetworkSpec& net, const OperatingPoint& op) {
  return build_h_matrix(net, op.delta_star);
}

OperatingPoint solve_operating_point(const NetworkSpec& net,
                                     const VectorXd& p_scheduled,
                                     const VectorXd* delta_start) {
  validate(net);
  const Index n = net.n_nodes();
  require_dims(p_scheduled.size() == n, "scheduled injections per node");

  const auto island = islands(net);
  std::vector<Index> unknown;
  for (Index i = 0; i < n; ++i)
    if (island[i] != i) unknown.push_back(i);  // island roots are references

  VectorXd delta = delta_start ? *delta_start : VectorXd::Zero(n);
  require_dims(delta.size() == n, "starting angles per node");

  MatrixXd y, theta;
  admittance_matrices(net, y, theta);
  double scale = std::max(1.0, p_scheduled.cwiseAbs().maxCoeff());
  for (Index i = 0; i < n; ++i)
    for (Index k = 0; k < n; ++k)
      scale = std::max(scale, net.v_star(i) * net.v_star(k) * y(i, k));

  const Index m = static_cast<Index>(unknown.size());
  double mismatch = 0.0;
  for (int it = 0; it <= defaults::kNewtonMaxIterations; ++it) {
    const VectorXd p = nonlinear_injection(net, delta);
    VectorXd r(m);
    for (Index j = 0; j < m; ++j) r(j) = p(unknown[j]) - p_scheduled(unknown[j]);
    mismatch = m > 0 ? r.cwiseAbs().maxCoeff() : 0.0;
    if (mismatch <= defaults::kNewtonTolerance * scale) {
      OperatingPoint op;
      op.delta_star = delta;
      op.p_i_star = p;
      op.q_i_star = VectorXd::Zero(n);
      return op;
    }
    if (it == defaults::kNewtonMaxIterations) break;
    const HMatrix h = build_h_matrix(net, delta);
    MatrixXd jac(m, m);
    for (Index a = 0; a < m; ++a)
      for (Index b = 0; b < m; ++b) jac(a, b) = h.h(unknown[a], unknown[b]);
    const VectorXd step = jac.fullPivLu().solve(r);
    if (!step.allFinite())
      throw NumericalError("operating point: singular power-flow Jacobian");
    for (Index j = 0; j < m; ++j) delta(unknown[j]) -= step(j);
  }
  std::ostringstream msg;
  msg << "operating point: Newton did not converge in "
      << defaults::kNewtonMaxIterations << " iterations (mismatch " << mismatch
      << " W)";
  throw NumericalError(msg.str());
}

KronReduction kron_reduce(const HMatrix& h) {
  const Index n = h.n_gen;
  const Index m = h.n_load();
  KronReduction out;
  if (m == 0) {
    out.h_red = h.gg();
    out.f_map = MatrixXd::Zero(n, 0);
    return out;
  }
  const MatrixXd ll = h.ll();
  Eigen::JacobiSVD<MatrixXd> svd(ll);
  const auto& sv = svd.singularValues();
  const double smax = sv(0);
  const double smin = sv(sv.size() - 1);
  if (!(smin > defaults::kKronSingularRatio * smax)) {
    std::ostringstream msg;
    msg << "Kron reduction failed: H_LL is singular (smallest singular value "
        << smin << ", largest " << smax << ")";
    throw NumericalError(msg.str());
  }
  out.cond_ll = smax / smin;
  // f_map = H_GL H_LL^-1  <=>  H_LL^T f_map^T = H_GL^T
  const Eigen::PartialPivLU<MatrixXd> lu(ll.transpose());
  out.f_map = lu.solve(MatrixXd(h.gl()).transpose()).transpose();
  out.h_red = h.gg() - out.f_map * h.lg();
  return out;
}

Eigen::Matrix2d ibr_block(const IbrParams& ibr) {
  Eigen::Matrix2d a;
  a << 0.0, 1.0, 0.0, -ibr.omega_c;
  return a;
}

LinearPlant assemble_plant(const std::vector<IbrParams>& ibrs,
                           const KronReduction& kron) {
  const Index n = static_cast<Index>(ibrs.size());
  require_dims(kron.h_red.rows() == n && kron.h_red.cols() == n,
               "reduced network matches IBR count");
  require_dims(kron.f_map.rows() == n, "load map rows match IBR count");
  for (const auto& ibr : ibrs) validate(ibr);

  LinearPlant p;
  p.ibrs = ibrs;
  p.h_red = kron.h_red;
  p.f_map = kron.f_map;
  MatrixXd a_g = MatrixXd::Zero(2 * n, 2 * n);
  p.b1 = MatrixXd::Zero(2 * n, n);
  p.b2 = MatrixXd::Zero(2 * n, n);
  p.e = MatrixXd::Zero(n, 2 * n);
  for (Index i = 0; i < n; ++i) {
    const auto& ibr = ibrs[static_cast<std::size_t>(i)];
    a_g.block<2, 2>(2 * i, 2 * i) = ibr_block(ibr);
    p.b1(2 * i + 1, i) = ibr.omega_c;
    p.b2(2 * i + 1, i) = -ibr.m_p * ibr.omega_c;
    p.e(i, 2 * i) = 1.0;
  }
  p.a = a_g + p.b2 * p.h_red * p.e;
  p.f = p.b2 * p.f_map;
  return p;
}

LinearPlant assemble_plant(const std::vector<IbrParams>& ibrs,
                           const HMatrix& h) {
  require_dims(h.n_gen == static_cast<Index>(ibrs.size()),
               "H partition matches IBR count");
  return assemble_plant(ibrs, kron_reduce(h));
}

VectorXd generator_power(const LinearPlant& plant, const VectorXd& x,
                         const VectorXd& d_p_l) {
  require_dims(x.size() == plant.n_state(), "state vector length");
  require_dims(d_p_l.size() == plant.n_load(), "load vector length");
  return plant.h_red * (plant.e * x) + plant.f_map * d_p_l;
}

Microgrid build_microgrid(std::string name, NetworkSpec network,
                          std::vector<IbrParams> ibrs,
                          std::vector<std::string> node_names,
                          const VectorXd& load_power) {
  validate(network);
  require_dims(static_cast<Index>(ibrs.size()) == network.n_ibr,
               "one IBR parameter set per generator node");
  require_dims(load_power.size() == network.n_load, "one power per load node");
  require_dims(static_cast<Index>(node_names.size()) == network.n_nodes(),
               "one name per node");

  const Index n = network.n_ibr;
  VectorXd sched(network.n_nodes());
  const double share = n > 0 ? load_power.sum() / static_cast<double>(n) : 0.0;
  sched.head(n).setConstant(share);
  sched.tail(network.n_load) = -load_power;

  Microgrid mg;
  mg.name = std::move(name);
  mg.op = solve_operating_point(network, sched);
  for (Index i = 0; i < n; ++i) ibrs[i].p_g_star = mg.op.p_i_star(i);
  mg.plant = assemble_plant(ibrs, build_h_matrix(network, mg.op));
  mg.network = std::move(network);
  mg.ibrs = std::move(ibrs);
  mg.node_names = std::move(node_names);
  return mg;
}

}  // namespace magc
