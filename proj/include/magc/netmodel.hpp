#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "magc/defaults.hpp"

namespace magc {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Droop-controlled inverter parameters. The steady-state setpoint is derived
/// from the others so the relation omega_s* = omega_nom + m_p P_G* always holds.
struct IbrParams {
  double omega_c = defaults::kOmegaC;
  double m_p = defaults::kDroopMp;
  double omega_nom = defaults::kOmegaNom;
  double p_g_star = 0.0;

  double omega_s_star() const { return omega_nom + m_p * p_g_star; }
};

void validate(const IbrParams& ibr);

/// Per-IBR state deviation (delta, omega).
struct IbrState {
  double delta = 0.0;
  double omega = 0.0;
};

/// A passive bilateral branch, stored as the bus-admittance entry Y_ik∠θ_ik
/// (pure reactance X gives Y = 1/X, θ = π/2).
struct Branch {
  Index from = 0;
  Index to = 0;
  double y = 0.0;
  double theta = defaults::kBranchTheta;
};

/// Network with generator nodes 0..N-1 followed by load nodes N..N+M-1.
struct NetworkSpec {
  Index n_ibr = 0;
  Index n_load = 0;
  std::vector<Branch> branches;
  VectorXd g_self;  // per-node self conductance
  VectorXd v_star;  // per-node nominal voltage magnitude

  Index n_nodes() const { return n_ibr + n_load; }
};

void validate(const NetworkSpec& net);

/// Dense Y_ik and θ_ik matrices. Parallel branches are combined as complex
/// admittances.
void admittance_matrices(const NetworkSpec& net, MatrixXd& y, MatrixXd& theta);

struct OperatingPoint {
  VectorXd delta_star;
  VectorXd p_i_star;
  // Reactive injections are decoupled from this model; kept for completeness.
  VectorXd q_i_star;
};

/// Net real injection at every node for the given absolute angles.
VectorXd nonlinear_injection(const NetworkSpec& net, const VectorXd& delta);

/// Solves the real-power flow for `p_scheduled` with Newton's method from a
/// flat start. Each island gets its lowest-index node as angle reference and
/// slack; the slack injection in the result absorbs any mismatch.
OperatingPoint solve_operating_point(const NetworkSpec& net,
                                     const VectorXd& p_scheduled,
                                     const VectorXd* delta_start = nullptr);

/// Connected components of the branch graph, as a component id per node.
std::vector<Index> islands(const NetworkSpec& net);

/// ∂P_I/∂δ at an operating point, partitioned generator-first.
struct HMatrix {
  MatrixXd h;
  Index n_gen = 0;

  Index n_load() const { return h.rows() - n_gen; }
  auto gg() const { return h.topLeftCorner(n_gen, n_gen); }
  auto gl() const { return h.topRightCorner(n_gen, n_load()); }
  auto lg() const { return h.bottomLeftCorner(n_load(), n_gen); }
  auto ll() const { return h.bottomRightCorner(n_load(), n_load()); }
};

HMatrix build_h_matrix(const NetworkSpec& net, const OperatingPoint& op);
HMatrix build_h_matrix(const NetworkSpec& net, const VectorXd& delta_star);

struct KronReduction {
  MatrixXd h_red;  // H_GG - H_GL H_LL^-1 H_LG
  MatrixXd f_map;  // H_GL H_LL^-1
  double cond_ll = 1.0;
};

/// Eliminates the load nodes. Throws NumericalError naming the smallest
/// singular value when H_LL is singular.
KronReduction kron_reduce(const HMatrix& h);

/// Continuous linear plant  dx = A x + B1 dω_s + F dP_L,  dP_G = h_red E x + f_map dP_L.
struct LinearPlant {
  MatrixXd a;
  MatrixXd b1;
  MatrixXd b2;
  MatrixXd f;
  MatrixXd e;
  MatrixXd h_red;
  MatrixXd f_map;
  std::vector<IbrParams> ibrs;

  Index n_ibr() const { return static_cast<Index>(ibrs.size()); }
  Index n_load() const { return f_map.cols(); }
  Index n_state() const { return a.rows(); }
};

LinearPlant assemble_plant(const std::vector<IbrParams>& ibrs,
                           const HMatrix& h);
LinearPlant assemble_plant(const std::vector<IbrParams>& ibrs,
                           const KronReduction& kron);

/// Per-IBR open-loop block A_i = [[0, 1], [0, -ω_c]].
Eigen::Matrix2d ibr_block(const IbrParams& ibr);

/// Generator power deviation implied by the plant state and load injections.
VectorXd generator_power(const LinearPlant& plant, const VectorXd& x,
                         const VectorXd& d_p_l);

/// Everything needed to simulate one network: specification, IBR data,
/// operating point and the linearised plant.
struct Microgrid {
  std::string name;
  NetworkSpec network;
  std::vector<IbrParams> ibrs;
  std::vector<std::string> node_names;
  OperatingPoint op;
  LinearPlant plant;
};

/// Builds the operating point (IBRs share the total load equally) and plant.
/// `load_power` are consumed powers per load node (W).
Microgrid build_microgrid(std::string name, NetworkSpec network,
                          std::vector<IbrParams> ibrs,
                          std::vector<std::string> node_names,
                          const VectorXd& load_power);

}  // namespace magc
