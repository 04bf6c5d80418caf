#pragma once

#include <Eigen/Dense>

#include <vector>

#include "magc/errors.hpp"
#include "magc/netmodel.hpp"

namespace magc {

/// Left null transform T = diag(T_1, ..., T_N) with T_i = [ω_ci, 1].
template <typename Scalar>
struct BasicTransform {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using RowBlock = Eigen::Matrix<Scalar, 1, 2>;

  std::vector<RowBlock> t_blocks;
  Matrix t;

  Index size() const { return static_cast<Index>(t_blocks.size()); }
};

using Transform = BasicTransform<double>;

template <typename Scalar = double>
BasicTransform<Scalar> make_transform(const std::vector<IbrParams>& ibrs) {
  const Index n = static_cast<Index>(ibrs.size());
  BasicTransform<Scalar> out;
  out.t = BasicTransform<Scalar>::Matrix::Zero(n, 2 * n);
  out.t_blocks.reserve(ibrs.size());
  for (Index i = 0; i < n; ++i) {
    typename BasicTransform<Scalar>::RowBlock ti;
    ti << Scalar(ibrs[static_cast<std::size_t>(i)].omega_c), Scalar(1);
    out.t_blocks.push_back(ti);
    out.t.template block<1, 2>(i, 2 * i) = ti;
  }
  return out;
}

/// z = T Δx.
template <typename Scalar, typename Derived>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> z_from_state(
    const BasicTransform<Scalar>& t, const Eigen::MatrixBase<Derived>& dx) {
  require_dims(dx.size() == 2 * t.size(), "state vector has 2N entries");
  return t.t * dx;
}

/// Running integral of ż_i = ω_ci (Δω_si − m_Pi ΔP_Gi); starts at zero.
template <typename Scalar>
struct BasicZAccumulator {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> z;
  double t_now = 0.0;

  explicit BasicZAccumulator(Index n = 0)
      : z(Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(n)) {}
};

using ZAccumulator = BasicZAccumulator<double>;

/// The integrand ż for the given setpoint and power deviations.
template <typename DerivedU, typename DerivedP>
Eigen::Matrix<typename DerivedU::Scalar, Eigen::Dynamic, 1> z_rate(
    const std::vector<IbrParams>& ibrs, const Eigen::MatrixBase<DerivedU>& d_omega_s,
    const Eigen::MatrixBase<DerivedP>& d_p_g) {
  using Scalar = typename DerivedU::Scalar;
  const Index n = static_cast<Index>(ibrs.size());
  require_dims(d_omega_s.size() == n && d_p_g.size() == n,
               "z update inputs have N entries");
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> rate(n);
  for (Index i = 0; i < n; ++i) {
    const auto& ibr = ibrs[static_cast<std::size_t>(i)];
    rate(i) = Scalar(ibr.omega_c) *
              (d_omega_s(i) - Scalar(ibr.m_p) * d_p_g(i));
  }
  return rate;
}

/// One forward-Euler step of the z integral. Pass the mean of the interval's
/// end-point powers as `d_p_g` for trapezoidal quadrature.
template <typename Scalar, typename DerivedU, typename DerivedP>
BasicZAccumulator<Scalar> z_update(BasicZAccumulator<Scalar> acc,
                                   const Eigen::MatrixBase<DerivedU>& d_omega_s,
                                   const Eigen::MatrixBase<DerivedP>& d_p_g,
                                   double dt,
                                   const std::vector<IbrParams>& ibrs) {
  if (!(dt > 0.0)) throw DimensionError("z update needs dt > 0");
  require_dims(acc.z.size() == static_cast<Index>(ibrs.size()),
               "accumulator size matches IBR count");
  acc.z += z_rate(ibrs, d_omega_s, d_p_g) * Scalar(dt);
  acc.t_now += dt;
  return acc;
}

enum class Quadrature { kForwardEuler, kTrapezoid };

}  // namespace magc
