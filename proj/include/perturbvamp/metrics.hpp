#pragma once

#include <cmath>
#include <stdexcept>

#include "perturbvamp/types.hpp"

namespace pvamp {

inline constexpr double kNmseFloorDb = -400.0;  // stands in for -inf on exact recovery
inline constexpr double kPsnrCapDb = 400.0;

/// 10 log10(||x - xhat||^2 / ||x||^2).
template <typename DerivedA, typename DerivedB>
double nmse_db(const Eigen::MatrixBase<DerivedA>& x_true, const Eigen::MatrixBase<DerivedB>& x_hat) {
  if (x_true.size() != x_hat.size()) throw std::invalid_argument("nmse_db: length mismatch");
  const double ref = x_true.squaredNorm();
  if (!(ref > 0)) throw std::invalid_argument("nmse_db: reference signal is zero");
  const double err = (x_true - x_hat).squaredNorm();
  if (err <= 0) return kNmseFloorDb;
  return 10.0 * std::log10(err / ref);
}

/// 10 log10(peak^2 N / ||x - xhat||^2) with peak = max |component| of x_true.
template <typename DerivedA, typename DerivedB>
double psnr_db(const Eigen::MatrixBase<DerivedA>& x_true, const Eigen::MatrixBase<DerivedB>& x_hat) {
  if (x_true.size() != x_hat.size()) throw std::invalid_argument("psnr_db: length mismatch");
  const double peak = x_true.cwiseAbs().maxCoeff();
  const double err = (x_true - x_hat).squaredNorm();
  if (err <= 0) return kPsnrCapDb;
  return 10.0 * std::log10(peak * peak * static_cast<double>(x_true.size()) / err);
}

}  // namespace pvamp
