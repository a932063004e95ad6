#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

#include <Eigen/Dense>

#include "perturbvamp/types.hpp"

namespace pvamp {

struct singular_covariance_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Symmetric inverse square root via eigendecomposition:
/// S = Q L Q^T  ->  R = Q L^{-1/2} Q^T with R S R = I.
template <typename Scalar>
MatX<Scalar> inv_sqrt(const MatX<Scalar>& s) {
  if (s.rows() != s.cols()) throw std::invalid_argument("inv_sqrt: matrix not square");
  Eigen::SelfAdjointEigenSolver<MatX<Scalar>> es(s);
  if (es.info() != Eigen::Success) throw singular_covariance_error("inv_sqrt: eigendecomposition failed");
  const auto& lam = es.eigenvalues();
  const Scalar floor = std::numeric_limits<Scalar>::epsilon() * std::max(std::abs(lam[0]), std::abs(lam[lam.size() - 1]));
  if (!(lam[0] > floor)) throw singular_covariance_error("inv_sqrt: matrix numerically singular");
  return es.eigenvectors() * lam.cwiseSqrt().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
}

/// Colored-noise model N(y; A x, Gamma) rewritten as the normalized AWGN model
/// N(y2k; A2k x, gamma_w2k^-1 I) with ||A2k||_F^2 = N.
template <typename Scalar>
struct WhitenedModel {
  VecX<Scalar> y2k;
  MatX<Scalar> a2k;
  Scalar gamma_w2k;
};

using WhitenedModelD = WhitenedModel<double>;

/// y2k = gamma_w2k^{-1/2} Gamma^{-1/2} y, A2k = gamma_w2k^{-1/2} Gamma^{-1/2} A,
/// gamma_w2k = ||Gamma^{-1/2} A||_F^2 / N.
template <typename Scalar>
WhitenedModel<Scalar> whiten(const VecX<Scalar>& y, const MatX<Scalar>& a, const MatX<Scalar>& gamma2k) {
  if (gamma2k.rows() != a.rows() || y.size() != a.rows())
    throw std::invalid_argument("whiten: dimension mismatch");
  const MatX<Scalar> root = inv_sqrt(gamma2k);
  WhitenedModel<Scalar> out;
  out.a2k.noalias() = root * a;
  out.gamma_w2k = out.a2k.squaredNorm() / Scalar(a.cols());
  const Scalar scale = Scalar(1) / std::sqrt(out.gamma_w2k);
  out.a2k *= scale;
  out.y2k.noalias() = root * y;
  out.y2k *= scale;
  return out;
}

}  // namespace pvamp
