#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include "perturbvamp/rng.hpp"
#include "perturbvamp/types.hpp"

namespace pvamp {

/// Circulant matrix whose first row is `a` and whose k-th row is the first
/// row cyclically rotated right k times: C(r, c) = a[(c - r) mod N].
template <typename Derived>
MatX<typename Derived::Scalar> make_circulant(const Eigen::MatrixBase<Derived>& a) {
  using Scalar = typename Derived::Scalar;
  const Index n = a.size();
  if (n < 1) throw std::invalid_argument("make_circulant: empty generator");
  MatX<Scalar> c(n, n);
  for (Index r = 0; r < n; ++r)
    for (Index col = 0; col < n; ++col) c(r, col) = a((col - r + n) % n);
  return c;
}

namespace detail {

/// y = Circ(e) * x without forming the matrix: y_r = sum_t e_t x_{(r+t) mod N}.
template <typename Scalar>
VecX<Scalar> circulant_apply(const VecX<Scalar>& e, const VecX<Scalar>& x) {
  const Index n = e.size();
  VecX<Scalar> y = VecX<Scalar>::Zero(n);
  for (Index t = 0; t < n; ++t) {
    if (e[t] == Scalar(0)) continue;
    const Index split = n - t;
    y.head(split) += e[t] * x.segment(t, split);
    y.tail(t) += e[t] * x.head(t);
  }
  return y;
}

/// Real orthonormal eigenbasis of symmetric circulants: DC column, then
/// interleaved cos/sin pairs, then the Nyquist column for even N.
template <typename Scalar>
MatX<Scalar> circulant_eigenbasis(Index n) {
  MatX<Scalar> u(n, n);
  const Scalar tau = Scalar(2) * Scalar(EIGEN_PI) / Scalar(n);
  const Scalar c0 = Scalar(1) / std::sqrt(Scalar(n));
  const Scalar ck = std::sqrt(Scalar(2) / Scalar(n));
  u.col(0).setConstant(c0);
  for (Index k = 1; 2 * k < n; ++k)
    for (Index j = 0; j < n; ++j) {
      u(j, 2 * k - 1) = ck * std::cos(tau * Scalar(k) * Scalar(j));
      u(j, 2 * k) = ck * std::sin(tau * Scalar(k) * Scalar(j));
    }
  if (n % 2 == 0)
    for (Index j = 0; j < n; ++j) u(j, n - 1) = (j % 2 == 0 ? c0 : -c0);
  return u;
}

/// Phi * U for the eigenbasis above, one FFT per row of Phi.
template <typename Scalar>
MatX<Scalar> compress_eigenbasis(const MatX<Scalar>& phi) {
  const Index p = phi.rows(), n = phi.cols();
  MatX<Scalar> theta(p, n);
  Eigen::FFT<Scalar> fft;
  std::vector<std::complex<Scalar>> freq(static_cast<std::size_t>(n));
  std::vector<Scalar> row(static_cast<std::size_t>(n));
  const Scalar c0 = Scalar(1) / std::sqrt(Scalar(n));
  const Scalar ck = std::sqrt(Scalar(2) / Scalar(n));
  for (Index r = 0; r < p; ++r) {
    for (Index j = 0; j < n; ++j) row[static_cast<std::size_t>(j)] = phi(r, j);
    fft.fwd(freq, row);
    theta(r, 0) = c0 * freq[0].real();
    for (Index k = 1; 2 * k < n; ++k) {
      theta(r, 2 * k - 1) = ck * freq[static_cast<std::size_t>(k)].real();
      theta(r, 2 * k) = -ck * freq[static_cast<std::size_t>(k)].imag();
    }
    if (n % 2 == 0) theta(r, n - 1) = c0 * freq[static_cast<std::size_t>(n / 2)].real();
  }
  return theta;
}

/// Eigenvalues of Circ(autocorr(x)) ordered like circulant_eigenbasis:
/// |DFT(x)_k|^2 duplicated over each cos/sin pair.
template <typename Scalar>
VecX<Scalar> autocorrelation_spectrum(const VecX<Scalar>& x) {
  const Index n = x.size();
  Eigen::FFT<Scalar> fft;
  std::vector<std::complex<Scalar>> freq(static_cast<std::size_t>(n));
  std::vector<Scalar> time(x.data(), x.data() + n);
  fft.fwd(freq, time);
  VecX<Scalar> s(n);
  s[0] = std::norm(freq[0]);
  for (Index k = 1; 2 * k < n; ++k)
    s[2 * k - 1] = s[2 * k] = std::norm(freq[static_cast<std::size_t>(k)]);
  if (n % 2 == 0) s[n - 1] = std::norm(freq[static_cast<std::size_t>(n / 2)]);
  return s;
}

template <typename Scalar>
void check_positive_precision(Scalar gamma, const char* name, bool allow_infinite = false) {
  if (std::isnan(gamma) || gamma <= Scalar(0) || (!allow_infinite && std::isinf(gamma)))
    throw std::invalid_argument(std::string(name) + " must be positive");
}

}  // namespace detail

enum class PerturbKind { GenericBasis, IID, Circulant, MatrixRestricted };

inline const char* to_string(PerturbKind k) {
  switch (k) {
    case PerturbKind::GenericBasis: return "generic";
    case PerturbKind::IID: return "iid";
    case PerturbKind::Circulant: return "circulant";
    case PerturbKind::MatrixRestricted: return "matrix_restricted";
  }
  return "?";
}

/// Structured family {E_i, i = 1..q} of perturbation directions sharing the
/// sensing matrix shape. IID and MatrixRestricted keep their basis implicit;
/// Circulant stores the compression Phi and the image of the circulant
/// eigenbasis under it, so covariances assemble without materialized shifts.
template <typename Scalar>
class PerturbationModel {
 public:
  static PerturbationModel generic(std::vector<MatX<Scalar>> basis, Index rows, Index cols) {
    PerturbationModel p(PerturbKind::GenericBasis, rows, cols);
    for (const auto& e : basis)
      if (e.rows() != rows || e.cols() != cols)
        throw std::invalid_argument("PerturbationModel: basis element shape mismatch");
    p.basis_ = std::move(basis);
    p.gram_sum_ = MatX<Scalar>::Zero(rows, rows);
    for (const auto& e : p.basis_) p.gram_sum_.template selfadjointView<Eigen::Lower>().rankUpdate(e);
    p.gram_sum_.template triangularView<Eigen::Upper>() = p.gram_sum_.transpose();
    return p;
  }

  static PerturbationModel generic(std::vector<MatX<Scalar>> basis) {
    if (basis.empty())
      throw std::invalid_argument("PerturbationModel: empty basis needs explicit shape");
    const Index r = basis.front().rows(), c = basis.front().cols();
    return generic(std::move(basis), r, c);
  }

  /// Empty family (q = 0): covariance reduces to the additive-noise term.
  static PerturbationModel none(Index rows, Index cols) {
    return generic({}, rows, cols);
  }

  static PerturbationModel iid(Index rows, Index cols) {
    return PerturbationModel(PerturbKind::IID, rows, cols);
  }

  /// Cyclic-shift family left-composed with a compression matrix Phi (P x N).
  static PerturbationModel circulant(MatX<Scalar> phi) {
    PerturbationModel p(PerturbKind::Circulant, phi.rows(), phi.cols());
    if (phi.rows() > phi.cols())
      throw std::invalid_argument("PerturbationModel: compression must have P <= N");
    p.theta_ = detail::compress_eigenbasis(phi);
    p.phi_ = std::move(phi);
    return p;
  }

  /// Uncompressed circulant family (Phi = I).
  static PerturbationModel circulant(Index n) {
    return circulant(MatX<Scalar>::Identity(n, n));
  }

  /// Rank-one family D u_i v_j^T C with q = m * n implicit elements.
  static PerturbationModel matrix_restricted(MatX<Scalar> d, MatX<Scalar> c) {
    PerturbationModel p(PerturbKind::MatrixRestricted, d.rows(), c.cols());
    p.d_gram_ = MatX<Scalar>::Zero(d.rows(), d.rows());
    p.d_gram_.template selfadjointView<Eigen::Lower>().rankUpdate(d);
    p.d_gram_.template triangularView<Eigen::Upper>() = p.d_gram_.transpose();
    p.c_fro2_ = c.squaredNorm();
    p.d_ = std::move(d);
    p.c_ = std::move(c);
    return p;
  }

  PerturbKind kind() const { return kind_; }
  Index rows() const { return rows_; }
  Index cols() const { return cols_; }

  /// Number q of perturbation coefficients.
  Index coeff_count() const {
    switch (kind_) {
      case PerturbKind::GenericBasis: return static_cast<Index>(basis_.size());
      case PerturbKind::IID: return rows_ * cols_;
      case PerturbKind::Circulant: return cols_;
      case PerturbKind::MatrixRestricted: return d_.cols() * c_.rows();
    }
    return 0;
  }

  const std::vector<MatX<Scalar>>& basis() const { return basis_; }
  const MatX<Scalar>& compression() const { return phi_; }
  const MatX<Scalar>& left_factor() const { return d_; }
  const MatX<Scalar>& right_factor() const { return c_; }

  /// (sum_i e_i E_i) x.
  VecX<Scalar> apply(const VecX<Scalar>& e, const VecX<Scalar>& x) const {
    if (e.size() != coeff_count())
      throw std::invalid_argument("apply_perturbation: coefficient length mismatch");
    if (x.size() != cols_)
      throw std::invalid_argument("apply_perturbation: signal length mismatch");
    switch (kind_) {
      case PerturbKind::GenericBasis: {
        VecX<Scalar> y = VecX<Scalar>::Zero(rows_);
        for (std::size_t i = 0; i < basis_.size(); ++i) y.noalias() += e[static_cast<Index>(i)] * (basis_[i] * x);
        return y;
      }
      case PerturbKind::IID: {
        Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> em(
            e.data(), rows_, cols_);
        return em * x;
      }
      case PerturbKind::Circulant:
        return phi_ * detail::circulant_apply(e, x);
      case PerturbKind::MatrixRestricted: {
        Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> em(
            e.data(), d_.cols(), c_.rows());
        return d_ * (em * (c_ * x));
      }
    }
    return VecX<Scalar>();
  }

  /// Gamma(x) = sum_i gamma_e^-1 E_i x x^T E_i^T + gamma_w^-1 I.
  MatX<Scalar> covariance(Scalar gamma_e, Scalar gamma_w, const VecX<Scalar>& x) const {
    return covariance_impl(gamma_e, gamma_w, x, Scalar(0));
  }

  /// Gamma_2k = sum_i gamma_e^-1 E_i (r2 r2^T + gamma2^-1 I) E_i^T + gamma_w^-1 I.
  MatX<Scalar> expected_covariance(Scalar gamma_e, Scalar gamma_w, const VecX<Scalar>& r2,
                                   Scalar gamma2) const {
    detail::check_positive_precision(gamma2, "gamma2");
    return covariance_impl(gamma_e, gamma_w, r2, Scalar(1) / gamma2);
  }

  /// Dense realization sum_i e_i E_i (the matrix error seen by an oracle).
  MatX<Scalar> realization(const VecX<Scalar>& e) const {
    if (e.size() != coeff_count())
      throw std::invalid_argument("realization: coefficient length mismatch");
    switch (kind_) {
      case PerturbKind::GenericBasis: {
        MatX<Scalar> r = MatX<Scalar>::Zero(rows_, cols_);
        for (std::size_t i = 0; i < basis_.size(); ++i) r += e[static_cast<Index>(i)] * basis_[i];
        return r;
      }
      case PerturbKind::IID:
        return Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            e.data(), rows_, cols_);
      case PerturbKind::Circulant:
        return phi_ * make_circulant(e);
      case PerturbKind::MatrixRestricted:
        return d_ *
               Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                   e.data(), d_.cols(), c_.rows()) *
               c_;
    }
    return MatX<Scalar>();
  }

  /// e_i ~ N(0, gamma_e^-1), i.i.d.; deterministic for a given seed.
  VecX<Scalar> sample(Scalar gamma_e, std::uint64_t seed) const {
    detail::check_positive_precision(gamma_e, "gamma_e", /*allow_infinite=*/true);
    const Index q = coeff_count();
    if (std::isinf(gamma_e)) return VecX<Scalar>::Zero(q);
    return gaussian_vector<Scalar>(q, Scalar(1) / std::sqrt(gamma_e), seed);
  }

 private:
  PerturbationModel(PerturbKind kind, Index rows, Index cols) : kind_(kind), rows_(rows), cols_(cols) {
    if (rows < 1 || cols < 1) throw std::invalid_argument("PerturbationModel: empty shape");
  }

  // var_scale = 0 gives the exact covariance at x; var_scale = 1/gamma2 adds
  // the expectation term over x ~ N(r2, gamma2^-1 I).
  MatX<Scalar> covariance_impl(Scalar gamma_e, Scalar gamma_w, const VecX<Scalar>& x,
                               Scalar var_scale) const {
    detail::check_positive_precision(gamma_e, "gamma_e", /*allow_infinite=*/true);
    detail::check_positive_precision(gamma_w, "gamma_w");
    if (x.size() != cols_)
      throw std::invalid_argument("covariance: signal length mismatch");
    const Scalar se2 = std::isinf(gamma_e) ? Scalar(0) : Scalar(1) / gamma_e;
    MatX<Scalar> g = MatX<Scalar>::Zero(rows_, rows_);
    if (se2 > Scalar(0) && coeff_count() > 0) {
      switch (kind_) {
        case PerturbKind::GenericBasis: {
          const Index q = coeff_count();
          MatX<Scalar> t(rows_, q);
          for (Index i = 0; i < q; ++i) t.col(i).noalias() = basis_[static_cast<std::size_t>(i)] * x;
          g.template selfadjointView<Eigen::Lower>().rankUpdate(t, se2);
          if (var_scale > Scalar(0)) g += (se2 * var_scale) * gram_sum_;
          break;
        }
        case PerturbKind::IID: {
          const Scalar c = se2 * (x.squaredNorm() + var_scale * Scalar(cols_));
          g.diagonal().setConstant(c);
          break;
        }
        case PerturbKind::Circulant: {
          VecX<Scalar> s = detail::autocorrelation_spectrum(x);
          s.array() += var_scale * Scalar(cols_);
          g.template selfadjointView<Eigen::Lower>().rankUpdate(
              theta_ * s.cwiseSqrt().asDiagonal(), se2);
          break;
        }
        case PerturbKind::MatrixRestricted: {
          const Scalar c = se2 * ((c_ * x).squaredNorm() + var_scale * c_fro2_);
          g += c * d_gram_;
          break;
        }
      }
      g.template triangularView<Eigen::Upper>() = g.transpose();
    }
    g.diagonal().array() += Scalar(1) / gamma_w;
    return g;
  }

  PerturbKind kind_;
  Index rows_, cols_;
  std::vector<MatX<Scalar>> basis_;  // GenericBasis
  MatX<Scalar> gram_sum_;            // GenericBasis: sum_i E_i E_i^T
  MatX<Scalar> phi_, theta_;         // Circulant: Phi and Phi * eigenbasis
  MatX<Scalar> d_, c_, d_gram_;      // MatrixRestricted
  Scalar c_fro2_ = Scalar(0);
};

template <typename Scalar, typename Derived>
MatX<Scalar> covariance(const PerturbationModel<Scalar>& p, Scalar gamma_e, Scalar gamma_w,
                        const Eigen::MatrixBase<Derived>& x) {
  return p.covariance(gamma_e, gamma_w, VecX<Scalar>(x));
}

template <typename Scalar, typename Derived>
MatX<Scalar> expected_covariance(const PerturbationModel<Scalar>& p, Scalar gamma_e, Scalar gamma_w,
                                 const Eigen::MatrixBase<Derived>& r2, Scalar gamma2) {
  return p.expected_covariance(gamma_e, gamma_w, VecX<Scalar>(r2), gamma2);
}

template <typename Scalar, typename DerivedE, typename DerivedX>
VecX<Scalar> apply_perturbation(const PerturbationModel<Scalar>& p,
                                const Eigen::MatrixBase<DerivedE>& e,
                                const Eigen::MatrixBase<DerivedX>& x) {
  return p.apply(VecX<Scalar>(e), VecX<Scalar>(x));
}

template <typename Scalar>
VecX<Scalar> sample_perturbation(const PerturbationModel<Scalar>& p, Scalar gamma_e,
                                 std::uint64_t seed) {
  return p.sample(gamma_e, seed);
}

/// Observation model y = (A + sum_i e_i E_i) x + w with known structure and
/// precisions. gamma_e may be +inf to encode a disabled perturbation.
template <typename Scalar>
struct Problem {
  VecX<Scalar> y;
  MatX<Scalar> a;
  Scalar gamma_w;
  Scalar gamma_e;
  PerturbationModel<Scalar> perturbation;

  Problem(VecX<Scalar> y_in, MatX<Scalar> a_in, Scalar gamma_w_in, Scalar gamma_e_in,
          PerturbationModel<Scalar> perturbation_in)
      : y(std::move(y_in)),
        a(std::move(a_in)),
        gamma_w(gamma_w_in),
        gamma_e(gamma_e_in),
        perturbation(std::move(perturbation_in)) {
    if (a.rows() < 1 || a.cols() < 1) throw std::invalid_argument("Problem: empty sensing matrix");
    if (y.size() != a.rows()) throw std::invalid_argument("Problem: y length != rows of A");
    if (perturbation.rows() != a.rows() || perturbation.cols() != a.cols())
      throw std::invalid_argument("Problem: perturbation shape != shape of A");
    detail::check_positive_precision(gamma_w, "gamma_w");
    detail::check_positive_precision(gamma_e, "gamma_e", /*allow_infinite=*/true);
  }

  Index rows() const { return a.rows(); }
  Index cols() const { return a.cols(); }

  /// Frobenius normalization ||A||_F^2 = N expected of nominal sensing
  /// matrices (not of realized ones handed to the oracle).
  bool sensing_matrix_normalized(Scalar rel_tol = Scalar(1e-6)) const {
    return std::abs(a.squaredNorm() - Scalar(a.cols())) <= rel_tol * Scalar(a.cols());
  }
};

using ProblemD = Problem<double>;
using PerturbationModelD = PerturbationModel<double>;

}  // namespace pvamp
