#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

#include "perturbvamp/types.hpp"

namespace pvamp {

inline constexpr double kGammaMin = 1e-8;   // precision clamp for extrinsic updates
inline constexpr double kGammaMax = 1e12;   // cap for degenerate (zero-variance) posteriors

/// Spike-and-slab prior (1 - rho) delta(x) + rho N(x; mu_x, sigma_x2).
template <typename Scalar>
struct BernoulliGaussianPrior {
  Scalar rho;
  Scalar mu_x;
  Scalar sigma_x2;

  BernoulliGaussianPrior(Scalar rho_in, Scalar mu_in, Scalar sigma2_in)
      : rho(rho_in), mu_x(mu_in), sigma_x2(sigma2_in) {
    if (!(rho >= Scalar(0) && rho <= Scalar(1)))
      throw std::invalid_argument("BernoulliGaussianPrior: rho outside [0,1]");
    if (!(sigma_x2 > Scalar(0)))
      throw std::invalid_argument("BernoulliGaussianPrior: sigma_x2 must be positive");
  }
};

using BernoulliGaussianPriorD = BernoulliGaussianPrior<double>;

template <typename Scalar>
struct DenoiseResult {
  VecX<Scalar> xhat;
  Scalar eta;               // inverse of the average posterior variance
  bool degenerate = false;  // prior admitted no variance (rho = 0); eta clamped
};

/// Posterior mean and averaged posterior variance of the Bernoulli-Gaussian
/// prior under the pseudo-measurement r = x + N(0, gamma1^-1).
///
/// Componentwise with v = 1/(gamma1 + 1/sigma_x2) and
/// m_i = v (gamma1 r_i + mu_x / sigma_x2), the slab responsibility is
/// pi_i = rho N(r_i; mu_x, sigma_x2 + 1/gamma1) /
///        [rho N(r_i; mu_x, sigma_x2 + 1/gamma1) + (1-rho) N(r_i; 0, 1/gamma1)],
/// evaluated in the log domain, giving xhat_i = pi_i m_i and
/// var_i = pi_i (v + m_i^2) - xhat_i^2.
template <typename Scalar>
DenoiseResult<Scalar> denoise(const BernoulliGaussianPrior<Scalar>& prior, const VecX<Scalar>& r1,
                              Scalar gamma1) {
  if (!(gamma1 > Scalar(0)) || std::isinf(gamma1))
    throw std::invalid_argument("denoise: gamma1 must be positive and finite");
  const Index n = r1.size();
  const Scalar noise_var = Scalar(1) / gamma1;
  const Scalar slab_var = prior.sigma_x2 + noise_var;
  const Scalar v = Scalar(1) / (gamma1 + Scalar(1) / prior.sigma_x2);
  const Scalar log_rho = prior.rho > Scalar(0) ? std::log(prior.rho) : -std::numeric_limits<Scalar>::infinity();
  const Scalar log_comp = prior.rho < Scalar(1) ? std::log(Scalar(1) - prior.rho)
                                                : -std::numeric_limits<Scalar>::infinity();

  DenoiseResult<Scalar> out;
  out.xhat.resize(n);
  Scalar var_sum = Scalar(0);
  for (Index i = 0; i < n; ++i) {
    const Scalar r = r1[i];
    const Scalar m = v * (gamma1 * r + prior.mu_x / prior.sigma_x2);
    // log N(r; mu, var) up to the shared -log(2 pi)/2 term, which cancels.
    const Scalar d_slab = r - prior.mu_x;
    const Scalar l_slab = log_rho - Scalar(0.5) * std::log(slab_var) - d_slab * d_slab / (Scalar(2) * slab_var);
    const Scalar l_spike = log_comp - Scalar(0.5) * std::log(noise_var) - r * r / (Scalar(2) * noise_var);
    Scalar pi;
    if (l_slab == -std::numeric_limits<Scalar>::infinity())
      pi = Scalar(0);
    else if (l_spike == -std::numeric_limits<Scalar>::infinity())
      pi = Scalar(1);
    else
      pi = Scalar(1) / (Scalar(1) + std::exp(l_spike - l_slab));
    const Scalar xh = pi * m;
    out.xhat[i] = xh;
    var_sum += pi * (v + m * m) - xh * xh;
  }

  const Scalar mean_var = var_sum / Scalar(n);
  if (mean_var > Scalar(0) && Scalar(1) / mean_var < Scalar(kGammaMax)) {
    out.eta = Scalar(1) / mean_var;
  } else {
    out.eta = Scalar(kGammaMax);
    out.degenerate = true;
  }
  return out;
}

template <typename Scalar>
struct ExtrinsicResult {
  VecX<Scalar> r;
  Scalar gamma;
  bool clamped = false;  // eta - gamma fell below the precision floor
};

/// Gaussian message division: N(x; xhat, eta^-1 I) / N(x; r, gamma^-1 I),
/// giving gamma_new = eta - gamma and r_new = (eta xhat - gamma r)/gamma_new.
/// A non-positive (or tiny) gap is clamped to gamma_min and r_new is formed
/// with the clamped precision.
template <typename Scalar>
ExtrinsicResult<Scalar> extrinsic(const VecX<Scalar>& xhat, Scalar eta, const VecX<Scalar>& r,
                                  Scalar gamma, Scalar gamma_min = Scalar(kGammaMin)) {
  if (!(eta > Scalar(0)) || !(gamma > Scalar(0)))
    throw std::invalid_argument("extrinsic: precisions must be positive");
  if (xhat.size() != r.size()) throw std::invalid_argument("extrinsic: length mismatch");
  ExtrinsicResult<Scalar> out;
  Scalar g = eta - gamma;
  if (!(g >= gamma_min)) {
    g = gamma_min;
    out.clamped = true;
  }
  out.gamma = g;
  out.r = (eta * xhat - gamma * r) / g;
  return out;
}

}  // namespace pvamp
