#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "perturbvamp/denoiser.hpp"
#include "perturbvamp/metrics.hpp"
#include "perturbvamp/model.hpp"
#include "perturbvamp/whitening.hpp"

namespace pvamp {

enum class SolveMode { Oracle, PI, PC };

inline const char* to_string(SolveMode m) {
  switch (m) {
    case SolveMode::Oracle: return "oracle";
    case SolveMode::PI: return "pi";
    case SolveMode::PC: return "pc";
  }
  return "?";
}

struct divergence_error : std::runtime_error {
  int iteration;
  explicit divergence_error(int it)
      : std::runtime_error("vamp state non-finite at iteration " + std::to_string(it)), iteration(it) {}
};

template <typename Scalar>
struct VampConfig {
  SolveMode mode = SolveMode::PC;
  int max_iters = 60;
  Scalar gamma1_init = Scalar(1e-4);
  VecX<Scalar> r1_init;  // empty -> zero vector
  Scalar gamma_min = Scalar(kGammaMin);
  Scalar damping = Scalar(1);   // 1 = undamped, as in the reference experiments
  Scalar stop_tol = Scalar(0);  // 0 = always run max_iters
};

using VampConfigD = VampConfig<double>;

template <typename Scalar>
struct VampState {
  VecX<Scalar> r1;
  Scalar gamma1;
  VecX<Scalar> xhat1;
  Scalar eta1;
  VecX<Scalar> r2;
  Scalar gamma2;
  VecX<Scalar> xhat2;
  Scalar eta2;
  int iteration = 0;

  bool finite() const {
    return r1.allFinite() && xhat1.allFinite() && r2.allFinite() && xhat2.allFinite() &&
           std::isfinite(gamma1) && std::isfinite(eta1) && std::isfinite(gamma2) && std::isfinite(eta2);
  }
};

struct IterationRecord {
  int iteration;
  double nmse_db;  // NaN when no ground truth was supplied
  double eta1, eta2, gamma1, gamma2;
  long clamp_count;  // cumulative clamp events up to and including this iteration
};

template <typename Scalar>
struct RunTrace {
  std::vector<IterationRecord> records;
  VecX<Scalar> xhat;  // final x1 estimate
  long clamp_total = 0;
  bool degenerate_prior = false;

  double final_nmse_db() const {
    return records.empty() ? std::numeric_limits<double>::quiet_NaN() : records.back().nmse_db;
  }
};

using RunTraceD = RunTrace<double>;

template <typename Scalar>
struct LmmseResult {
  VecX<Scalar> xhat;
  Scalar eta;
};

/// LMMSE update under N(y2k; A2k x, gamma_w2k^-1 I) and prior N(r2, gamma2^-1 I):
///   xhat2 = (gamma_w2k A2k^T A2k + gamma2 I)^-1 (gamma_w2k A2k^T y2k + gamma2 r2)
///   eta2  = N / Tr[(gamma_w2k A2k^T A2k + gamma2 I)^-1]
/// Solved in M-space through the matrix-inversion identity when M <= N,
/// in N-space otherwise; both routes evaluate the same system exactly.
/// `gram` optionally caches A2k A2k^T (M <= N) or A2k^T A2k (M > N) for
/// solvers that keep the matrix fixed across iterations.
template <typename Scalar>
LmmseResult<Scalar> lmmse(const MatX<Scalar>& a2k, const VecX<Scalar>& y2k, Scalar gamma_w2k,
                          const VecX<Scalar>& r2, Scalar gamma2, const MatX<Scalar>* gram = nullptr) {
  if (!(gamma_w2k > Scalar(0)) || !(gamma2 > Scalar(0)))
    throw std::invalid_argument("lmmse: precisions must be positive");
  if (y2k.size() != a2k.rows() || r2.size() != a2k.cols())
    throw std::invalid_argument("lmmse: dimension mismatch");
  const Index m = a2k.rows(), n = a2k.cols();
  // Residual (innovation) form: xhat = r2 + correction(y2k - A2k r2). This is
  // algebraically the stated solve but avoids cancellation between the
  // gamma_w2k- and gamma2-scaled terms when the precisions differ by many
  // orders of magnitude.
  const VecX<Scalar> resid = y2k - a2k * r2;

  LmmseResult<Scalar> out;
  Scalar trace;
  if (m <= n) {
    MatX<Scalar> s;
    if (gram) {
      s = gamma_w2k * (*gram);
    } else {
      s = MatX<Scalar>::Zero(m, m);
      s.template selfadjointView<Eigen::Lower>().rankUpdate(a2k, gamma_w2k);
      s.template triangularView<Eigen::Upper>() = s.transpose();
    }
    s.diagonal().array() += gamma2;
    Eigen::LLT<MatX<Scalar>> llt(s);
    if (llt.info() != Eigen::Success) throw std::runtime_error("lmmse: singular system");
    out.xhat = r2 + gamma_w2k * (a2k.transpose() * llt.solve(resid));
    const MatX<Scalar> linv = llt.matrixL().solve(MatX<Scalar>::Identity(m, m));
    trace = Scalar(n - m) / gamma2 + linv.squaredNorm();
  } else {
    MatX<Scalar> h;
    if (gram) {
      h = gamma_w2k * (*gram);
    } else {
      h = MatX<Scalar>::Zero(n, n);
      h.template selfadjointView<Eigen::Lower>().rankUpdate(a2k.transpose(), gamma_w2k);
      h.template triangularView<Eigen::Upper>() = h.transpose();
    }
    h.diagonal().array() += gamma2;
    Eigen::LLT<MatX<Scalar>> llt(h);
    if (llt.info() != Eigen::Success) throw std::runtime_error("lmmse: singular system");
    out.xhat = r2 + llt.solve(VecX<Scalar>(gamma_w2k * (a2k.transpose() * resid)));
    const MatX<Scalar> linv = llt.matrixL().solve(MatX<Scalar>::Identity(n, n));
    trace = linv.squaredNorm();
  }
  out.eta = Scalar(n) / trace;
  return out;
}

namespace detail {

/// Whitened LMMSE inputs for one PC iteration. Any W with W^T W = Gamma^-1
/// yields the same LMMSE system as the symmetric root, since the system only
/// involves A^T Gamma^-1 A and A^T Gamma^-1 y; a Cholesky factor is the
/// cheapest such W at desk scale.
template <typename Scalar>
LmmseResult<Scalar> whitened_lmmse(const MatX<Scalar>& gamma2k, const MatX<Scalar>& a,
                                   const VecX<Scalar>& y, const VecX<Scalar>& r2, Scalar gamma2) {
  Eigen::LLT<MatX<Scalar>> llt(gamma2k);
  if (llt.info() != Eigen::Success)
    throw singular_covariance_error("whitened_lmmse: covariance not positive definite");
  MatX<Scalar> bw = llt.matrixL().solve(a);
  VecX<Scalar> yw = llt.matrixL().solve(y);
  return lmmse<Scalar>(bw, yw, Scalar(1), r2, gamma2);
}

}  // namespace detail

/// Runs Algorithm 1 end to end. Oracle and PI run standard VAMP on the
/// problem's sensing matrix; PC re-whitens against the expected perturbation
/// covariance every iteration (scalar shortcut for the IID family, whose
/// expected covariance is a multiple of the identity).
template <typename Scalar>
RunTrace<Scalar> run_vamp(const Problem<Scalar>& problem, const BernoulliGaussianPrior<Scalar>& prior,
                          const VampConfig<Scalar>& config, const VecX<Scalar>* truth = nullptr) {
  if (config.max_iters < 1) throw std::invalid_argument("run_vamp: max_iters must be >= 1");
  if (!(config.damping > Scalar(0) && config.damping <= Scalar(1)))
    throw std::invalid_argument("run_vamp: damping outside (0,1]");
  if (!(config.gamma1_init > Scalar(0)))
    throw std::invalid_argument("run_vamp: gamma1_init must be positive");
  const Index m = problem.rows(), n = problem.cols();
  if (truth && truth->size() != n) throw std::invalid_argument("run_vamp: truth length mismatch");
  if (config.r1_init.size() != 0 && config.r1_init.size() != n)
    throw std::invalid_argument("run_vamp: r1_init length mismatch");

  const Scalar sigma_e2 = std::isinf(problem.gamma_e) ? Scalar(0) : Scalar(1) / problem.gamma_e;
  const bool pc = config.mode == SolveMode::PC;
  const bool perturbation_active = pc && sigma_e2 > Scalar(0) && problem.perturbation.coeff_count() > 0;
  const bool scalar_noise = !perturbation_active || problem.perturbation.kind() == PerturbKind::IID;

  // Fixed-matrix paths reuse the Gram of A across iterations.
  MatX<Scalar> gram;
  if (scalar_noise) {
    const Index k = std::min(m, n);
    gram = MatX<Scalar>::Zero(k, k);
    if (m <= n)
      gram.template selfadjointView<Eigen::Lower>().rankUpdate(problem.a);
    else
      gram.template selfadjointView<Eigen::Lower>().rankUpdate(problem.a.transpose());
    gram.template triangularView<Eigen::Upper>() = gram.transpose();
  }

  VampState<Scalar> st;
  st.r1 = config.r1_init.size() ? config.r1_init : VecX<Scalar>::Zero(n);
  st.gamma1 = config.gamma1_init;

  RunTrace<Scalar> trace;
  trace.records.reserve(static_cast<std::size_t>(config.max_iters));
  VecX<Scalar> xhat1_prev;
  VecX<Scalar> r1_prev, r2_prev;
  Scalar gamma1_prev = Scalar(0), gamma2_prev = Scalar(0);

  for (int k = 1; k <= config.max_iters; ++k) {
    st.iteration = k;

    // Denoising
    DenoiseResult<Scalar> den = denoise(prior, st.r1, st.gamma1);
    st.xhat1 = std::move(den.xhat);
    st.eta1 = den.eta;
    trace.degenerate_prior |= den.degenerate;

    ExtrinsicResult<Scalar> e12 = extrinsic(st.xhat1, st.eta1, st.r1, st.gamma1, config.gamma_min);
    if (e12.clamped) ++trace.clamp_total;
    st.r2 = std::move(e12.r);
    st.gamma2 = e12.gamma;
    if (config.damping < Scalar(1) && k > 1) {
      st.r2 = config.damping * st.r2 + (Scalar(1) - config.damping) * r2_prev;
      st.gamma2 = config.damping * st.gamma2 + (Scalar(1) - config.damping) * gamma2_prev;
    }
    r2_prev = st.r2;
    gamma2_prev = st.gamma2;

    // Whitening + LMMSE estimation
    LmmseResult<Scalar> lm;
    if (scalar_noise) {
      Scalar gamma_eq = problem.gamma_w;
      if (perturbation_active) {
        const Scalar var_eq =
            Scalar(1) / problem.gamma_w +
            sigma_e2 * (st.r2.squaredNorm() + Scalar(n) / st.gamma2);
        gamma_eq = Scalar(1) / var_eq;
      }
      lm = lmmse<Scalar>(problem.a, problem.y, gamma_eq, st.r2, st.gamma2, &gram);
    } else {
      const MatX<Scalar> gamma2k =
          problem.perturbation.expected_covariance(problem.gamma_e, problem.gamma_w, st.r2, st.gamma2);
      lm = detail::whitened_lmmse<Scalar>(gamma2k, problem.a, problem.y, st.r2, st.gamma2);
    }
    st.xhat2 = std::move(lm.xhat);
    st.eta2 = lm.eta;

    ExtrinsicResult<Scalar> e21 = extrinsic(st.xhat2, st.eta2, st.r2, st.gamma2, config.gamma_min);
    if (e21.clamped) ++trace.clamp_total;
    VecX<Scalar> r1_next = std::move(e21.r);
    Scalar gamma1_next = e21.gamma;
    if (config.damping < Scalar(1) && k > 1) {
      r1_next = config.damping * r1_next + (Scalar(1) - config.damping) * r1_prev;
      gamma1_next = config.damping * gamma1_next + (Scalar(1) - config.damping) * gamma1_prev;
    }

    if (!st.finite() || !r1_next.allFinite() || !std::isfinite(gamma1_next))
      throw divergence_error(k);

    IterationRecord rec;
    rec.iteration = k;
    rec.nmse_db = truth ? nmse_db(*truth, st.xhat1) : std::numeric_limits<double>::quiet_NaN();
    rec.eta1 = static_cast<double>(st.eta1);
    rec.eta2 = static_cast<double>(st.eta2);
    rec.gamma1 = static_cast<double>(st.gamma1);
    rec.gamma2 = static_cast<double>(st.gamma2);
    rec.clamp_count = trace.clamp_total;
    trace.records.push_back(rec);

    const bool converged =
        config.stop_tol > Scalar(0) && xhat1_prev.size() &&
        (st.xhat1 - xhat1_prev).norm() <= config.stop_tol * xhat1_prev.norm();
    xhat1_prev = st.xhat1;
    r1_prev = st.r1 = std::move(r1_next);
    gamma1_prev = st.gamma1 = gamma1_next;
    if (converged) break;
  }

  trace.xhat = std::move(xhat1_prev);
  return trace;
}

}  // namespace pvamp
