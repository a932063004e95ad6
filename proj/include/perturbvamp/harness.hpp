#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "perturbvamp/metrics.hpp"
#include "perturbvamp/model.hpp"
#include "perturbvamp/rng.hpp"
#include "perturbvamp/solver.hpp"

namespace pvamp {

// snr_e_db is the signal-to-perturbation ratio 10 log10(||Ax||^2 / ||sum e_i E_i x||^2):
// large values mean a weak perturbation. A disabled perturbation is +inf.
inline constexpr double kSnrDisabledDb = std::numeric_limits<double>::infinity();
inline constexpr double kGammaESentinel = 1e12;  // reported when the perturbation is disabled

namespace stream {
// Sub-stream tags hashed with the per-trial seed; values are arbitrary but fixed.
inline constexpr std::uint64_t kSignal = 1;
inline constexpr std::uint64_t kMatrix = 2;
inline constexpr std::uint64_t kBasis = 3;
inline constexpr std::uint64_t kNoise = 4;
inline constexpr std::uint64_t kPerturb = 5;
}  // namespace stream

/// Bernoulli-Gaussian draw: each component is zero w.p. 1-rho, else
/// N(mu_x, sigma_x2). Deterministic for a given seed.
template <typename Scalar>
VecX<Scalar> gen_signal(const BernoulliGaussianPrior<Scalar>& prior, Index n, std::uint64_t seed) {
  VecX<Scalar> x = VecX<Scalar>::Zero(n);
  std::mt19937_64 gen(seed);
  std::bernoulli_distribution active(static_cast<double>(prior.rho));
  std::normal_distribution<Scalar> slab(prior.mu_x, std::sqrt(prior.sigma_x2));
  for (Index i = 0; i < n; ++i) {
    const bool on = active(gen);
    const Scalar draw = slab(gen);
    if (on) x[i] = draw;
  }
  return x;
}

/// i.i.d. N(0, 1/M) entries rescaled exactly to ||A||_F^2 = N.
template <typename Scalar>
MatX<Scalar> gen_matrix(Index m, Index n, std::uint64_t seed) {
  MatX<Scalar> a = gaussian_matrix<Scalar>(m, n, Scalar(1) / std::sqrt(Scalar(m)), seed);
  const Scalar fro2 = a.squaredNorm();
  if (!(fro2 > Scalar(0))) throw std::runtime_error("gen_matrix: degenerate draw");
  a *= std::sqrt(Scalar(n) / fro2);
  return a;
}

template <typename Scalar>
struct Calibration {
  VecX<Scalar> w;  // additive noise realization
  VecX<Scalar> e;  // perturbation coefficients
  Scalar gamma_w;  // realization-matched M / ||w||^2
  Scalar gamma_e;  // realization-matched q / ||e||^2 (sentinel when disabled)
};

/// Draws (w, e) and rescales each realization exactly to the targets
/// SNR_w = 10 log10 ||Ax||^2/||w||^2 and SNR_e = 10 log10 ||Ax||^2/||sum e_i E_i x||^2.
/// snr_e_db = +inf disables the perturbation (e = 0, gamma_e sentinel).
template <typename Scalar>
Calibration<Scalar> calibrate(const MatX<Scalar>& a, const VecX<Scalar>& x,
                              const PerturbationModel<Scalar>& p, double snr_w_db, double snr_e_db,
                              std::uint64_t seed) {
  if (x.squaredNorm() == Scalar(0)) throw std::invalid_argument("calibrate: x must be nonzero");
  const Index m = a.rows();
  const Scalar signal_energy = (a * x).squaredNorm();
  if (!(signal_energy > Scalar(0))) throw std::invalid_argument("calibrate: Ax has no energy");

  Calibration<Scalar> cal;
  VecX<Scalar> w_raw = gaussian_vector<Scalar>(m, Scalar(1), derive_seed(seed, 1));
  const Scalar w_target = signal_energy * Scalar(std::pow(10.0, -snr_w_db / 10.0));
  cal.w = w_raw * std::sqrt(w_target / w_raw.squaredNorm());
  cal.gamma_w = Scalar(m) / w_target;

  const Index q = p.coeff_count();
  if (q == 0 || snr_e_db == kSnrDisabledDb) {
    cal.e = VecX<Scalar>::Zero(q);
    cal.gamma_e = Scalar(kGammaESentinel);
    return cal;
  }
  std::uint64_t e_seed = derive_seed(seed, 2);
  for (int attempt = 0;; ++attempt) {
    VecX<Scalar> e_raw = p.sample(Scalar(1), e_seed);
    const Scalar raw_energy = p.apply(e_raw, x).squaredNorm();
    if (raw_energy > Scalar(0)) {
      const Scalar e_target = signal_energy * Scalar(std::pow(10.0, -snr_e_db / 10.0));
      cal.e = e_raw * std::sqrt(e_target / raw_energy);
      cal.gamma_e = Scalar(q) / cal.e.squaredNorm();
      return cal;
    }
    if (attempt >= 16) throw std::runtime_error("calibrate: perturbation draw has no energy");
    e_seed += 1;  // zero-energy draw: resample with incremented seed
  }
}

struct ExperimentSpec {
  std::string name = "experiment";
  Index n = 512;
  double measurement_ratio = 0.5;
  double rho = 0.2;
  double mu_x = 0.0;
  double sigma_x2 = 1.0;
  PerturbKind kind = PerturbKind::GenericBasis;
  Index q = -1;  // GenericBasis family size; -1 means q = N
  double snr_w_db = 30.0;
  std::vector<double> snr_e_db{20.0};
  int trials = 1;
  std::uint64_t seed = 1;
  std::vector<SolveMode> modes{SolveMode::Oracle, SolveMode::PI, SolveMode::PC};
  int max_iters = 60;
  double gamma1_init = 1e-4;
  double damping = 1.0;
  double stop_tol = 0.0;
  std::string coeff_path;  // optional: fixed ground-truth coefficient vector

  Index rows() const {
    return std::max<Index>(1, static_cast<Index>(std::llround(measurement_ratio * static_cast<double>(n))));
  }

  void validate() const {
    if (n < 1) throw std::invalid_argument("spec: n must be >= 1");
    if (!(measurement_ratio > 0.0 && measurement_ratio <= 1.0))
      throw std::invalid_argument("spec: ratio outside (0,1]");
    if (trials < 1) throw std::invalid_argument("spec: trials must be >= 1");
    if (max_iters < 1) throw std::invalid_argument("spec: max_iters must be >= 1");
    if (snr_e_db.empty()) throw std::invalid_argument("spec: empty snr_e_db grid");
    if (modes.empty()) throw std::invalid_argument("spec: empty mode list");
    if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("spec: rho outside [0,1]");
    if (!(sigma_x2 > 0.0)) throw std::invalid_argument("spec: sigma_x2 must be positive");
    if (!(damping > 0.0 && damping <= 1.0)) throw std::invalid_argument("spec: damping outside (0,1]");
  }

  BernoulliGaussianPriorD prior() const { return {rho, mu_x, sigma_x2}; }
};

struct ModeRun {
  SolveMode mode;
  bool diverged = false;
  int diverged_iteration = -1;
  std::vector<IterationRecord> records;
  double final_nmse_db = std::numeric_limits<double>::quiet_NaN();
  long clamps = 0;
};

struct TrialResult {
  int trial = 0;
  std::uint64_t seed = 0;  // per-trial seed (spec seed + trial index)
  double snr_e_db = 0.0;   // target for this sweep point
  double realized_snr_w_db = 0.0;
  double realized_snr_e_db = 0.0;
  std::vector<ModeRun> runs;  // ordered as the spec's mode list
};

struct AggregateRow {
  double snr_e_db;
  SolveMode mode;
  double mean_nmse_db;  // over non-diverged trials; NaN if none survived
  int trials;           // trials included in the mean
  int diverged;         // trials excluded
};

struct ExperimentResult {
  ExperimentSpec spec;
  std::vector<TrialResult> trials;  // sweep-point major, trial minor
  std::vector<AggregateRow> aggregate;

  const TrialResult& at(std::size_t point, std::size_t trial) const {
    return trials[point * static_cast<std::size_t>(spec.trials) + trial];
  }
  bool all_diverged() const {
    for (const auto& row : aggregate)
      if (row.trials > 0) return false;
    return true;
  }
};

/// One decimal value per line; `#` starts a comment; blank lines ignored.
inline VecXd load_coefficients(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_coefficients: cannot open " + path);
  std::vector<double> vals;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok)) continue;
    std::size_t used = 0;
    double v;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      throw std::runtime_error("load_coefficients: bad value at line " + std::to_string(lineno));
    }
    if (used != tok.size() || (ls >> tok))
      throw std::runtime_error("load_coefficients: bad value at line " + std::to_string(lineno));
    vals.push_back(v);
  }
  return Eigen::Map<const VecXd>(vals.data(), static_cast<Index>(vals.size()));
}

template <typename Derived>
double sparsity_fraction(const Eigen::MatrixBase<Derived>& x) {
  if (x.size() == 0) return 0.0;
  return static_cast<double>((x.array() != 0).count()) / static_cast<double>(x.size());
}

namespace detail {

struct TrialModel {
  MatXd a;
  PerturbationModelD perturbation;
};

inline TrialModel build_trial_model(const ExperimentSpec& spec, std::uint64_t trial_seed) {
  const Index m = spec.rows(), n = spec.n;
  switch (spec.kind) {
    case PerturbKind::GenericBasis: {
      const Index q = spec.q < 0 ? n : spec.q;
      std::vector<MatXd> basis;
      basis.reserve(static_cast<std::size_t>(q));
      const std::uint64_t base = derive_seed(trial_seed, stream::kBasis);
      for (Index i = 0; i < q; ++i)
        basis.push_back(gaussian_matrix<double>(m, n, 1.0 / std::sqrt(static_cast<double>(n)),
                                                derive_seed(base, static_cast<std::uint64_t>(i))));
      return {gen_matrix<double>(m, n, derive_seed(trial_seed, stream::kMatrix)),
              PerturbationModelD::generic(std::move(basis), m, n)};
    }
    case PerturbKind::IID:
      return {gen_matrix<double>(m, n, derive_seed(trial_seed, stream::kMatrix)),
              PerturbationModelD::iid(m, n)};
    case PerturbKind::Circulant: {
      // Nominal chain A = Phi * Circ(a) with a_i = 0.3^i; the normalization
      // making ||A||_F^2 = N is folded into Phi so the perturbation family
      // Phi * Shift_i stays consistent with A.
      VecXd a_gen(n);
      double p = 1.0;
      for (Index i = 0; i < n; ++i, p *= 0.3) a_gen[i] = p;
      const MatXd circ = make_circulant(a_gen);
      MatXd phi = gaussian_matrix<double>(m, n, 1.0, derive_seed(trial_seed, stream::kMatrix));
      MatXd a = phi * circ;
      const double scale = std::sqrt(static_cast<double>(n) / a.squaredNorm());
      a *= scale;
      phi *= scale;
      return {std::move(a), PerturbationModelD::circulant(std::move(phi))};
    }
    case PerturbKind::MatrixRestricted: {
      MatXd d = gaussian_matrix<double>(m, m, 1.0 / std::sqrt(static_cast<double>(m)),
                                        derive_seed(trial_seed, stream::kBasis));
      MatXd c = gaussian_matrix<double>(n, n, 1.0 / std::sqrt(static_cast<double>(n)),
                                        derive_seed(trial_seed, stream::kBasis + 7));
      return {gen_matrix<double>(m, n, derive_seed(trial_seed, stream::kMatrix)),
              PerturbationModelD::matrix_restricted(std::move(d), std::move(c))};
    }
  }
  throw std::logic_error("build_trial_model: unreachable");
}

inline void run_trial(const ExperimentSpec& spec, const VecXd* fixed_truth, int trial,
                      std::vector<std::vector<TrialResult>>& slots) {
  const std::uint64_t trial_seed = spec.seed + static_cast<std::uint64_t>(trial);
  const BernoulliGaussianPriorD prior = spec.prior();
  const VecXd x =
      fixed_truth ? *fixed_truth : gen_signal(prior, spec.n, derive_seed(trial_seed, stream::kSignal));
  const TrialModel model = build_trial_model(spec, trial_seed);

  for (std::size_t pt = 0; pt < spec.snr_e_db.size(); ++pt) {
    const double snr_e = spec.snr_e_db[pt];
    const Calibration<double> cal =
        calibrate(model.a, x, model.perturbation, spec.snr_w_db, snr_e, derive_seed(trial_seed, stream::kNoise));
    const VecXd pe = model.perturbation.apply(cal.e, x);
    const VecXd y = model.a * x + pe + cal.w;

    TrialResult res;
    res.trial = trial;
    res.seed = trial_seed;
    res.snr_e_db = snr_e;
    const double w2 = cal.w.squaredNorm();
    const double sig2 = (model.a * x).squaredNorm();
    res.realized_snr_w_db = 10.0 * std::log10(sig2 / w2);
    const double pe2 = pe.squaredNorm();
    res.realized_snr_e_db = pe2 > 0 ? 10.0 * std::log10(sig2 / pe2) : kSnrDisabledDb;

    for (SolveMode mode : spec.modes) {
      VampConfigD cfg;
      cfg.mode = mode;
      cfg.max_iters = spec.max_iters;
      cfg.gamma1_init = spec.gamma1_init;
      cfg.damping = spec.damping;
      cfg.stop_tol = spec.stop_tol;

      ModeRun run;
      run.mode = mode;
      try {
        RunTraceD tr;
        if (mode == SolveMode::Oracle) {
          const MatXd a_true = model.a + model.perturbation.realization(cal.e);
          ProblemD prob(y, a_true, cal.gamma_w, std::numeric_limits<double>::infinity(),
                        PerturbationModelD::none(model.a.rows(), model.a.cols()));
          tr = run_vamp(prob, prior, cfg, &x);
        } else {
          ProblemD prob(y, model.a, cal.gamma_w, cal.gamma_e, model.perturbation);
          tr = run_vamp(prob, prior, cfg, &x);
        }
        run.records = std::move(tr.records);
        run.final_nmse_db = run.records.empty() ? std::numeric_limits<double>::quiet_NaN()
                                                : run.records.back().nmse_db;
        run.clamps = tr.clamp_total;
      } catch (const divergence_error& err) {
        run.diverged = true;
        run.diverged_iteration = err.iteration;
      }
      res.runs.push_back(std::move(run));
    }
    slots[pt][static_cast<std::size_t>(trial)] = std::move(res);
  }
}

}  // namespace detail

/// Seeded Monte-Carlo sweep: every mode inside a trial consumes the identical
/// (x, A, e, w) realization; per-trial seeds are spec.seed + trial index.
/// Trials run concurrently on up to `threads` workers; results are identical
/// regardless of the worker count.
inline ExperimentResult run_experiment(const ExperimentSpec& spec, int threads = 1) {
  spec.validate();
  VecXd fixed_truth;
  const VecXd* truth_ptr = nullptr;
  if (!spec.coeff_path.empty()) {
    fixed_truth = load_coefficients(spec.coeff_path);
    if (fixed_truth.size() != spec.n)
      throw std::runtime_error("run_experiment: coefficient file length " +
                               std::to_string(fixed_truth.size()) + " != n = " + std::to_string(spec.n));
    truth_ptr = &fixed_truth;
  }

  std::vector<std::vector<TrialResult>> slots(spec.snr_e_db.size(),
                                              std::vector<TrialResult>(static_cast<std::size_t>(spec.trials)));
  const int workers = std::max(1, std::min(threads, spec.trials));
  if (workers == 1) {
    for (int t = 0; t < spec.trials; ++t) detail::run_trial(spec, truth_ptr, t, slots);
  } else {
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
      for (;;) {
        const int t = next.fetch_add(1);
        if (t >= spec.trials) return;
        try {
          detail::run_trial(spec, truth_ptr, t, slots);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          return;
        }
      }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
  }

  ExperimentResult result;
  result.spec = spec;
  result.trials.reserve(slots.size() * static_cast<std::size_t>(spec.trials));
  for (auto& point : slots)
    for (auto& tr : point) result.trials.push_back(std::move(tr));

  for (std::size_t pt = 0; pt < spec.snr_e_db.size(); ++pt) {
    for (std::size_t mi = 0; mi < spec.modes.size(); ++mi) {
      AggregateRow row;
      row.snr_e_db = spec.snr_e_db[pt];
      row.mode = spec.modes[mi];
      double sum = 0.0;
      int valid = 0, diverged = 0;
      for (int t = 0; t < spec.trials; ++t) {
        const ModeRun& mr = result.at(pt, static_cast<std::size_t>(t)).runs[mi];
        if (mr.diverged) {
          ++diverged;
        } else {
          sum += mr.final_nmse_db;
          ++valid;
        }
      }
      row.trials = valid;
      row.diverged = diverged;
      row.mean_nmse_db = valid > 0 ? sum / valid : std::numeric_limits<double>::quiet_NaN();
      result.aggregate.push_back(row);
    }
  }
  return result;
}

namespace detail {

inline std::string fmt_g6(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace detail

inline void write_trace_csv(std::ostream& os, const ExperimentResult& res) {
  os << "experiment,mode,snr_e_db,trial,iteration,nmse_db,clamps\n";
  for (std::size_t pt = 0; pt < res.spec.snr_e_db.size(); ++pt)
    for (int t = 0; t < res.spec.trials; ++t) {
      const TrialResult& tr = res.at(pt, static_cast<std::size_t>(t));
      for (const ModeRun& run : tr.runs) {
        if (run.diverged) continue;
        for (const IterationRecord& rec : run.records)
          os << res.spec.name << ',' << to_string(run.mode) << ',' << detail::fmt_g6(tr.snr_e_db) << ','
             << tr.trial << ',' << rec.iteration << ',' << detail::fmt_g6(rec.nmse_db) << ','
             << rec.clamp_count << '\n';
      }
    }
}

inline void write_aggregate_csv(std::ostream& os, const ExperimentResult& res) {
  os << "experiment,mode,snr_e_db,mean_nmse_db,trials,diverged\n";
  for (const AggregateRow& row : res.aggregate)
    os << res.spec.name << ',' << to_string(row.mode) << ',' << detail::fmt_g6(row.snr_e_db) << ','
       << detail::fmt_g6(row.mean_nmse_db) << ',' << row.trials << ',' << row.diverged << '\n';
}

}  // namespace pvamp
