#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <limits>

#include "perturbvamp/model.hpp"
#include "test_support.hpp"

using namespace pvamp;
using testsup::expand_basis;

namespace {

PerturbationModelD random_generic(Index m, Index n, Index q, std::mt19937_64& gen) {
  std::vector<MatXd> basis;
  for (Index i = 0; i < q; ++i) basis.push_back(testsup::random_matrix(m, n, gen));
  return PerturbationModelD::generic(std::move(basis), m, n);
}

double rel_err(const MatXd& got, const MatXd& want) {
  const double scale = std::max(want.norm(), 1e-300);
  return (got - want).norm() / scale;
}

}  // namespace

TEST_CASE("make_circulant matches the printed layout") {
  VecXd a(3);
  a << 1.5, -2.0, 0.25;
  const MatXd c = make_circulant(a);
  MatXd want(3, 3);
  want << 1.5, -2.0, 0.25,  //
      0.25, 1.5, -2.0,      //
      -2.0, 0.25, 1.5;
  CHECK(rel_err(c, want) == 0.0);

  VecXd unit = VecXd::Zero(4);
  unit[0] = 1.0;
  CHECK((make_circulant(unit) - MatXd::Identity(4, 4)).norm() == 0.0);

  // every row is a rotation of the first
  auto gen = testsup::rng(7);
  const VecXd b = testsup::random_vector(6, gen);
  const MatXd cb = make_circulant(b);
  for (Index r = 0; r < 6; ++r)
    for (Index col = 0; col < 6; ++col) CHECK(cb(r, col) == b[(col - r + 6) % 6]);
}

TEST_CASE("make_circulant geometric generator Frobenius norm") {
  const Index n = 8;
  VecXd a(n);
  double p = 1.0;
  for (Index i = 0; i < n; ++i, p *= 0.3) a[i] = p;
  double want = 0.0;
  double q = 1.0;
  for (Index i = 0; i < n; ++i, q *= 0.09) want += 8.0 * q;
  CHECK(make_circulant(a).squaredNorm() == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("covariance: zero signal gives the additive-noise covariance") {
  auto gen = testsup::rng(11);
  const double gw = 2.5, ge = 0.7;
  const VecXd x0 = VecXd::Zero(4);
  for (const auto& p : {random_generic(3, 4, 5, gen), PerturbationModelD::iid(3, 4),
                        PerturbationModelD::matrix_restricted(testsup::random_matrix(3, 3, gen),
                                                              testsup::random_matrix(4, 4, gen))}) {
    const MatXd g = covariance(p, ge, gw, x0);
    CHECK(rel_err(g, (1.0 / gw) * MatXd::Identity(3, 3)) < 1e-15);
  }
  const auto pc = PerturbationModelD::circulant(4);
  CHECK(rel_err(covariance(pc, ge, gw, VecXd::Zero(4)), (1.0 / gw) * MatXd::Identity(4, 4)) < 1e-15);
}

TEST_CASE("covariance: IID closed form (gamma_w^-1 + gamma_e^-1 ||x||^2) I") {
  auto gen = testsup::rng(13);
  const auto p = PerturbationModelD::iid(5, 3);
  for (int rep = 0; rep < 5; ++rep) {
    const VecXd x = testsup::random_vector(3, gen);
    const double gw = 1.7, ge = 3.1;
    const MatXd want = (1.0 / gw + x.squaredNorm() / ge) * MatXd::Identity(5, 5);
    CHECK(rel_err(covariance(p, ge, gw, x), want) < 1e-12);
  }
}

TEST_CASE("covariance: generic basis matches the term-by-term summation oracle") {
  auto gen = testsup::rng(17);
  const auto p = random_generic(3, 2, 2, gen);
  const VecXd x = testsup::random_vector(2, gen);
  const MatXd want = testsup::covariance_oracle(p.basis(), 0.8, 2.0, x);
  CHECK(rel_err(covariance(p, 0.8, 2.0, x), want) < 1e-13);
}

TEST_CASE("covariance: structured kinds match their explicit basis expansion") {
  auto gen = testsup::rng(19);
  const double ge = 1.3, gw = 0.9;

  SUBCASE("iid") {
    const auto p = PerturbationModelD::iid(4, 3);
    const VecXd x = testsup::random_vector(3, gen);
    CHECK(rel_err(covariance(p, ge, gw, x), testsup::covariance_oracle(expand_basis(p), ge, gw, x)) <
          1e-12);
  }
  SUBCASE("circulant without compression, odd and even N") {
    for (Index n : {5, 8}) {
      const auto p = PerturbationModelD::circulant(n);
      const VecXd x = testsup::random_vector(n, gen);
      CHECK(rel_err(covariance(p, ge, gw, x), testsup::covariance_oracle(expand_basis(p), ge, gw, x)) <
            1e-11);
    }
  }
  SUBCASE("circulant with compression") {
    const MatXd phi = testsup::random_matrix(4, 6, gen);
    const auto p = PerturbationModelD::circulant(phi);
    const VecXd x = testsup::random_vector(6, gen);
    CHECK(rel_err(covariance(p, ge, gw, x), testsup::covariance_oracle(expand_basis(p), ge, gw, x)) <
          1e-11);
  }
  SUBCASE("matrix restricted") {
    const MatXd d = testsup::random_matrix(4, 2, gen);
    const MatXd c = testsup::random_matrix(3, 5, gen);
    const auto p = PerturbationModelD::matrix_restricted(d, c);
    const VecXd x = testsup::random_vector(5, gen);
    CHECK(rel_err(covariance(p, ge, gw, x), testsup::covariance_oracle(expand_basis(p), ge, gw, x)) <
          1e-12);
  }
}

TEST_CASE("covariance minus the noise term stays positive semidefinite") {
  auto gen = testsup::rng(23);
  for (int rep = 0; rep < 6; ++rep) {
    const auto p = random_generic(5, 4, 3, gen);
    const VecXd x = testsup::random_vector(4, gen);
    const MatXd g = covariance(p, 0.5, 2.0, x);
    MatXd rest = g - 0.5 * MatXd::Identity(5, 5);
    Eigen::SelfAdjointEigenSolver<MatXd> es(rest);
    CHECK(es.eigenvalues()[0] >= -1e-10 * g.norm());
  }
}

TEST_CASE("expected_covariance: huge gamma2 collapses to the plain covariance") {
  auto gen = testsup::rng(29);
  const auto p = random_generic(4, 3, 4, gen);
  const VecXd r2 = testsup::random_vector(3, gen);
  const MatXd want = covariance(p, 1.1, 2.2, r2);
  const MatXd got = expected_covariance(p, 1.1, 2.2, r2, 1e12);
  CHECK(rel_err(got, want) < 1e-9);
}

TEST_CASE("expected_covariance: empty family reduces to gamma_w^-1 I") {
  const auto p = PerturbationModelD::none(3, 2);
  CHECK(p.coeff_count() == 0);
  const MatXd got = expected_covariance(p, 1.0, 4.0, VecXd::Ones(2), 2.0);
  CHECK(rel_err(got, 0.25 * MatXd::Identity(3, 3)) < 1e-15);
}

TEST_CASE("expected_covariance equals covariance(r) plus the weighted basis Gram term") {
  auto gen = testsup::rng(31);
  for (Index m : {3, 8}) {
    const Index n = m - 1;
    const auto p = random_generic(m, n, 4, gen);
    const VecXd r2 = testsup::random_vector(n, gen);
    const double ge = 0.6, gw = 1.4, g2 = 0.37;
    MatXd gram = MatXd::Zero(m, m);
    for (const auto& e : p.basis()) gram += e * e.transpose();
    const MatXd want = covariance(p, ge, gw, r2) + (1.0 / (g2 * ge)) * gram;
    CHECK(rel_err(expected_covariance(p, ge, gw, r2, g2), want) < 1e-13);
  }
}

TEST_CASE("expected_covariance: structured kinds match the expansion oracle") {
  auto gen = testsup::rng(37);
  const double ge = 0.8, gw = 1.9, g2 = 0.55;

  const MatXd phi = testsup::random_matrix(3, 6, gen);
  const auto circ = PerturbationModelD::circulant(phi);
  const VecXd r6 = testsup::random_vector(6, gen);
  CHECK(rel_err(expected_covariance(circ, ge, gw, r6, g2),
                testsup::expected_covariance_oracle(expand_basis(circ), ge, gw, r6, g2)) < 1e-11);

  const auto iid = PerturbationModelD::iid(4, 3);
  const VecXd r3 = testsup::random_vector(3, gen);
  CHECK(rel_err(expected_covariance(iid, ge, gw, r3, g2),
                testsup::expected_covariance_oracle(expand_basis(iid), ge, gw, r3, g2)) < 1e-12);

  const auto mr = PerturbationModelD::matrix_restricted(testsup::random_matrix(4, 3, gen),
                                                        testsup::random_matrix(2, 3, gen));
  CHECK(rel_err(expected_covariance(mr, ge, gw, r3, g2),
                testsup::expected_covariance_oracle(expand_basis(mr), ge, gw, r3, g2)) < 1e-12);
}

TEST_CASE("expected_covariance agrees with a Monte-Carlo average over the prior") {
  auto gen = testsup::rng(41);
  const auto p = random_generic(3, 2, 2, gen);
  const VecXd r2 = testsup::random_vector(2, gen);
  const double ge = 1.0, gw = 5.0, g2 = 2.0;
  const MatXd want = expected_covariance(p, ge, gw, r2, g2);

  MatXd avg = MatXd::Zero(3, 3);
  std::normal_distribution<double> d(0.0, 1.0);
  const int samples = 100000;
  const double sd = std::sqrt(1.0 / g2);
  for (int s = 0; s < samples; ++s) {
    VecXd x(2);
    for (Index i = 0; i < 2; ++i) x[i] = r2[i] + sd * d(gen);
    avg += covariance(p, ge, gw, x);
  }
  avg /= samples;
  CHECK(rel_err(avg, want) < 0.01);
}

TEST_CASE("apply_perturbation basics") {
  auto gen = testsup::rng(43);
  const auto p = random_generic(3, 4, 5, gen);

  SUBCASE("zero coefficients give the zero vector") {
    const VecXd y = apply_perturbation(p, VecXd::Zero(5), testsup::random_vector(4, gen));
    CHECK(y.norm() == 0.0);
  }
  SUBCASE("matches explicit summation") {
    const VecXd e = testsup::random_vector(5, gen);
    const VecXd x = testsup::random_vector(4, gen);
    const VecXd want = testsup::apply_oracle(p.basis(), e, x);
    CHECK((apply_perturbation(p, e, x) - want).norm() < 1e-13 * want.norm());
  }
  SUBCASE("shift-zero circulant coefficient reproduces the signal") {
    const auto pc = PerturbationModelD::circulant(6);
    VecXd e = VecXd::Zero(6);
    e[0] = 1.0;
    const VecXd x = testsup::random_vector(6, gen);
    CHECK((apply_perturbation(pc, e, x) - x).norm() == 0.0);
  }
  SUBCASE("structured kinds match their expansion") {
    const MatXd phi = testsup::random_matrix(4, 6, gen);
    for (const auto& pk :
         {PerturbationModelD::circulant(phi), PerturbationModelD::iid(4, 6),
          PerturbationModelD::matrix_restricted(testsup::random_matrix(4, 2, gen),
                                                testsup::random_matrix(3, 6, gen))}) {
      const auto basis = expand_basis(pk);
      const VecXd e = testsup::random_vector(pk.coeff_count(), gen);
      const VecXd x = testsup::random_vector(6, gen);
      const VecXd want = testsup::apply_oracle(basis, e, x);
      CHECK((apply_perturbation(pk, e, x) - want).norm() < 1e-12 * (1.0 + want.norm()));
    }
  }
}

TEST_CASE("realization assembles sum e_i E_i for every kind") {
  auto gen = testsup::rng(47);
  const MatXd phi = testsup::random_matrix(3, 5, gen);
  for (const auto& pk :
       {random_generic(3, 5, 4, gen), PerturbationModelD::circulant(phi),
        PerturbationModelD::iid(3, 5),
        PerturbationModelD::matrix_restricted(testsup::random_matrix(3, 2, gen),
                                              testsup::random_matrix(4, 5, gen))}) {
    const auto basis = expand_basis(pk);
    const VecXd e = testsup::random_vector(pk.coeff_count(), gen);
    MatXd want = MatXd::Zero(3, 5);
    for (std::size_t i = 0; i < basis.size(); ++i) want += e[static_cast<Index>(i)] * basis[i];
    CHECK(rel_err(pk.realization(e), want) < 1e-12);
  }
}

TEST_CASE("matrix-restricted with identity factors reproduces the IID kind") {
  auto gen = testsup::rng(53);
  const Index m = 3, n = 4;
  const auto mr = PerturbationModelD::matrix_restricted(MatXd::Identity(m, m), MatXd::Identity(n, n));
  const auto iid = PerturbationModelD::iid(m, n);
  CHECK(mr.coeff_count() == iid.coeff_count());

  const VecXd x = testsup::random_vector(n, gen);
  const VecXd e = testsup::random_vector(m * n, gen);
  const double ge = 0.9, gw = 3.0;
  CHECK(rel_err(covariance(mr, ge, gw, x), covariance(iid, ge, gw, x)) < 1e-13);
  CHECK(rel_err(expected_covariance(mr, ge, gw, x, 0.7), expected_covariance(iid, ge, gw, x, 0.7)) <
        1e-13);
  CHECK((apply_perturbation(mr, e, x) - apply_perturbation(iid, e, x)).norm() < 1e-13);
}

TEST_CASE("sample_perturbation determinism and statistics") {
  auto gen = testsup::rng(59);
  const auto p0 = PerturbationModelD::none(2, 2);
  CHECK(sample_perturbation(p0, 1.0, 5).size() == 0);

  const auto p = random_generic(2, 2, 3, gen);
  CHECK(sample_perturbation(p, 2.0, 99) == sample_perturbation(p, 2.0, 99));
  CHECK(sample_perturbation(p, 2.0, 99) != sample_perturbation(p, 2.0, 100));

  const auto big = PerturbationModelD::iid(250, 400);  // q = 1e5
  const VecXd e = sample_perturbation(big, 4.0, 7);
  const double mean = e.mean();
  const double var = (e.array() - mean).square().sum() / (e.size() - 1);
  const double se = 0.25 * std::sqrt(2.0 / (e.size() - 1));
  CHECK(std::abs(var - 0.25) < 3.0 * se);

  const auto disabled = sample_perturbation(p, std::numeric_limits<double>::infinity(), 3);
  CHECK(disabled.norm() == 0.0);
}

TEST_CASE("dimension and precision errors are rejected") {
  auto gen = testsup::rng(61);
  const auto p = random_generic(3, 4, 2, gen);
  CHECK_THROWS_AS(covariance(p, 1.0, 1.0, VecXd::Zero(5)), std::invalid_argument);
  CHECK_THROWS_AS(apply_perturbation(p, VecXd::Zero(3), VecXd::Zero(4)), std::invalid_argument);
  CHECK_THROWS_AS(apply_perturbation(p, VecXd::Zero(2), VecXd::Zero(3)), std::invalid_argument);
  CHECK_THROWS_AS(covariance(p, -1.0, 1.0, VecXd::Zero(4)), std::invalid_argument);
  CHECK_THROWS_AS(covariance(p, 1.0, 0.0, VecXd::Zero(4)), std::invalid_argument);
  CHECK_THROWS_AS(expected_covariance(p, 1.0, 1.0, VecXd::Zero(4), 0.0), std::invalid_argument);
  std::vector<MatXd> bad{MatXd::Zero(2, 2)};
  CHECK_THROWS_AS(PerturbationModelD::generic(std::move(bad), 3, 3), std::invalid_argument);
}

TEST_CASE("Problem validates shapes and precisions") {
  auto gen = testsup::rng(67);
  const MatXd a = testsup::random_normalized_matrix(3, 5, gen);
  const VecXd y = testsup::random_vector(3, gen);
  const auto pert = PerturbationModelD::iid(3, 5);

  const ProblemD ok(y, a, 2.0, 1.5, pert);
  CHECK(ok.rows() == 3);
  CHECK(ok.cols() == 5);
  CHECK(ok.sensing_matrix_normalized());

  CHECK_THROWS_AS(ProblemD(testsup::random_vector(4, gen), a, 2.0, 1.5, pert), std::invalid_argument);
  CHECK_THROWS_AS(ProblemD(y, a, -2.0, 1.5, pert), std::invalid_argument);
  CHECK_THROWS_AS(ProblemD(y, a, 2.0, 0.0, pert), std::invalid_argument);
  CHECK_THROWS_AS(ProblemD(y, a, 2.0, 1.5, PerturbationModelD::iid(3, 4)), std::invalid_argument);

  // disabled perturbation: infinite gamma_e is accepted
  const ProblemD off(y, a, 2.0, std::numeric_limits<double>::infinity(), pert);
  CHECK(std::isinf(off.gamma_e));
  CHECK(rel_err(covariance(off.perturbation, off.gamma_e, off.gamma_w, VecXd::Ones(5)),
                0.5 * MatXd::Identity(3, 3)) < 1e-15);
}
