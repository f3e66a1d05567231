#include "looptf/loss.hpp"
#include "looptf/parallel.hpp"

#include <doctest.h>

#include <cstdlib>

using namespace looptf;

TEST_CASE("per-sample closed forms, d = 1") {
  // Σ = 2.5, a = 0.1: 1 − Σa = 0.75.
  const CovarianceSample s = make_covariance_sample(Matrix::Constant(1, 1, 2.5));
  const SymMatrix A = SymMatrix::scaled_identity(1, 0.1);
  CHECK(trace_loss_sample(A, 2, s) == doctest::Approx(0.31640625));
  // −2L Σ (1 − Σa)^{2L−1} = −4 · 2.5 · 0.421875
  CHECK(trace_grad_sample(A, 2, s)(0, 0) == doctest::Approx(-4.21875));
  // ((1 − 0.75²) √2.5 · 0.2)²
  CHECK(u_term_sample(A, Vector::Constant(1, 0.2), 2, s) == doctest::Approx(0.019140625));
  // Exact loss with Σ* = 1: M² + (u(1 − M))², M = 0.5625
  const TaskDistribution dist = TaskDistribution::isotropic(1, 2, 1);
  CHECK(conditional_loss_sample(A, Vector::Constant(1, 0.2), 2, s.sigma, dist) == doctest::Approx(0.3240625));
}

TEST_CASE("anchors of the closed form") {
  const TaskDistribution dist = TaskDistribution::isotropic(3, 20, 4);
  const LossEstimate z = closedform_loss(SymMatrix::zero(3), 3, dist, 500);
  CHECK(z.mean == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(z.std_error == 0.0);
  // d = 1, L = 1, A = 1: E(1 − χ²_n/n)² = 2/n.
  const TaskDistribution one = TaskDistribution::isotropic(1, 50, 4);
  const LossEstimate a = closedform_loss(SymMatrix::identity(1), 1, one, 40000);
  CHECK(std::abs(a.mean - 0.04) <= 4.0 * a.std_error);
}

TEST_CASE("empirical and exact conditional loss agree for u != 0") {
  const TaskDistribution dist = TaskDistribution::isotropic(2, 30, 9);
  const LoopedParams p{SymMatrix::scaled_identity(2, 0.7), Vector::Constant(2, 0.3), 2};
  const LossEstimate e = empirical_loss(p, dist, 40000);
  const LossEstimate c = conditional_loss(p, dist, 40000);
  CHECK(std::abs(e.mean - c.mean) <= 4.0 * (e.std_error + c.std_error));
}

TEST_CASE("loss_and_grad matches the separate estimators") {
  const TaskDistribution dist = TaskDistribution::isotropic(3, 15, 2);
  const CovarianceBatch b = sample_covariances(dist, 300);
  const SymMatrix A = SymMatrix::scaled_identity(3, 0.8);
  const LossAndGrad lg = loss_and_grad(A, 3, b);
  CHECK(lg.loss.mean == doctest::Approx(closedform_loss(A, 3, b).mean).epsilon(1e-13));
  CHECK((lg.grad.mat() - grad_loss(A, 3, b).mat()).norm() < 1e-12);
}

TEST_CASE("rotated batch with rotated parameters gives the same loss") {
  const TaskDistribution dist = TaskDistribution::isotropic(3, 12, 8);
  const CovarianceBatch b = sample_covariances(dist, 200);
  Stream rng(1);
  const Matrix R = random_orthogonal(3, rng);
  const SymMatrix A = random_symmetric_with_spectrum(Vector::LinSpaced(3, 0.2, 1.0), rng);
  const double base = closedform_loss(A, 2, b).mean;
  const double rot = closedform_loss(SymMatrix(R.transpose() * A.mat() * R), 2, b.rotated(R)).mean;
  CHECK(rot == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("estimators do not depend on the worker count") {
  const TaskDistribution dist = TaskDistribution::isotropic(2, 8, 3);
  const LoopedParams p{SymMatrix::identity(2), Vector::Constant(2, 0.1), 2};
  setenv("LOOPTF_THREADS", "1", 1);
  const double a = empirical_loss(p, dist, 3000).mean;
  const double c = closedform_loss(p.A, 2, dist, 3000).mean;
  setenv("LOOPTF_THREADS", "3", 1);
  const double b = empirical_loss(p, dist, 3000).mean;
  const double d = closedform_loss(p.A, 2, dist, 3000).mean;
  unsetenv("LOOPTF_THREADS");
  CHECK(a == b);
  CHECK(c == d);
}

TEST_CASE("summarize uses the sample standard deviation") {
  const LossEstimate e = summarize({1.0, 2.0, 3.0, 4.0}, EstimatorKind::kEmpirical);
  CHECK(e.mean == 2.5);
  CHECK(e.std_error == doctest::Approx(std::sqrt(5.0 / 3.0 / 4.0)));
}
