#include "looptf/loss.hpp"

#include "looptf/parallel.hpp"

#include <cmath>
#include <stdexcept>

namespace looptf {

namespace {

constexpr std::size_t kBlock = 256;

/// Eigen-pairs of B = S A S (plain Eigen, no SymMatrix checks on the hot path).
struct SpectralB {
  Vector lambda;
  Matrix V;
};

SpectralB spectral_b(const Matrix& A, const Matrix& S) {
  const Matrix B = S * A * S;
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (B + B.transpose()));
  if (es.info() != Eigen::Success) throw NumericError("eigendecomposition did not converge");
  return {es.eigenvalues(), es.eigenvectors()};
}

Matrix spectral_apply(const SpectralB& sb, const Vector& f) {
  return sb.V * f.asDiagonal() * sb.V.transpose();
}

Matrix int_power(Matrix base, int k) {
  Matrix result = Matrix::Identity(base.rows(), base.cols());
  while (k > 0) {
    if (k & 1) result = result * base;
    k >>= 1;
    if (k > 0) base = base * base;
  }
  return result;
}

void check_L(int L) {
  if (L < 1) throw std::invalid_argument("loop count L must be >= 1");
}

void check_dims(const SymMatrix& A, const CovarianceBatch& batch) {
  if (A.dim() != batch.d) throw DimensionError("A does not match the covariance batch dimension");
  if (batch.samples.empty()) throw std::invalid_argument("empty covariance batch");
}

/// Sums f(i) (a d×d matrix) in fixed-size blocks; block sums reduced in order.
template <class F>
Matrix blocked_matrix_mean(std::size_t m, int d, F&& f) {
  const std::size_t blocks = (m + kBlock - 1) / kBlock;
  std::vector<Matrix> partial(blocks, Matrix::Zero(d, d));
  parallel_for(blocks, [&](std::size_t b) {
    const std::size_t end = std::min(m, (b + 1) * kBlock);
    for (std::size_t i = b * kBlock; i < end; ++i) partial[b] += f(i);
  });
  Matrix total = Matrix::Zero(d, d);
  for (const auto& p : partial) total += p;
  return total / static_cast<double>(m);
}

}  // namespace

std::string to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::kEmpirical:
      return "empirical";
    case EstimatorKind::kClosedForm:
      return "closedform";
    case EstimatorKind::kClosedFormWithU:
      return "closedform_with_u";
    case EstimatorKind::kConditional:
      return "conditional";
  }
  return "unknown";
}

LossEstimate summarize(const std::vector<double>& values, EstimatorKind kind) {
  LossEstimate out;
  out.kind = kind;
  out.m = static_cast<std::int64_t>(values.size());
  if (values.empty()) return out;
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    const double var = ss / static_cast<double>(values.size() - 1);
    out.std_error = std::sqrt(var / static_cast<double>(values.size()));
  }
  return out;
}

CovarianceBatch CovarianceBatch::rotated(const Matrix& R) const {
  CovarianceBatch out{d, n, {}};
  out.samples.reserve(samples.size());
  for (const auto& s : samples) {
    out.samples.push_back(
        {R.transpose() * s.sigma * R, R.transpose() * s.sigma_sqrt * R});
  }
  return out;
}

CovarianceSample make_covariance_sample(const Matrix& sigma) {
  CovarianceSample s;
  s.sigma = 0.5 * (sigma + sigma.transpose());
  s.sigma_sqrt = psd_sqrt(SymMatrix(s.sigma)).mat();
  return s;
}

CovarianceSample sample_covariance(const TaskDistribution& dist, Stream& rng) {
  const int d = dist.d();
  const int n = dist.n();
  const Matrix& root = dist.sigma_star_sqrt().mat();
  Matrix sigma;
  if (n >= d) {
    Matrix T = Matrix::Zero(d, d);
    for (int i = 0; i < d; ++i) {
      T(i, i) = std::sqrt(rng.chi_squared(static_cast<double>(n - i)));
      for (int j = 0; j < i; ++j) T(i, j) = rng.gaussian();
    }
    const Matrix CT = root * T;
    sigma = CT * CT.transpose() / static_cast<double>(n);
  } else {
    const Matrix X = root * rng.gaussian_matrix(d, n);
    sigma = X * X.transpose() / static_cast<double>(n);
  }
  return make_covariance_sample(sigma);
}

CovarianceBatch sample_covariances(const TaskDistribution& dist, std::int64_t m) {
  if (m < 1) throw std::invalid_argument("sample_covariances: m must be >= 1");
  CovarianceBatch batch{dist.d(), dist.n(), {}};
  batch.samples.resize(static_cast<std::size_t>(m));
  parallel_for(batch.samples.size(), [&](std::size_t i) {
    Stream rng(dist.seed(), StreamTag::kCovariance, i);
    batch.samples[i] = sample_covariance(dist, rng);
  });
  return batch;
}

double trace_loss_sample(const SymMatrix& A, int L, const CovarianceSample& s) {
  const SpectralB sb = spectral_b(A.mat(), s.sigma_sqrt);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < sb.lambda.size(); ++i) acc += std::pow(1.0 - sb.lambda(i), 2 * L);
  return acc;
}

Matrix trace_grad_sample(const SymMatrix& A, int L, const CovarianceSample& s) {
  const SpectralB sb = spectral_b(A.mat(), s.sigma_sqrt);
  Vector f(sb.lambda.size());
  for (Eigen::Index i = 0; i < f.size(); ++i) f(i) = std::pow(1.0 - sb.lambda(i), 2 * L - 1);
  return -2.0 * L * s.sigma_sqrt * spectral_apply(sb, f) * s.sigma_sqrt;
}

double u_term_sample(const SymMatrix& A, const Vector& u, int L, const CovarianceSample& s) {
  const SpectralB sb = spectral_b(A.mat(), s.sigma_sqrt);
  Vector f(sb.lambda.size());
  for (Eigen::Index i = 0; i < f.size(); ++i) f(i) = 1.0 - std::pow(1.0 - sb.lambda(i), L);
  return (spectral_apply(sb, f) * (s.sigma_sqrt * u)).squaredNorm();
}

double conditional_loss_sample(const SymMatrix& A, const Vector& u, int L, const Matrix& sigma,
                               const TaskDistribution& dist) {
  const int d = A.dim();
  const Matrix I = Matrix::Identity(d, d);
  const Matrix M = int_power(I - sigma * A.mat(), L);
  const Matrix& sstar = dist.sigma_star().mat();
  const double w_part = (M.transpose() * dist.sigma_star_inv().mat() * M * sstar).trace();
  const Eigen::RowVectorXd v = u.transpose() * (I - M);
  return w_part + v * sstar * v.transpose();
}

LossEstimate empirical_loss(const LoopedParams& p, const TaskDistribution& dist, std::int64_t m) {
  if (m < 1) throw std::invalid_argument("empirical_loss: m must be >= 1");
  p.validate();
  std::vector<double> values(static_cast<std::size_t>(m));
  parallel_for(values.size(), [&](std::size_t i) {
    const RegressionInstance inst = sample_instance(dist, i);
    const double err = forward_looped(inst, p) - inst.y_q;
    values[i] = err * err;
  });
  return summarize(values, EstimatorKind::kEmpirical);
}

LossEstimate closedform_loss(const SymMatrix& A, int L, const CovarianceBatch& batch) {
  check_L(L);
  check_dims(A, batch);
  std::vector<double> values(batch.size());
  parallel_for(values.size(),
               [&](std::size_t i) { values[i] = trace_loss_sample(A, L, batch.samples[i]); });
  return summarize(values, EstimatorKind::kClosedForm);
}

LossEstimate closedform_loss(const SymMatrix& A, int L, const TaskDistribution& dist,
                             std::int64_t m) {
  return closedform_loss(A, L, sample_covariances(dist, m));
}

LossEstimate closedform_loss_with_u(const SymMatrix& A, const Vector& u, int L,
                                    const CovarianceBatch& batch) {
  check_L(L);
  check_dims(A, batch);
  if (u.size() != A.dim()) throw DimensionError("u does not match A");
  std::vector<double> total(batch.size());
  std::vector<double> uterm(batch.size());
  parallel_for(total.size(), [&](std::size_t i) {
    const auto& s = batch.samples[i];
    uterm[i] = u_term_sample(A, u, L, s);
    total[i] = trace_loss_sample(A, L, s) + uterm[i];
  });
  LossEstimate out = summarize(total, EstimatorKind::kClosedFormWithU);
  const LossEstimate u_only = summarize(uterm, EstimatorKind::kClosedFormWithU);
  out.u_term_mean = u_only.mean;
  out.u_term_std_error = u_only.std_error;
  return out;
}

LossEstimate closedform_loss_with_u(const SymMatrix& A, const Vector& u, int L,
                                    const TaskDistribution& dist, std::int64_t m) {
  return closedform_loss_with_u(A, u, L, sample_covariances(dist, m));
}

LossEstimate conditional_loss(const LoopedParams& p, const TaskDistribution& dist,
                              std::int64_t m) {
  p.validate();
  const CovarianceBatch batch = sample_covariances(dist, m);
  std::vector<double> values(batch.size());
  parallel_for(values.size(), [&](std::size_t i) {
    values[i] = conditional_loss_sample(p.A, p.u, p.L, batch.samples[i].sigma, dist);
  });
  return summarize(values, EstimatorKind::kConditional);
}

SymMatrix grad_loss(const SymMatrix& A, int L, const CovarianceBatch& batch) {
  check_L(L);
  check_dims(A, batch);
  return SymMatrix(blocked_matrix_mean(batch.size(), A.dim(), [&](std::size_t i) {
    return trace_grad_sample(A, L, batch.samples[i]);
  }));
}

SymMatrix grad_loss(const SymMatrix& A, int L, const TaskDistribution& dist, std::int64_t m) {
  return grad_loss(A, L, sample_covariances(dist, m));
}

LossAndGrad loss_and_grad(const SymMatrix& A, int L, const CovarianceBatch& batch) {
  check_L(L);
  check_dims(A, batch);
  const int d = A.dim();
  const std::size_t m = batch.size();
  const std::size_t blocks = (m + kBlock - 1) / kBlock;
  std::vector<double> values(m);
  std::vector<Matrix> partial(blocks, Matrix::Zero(d, d));
  parallel_for(blocks, [&](std::size_t b) {
    const std::size_t end = std::min(m, (b + 1) * kBlock);
    for (std::size_t i = b * kBlock; i < end; ++i) {
      const auto& s = batch.samples[i];
      const SpectralB sb = spectral_b(A.mat(), s.sigma_sqrt);
      Vector f(d);
      double acc = 0.0;
      for (int k = 0; k < d; ++k) {
        const double base = 1.0 - sb.lambda(k);
        const double p = std::pow(base, 2 * L - 1);
        f(k) = p;
        acc += p * base;
      }
      values[i] = acc;
      partial[b] += -2.0 * L * s.sigma_sqrt * spectral_apply(sb, f) * s.sigma_sqrt;
    }
  });
  Matrix total = Matrix::Zero(d, d);
  for (const auto& p : partial) total += p;
  return {summarize(values, EstimatorKind::kClosedForm), SymMatrix(total / static_cast<double>(m))};
}

}  // namespace looptf
