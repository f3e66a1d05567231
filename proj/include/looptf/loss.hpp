#pragma once

#include "looptf/matkernel.hpp"
#include "looptf/model.hpp"
#include "looptf/tasks.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace looptf {

enum class EstimatorKind { kEmpirical, kClosedForm, kClosedFormWithU, kConditional };

std::string to_string(EstimatorKind k);

struct LossEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::int64_t m = 0;
  EstimatorKind kind = EstimatorKind::kEmpirical;
  /// Only for kClosedFormWithU: the u-term on its own.
  double u_term_mean = 0.0;
  double u_term_std_error = 0.0;
};

/// Mean and standard error (sample std / √m) of values, reduced in index order.
LossEstimate summarize(const std::vector<double>& values, EstimatorKind kind);

/// Data covariance Σ = (1/n) X Xᵀ drawn from the task law, with its square root.
struct CovarianceSample {
  Matrix sigma;
  Matrix sigma_sqrt;
};

/// A fixed batch of covariance draws; sharing one batch across calls gives
/// common random numbers.
struct CovarianceBatch {
  int d = 0;
  int n = 0;
  std::vector<CovarianceSample> samples;

  std::size_t size() const { return samples.size(); }
  /// Rotated copy: every Σ replaced by Rᵀ Σ R (same as rotating each x by Rᵀ).
  CovarianceBatch rotated(const Matrix& R) const;
};

/// Bartlett factorization when n ≥ d (Σ* ^{1/2} T Tᵀ Σ*^{1/2} / n with
/// T_ii² ~ χ²_{n−i}, T_ij ~ N(0,1) below the diagonal); explicit X otherwise.
CovarianceSample sample_covariance(const TaskDistribution& dist, Stream& rng);

/// Draw i uses sub-stream (dist.seed, covariance, i).
CovarianceBatch sample_covariances(const TaskDistribution& dist, std::int64_t m);

CovarianceSample make_covariance_sample(const Matrix& sigma);

// Per-sample closed forms, B = Σ^{1/2} A Σ^{1/2}:
//   tr((I − ΣA)^{2L}) = tr((I − B)^{2L})
//   ∇ = −L[Σ(I − AΣ)^{2L−1} + (I − ΣA)^{2L−1}Σ] = −2L Σ^{1/2}(I − B)^{2L−1}Σ^{1/2}
//   u-term ‖Σ_i uᵀΣA(I − ΣA)^{L−1−i} Σ^{1/2}‖² = ‖(I − (I − B)^L) Σ^{1/2} u‖²
double trace_loss_sample(const SymMatrix& A, int L, const CovarianceSample& s);
Matrix trace_grad_sample(const SymMatrix& A, int L, const CovarianceSample& s);
double u_term_sample(const SymMatrix& A, const Vector& u, int L, const CovarianceSample& s);

/// Exact E[(prediction − y_q)² | X] over w* and x_q under the task law:
/// tr(Mᵀ Σ*⁻¹ M Σ*) + v Σ* vᵀ with M = (I − ΣA)^L, v = uᵀ(I − M).
double conditional_loss_sample(const SymMatrix& A, const Vector& u, int L, const Matrix& sigma,
                               const TaskDistribution& dist);

/// Mean of (forward_looped − y_q)² over instances 0..m−1 of dist.
LossEstimate empirical_loss(const LoopedParams& p, const TaskDistribution& dist, std::int64_t m);

/// E_X tr((I − ΣA)^{2L}), u = 0. Valid for any symmetric A.
LossEstimate closedform_loss(const SymMatrix& A, int L, const TaskDistribution& dist,
                             std::int64_t m);
LossEstimate closedform_loss(const SymMatrix& A, int L, const CovarianceBatch& batch);

LossEstimate closedform_loss_with_u(const SymMatrix& A, const Vector& u, int L,
                                    const TaskDistribution& dist, std::int64_t m);
LossEstimate closedform_loss_with_u(const SymMatrix& A, const Vector& u, int L,
                                    const CovarianceBatch& batch);

/// MC average of the exact conditional loss; unbiased for the population loss.
LossEstimate conditional_loss(const LoopedParams& p, const TaskDistribution& dist,
                              std::int64_t m);

/// Symmetric gradient of E_X tr((I − ΣA)^{2L}) (u = 0 regime).
SymMatrix grad_loss(const SymMatrix& A, int L, const TaskDistribution& dist, std::int64_t m);
SymMatrix grad_loss(const SymMatrix& A, int L, const CovarianceBatch& batch);

struct LossAndGrad {
  LossEstimate loss;
  SymMatrix grad;
};

/// Loss and gradient on the same batch in one pass.
LossAndGrad loss_and_grad(const SymMatrix& A, int L, const CovarianceBatch& batch);

}  // namespace looptf
