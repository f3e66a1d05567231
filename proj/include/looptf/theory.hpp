#pragma once

#include "looptf/delta.hpp"
#include "looptf/loss.hpp"
#include "looptf/matkernel.hpp"
#include "looptf/report.hpp"
#include "looptf/tasks.hpp"

namespace looptf {

struct MinimizerOptions {
  std::int64_t m = 100000;
  double u_tolerance = 1e-2;
};

/// Loss of (A, u) against 8Ld²2^{2L}/√n (4·stderr margin), the band
/// (1 ± c_opt)Σ*⁻¹ and ‖u‖ ≤ u_tolerance. Loss is the exact conditional
/// loss averaged over data covariances. Verdict is advisory unless the
/// n-condition 8Ld²/√n ≤ 2^{−2L} holds.
BoundReport verify_global_minimizer(const SymMatrix& A, const Vector& u, int L, const TaskDistribution& dist,
                                    const MinimizerOptions& opt = {});

struct ProximityBand {
  double eps = 0.0;
  double c = 0.0;   // 4 + 16 d^{1/(2L)}
  double lo = 0.0;  // relative to Σ*⁻¹, proxy slack composed in
  double hi = 0.0;
};

/// Lower edge, relative to Σ*⁻¹, of A ≽ (1 − w)B given (1 − c)Σ*⁻¹ ≼ B ≼ (1 + c)Σ*⁻¹.
/// B is taken PSD. For w > 1 the factor (1 − w) is negative and pairs with the upper edge of B.
double composed_lower(double w, double c);

/// Band (1 − cε)(1 − c_opt) .. (1 + cε)(1 + c_opt) around Σ*⁻¹.
ProximityBand proximity_band(double eps, int d, int L, double c_opt);

/// Smallest admissible ε for a measured loss: max((2·loss)^{1/(2L)}, 4δ).
double proximity_eps(double loss, double delta, int L);

/// Measures the loss (u = 0) then checks the band; inconclusive when the
/// standard error exceeds 25% of the loss.
BoundReport verify_proximity(const SymMatrix& A, int L, const TaskDistribution& dist, std::int64_t m);
BoundReport verify_proximity_at(const SymMatrix& A, int L, const TaskDistribution& dist, const LossEstimate& loss);

/// Out-of-distribution bound for one instance with Σ_out = (1/n) X Xᵀ:
/// (TF − y_q)² ≤ (1 + 16δd^{1/(2L)})² (1 + 16δd^{1/(2L)} − ζ)^{2L} ‖x_q‖²_{Σ*} ‖w*‖²_{Σ*⁻¹}
/// when ζΣ* ≼ Σ_out ≼ (2 − ζ)Σ*.
BoundReport ood_check(const RegressionInstance& inst_out, const SymMatrix& A, int L, const TaskDistribution& dist,
                      double zeta);

/// Instance with x ~ N(0, cov_out), w* ~ N(0, Σ*⁻¹) drawn from sub-stream (seed, ood, index).
RegressionInstance sample_ood_instance(const TaskDistribution& dist, const SymMatrix& cov_out, std::uint64_t index);

}  // namespace looptf
