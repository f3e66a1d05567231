#pragma once

#include "looptf/matkernel.hpp"
#include "looptf/report.hpp"

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace looptf {

class EnvelopeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// E[(Σ̂)^k] for Σ̂ = (1/n) Σ_i x_i x_iᵀ, x_i ~ N(0, sigma).
struct MomentResult {
  int k = 0;
  int n = 0;
  SymMatrix sigma;
  SymMatrix moment;
  /// α_j = u_jᵀ·moment·u_j, u_j the eigenvectors of sigma (descending eigenvalues).
  Vector coeffs;
  Vector sigma_eigenvalues;
  /// Per-entry standard error; zero for exact results.
  Matrix std_error;
  /// Largest standard error among coeffs (MC only).
  double coeff_std_error = 0.0;
  bool exact = true;
  /// Pairings enumerated per scalar Gaussian expectation, (2k−1)!!.
  std::int64_t pairings_per_expectation = 0;
};

/// Perfect matchings of {0, …, 2k−1}, each as k pairs; built once per k.
const std::vector<std::vector<std::pair<int, int>>>& pairings(int k);

/// Exact moment by Wick pairing. Each pairing ties sample indices of the k
/// rank-one factors together; instead of enumerating the n^k multi-indices the
/// n-sum is n^{#connected components}. Envelope d ≤ 3, k ≤ 4, any n.
MomentResult moment_exact(const SymMatrix& sigma, int n, int k);

/// Same expectation, enumerating every multi-index (i_1..i_k) ∈ [n]^k. Slow;
/// used as an independent oracle for tiny n.
MomentResult moment_exact_multiindex(const SymMatrix& sigma, int n, int k);

bool in_exact_envelope(int d, int k);

/// Entrywise MC mean over m draws (draw i uses the moments sub-stream i).
MomentResult moment_mc(const SymMatrix& sigma, int n, int k, std::int64_t m, std::uint64_t seed);

/// Exact when in envelope, else MC with m draws.
MomentResult moment_auto(const SymMatrix& sigma, int n, int k, std::int64_t m, std::uint64_t seed);

struct MomentCheckOptions {
  std::int64_t mc_samples = 100000;
  std::uint64_t seed = 1;
  /// Loop count used only for the informational δ-readings of the slack.
  int L = 2;
};

/// |α_j − λ_j^k| ≤ (4kd/√n) λ_1^k for every j (plus 1 ≤ α ≤ 1 + 4kd/√n when
/// sigma = I). Needs n ≥ 4k²d².
BoundReport check_moment_bounds(const SymMatrix& sigma, int n, int k,
                                const MomentCheckOptions& opt = {});

/// β_i = v_iᵀ E[(I − A^{1/2} Σ̂ A^{1/2})^k] v_i in the eigenbasis of
/// A^{1/2} Σ* A^{1/2} (eigenvalues λ_i) against (1 − λ_i)^k ± δ̄(λ_1 + 1)^k,
/// δ̄ = 4kd/√n. The expectation is assembled binomially from moments.
BoundReport check_eig_approx(const SymMatrix& A, const SymMatrix& sigma_star, int n, int k,
                             const MomentCheckOptions& opt = {});

/// Expected (I − Σ̃)^k with Σ̃ the sample covariance for population cov_a.
SymMatrix expected_centered_power(const SymMatrix& cov_a, int n, int k, const MomentCheckOptions& opt,
                                  bool* exact = nullptr);

}  // namespace looptf
