#pragma once

#include "looptf/matkernel.hpp"
#include "looptf/rng.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <vector>

namespace looptf {

class SingularGramError : public NumericError {
 public:
  using NumericError::NumericError;
};

/// In-context linear regression law: x ~ N(0, Σ*), w* ~ N(0, Σ*⁻¹), noiseless labels.
class TaskDistribution {
 public:
  TaskDistribution(int d, int n, SymMatrix sigma_star, std::uint64_t seed);

  static TaskDistribution isotropic(int d, int n, std::uint64_t seed);

  int d() const { return d_; }
  int n() const { return n_; }
  std::uint64_t seed() const { return seed_; }
  const SymMatrix& sigma_star() const { return sigma_star_; }
  const SymMatrix& sigma_star_sqrt() const { return sqrt_; }
  const SymMatrix& sigma_star_inv() const { return inv_; }
  const SymMatrix& sigma_star_inv_sqrt() const { return inv_sqrt_; }

  /// Same law, different n (used for sweeps).
  TaskDistribution with_n(int n) const;
  TaskDistribution with_seed(std::uint64_t seed) const;

  /// The accuracy bounds assume more samples than dimensions; the sampler does not.
  bool bound_regime() const { return n_ > d_; }

 private:
  int d_;
  int n_;
  SymMatrix sigma_star_;
  SymMatrix sqrt_;
  SymMatrix inv_;
  SymMatrix inv_sqrt_;
  std::uint64_t seed_;
};

struct RegressionInstance {
  Matrix X;  // d×n, columns are samples
  Vector y;  // n
  Vector x_q;
  Vector w_star;
  double y_q = 0.0;
  std::uint64_t seed = 0;

  int d() const { return static_cast<int>(X.rows()); }
  int n() const { return static_cast<int>(X.cols()); }
  /// Σ = (1/n) X Xᵀ
  Matrix data_covariance() const { return X * X.transpose() / static_cast<double>(n()); }
};

/// Draw order within the stream: X column by column, then x_q, then w*.
RegressionInstance sample_instance(const TaskDistribution& dist, Stream& rng);

/// Instance `index` of the distribution's seed; independent of any other index.
RegressionInstance sample_instance(const TaskDistribution& dist, std::uint64_t index);

/// Builds an instance from explicit data with labels y = Xᵀw*, y_q = w*·x_q.
RegressionInstance make_instance(Matrix X, Vector x_q, Vector w_star);

/// (X Xᵀ)⁻¹ X y; throws SingularGramError when cond(X Xᵀ) > 1e12.
Vector solve_exact(const RegressionInstance& inst);

/// w_0 = 0, w_{t+1} = w_t + (1/n) A X (y − Xᵀ w_t). Returns w_0..w_steps.
std::vector<Vector> gd_oracle(const RegressionInstance& inst, const SymMatrix& A, int steps);

nlohmann::json to_json(const RegressionInstance& inst);
RegressionInstance instance_from_json(const nlohmann::json& j);

}  // namespace looptf
