#pragma once

#include "looptf/matkernel.hpp"
#include "looptf/tasks.hpp"

#include <nlohmann/json.hpp>

#include <vector>

namespace looptf {

/// (d+1)×(n+1) prompt Z = [[X, x_q], [yᵀ, 0]] and its iterates.
struct Prompt {
  Matrix z;

  int d() const { return static_cast<int>(z.rows()) - 1; }
  int n() const { return static_cast<int>(z.cols()) - 1; }
  /// Bottom-right entry; the model output is its negation.
  double query_slot() const { return z(z.rows() - 1, z.cols() - 1); }
};

Prompt make_prompt(const RegressionInstance& inst);

struct LoopedParams {
  SymMatrix A;
  Vector u;
  int L = 1;

  int d() const { return A.dim(); }
  void validate() const;
};

struct LayerParams {
  SymMatrix A;
  Vector u;
};

/// Per-layer (A_t, u_t) for t = 0..L-1, no weight sharing.
struct LayerParamsSeq {
  std::vector<LayerParams> layers;

  int L() const { return static_cast<int>(layers.size()); }
  int d() const { return layers.empty() ? 0 : layers.front().A.dim(); }
  void validate() const;

  static LayerParamsSeq expand(const LoopedParams& p);
};

/// Q = [[A, 0], [0, 0]]
Matrix query_key_matrix(const SymMatrix& A);
/// P = [[0, 0], [uᵀ, 1]]
Matrix value_matrix(const Vector& u);

/// Z − (1/n) P Z M (Zᵀ Q Z) for general dense P, Q; M masks the query column.
Matrix attention_update(const Matrix& z, const Matrix& P, const Matrix& Q, int n);

/// One linear self-attention step with the restricted (A, u) parameterization.
Prompt lsa_step(const Prompt& z, const SymMatrix& A, const Vector& u, int n);

/// −Z^{(L)}_{d+1,n+1} after L shared-weight steps.
double forward_looped(const RegressionInstance& inst, const LoopedParams& p);

/// Same with per-layer parameters. An expanded LoopedParams gives bitwise the
/// same result as forward_looped.
double forward_multilayer(const RegressionInstance& inst, const LayerParamsSeq& seq);

/// All intermediate prompts Z^{(0)}..Z^{(L)}.
std::vector<Prompt> forward_trace(const RegressionInstance& inst, const LayerParamsSeq& seq);

struct RecursionResult {
  std::vector<Vector> y_rows;  // y^{(t)}, t = 0..L
  std::vector<double> y_q;     // y_q^{(t)}, t = 0..L; the model prediction after t layers
};

/// Closed-form bottom row after t layers, with Σ = (1/n) X Xᵀ:
///   v_tᵀ = w*ᵀ ∏_{i<t}(I − ΣA_i) − Σ_{i<t} u_iᵀ Σ A_i ∏_{i<j<t}(I − ΣA_j)
///   y^{(t)} = v_tᵀ X,  y_q^{(t)} = y_q − v_tᵀ x_q.
/// Products are evaluated directly, never through attention steps.
RecursionResult recursion_formula(const RegressionInstance& inst, const LayerParamsSeq& seq);

/// A = A_pre, u = 0: the looped model then runs L steps of preconditioned GD.
LoopedParams construct_expressive_params(const SymMatrix& A_pre, int L);

/// Prediction and its gradient with respect to every layer's (A_t, u_t), by
/// reverse-mode differentiation of the bottom-row recurrence. A-gradients are
/// the symmetric parts.
struct PredictionGradient {
  double prediction = 0.0;
  std::vector<Matrix> dA;
  std::vector<Vector> du;
};

PredictionGradient prediction_gradient(const RegressionInstance& inst, const LayerParamsSeq& seq);

nlohmann::json to_json(const LoopedParams& p);
LoopedParams looped_params_from_json(const nlohmann::json& j);

}  // namespace looptf
