#pragma once

#include "looptf/delta.hpp"
#include "looptf/loss.hpp"
#include "looptf/model.hpp"
#include "looptf/report.hpp"
#include "looptf/tasks.hpp"

#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace looptf {

/// One trace record; the CSV columns in order.
struct TraceRow {
  double step_or_time = 0.0;
  double loss = 0.0;
  double loss_smoothed = 0.0;
  double grad_norm = 0.0;
  double spec_dist_to_identity = 0.0;
  double u_norm = 0.0;
};

struct Snapshot {
  double time = 0.0;
  SymMatrix A;
};

struct FlowTrace {
  std::vector<TraceRow> rows;
  std::vector<Snapshot> snapshots;
  /// Final parameters (flow: u = 0; training: the shared or per-layer values).
  LayerParamsSeq final_params;
  bool aborted = false;
  bool converged = false;
  std::string message;
  int accepted_steps = 0;
  int rejected_steps = 0;
};

class FlowStalledError : public NumericError {
 public:
  FlowStalledError(const std::string& what, FlowTrace trace) : NumericError(what), trace_(std::move(trace)) {}
  const FlowTrace& trace() const { return trace_; }

 private:
  FlowTrace trace_;
};

constexpr const char* kTraceCsvHeader = "step_or_time,loss,loss_smoothed,grad_norm,spec_dist_to_identity,u_norm";
constexpr int kTraceSchemaVersion = 1;

void write_trace_csv(std::ostream& os, const FlowTrace& trace);
void write_trace_csv(const std::string& path, const FlowTrace& trace);

// ---------------------------------------------------------------- gradient flow

struct FlowConfig {
  double dt0 = 1e-2;
  double t_end = 10.0;
  double dt_max = 5.0;
  /// Local error tolerance for the Euler–Heun estimate, relative to max(1, ‖A‖_F).
  double tol = 1e-3;
  std::int64_t m = 10000;
  /// Times that must be landed on exactly; a snapshot is stored at each.
  std::vector<double> checkpoints;
  /// Extra records on a geometric grid starting at this time (0 disables).
  double grid_start = 1e-2;
  double grid_ratio = 1.25;
};

/// dA/dt = −∇ E tr((I − ΣA)^{2L}) on a fixed covariance batch. Explicit Euler;
/// a step is accepted only if the batch loss strictly decreases and the
/// Euler–Heun error estimate is within tolerance, else the step is halved.
/// Throws FlowStalledError (carrying the trace) if dt falls below 1e-12.
FlowTrace integrate_flow(const SymMatrix& A0, int L, const CovarianceBatch& batch, const FlowConfig& cfg);
FlowTrace integrate_flow(const SymMatrix& A0, int L, const TaskDistribution& dist, const FlowConfig& cfg);

/// Decreasing solution of g' = −(1/16) g^{(2L−1)/L}, g(0) = f0.
double comparison_ode(double f0, double t, int L);

// ---------------------------------------------------------------- dominance

struct DominanceSample {
  double loss = 0.0;
  double loss_std_error = 0.0;
  double grad_norm_sq = 0.0;
  double ratio = 0.0;
  bool qualifies = false;
};

struct DominanceConfig {
  std::int64_t trials = 1000;
  std::int64_t m = 2000;
  double spectrum_lo = 0.05;
  double spectrum_hi = 12.0;
  std::int64_t min_qualifying = 200;
  /// Samples with loss − z·stderr below the threshold are dropped.
  double ci_z = 1.96;
};

struct DominanceReport {
  int d = 0;
  int n = 0;
  int L = 0;
  DominanceThreshold threshold;
  std::vector<DominanceSample> samples;
  std::int64_t qualifying = 0;
  double min_ratio = 0.0;
  double required_ratio = 1.0 / 16.0;
  bool low_coverage = false;
  Verdict verdict = Verdict::kFail;
};

/// ratio = ‖∇L‖_F² / L^{(2L−1)/L}; required ≥ 1/16 above the threshold.
double dominance_rhs(double loss, int L);

/// Random symmetric A (log-uniform spectrum, Haar basis) from sub-stream
/// (seed, scan, i); loss and gradient on one shared covariance batch.
DominanceReport scan_dominance(const TaskDistribution& dist, int L, const DominanceConfig& cfg);

nlohmann::json to_json(const DominanceReport& r);

// ---------------------------------------------------------------- training

enum class Optimizer { kSgd, kAdam };

Optimizer optimizer_from_string(const std::string& s);
std::string to_string(Optimizer o);

struct TrainConfig {
  int steps = 10000;
  int batch = 64;
  double lr = 1e-2;
  /// Cosine decay from lr to lr·lr_final_fraction.
  double lr_final_fraction = 1e-2;
  Optimizer optimizer = Optimizer::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double ema = 0.01;
  int record_every = 10;
  double divergence_factor = 1e3;
  bool train_u = true;
  /// Weight sharing across layers (looped) or independent layers (multilayer).
  bool shared = true;
};

/// Online SGD on fresh instances; instance j of step s comes from sub-stream
/// (dist.seed, train-step, s·batch + j). Gradients by reverse mode through
/// the bottom-row recurrence.
FlowTrace train_sgd(const TaskDistribution& dist, const LayerParamsSeq& p0, const TrainConfig& cfg);

/// A = scale_A·(I + 0.01·G), G symmetric Gaussian; u = scale_u·N(0, I). Init sub-stream.
LoopedParams random_init(int d, int L, double scale_A, double scale_u, std::uint64_t seed);

/// Mean squared error over m fresh instances (sub-stream (dist.seed, eval, i));
/// if cov_out is given, x ~ N(0, cov_out) instead of N(0, Σ*).
LossEstimate evaluate_loss(const LayerParamsSeq& p, const TaskDistribution& dist, std::int64_t m,
                           const std::optional<SymMatrix>& cov_out = std::nullopt);

/// Shared-weight view of a sequence (its first layer) repeated L times.
LayerParamsSeq with_loops(const LayerParamsSeq& trained, int L);

}  // namespace looptf
