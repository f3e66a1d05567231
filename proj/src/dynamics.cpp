#include "looptf/dynamics.hpp"

#include "looptf/parallel.hpp"
#include "looptf/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace looptf {

namespace {

bool is_identity(const SymMatrix& m) {
  return (m.mat() - Matrix::Identity(m.dim(), m.dim())).norm() < 1e-14;
}

std::vector<double> landing_times(const FlowConfig& cfg) {
  std::vector<double> times(cfg.checkpoints);
  if (cfg.grid_start > 0.0 && cfg.grid_ratio > 1.0)
    for (double g = cfg.grid_start; g < cfg.t_end; g *= cfg.grid_ratio) times.push_back(g);
  times.push_back(cfg.t_end);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  times.erase(std::remove_if(times.begin(), times.end(), [&](double t) { return t <= 0.0 || t > cfg.t_end; }),
              times.end());
  return times;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

double spec_dist(const SymMatrix& A, const SymMatrix& sigma_star) {
  return spectral_norm(Matrix(A.mat() * sigma_star.mat() - Matrix::Identity(A.dim(), A.dim())));
}

}  // namespace

void write_trace_csv(std::ostream& os, const FlowTrace& trace) {
  os << kTraceCsvHeader << '\n';
  for (const auto& r : trace.rows) {
    os << fmt(r.step_or_time) << ',' << fmt(r.loss) << ',' << fmt(r.loss_smoothed) << ',' << fmt(r.grad_norm) << ','
       << fmt(r.spec_dist_to_identity) << ',' << fmt(r.u_norm) << '\n';
  }
}

void write_trace_csv(const std::string& path, const FlowTrace& trace) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_trace_csv(out, trace);
}

// ---------------------------------------------------------------- gradient flow

FlowTrace integrate_flow(const SymMatrix& A0, int L, const CovarianceBatch& batch, const FlowConfig& cfg) {
  if (L < 1) throw std::invalid_argument("integrate_flow: L must be >= 1");
  if (!(cfg.t_end > 0.0) || !(cfg.dt0 > 0.0) || !(cfg.tol > 0.0))
    throw std::invalid_argument("integrate_flow: t_end, dt0 and tol must be positive");
  const std::vector<double> times = landing_times(cfg);
  const SymMatrix I = SymMatrix::identity(A0.dim());

  FlowTrace trace;
  SymMatrix A = A0;
  LossAndGrad cur = loss_and_grad(A, L, batch);
  const double l0 = cur.loss.mean;
  auto record = [&](double t) {
    const double g = cur.grad.mat().norm();
    trace.rows.push_back({t, cur.loss.mean, cur.loss.mean, g, spec_dist(A, I), 0.0});
  };
  record(0.0);
  const bool is_checkpoint_free = cfg.checkpoints.empty();
  auto snapshot_if_checkpoint = [&](double t) {
    if (is_checkpoint_free) return;
    if (std::find(cfg.checkpoints.begin(), cfg.checkpoints.end(), t) != cfg.checkpoints.end())
      trace.snapshots.push_back({t, A});
  };

  double t = 0.0;
  double dt = cfg.dt0;
  std::size_t next = 0;
  while (next < times.size()) {
    const double target = times[next];
    if (trace.converged) {
      record(target);
      snapshot_if_checkpoint(target);
      ++next;
      continue;
    }
    const double room = target - t;
    const double h = std::min({dt, room, cfg.dt_max});
    const bool clipped = h < dt;
    const SymMatrix A1 = A - h * cur.grad;
    LossAndGrad nxt = loss_and_grad(A1, L, batch);
    const double err = 0.5 * h * (nxt.grad.mat() - cur.grad.mat()).norm();
    const double scale = std::max(1.0, A.mat().norm());
    if (nxt.loss.mean < cur.loss.mean && err <= cfg.tol * scale) {
      A = A1;
      cur = std::move(nxt);
      t = (h == room) ? target : t + h;
      ++trace.accepted_steps;
      const double factor = err > 0.0 ? std::min(2.0, 0.9 * std::sqrt(cfg.tol * scale / err)) : 2.0;
      dt = clipped ? std::max(dt, h * factor) : h * factor;
      if (t == target) {
        record(t);
        snapshot_if_checkpoint(t);
        ++next;
      }
      continue;
    }
    // Expected first-order decrease below roundoff: the batch optimum is reached.
    const double gsq = cur.grad.mat().squaredNorm();
    if (h * gsq <= 1e-13 * std::max(l0, 1e-300)) {
      trace.converged = true;
      continue;
    }
    ++trace.rejected_steps;
    dt = h / 2.0;
    if (dt < 1e-12) {
      trace.aborted = true;
      trace.message = "step size underflow at t = " + fmt(t);
      trace.final_params.layers.assign(static_cast<std::size_t>(L), LayerParams{A, Vector::Zero(A.dim())});
      throw FlowStalledError("integrate_flow: " + trace.message, std::move(trace));
    }
  }
  trace.final_params.layers.assign(static_cast<std::size_t>(L), LayerParams{A, Vector::Zero(A.dim())});
  return trace;
}

FlowTrace integrate_flow(const SymMatrix& A0, int L, const TaskDistribution& dist, const FlowConfig& cfg) {
  if (!is_identity(dist.sigma_star())) throw std::invalid_argument("integrate_flow: requires Sigma* = I");
  if (A0.dim() != dist.d()) throw DimensionError("integrate_flow: A0 dimension mismatch");
  return integrate_flow(A0, L, sample_covariances(dist, cfg.m), cfg);
}

double comparison_ode(double f0, double t, int L) {
  if (L < 1) throw std::invalid_argument("comparison_ode: L must be >= 1");
  if (L == 1) return f0 * std::exp(-t / 16.0);
  const double l = L;
  const double q = (l - 1.0) / l;
  return std::pow(std::pow(f0, -q) + q * t / 16.0, -1.0 / q);
}

// ---------------------------------------------------------------- dominance

double dominance_rhs(double loss, int L) {
  return std::pow(loss, (2.0 * L - 1.0) / L) / 16.0;
}

DominanceReport scan_dominance(const TaskDistribution& dist, int L, const DominanceConfig& cfg) {
  if (!is_identity(dist.sigma_star())) throw std::invalid_argument("scan_dominance: requires Sigma* = I");
  if (!(cfg.spectrum_lo > 0.0 && cfg.spectrum_hi > cfg.spectrum_lo))
    throw std::invalid_argument("scan_dominance: bad spectrum range");
  const int d = dist.d();
  DominanceReport rep;
  rep.d = d;
  rep.n = dist.n();
  rep.L = L;
  rep.threshold = dominance_threshold(dist.n(), d, L);
  const CovarianceBatch batch = sample_covariances(dist, cfg.m);
  const double log_span = std::log(cfg.spectrum_hi / cfg.spectrum_lo);
  const double p = (2.0 * L - 1.0) / L;
  double min_ratio = std::numeric_limits<double>::infinity();
  for (std::int64_t i = 0; i < cfg.trials; ++i) {
    Stream rng(dist.seed(), StreamTag::kScan, static_cast<std::uint64_t>(i));
    Vector spectrum(d);
    for (int j = 0; j < d; ++j) spectrum(j) = cfg.spectrum_lo * std::exp(log_span * rng.uniform());
    const SymMatrix A = random_symmetric_with_spectrum(spectrum, rng);
    const LossAndGrad lg = loss_and_grad(A, L, batch);
    DominanceSample s;
    s.loss = lg.loss.mean;
    s.loss_std_error = lg.loss.std_error;
    s.grad_norm_sq = lg.grad.mat().squaredNorm();
    s.ratio = s.grad_norm_sq / std::pow(s.loss, p);
    s.qualifies = s.loss - cfg.ci_z * s.loss_std_error >= rep.threshold.used;
    if (s.qualifies) {
      ++rep.qualifying;
      min_ratio = std::min(min_ratio, s.ratio);
    }
    rep.samples.push_back(s);
  }
  rep.min_ratio = rep.qualifying > 0 ? min_ratio : 0.0;
  rep.low_coverage = rep.qualifying < cfg.min_qualifying;
  if (rep.low_coverage)
    rep.verdict = Verdict::kInconclusive;
  else
    rep.verdict = rep.min_ratio >= rep.required_ratio ? Verdict::kPass : Verdict::kFail;
  return rep;
}

nlohmann::json to_json(const DominanceReport& r) {
  return {{"d", r.d},
          {"n", r.n},
          {"L", r.L},
          {"threshold_from_delta", r.threshold.from_delta},
          {"threshold_from_n", r.threshold.from_n},
          {"threshold_used", r.threshold.used},
          {"trials", r.samples.size()},
          {"qualifying", r.qualifying},
          {"min_ratio", r.min_ratio},
          {"required_ratio", r.required_ratio},
          {"low_coverage", r.low_coverage},
          {"verdict", to_string(r.verdict)}};
}

// ---------------------------------------------------------------- training

Optimizer optimizer_from_string(const std::string& s) {
  if (s == "sgd") return Optimizer::kSgd;
  if (s == "adam") return Optimizer::kAdam;
  throw std::invalid_argument("unknown optimizer '" + s + "' (expected sgd or adam)");
}

std::string to_string(Optimizer o) { return o == Optimizer::kSgd ? "sgd" : "adam"; }

namespace {

struct Grads {
  std::vector<Matrix> A;
  std::vector<Vector> u;
};

struct AdamState {
  std::vector<Matrix> mA, vA;
  std::vector<Vector> mu, vu;
};

}  // namespace

FlowTrace train_sgd(const TaskDistribution& dist, const LayerParamsSeq& p0, const TrainConfig& cfg) {
  p0.validate();
  if (p0.d() != dist.d()) throw DimensionError("train_sgd: parameter dimension mismatch");
  if (cfg.steps < 1 || cfg.batch < 1) throw std::invalid_argument("train_sgd: steps and batch must be >= 1");
  if (!(cfg.lr > 0.0)) throw std::invalid_argument("train_sgd: lr must be positive");
  const int d = dist.d();
  const std::size_t L = p0.layers.size();
  LayerParamsSeq seq = p0;
  if (cfg.shared)
    for (auto& layer : seq.layers) layer = seq.layers.front();
  const std::size_t groups = cfg.shared ? 1 : L;

  std::vector<Matrix> A(groups);
  std::vector<Vector> u(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    A[g] = seq.layers[g].A.mat();
    u[g] = seq.layers[g].u;
  }
  AdamState adam{std::vector<Matrix>(groups, Matrix::Zero(d, d)), std::vector<Matrix>(groups, Matrix::Zero(d, d)),
                 std::vector<Vector>(groups, Vector::Zero(d)), std::vector<Vector>(groups, Vector::Zero(d))};

  FlowTrace trace;
  double ema = 0.0;
  double initial = 0.0;
  const std::size_t batch = static_cast<std::size_t>(cfg.batch);
  std::vector<double> losses(batch);
  std::vector<PredictionGradient> pgs(batch);

  auto record = [&](int step, double loss, double gnorm) {
    double sd = 0.0, un = 0.0;
    for (std::size_t g = 0; g < groups; ++g) {
      sd = std::max(sd, spec_dist(SymMatrix(A[g]), dist.sigma_star()));
      un = std::max(un, u[g].norm());
    }
    trace.rows.push_back({static_cast<double>(step), loss, ema, gnorm, sd, un});
  };

  for (int step = 0; step < cfg.steps; ++step) {
    const std::uint64_t base = static_cast<std::uint64_t>(step) * batch;
    parallel_for(batch, [&](std::size_t j) {
      Stream rng(dist.seed(), StreamTag::kTrainStep, base + j);
      const RegressionInstance inst = sample_instance(dist, rng);
      pgs[j] = prediction_gradient(inst, seq);
      const double err = pgs[j].prediction - inst.y_q;
      losses[j] = err * err;
      const double w = 2.0 * err;
      for (std::size_t t = 0; t < L; ++t) {
        pgs[j].dA[t] *= w;
        pgs[j].du[t] *= w;
      }
    });
    Grads g{std::vector<Matrix>(groups, Matrix::Zero(d, d)), std::vector<Vector>(groups, Vector::Zero(d))};
    double loss = 0.0;
    for (std::size_t j = 0; j < batch; ++j) {
      loss += losses[j];
      for (std::size_t t = 0; t < L; ++t) {
        const std::size_t k = cfg.shared ? 0 : t;
        g.A[k] += pgs[j].dA[t];
        g.u[k] += pgs[j].du[t];
      }
    }
    const double inv_b = 1.0 / static_cast<double>(batch);
    loss *= inv_b;
    double gsq = 0.0;
    for (std::size_t k = 0; k < groups; ++k) {
      g.A[k] *= inv_b;
      g.u[k] *= inv_b;
      if (!cfg.train_u) g.u[k].setZero();
      gsq += g.A[k].squaredNorm() + g.u[k].squaredNorm();
    }
    const double gnorm = std::sqrt(gsq);

    if (step == 0) {
      ema = loss;
      initial = loss;
    } else {
      ema = (1.0 - cfg.ema) * ema + cfg.ema * loss;
    }
    if (!std::isfinite(loss) || !std::isfinite(gnorm) || ema > cfg.divergence_factor * initial) {
      trace.aborted = true;
      trace.message = "diverged at step " + std::to_string(step);
      record(step, loss, gnorm);
      break;
    }
    if (step % cfg.record_every == 0 || step == cfg.steps - 1) record(step, loss, gnorm);

    const double progress = static_cast<double>(step) / static_cast<double>(cfg.steps);
    const double lr = cfg.lr * (cfg.lr_final_fraction +
                                (1.0 - cfg.lr_final_fraction) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
    for (std::size_t k = 0; k < groups; ++k) {
      if (cfg.optimizer == Optimizer::kSgd) {
        A[k] -= lr * g.A[k];
        u[k] -= lr * g.u[k];
        continue;
      }
      const double t1 = step + 1.0;
      const double c1 = 1.0 - std::pow(cfg.beta1, t1);
      const double c2 = 1.0 - std::pow(cfg.beta2, t1);
      adam.mA[k] = cfg.beta1 * adam.mA[k] + (1.0 - cfg.beta1) * g.A[k];
      adam.vA[k] = cfg.beta2 * adam.vA[k] + (1.0 - cfg.beta2) * g.A[k].cwiseAbs2();
      adam.mu[k] = cfg.beta1 * adam.mu[k] + (1.0 - cfg.beta1) * g.u[k];
      adam.vu[k] = cfg.beta2 * adam.vu[k] + (1.0 - cfg.beta2) * g.u[k].cwiseAbs2();
      A[k] -= lr * ((adam.mA[k] / c1).array() / ((adam.vA[k] / c2).array().sqrt() + cfg.adam_eps)).matrix();
      if (cfg.train_u)
        u[k] -= lr * ((adam.mu[k] / c1).array() / ((adam.vu[k] / c2).array().sqrt() + cfg.adam_eps)).matrix();
    }
    for (std::size_t t = 0; t < L; ++t) {
      const std::size_t k = cfg.shared ? 0 : t;
      seq.layers[t] = LayerParams{SymMatrix(A[k]), u[k]};
    }
  }
  trace.final_params = seq;
  return trace;
}

LoopedParams random_init(int d, int L, double scale_A, double scale_u, std::uint64_t seed) {
  Stream rng(seed, StreamTag::kInit, 0);
  const Matrix G = rng.gaussian_matrix(d, d);
  const Matrix A = scale_A * (Matrix::Identity(d, d) + 0.01 * 0.5 * (G + G.transpose()));
  LoopedParams p{SymMatrix(A), scale_u * rng.gaussian_vector(d), L};
  p.validate();
  return p;
}

LossEstimate evaluate_loss(const LayerParamsSeq& p, const TaskDistribution& dist, std::int64_t m,
                           const std::optional<SymMatrix>& cov_out) {
  if (m < 1) throw std::invalid_argument("evaluate_loss: m must be >= 1");
  p.validate();
  const int d = dist.d();
  Matrix root = dist.sigma_star_sqrt().mat();
  if (cov_out) {
    if (cov_out->dim() != d) throw DimensionError("evaluate_loss: cov_out dimension mismatch");
    root = psd_sqrt(*cov_out).mat();
  }
  const Matrix& w_root = dist.sigma_star_inv_sqrt().mat();
  std::vector<double> values(static_cast<std::size_t>(m));
  parallel_for(values.size(), [&](std::size_t i) {
    Stream rng(dist.seed(), StreamTag::kEval, i);
    const Matrix z = rng.gaussian_matrix(d, dist.n());
    const Vector zq = rng.gaussian_vector(d);
    const Vector zw = rng.gaussian_vector(d);
    const RegressionInstance inst = make_instance(root * z, root * zq, w_root * zw);
    const double err = forward_multilayer(inst, p) - inst.y_q;
    values[i] = err * err;
  });
  return summarize(values, EstimatorKind::kEmpirical);
}

LayerParamsSeq with_loops(const LayerParamsSeq& trained, int L) {
  trained.validate();
  if (L < 1) throw std::invalid_argument("with_loops: L must be >= 1");
  LayerParamsSeq out;
  out.layers.assign(static_cast<std::size_t>(L), trained.layers.front());
  return out;
}

}  // namespace looptf
