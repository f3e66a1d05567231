#include "looptf/acceptance.hpp"

#include "looptf/delta.hpp"
#include "looptf/loss.hpp"
#include "looptf/model.hpp"
#include "looptf/moments.hpp"
#include "looptf/rng.hpp"
#include "looptf/tasks.hpp"
#include "looptf/theory.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <tuple>

namespace looptf {

namespace {

constexpr int kReproDim = 5;
constexpr int kReproSteps = 10000;

std::string num(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

int uniform_int(Stream& rng, int lo, int hi) {
  const int span = hi - lo + 1;
  return std::min(hi, lo + static_cast<int>(rng.uniform() * span));
}

Vector uniform_spectrum(Stream& rng, int d, double lo, double hi) {
  Vector v(d);
  for (int i = 0; i < d; ++i) v(i) = lo + (hi - lo) * rng.uniform();
  return v;
}

SymMatrix random_spd(Stream& rng, int d, double lo, double hi) {
  return random_symmetric_with_spectrum(uniform_spectrum(rng, d, lo, hi), rng);
}

/// A report with a single asserted inequality.
BoundReport single(const std::string& id, const std::string& name, double lhs, double rhs,
                   nlohmann::json params = nlohmann::json::object()) {
  BoundReport r;
  r.lemma_id = id;
  r.params = std::move(params);
  r.add(name, lhs, rhs);
  r.finalize();
  return r;
}

BoundReport info(const std::string& id, const std::string& name, double lhs, double rhs,
                 nlohmann::json params = nlohmann::json::object()) {
  BoundReport r;
  r.lemma_id = id;
  r.params = std::move(params);
  r.add(name, lhs, rhs, false);
  r.verdict = Verdict::kAdvisory;
  return r;
}

struct WindowStats {
  std::vector<double> mean;
  std::vector<double> se;
};

/// Means of the per-record batch losses over `windows` equal windows.
WindowStats window_stats(const FlowTrace& t, int windows) {
  WindowStats w;
  const std::size_t rows = t.rows.size();
  const std::size_t per = rows / static_cast<std::size_t>(windows);
  for (int k = 0; k < windows; ++k) {
    const std::size_t b = static_cast<std::size_t>(k) * per;
    const std::size_t e = (k == windows - 1) ? rows : b + per;
    double s = 0.0;
    for (std::size_t i = b; i < e; ++i) s += t.rows[i].loss;
    const double cnt = static_cast<double>(e - b);
    const double mean = s / cnt;
    double ss = 0.0;
    for (std::size_t i = b; i < e; ++i) ss += (t.rows[i].loss - mean) * (t.rows[i].loss - mean);
    w.mean.push_back(mean);
    w.se.push_back(cnt > 1 ? std::sqrt(ss / (cnt - 1.0) / cnt) : 0.0);
  }
  return w;
}

// ------------------------------------------------------------------ criteria

CriterionResult c1_expressivity(AcceptanceContext& ctx) {
  CriterionResult res;
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    Stream rng(ctx.seed(), StreamTag::kConfig, 1000 + static_cast<std::uint64_t>(i));
    const int d = uniform_int(rng, 1, 8);
    const int n = uniform_int(rng, 1, 32);
    const int L = uniform_int(rng, 1, 6);
    const TaskDistribution dist = TaskDistribution::isotropic(d, n, ctx.seed());
    const RegressionInstance inst = sample_instance(dist, rng);
    const SymMatrix A = random_symmetric_with_spectrum(uniform_spectrum(rng, d, 0.0, 2.0), rng);
    const double pred = forward_looped(inst, construct_expressive_params(A, L));
    const Vector wL = gd_oracle(inst, A, L).back();
    const double ref = wL.dot(inst.x_q);
    const double scale = std::max({std::abs(ref), wL.norm() * inst.x_q.norm(), 1e-300});
    worst = std::max(worst, std::abs(pred - ref) / scale);
  }
  res.checks.push_back(single("expressivity", "max relative |TF - x_q . w_L|", worst, 1e-9, {{"configs", 100}}));
  res.summary = "100 configs, max rel err " + num(worst) + " <= 1e-9";
  return res;
}

CriterionResult c2_recursion(AcceptanceContext& ctx) {
  CriterionResult res;
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    Stream rng(ctx.seed(), StreamTag::kConfig, 2000 + static_cast<std::uint64_t>(i));
    const int d = uniform_int(rng, 1, 4);
    const int L = uniform_int(rng, 1, 4);
    const int n = uniform_int(rng, 1, 32);
    const TaskDistribution dist = TaskDistribution::isotropic(d, n, ctx.seed());
    const RegressionInstance inst = sample_instance(dist, rng);
    LayerParamsSeq seq;
    for (int t = 0; t < L; ++t) {
      const SymMatrix A = random_symmetric_with_spectrum(uniform_spectrum(rng, d, -0.5, 1.5), rng);
      Vector u = 0.5 * rng.gaussian_vector(d);
      if (i % 5 == 0) u.setZero();
      seq.layers.push_back({A, u});
    }
    const auto trace = forward_trace(inst, seq);
    const RecursionResult rec = recursion_formula(inst, seq);
    for (int t = 0; t <= L; ++t) {
      const Matrix& z = trace[static_cast<std::size_t>(t)].z;
      const Vector row = z.row(d).head(n).transpose();
      const Vector& ref_row = rec.y_rows[static_cast<std::size_t>(t)];
      const double row_scale = std::max(1.0, ref_row.cwiseAbs().maxCoeff());
      worst = std::max(worst, (row - ref_row).cwiseAbs().maxCoeff() / row_scale);
      const double pred = -z(d, n);
      const double ref = rec.y_q[static_cast<std::size_t>(t)];
      worst = std::max(worst, std::abs(pred - ref) / std::max(1.0, std::abs(ref)));
    }
    const double ml = forward_multilayer(inst, seq);
    worst = std::max(worst, std::abs(ml - rec.y_q.back()) / std::max(1.0, std::abs(rec.y_q.back())));
  }
  res.checks.push_back(single("recursion", "max relative |multilayer - recursion|", worst, 1e-9, {{"configs", 50}}));
  res.summary = "50 sequences, max rel err " + num(worst) + " <= 1e-9";
  return res;
}

CriterionResult c3_closed_form(AcceptanceContext& ctx) {
  CriterionResult res;
  constexpr std::int64_t m = 100000;
  int ok = 0;
  double worst = 0.0;
  double worst_cond = 0.0;
  for (int i = 0; i < 20; ++i) {
    Stream rng(ctx.seed(), StreamTag::kConfig, 3000 + static_cast<std::uint64_t>(i));
    const int d = uniform_int(rng, 1, 4);
    const int n = uniform_int(rng, 24, 64);
    const int L = uniform_int(rng, 1, 3);
    const SymMatrix sigma_star = random_spd(rng, d, 0.5, 1.5);
    const SymMatrix B = random_symmetric_with_spectrum(uniform_spectrum(rng, d, 0.5, 1.0), rng);
    const TaskDistribution dist(d, n, sigma_star, mix64(ctx.seed() + 3000 + static_cast<std::uint64_t>(i)));
    const Matrix& r = dist.sigma_star_inv_sqrt().mat();
    const SymMatrix A(r * B.mat() * r);
    const LoopedParams p{A, Vector::Zero(d), L};
    const LossEstimate emp = empirical_loss(p, dist, m);
    const LossEstimate cf = closedform_loss(A, L, dist, m);
    const double tol = 4.0 * (emp.std_error + cf.std_error);
    const double gap = std::abs(emp.mean - cf.mean);
    nlohmann::json params{{"d", d}, {"n", n}, {"L", L}, {"m", m}, {"empirical", emp.mean},
                          {"empirical_se", emp.std_error}, {"closedform", cf.mean}, {"closedform_se", cf.std_error}};
    BoundReport rep = single("closed_form_config_" + std::to_string(i), "|empirical - closedform| <= 4 (se_e + se_c)",
                             gap, tol, params);
    if (rep.passed()) ++ok;
    worst = std::max(worst, gap / tol);
    res.checks.push_back(std::move(rep));
    const LossEstimate cond = conditional_loss(p, dist, m);
    const double cond_tol = 4.0 * (emp.std_error + cond.std_error);
    worst_cond = std::max(worst_cond, std::abs(emp.mean - cond.mean) / cond_tol);
    res.checks.push_back(info("conditional_config_" + std::to_string(i), "|empirical - conditional| (exact loss)",
                              std::abs(emp.mean - cond.mean), cond_tol, params));
  }
  {
    const TaskDistribution dist = TaskDistribution::isotropic(3, 50, ctx.seed());
    const LossEstimate z = closedform_loss(SymMatrix::zero(3), 2, dist, m);
    res.checks.push_back(single("anchor_A0", "|closedform(A=0) - d|", std::abs(z.mean - 3.0),
                                4.0 * z.std_error + 1e-12, {{"mean", z.mean}, {"se", z.std_error}}));
    res.checks.push_back(single("anchor_A0_se", "stderr of constant integrand", z.std_error, 0.0));
  }
  {
    const TaskDistribution dist = TaskDistribution::isotropic(1, 100, ctx.seed());
    const LossEstimate a = closedform_loss(SymMatrix::identity(1), 1, dist, m);
    res.checks.push_back(single("anchor_chi2", "|closedform - 2/n|", std::abs(a.mean - 0.02), 4.0 * a.std_error,
                                {{"mean", a.mean}, {"se", a.std_error}}));
  }
  res.summary = std::to_string(ok) + "/20 configs within 4x combined stderr (worst gap/tol " + num(worst, 3) +
                "); exact-loss estimator worst " + num(worst_cond, 3);
  return res;
}

CriterionResult c4_gradient(AcceptanceContext& ctx) {
  CriterionResult res;
  constexpr double h = 1e-5;
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    Stream rng(ctx.seed(), StreamTag::kConfig, 4000 + static_cast<std::uint64_t>(i));
    const int d = uniform_int(rng, 1, 4);
    const int L = 1 + i % 4;
    const int n = uniform_int(rng, d + 1, 64);
    const Matrix X = rng.gaussian_matrix(d, n);
    const CovarianceSample cs = make_covariance_sample(X * X.transpose() / n);
    const SymMatrix A = random_symmetric_with_spectrum(uniform_spectrum(rng, d, -0.5, 1.5), rng);
    const Matrix G = trace_grad_sample(A, L, cs);
    double num2 = 0.0, den2 = 0.0;
    for (int a = 0; a < d; ++a) {
      for (int b = a; b < d; ++b) {
        Matrix E = Matrix::Zero(d, d);
        E(a, b) = 1.0;
        E(b, a) = 1.0;
        const double fp = trace_loss_sample(SymMatrix(A.mat() + h * E), L, cs);
        const double fm = trace_loss_sample(SymMatrix(A.mat() - h * E), L, cs);
        const double fd = (fp - fm) / (2.0 * h);
        const double an = (a == b) ? G(a, a) : 2.0 * G(a, b);
        num2 += (fd - an) * (fd - an);
        den2 += an * an;
      }
    }
    worst = std::max(worst, std::sqrt(num2 / std::max(den2, 1e-300)));
  }
  res.checks.push_back(single("grad_per_sample", "max relative |analytic - central FD|", worst, 1e-5));

  double worst_mc = 0.0;
  for (int i = 0; i < 5; ++i) {
    Stream rng(ctx.seed(), StreamTag::kConfig, 4100 + static_cast<std::uint64_t>(i));
    const int d = uniform_int(rng, 2, 4);
    const int L = 1 + i % 4;
    const TaskDistribution dist(d, uniform_int(rng, 16, 64), random_spd(rng, d, 0.5, 1.5),
                                mix64(ctx.seed() + 4100 + static_cast<std::uint64_t>(i)));
    const CovarianceBatch batch = sample_covariances(dist, 2000);
    const SymMatrix A(dist.sigma_star_inv().mat() *
                      random_symmetric_with_spectrum(uniform_spectrum(rng, d, 0.3, 1.2), rng).mat());
    const Matrix G = grad_loss(A, L, batch).mat();
    double num2 = 0.0, den2 = 0.0;
    for (int a = 0; a < d; ++a) {
      for (int b = a; b < d; ++b) {
        Matrix E = Matrix::Zero(d, d);
        E(a, b) = 1.0;
        E(b, a) = 1.0;
        const double fp = closedform_loss(SymMatrix(A.mat() + h * E), L, batch).mean;
        const double fm = closedform_loss(SymMatrix(A.mat() - h * E), L, batch).mean;
        const double fd = (fp - fm) / (2.0 * h);
        const double an = (a == b) ? G(a, a) : 2.0 * G(a, b);
        num2 += (fd - an) * (fd - an);
        den2 += an * an;
      }
    }
    worst_mc = std::max(worst_mc, std::sqrt(num2 / std::max(den2, 1e-300)));
  }
  res.checks.push_back(single("grad_mc_crn", "max relative |MC gradient - CRN FD|", worst_mc, 1e-4));
  res.summary = "per-sample rel err " + num(worst) + " <= 1e-5; MC/CRN rel err " + num(worst_mc) + " <= 1e-4";
  return res;
}

double chi2_moment(int n, int k) {
  double r = 1.0;
  for (int j = 0; j < k; ++j) r *= (n + 2.0 * j) / n;
  return r;
}

CriterionResult c5_moment_oracles(AcceptanceContext& ctx) {
  CriterionResult res;
  double worst_chi = 0.0;
  for (int k = 1; k <= 4; ++k)
    for (int n = 1; n <= 64; ++n) {
      const double exact = moment_exact(SymMatrix::identity(1), n, k).moment(0, 0);
      worst_chi = std::max(worst_chi, std::abs(exact - chi2_moment(n, k)) / chi2_moment(n, k));
    }
  res.checks.push_back(single("chi2_pairing", "max rel |pairing - chi-square|, d=1, k<=4, n<=64", worst_chi, 1e-12));

  double worst_multi = 0.0;
  for (int k = 1; k <= 4; ++k)
    for (int n : {1, 2, 3, 5, 8}) {
      const double exact = moment_exact_multiindex(SymMatrix::identity(1), n, k).moment(0, 0);
      worst_multi = std::max(worst_multi, std::abs(exact - chi2_moment(n, k)) / chi2_moment(n, k));
    }
  for (int d = 2; d <= 3; ++d)
    for (int k = 1; k <= 3; ++k)
      for (int n : {1, 2, 4}) {
        Stream rng(ctx.seed(), StreamTag::kConfig, 5000 + static_cast<std::uint64_t>(100 * d + 10 * k + n));
        const SymMatrix s = random_spd(rng, d, 0.5, 2.0);
        const Matrix a = moment_exact(s, n, k).moment.mat();
        const Matrix b = moment_exact_multiindex(s, n, k).moment.mat();
        worst_multi = std::max(worst_multi, (a - b).norm() / b.norm());
      }
  res.checks.push_back(single("multiindex_enumeration", "max rel |multi-index - component count|", worst_multi, 1e-12));

  double worst_wishart = 0.0;
  for (int d = 1; d <= 3; ++d)
    for (int n : {1, 2, 4, 16, 64}) {
      Stream rng(ctx.seed(), StreamTag::kConfig, 5500 + static_cast<std::uint64_t>(100 * d + n));
      const SymMatrix s = random_spd(rng, d, 0.5, 2.0);
      const Matrix& S = s.mat();
      const Matrix ref = (n + 1.0) / n * S * S + S.trace() / n * S;
      worst_wishart = std::max(worst_wishart, (moment_exact(s, n, 2).moment.mat() - ref).norm() / ref.norm());
    }
  res.checks.push_back(single("wishart_k2", "max rel |pairing - Wishart second moment|", worst_wishart, 1e-12));

  const std::int64_t count3 = moment_exact(SymMatrix::identity(1), 4, 3).pairings_per_expectation;
  const std::int64_t count4 = moment_exact(SymMatrix::identity(1), 4, 4).pairings_per_expectation;
  res.checks.push_back(single("pairings_k3", "|count - 15|", std::abs(static_cast<double>(count3 - 15)), 0.0));
  res.checks.push_back(single("pairings_k4", "|count - 105|", std::abs(static_cast<double>(count4 - 105)), 0.0));

  double worst_mc = 0.0;
  auto mc_check = [&](const std::string& id, const SymMatrix& s, int n, int k, const Matrix& ref) {
    const MomentResult mc = moment_mc(s, n, k, 100000, mix64(ctx.seed() + 5900 + static_cast<std::uint64_t>(k)));
    double ratio = 0.0;
    for (int a = 0; a < s.dim(); ++a)
      for (int b = 0; b < s.dim(); ++b)
        ratio = std::max(ratio, std::abs(mc.moment(a, b) - ref(a, b)) / (4.0 * mc.std_error(a, b)));
    worst_mc = std::max(worst_mc, ratio);
    res.checks.push_back(single(id, "max |MC - exact| / (4 se)", ratio, 1.0));
  };
  {
    Stream rng(ctx.seed(), StreamTag::kConfig, 5800);
    const SymMatrix s = random_spd(rng, 2, 0.5, 2.0);
    mc_check("mc_d2_n8_k3", s, 8, 3, moment_exact(s, 8, 3).moment.mat());
    mc_check("mc_k1", s, 8, 1, s.mat());
    mc_check("mc_d1_n4_k3", SymMatrix::identity(1), 4, 3, Matrix::Constant(1, 1, 3.0));
  }
  res.summary = "chi-square " + num(worst_chi, 2) + ", Wishart " + num(worst_wishart, 2) + ", multi-index " +
                num(worst_multi, 2) + " (<= 1e-12); pairings 15/105; MC worst " + num(worst_mc, 3) + " x 4se";
  return res;
}

std::vector<SymMatrix> envelope_sigmas(AcceptanceContext& ctx, int d) {
  Stream rng(ctx.seed(), StreamTag::kConfig, 6000 + static_cast<std::uint64_t>(d));
  return {SymMatrix::identity(d), random_spd(rng, d, 0.5, 2.0)};
}

CriterionResult c6_moment_bounds(AcceptanceContext& ctx) {
  CriterionResult res;
  int checked = 0, skipped = 0, failed = 0;
  double min_slack = 1e300;
  for (int d = 1; d <= 3; ++d)
    for (const SymMatrix& s : envelope_sigmas(ctx, d))
      for (int k = 1; k <= 4; ++k)
        for (int n : {16, 64, 256}) {
          BoundReport r = check_moment_bounds(s, n, k);
          if (r.verdict == Verdict::kPreconditionFailed) {
            ++skipped;
            continue;
          }
          ++checked;
          if (!r.passed()) ++failed;
          min_slack = std::min(min_slack, r.min_slack());
          res.checks.push_back(std::move(r));
        }
  res.summary = std::to_string(checked - failed) + "/" + std::to_string(checked) +
                " cases with n >= 4k^2d^2 pass (min slack " + num(min_slack, 3) + "); " + std::to_string(skipped) +
                " cases outside the precondition";
  return res;
}

CriterionResult c7_eig_approx(AcceptanceContext& ctx) {
  CriterionResult res;
  int checked = 0, skipped = 0, failed = 0;
  double min_slack = 1e300;
  for (int d = 1; d <= 3; ++d)
    for (const SymMatrix& s : envelope_sigmas(ctx, d)) {
      const std::vector<SymMatrix> As{spd_inverse(s), SymMatrix::scaled_identity(d, 0.5),
                                      SymMatrix::scaled_identity(d, 1.5)};
      for (const SymMatrix& A : As)
        for (int k = 1; k <= 4; ++k)
          for (int n : {16, 64, 256}) {
            BoundReport r = check_eig_approx(A, s, n, k);
            if (r.verdict == Verdict::kPreconditionFailed) {
              ++skipped;
              continue;
            }
            ++checked;
            if (!r.passed()) ++failed;
            min_slack = std::min(min_slack, r.min_slack());
            res.checks.push_back(std::move(r));
          }
    }
  res.summary = std::to_string(checked - failed) + "/" + std::to_string(checked) +
                " cases inside the band (min slack " + num(min_slack, 3) + "); " + std::to_string(skipped) +
                " cases outside the precondition";
  return res;
}

CriterionResult c8_dominance(AcceptanceContext& ctx) {
  CriterionResult res;
  std::ostringstream sum;
  for (int d : {2, 3})
    for (int L : {2, 3}) {
      const TaskDistribution dist = TaskDistribution::isotropic(d, 10000, mix64(ctx.seed() + 8000 + 10 * d + L));
      const DominanceReport rep = scan_dominance(dist, L, DominanceConfig{});
      BoundReport b;
      b.lemma_id = "dominance_d" + std::to_string(d) + "_L" + std::to_string(L);
      b.params = to_json(rep);
      b.add("1/16 <= min ratio", rep.required_ratio, rep.min_ratio);
      b.add("200 <= qualifying samples", 200.0, static_cast<double>(rep.qualifying));
      b.finalize();
      res.checks.push_back(std::move(b));
      sum << "d" << d << "L" << L << ": min " << num(rep.min_ratio, 3) << " over " << rep.qualifying << "; ";
      if (res.checks.back().passed() == false) sum << "(FAIL) ";
    }
  res.summary = sum.str() + "required >= 0.0625";
  return res;
}

CriterionResult c9_flow(AcceptanceContext& ctx) {
  CriterionResult res;
  const std::vector<double> xis{0.1, 0.01};
  double worst_ratio = 0.0;  // loss(t*) / xi
  double worst_ode = 0.0;    // f / g
  int band_fail = 0;
  double ratio_lo = 1e300, ratio_hi = 0.0;
  for (int d : {2, 3})
    for (int L : {2, 3}) {
      const TaskDistribution dist = TaskDistribution::isotropic(d, 10000, mix64(ctx.seed() + 9000 + 10 * d + L));
      const CovarianceBatch batch = sample_covariances(dist, 10000);
      const CovarianceBatch fresh = sample_covariances(dist.with_seed(mix64(dist.seed() + 1)), 100000);
      const DominanceThreshold thr = dominance_threshold(dist.n(), d, L);
      FlowConfig cfg;
      for (double xi : xis) cfg.checkpoints.push_back(flow_time_bound(xi, L));
      cfg.t_end = *std::max_element(cfg.checkpoints.begin(), cfg.checkpoints.end());
      for (int s = 0; s < 5; ++s) {
        Stream rng(dist.seed(), StreamTag::kInit, static_cast<std::uint64_t>(s));
        SymMatrix A0;
        double f0 = 0.0;
        do {
          A0 = random_symmetric_with_spectrum(uniform_spectrum(rng, d, 0.05, 1.5), rng);
          f0 = closedform_loss(A0, L, batch).mean;
        } while (f0 > d);
        const FlowTrace tr = integrate_flow(A0, L, batch, cfg);
        const std::string tag = "d" + std::to_string(d) + "_L" + std::to_string(L) + "_s" + std::to_string(s);
        if (ctx.trace_sink) ctx.trace_sink("flow_" + tag + ".csv", tr);
        for (std::size_t c = 0; c < xis.size(); ++c) {
          const Snapshot& snap = tr.snapshots.at(c);
          const LossEstimate pop = closedform_loss(snap.A, L, fresh);
          nlohmann::json params{{"d", d}, {"L", L}, {"start", s}, {"xi", xis[c]}, {"t_star", snap.time},
                                {"loss", pop.mean}, {"loss_se", pop.std_error},
                                {"xi_precondition_2(4delta)^2L", thr.from_delta}};
          res.checks.push_back(single("flow_rate_" + tag + "_xi" + num(xis[c]), "L(A(t*)) + 4se <= xi",
                                      pop.mean + 4.0 * pop.std_error, xis[c], params));
          worst_ratio = std::max(worst_ratio, (pop.mean + 4.0 * pop.std_error) / xis[c]);
        }
        double ode = 0.0;
        for (const TraceRow& r : tr.rows) ode = std::max(ode, r.loss / comparison_ode(f0, r.step_or_time, L));
        worst_ode = std::max(worst_ode, ode);
        res.checks.push_back(single("flow_ode_" + tag, "max f(t)/g(t)", ode, 1.05));
        const double xi_end = xis.back();
        const DeltaParams dp = delta_params(dist.n(), d, L);
        const double w = 8.0 * (1.0 + 4.0 * std::pow(d, 1.0 / (2.0 * L))) * std::pow(xi_end, 1.0 / (2.0 * L));
        const BandCheck band = loewner_band(tr.snapshots.back().A, SymMatrix::identity(d), composed_lower(w, dp.c_opt),
                                            (1.0 + w) * (1.0 + dp.c_opt));
        BoundReport b;
        b.lemma_id = "flow_band_" + tag;
        b.params = {{"w", w}, {"c_opt", dp.c_opt}, {"min_ratio", band.min_ratio}, {"max_ratio", band.max_ratio}};
        b.add("band lower", composed_lower(w, dp.c_opt), band.min_ratio);
        b.add("band upper", band.max_ratio, (1.0 + w) * (1.0 + dp.c_opt));
        b.finalize();
        if (!b.passed()) ++band_fail;
        ratio_lo = std::min(ratio_lo, band.min_ratio);
        ratio_hi = std::max(ratio_hi, band.max_ratio);
        res.checks.push_back(std::move(b));
      }
    }
  res.summary = "20 flows: worst (loss+4se)/xi " + num(worst_ratio, 3) + ", worst f/g " + num(worst_ode, 3) +
                " (<= 1.05), band failures " + std::to_string(band_fail) + " (end-state eigenvalues in [" +
                num(ratio_lo, 3) + ", " + num(ratio_hi, 3) + "])";
  return res;
}

CriterionResult c10_global_minimizer(AcceptanceContext& ctx) {
  CriterionResult res;
  std::ostringstream sum;
  const std::vector<std::tuple<int, int, int>> cases{{1, 1, 1024}, {2, 1, 16384}, {1, 2, 65536}};
  int idx = 0;
  for (const auto& [d, L, n] : cases) {
    Stream rng(ctx.seed(), StreamTag::kConfig, 10000 + static_cast<std::uint64_t>(idx++));
    const TaskDistribution dist(d, n, random_spd(rng, d, 0.5, 2.0), mix64(ctx.seed() + 10000 + idx));
    BoundReport r = verify_global_minimizer(dist.sigma_star_inv(), Vector::Zero(d), L, dist);
    r.lemma_id = "global_minimizer_d" + std::to_string(d) + "_L" + std::to_string(L) + "_n" + std::to_string(n);
    sum << r.lemma_id << " loss " << num(r.params["loss"].get<double>(), 3) << " <= "
        << num(r.params["loss_bound_opt"].get<double>(), 3) << "; ";
    res.checks.push_back(std::move(r));
  }
  const FlowTrace& tr = ctx.training_run(20, 5);
  const LayerParams& p = tr.final_params.layers.front();
  const TaskDistribution dist = TaskDistribution::isotropic(kReproDim, 20, ctx.seed());
  BoundReport r = verify_global_minimizer(p.A, p.u, 5, dist);
  BoundReport trained;
  trained.lemma_id = "trained_band_and_u";
  trained.params = r.params;
  for (const Bound& b : r.bounds)
    if (b.name.find("Sigma") != std::string::npos || b.name.find("|u|") != std::string::npos) trained.bounds.push_back(b);
  trained.finalize();
  sum << "trained d=5 n=20 L=5: band c=" << num(r.params["c_opt"].get<double>(), 3) << ", |u|=" << num(p.u.norm(), 3)
      << " <= 1e-2";
  res.checks.push_back(std::move(r));
  res.checks.back().verdict = Verdict::kAdvisory;
  res.checks.push_back(std::move(trained));
  res.summary = sum.str();
  return res;
}

CriterionResult c11_training(AcceptanceContext& ctx) {
  CriterionResult res;
  std::ostringstream sum;
  // (a) window means of the batch loss never increase beyond 3 combined stderr.
  int mono_fail = 0;
  for (int L : {1, 2, 5, 10}) {
    const FlowTrace& tr = ctx.training_run(20, L);
    const WindowStats w = window_stats(tr, 10);
    BoundReport b;
    b.lemma_id = "11a_monotone_L" + std::to_string(L);
    for (std::size_t k = 1; k < w.mean.size(); ++k)
      b.add("window " + std::to_string(k) + " <= window " + std::to_string(k - 1) + " + 3se", w.mean[k],
            w.mean[k - 1] + 3.0 * std::hypot(w.se[k], w.se[k - 1]));
    b.add("no divergence", tr.aborted ? 1.0 : 0.0, 0.0);
    b.finalize();
    if (!b.passed()) ++mono_fail;
    res.checks.push_back(std::move(b));
  }
  sum << "(a) monotone failures " << mono_fail << "; ";

  // (b) distance to identity at L = 5.
  const FlowTrace& main = ctx.training_run(20, 5);
  const SymMatrix& A5 = main.final_params.layers.front().A;
  const double dist5 = spectral_norm(Matrix(A5.mat() - Matrix::Identity(kReproDim, kReproDim)));
  const EigDecomp e5 = eig_sym(A5);
  const double scale = e5.eigenvalues.mean();
  res.checks.push_back(single("11b_distance_to_identity", "||A - I|| <= 0.1", dist5, 0.1,
                              {{"eigenvalues", std::vector<double>(e5.eigenvalues.data(), e5.eigenvalues.data() + 5)}}));
  {
    std::ifstream in(std::string(LOOPTF_FIXTURE_DIR) + "/pilot_train_d5_n20_L5.json");
    if (!in) throw std::runtime_error("missing pilot fixture pilot_train_d5_n20_L5.json");
    const nlohmann::json fx = nlohmann::json::parse(in);
    const double pilot = fx.at("measured_distance_to_identity").get<double>();
    BoundReport b;
    b.lemma_id = "11b_pilot_fixture";
    b.params = {{"pilot_distance", pilot}, {"fixture_tolerance", fx.at("tolerance")}};
    b.add("fixture tolerance == 0.1", std::abs(fx.at("tolerance").get<double>() - 0.1), 0.0);
    b.add("|distance - pilot distance| <= 0.02", std::abs(dist5 - pilot), 0.02);
    b.finalize();
    res.checks.push_back(std::move(b));
  }
  res.checks.push_back(info("11b_scale_free_distance", "||A/mean(eig) - I||",
                            spectral_norm(Matrix(A5.mat() / scale - Matrix::Identity(kReproDim, kReproDim))), 0.1));
  sum << "(b) ||A-I|| " << num(dist5, 3) << " (eig mean " << num(scale, 3) << "); ";

  // (c) final loss non-increasing in L.
  const TaskDistribution eval_dist = TaskDistribution::isotropic(kReproDim, 20, mix64(ctx.seed() + 11000));
  std::vector<LossEstimate> finals;
  const std::vector<int> loops{1, 2, 5, 10};
  for (int L : loops) finals.push_back(evaluate_loss(ctx.training_run(20, L).final_params, eval_dist, 100000));
  BoundReport c;
  c.lemma_id = "11c_loss_vs_loops";
  for (std::size_t i = 1; i < finals.size(); ++i) {
    c.add("loss(L=" + std::to_string(loops[i]) + ") <= loss(L=" + std::to_string(loops[i - 1]) + ") + 3se",
          finals[i].mean, finals[i - 1].mean + 3.0 * std::hypot(finals[i].std_error, finals[i - 1].std_error));
    c.params["loss_L" + std::to_string(loops[i - 1])] = finals[i - 1].mean;
  }
  c.params["loss_L10"] = finals.back().mean;
  c.finalize();
  sum << "(c) eval loss";
  for (const auto& f : finals) sum << ' ' << num(f.mean, 3);
  sum << "; ";
  res.checks.push_back(std::move(c));

  // (d) convergence for n in {3, 5, 10, 20}.
  int conv_fail = 0;
  for (int n : {3, 5, 10, 20}) {
    const FlowTrace& tr = ctx.training_run(n, 5);
    const WindowStats w = window_stats(tr, 10);
    const std::size_t tail = std::max<std::size_t>(1, tr.rows.size() / 10);
    double lo = 1e300, hi = -1e300;
    for (std::size_t i = tr.rows.size() - tail; i < tr.rows.size(); ++i) {
      lo = std::min(lo, tr.rows[i].spec_dist_to_identity);
      hi = std::max(hi, tr.rows[i].spec_dist_to_identity);
    }
    BoundReport b;
    b.lemma_id = "11d_converged_n" + std::to_string(n);
    b.params = {{"final_window_loss", w.mean.back()}, {"final_distance", tr.rows.back().spec_dist_to_identity}};
    b.add("|last window - previous window| <= 3se", std::abs(w.mean[9] - w.mean[8]), 3.0 * std::hypot(w.se[9], w.se[8]));
    b.add("last window <= first window", w.mean[9], w.mean[0]);
    b.add("distance range over final 10% <= 0.05", hi - lo, 0.05);
    b.finalize();
    if (!b.passed()) ++conv_fail;
    res.checks.push_back(std::move(b));
  }
  sum << "(d) convergence failures " << conv_fail;

  // Multilayer baseline, reported only.
  const FlowTrace& ml = ctx.training_run(20, 5, false);
  const LossEstimate ml_loss = evaluate_loss(ml.final_params, eval_dist, 100000);
  res.checks.push_back(info("multilayer_baseline_L5", "multilayer eval loss vs looped", ml_loss.mean, finals[2].mean));
  sum << "; multilayer L=5 loss " << num(ml_loss.mean, 3);
  res.summary = sum.str();
  return res;
}

CriterionResult c12_ood(AcceptanceContext& ctx) {
  CriterionResult res;
  std::ostringstream sum;
  {
    const int d = 3, L = 3, n = 10000;
    const TaskDistribution dist = TaskDistribution::isotropic(d, n, mix64(ctx.seed() + 12000));
    Stream rng(ctx.seed(), StreamTag::kConfig, 12000);
    const SymMatrix cov_out = random_symmetric_with_spectrum(uniform_spectrum(rng, d, 0.6, 1.4), rng);
    int satisfied = 0, held = 0;
    double worst = 0.0;
    for (std::uint64_t i = 0; satisfied < 100 && i < 200; ++i) {
      const RegressionInstance inst = sample_ood_instance(dist, cov_out, i);
      const BoundReport r = ood_check(inst, dist.sigma_star_inv(), L, dist, 0.5);
      if (r.verdict == Verdict::kPreconditionFailed) continue;
      ++satisfied;
      if (r.passed()) ++held;
      worst = std::max(worst, r.bounds.front().lhs / r.bounds.front().rhs);
    }
    BoundReport b;
    b.lemma_id = "12a_ood_bound";
    b.params = {{"d", d}, {"L", L}, {"n", n}, {"zeta", 0.5}, {"sigma_out_normalization", "1/n"}};
    b.add("100 <= sandwich-satisfying instances", 100.0, satisfied);
    b.add("violations", static_cast<double>(satisfied - held), 0.0);
    b.finalize();
    res.checks.push_back(std::move(b));
    sum << "(a) bound holds on " << held << "/" << satisfied << " (max lhs/rhs " << num(worst, 3) << "); ";
  }
  {
    const int d = kReproDim, n = 100;
    const TaskDistribution dist = TaskDistribution::isotropic(d, n, ctx.seed());
    const LoopedParams p0 = random_init(d, 5, 0.1, 0.1, ctx.seed());
    TrainConfig cfg = reproduction_train_config();
    const FlowTrace tr = train_sgd(dist, LayerParamsSeq::expand(p0), cfg);
    if (ctx.trace_sink) ctx.trace_sink("train_ood_d5_n100_L5.csv", tr);
    Stream rng(ctx.seed(), StreamTag::kConfig, 12100);
    const SymMatrix cov_out = random_symmetric_with_spectrum(uniform_spectrum(rng, d, 0.6, 1.2), rng);
    const TaskDistribution eval_dist = dist.with_seed(mix64(ctx.seed() + 12100));
    BoundReport b;
    b.lemma_id = "12b_more_loops";
    for (bool ood : {false, true}) {
      std::vector<LossEstimate> ls;
      for (int loops : {5, 10, 20}) {
        const auto cov = ood ? std::optional<SymMatrix>(cov_out) : std::nullopt;
        ls.push_back(evaluate_loss(with_loops(tr.final_params, loops), eval_dist, 20000, cov));
      }
      const std::string set = ood ? "OOD" : "ID";
      for (std::size_t i = 1; i < ls.size(); ++i)
        b.add(set + " loss(" + std::to_string(5 << i) + " loops) <= loss(" + std::to_string(5 << (i - 1)) +
                  " loops) + 3se",
              ls[i].mean, ls[i - 1].mean + 3.0 * std::hypot(ls[i].std_error, ls[i - 1].std_error));
      sum << set << " 5/10/20 loops " << num(ls[0].mean, 3) << "/" << num(ls[1].mean, 3) << "/" << num(ls[2].mean, 3)
          << "; ";
    }
    b.finalize();
    res.checks.push_back(std::move(b));
  }
  res.summary = sum.str();
  return res;
}

std::string trace_csv(const FlowTrace& t) {
  std::ostringstream os;
  write_trace_csv(os, t);
  return os.str();
}

class ThreadOverride {
 public:
  explicit ThreadOverride(const char* value) {
    if (const char* old = std::getenv("LOOPTF_THREADS")) old_ = old;
    setenv("LOOPTF_THREADS", value, 1);
  }
  ~ThreadOverride() {
    if (old_)
      setenv("LOOPTF_THREADS", old_->c_str(), 1);
    else
      unsetenv("LOOPTF_THREADS");
  }

 private:
  std::optional<std::string> old_;
};

CriterionResult c13_determinism(AcceptanceContext& ctx) {
  CriterionResult res;
  const TaskDistribution dist = TaskDistribution::isotropic(kReproDim, 20, ctx.seed());
  TrainConfig cfg = reproduction_train_config();
  cfg.steps = 1000;
  const LayerParamsSeq p0 = LayerParamsSeq::expand(random_init(kReproDim, 5, 0.1, 0.1, ctx.seed()));
  std::string a, b, c;
  {
    ThreadOverride t("1");
    a = trace_csv(train_sgd(dist, p0, cfg));
  }
  {
    ThreadOverride t("4");
    b = trace_csv(train_sgd(dist, p0, cfg));
  }
  c = trace_csv(train_sgd(dist, p0, cfg));
  res.checks.push_back(single("train_csv_bitwise", "differing reruns", (a == b && b == c) ? 0.0 : 1.0, 0.0,
                              {{"bytes", a.size()}}));

  const TaskDistribution fd = TaskDistribution::isotropic(2, 10000, ctx.seed());
  FlowConfig fc;
  fc.m = 2000;
  fc.t_end = 5.0;
  std::string f1, f2;
  {
    ThreadOverride t("1");
    f1 = trace_csv(integrate_flow(SymMatrix::scaled_identity(2, 0.2), 2, fd, fc));
  }
  {
    ThreadOverride t("3");
    f2 = trace_csv(integrate_flow(SymMatrix::scaled_identity(2, 0.2), 2, fd, fc));
  }
  res.checks.push_back(single("flow_csv_bitwise", "differing reruns", f1 == f2 ? 0.0 : 1.0, 0.0));

  std::string e1, e2;
  {
    ThreadOverride t("1");
    e1 = nlohmann::json(empirical_loss(LoopedParams{SymMatrix::identity(2), Vector::Zero(2), 2},
                                       TaskDistribution::isotropic(2, 8, ctx.seed()), 5000)
                            .mean)
             .dump();
  }
  {
    ThreadOverride t("5");
    e2 = nlohmann::json(empirical_loss(LoopedParams{SymMatrix::identity(2), Vector::Zero(2), 2},
                                       TaskDistribution::isotropic(2, 8, ctx.seed()), 5000)
                            .mean)
             .dump();
  }
  res.checks.push_back(single("estimator_bitwise", "differing reruns", e1 == e2 ? 0.0 : 1.0, 0.0));
  res.summary = "train CSV (" + std::to_string(a.size()) + " bytes), flow CSV and estimators identical across reruns "
                "and thread counts";
  if (!(a == b && b == c && f1 == f2 && e1 == e2)) res.summary = "reruns differ";
  return res;
}

}  // namespace

std::vector<std::string> CriterionResult::failed_checks() const {
  std::vector<std::string> out;
  for (const auto& c : checks)
    if (c.verdict == Verdict::kFail) out.push_back(c.lemma_id);
  return out;
}

TrainConfig reproduction_train_config() {
  TrainConfig cfg;
  cfg.steps = kReproSteps;
  cfg.batch = 64;
  cfg.lr = 3e-3;
  cfg.lr_final_fraction = 1e-2;
  cfg.optimizer = Optimizer::kAdam;
  cfg.record_every = 10;
  return cfg;
}

const FlowTrace& AcceptanceContext::training_run(int n, int L, bool shared) {
  const auto key = std::make_tuple(n, L, shared);
  auto it = runs_.find(key);
  if (it != runs_.end()) return it->second;
  const TaskDistribution dist = TaskDistribution::isotropic(kReproDim, n, seed_);
  TrainConfig cfg = reproduction_train_config();
  cfg.shared = shared;
  const LayerParamsSeq p0 = LayerParamsSeq::expand(random_init(kReproDim, L, 0.1, 0.1, seed_));
  FlowTrace tr = train_sgd(dist, p0, cfg);
  if (trace_sink)
    trace_sink(std::string(shared ? "train" : "train_multilayer") + "_d5_n" + std::to_string(n) + "_L" +
                   std::to_string(L) + ".csv",
               tr);
  return runs_.emplace(key, std::move(tr)).first->second;
}

const std::vector<CriterionInfo>& acceptance_criteria() {
  static const std::vector<CriterionInfo> list{
      {1, "expressivity equivalence", 5},
      {2, "recursion formula", 5},
      {3, "closed-form loss", 120},
      {4, "gradient correctness", 30},
      {5, "moment oracles", 60},
      {6, "moment control bounds", 120},
      {7, "eigenvalue approximation band", 120},
      {8, "gradient dominance", 600},
      {9, "gradient-flow rate", 600},
      {10, "global minimizer", 300},
      {11, "training reproduction", 900},
      {12, "out-of-distribution", 600},
      {13, "determinism", 600},
  };
  return list;
}

const std::vector<std::string>& expected_failures() {
  static const std::vector<std::string> list{"11b_distance_to_identity"};
  return list;
}

CriterionResult run_criterion(int id, AcceptanceContext& ctx) {
  const auto& list = acceptance_criteria();
  auto it = std::find_if(list.begin(), list.end(), [id](const CriterionInfo& c) { return c.id == id; });
  if (it == list.end()) throw std::invalid_argument("unknown acceptance criterion " + std::to_string(id));
  const auto t0 = std::chrono::steady_clock::now();
  CriterionResult res;
  try {
    switch (id) {
      case 1: res = c1_expressivity(ctx); break;
      case 2: res = c2_recursion(ctx); break;
      case 3: res = c3_closed_form(ctx); break;
      case 4: res = c4_gradient(ctx); break;
      case 5: res = c5_moment_oracles(ctx); break;
      case 6: res = c6_moment_bounds(ctx); break;
      case 7: res = c7_eig_approx(ctx); break;
      case 8: res = c8_dominance(ctx); break;
      case 9: res = c9_flow(ctx); break;
      case 10: res = c10_global_minimizer(ctx); break;
      case 11: res = c11_training(ctx); break;
      case 12: res = c12_ood(ctx); break;
      case 13: res = c13_determinism(ctx); break;
    }
  } catch (const std::exception& e) {
    res.error = e.what();
  }
  res.info = *it;
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  res.within_budget = res.seconds <= res.info.budget_seconds;
  bool ok = res.error.empty() && !res.checks.empty();
  for (const auto& c : res.checks)
    if (c.verdict == Verdict::kFail || c.verdict == Verdict::kInconclusive || c.verdict == Verdict::kPreconditionFailed)
      ok = false;
  res.passed = ok && res.within_budget;
  return res;
}

std::string format_result_line(const CriterionResult& r) {
  std::ostringstream os;
  os << (r.passed ? "[PASS] " : "[FAIL] ") << r.info.id << ' ' << r.info.name << " | ";
  if (!r.error.empty())
    os << "error: " << r.error;
  else
    os << r.summary;
  const auto failed = r.failed_checks();
  if (!failed.empty()) {
    os << " | failed:";
    for (const auto& f : failed) os << ' ' << f;
  }
  os << " | " << std::fixed << std::setprecision(1) << r.seconds << " s / " << r.info.budget_seconds << " s";
  if (!r.within_budget) os << " (over budget)";
  return os.str();
}

nlohmann::json to_json(const CriterionResult& r) {
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& c : r.checks) checks.push_back(to_json(c));
  return {{"id", r.info.id},
          {"name", r.info.name},
          {"passed", r.passed},
          {"summary", r.summary},
          {"error", r.error},
          {"budget_seconds", r.info.budget_seconds},
          {"within_budget", r.within_budget},
          {"checks", checks}};
}

}  // namespace looptf
