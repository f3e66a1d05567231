#include "looptf/theory.hpp"

#include "looptf/model.hpp"

#include <algorithm>
#include <cmath>

namespace looptf {

BoundReport verify_global_minimizer(const SymMatrix& A, const Vector& u, int L, const TaskDistribution& dist,
                                    const MinimizerOptions& opt) {
  const int d = dist.d();
  if (A.dim() != d || u.size() != d) throw DimensionError("verify_global_minimizer: dimension mismatch");
  const DeltaParams dp = delta_params(dist.n(), d, L);
  const LossEstimate loss = conditional_loss(LoopedParams{A, u, L}, dist, opt.m);

  BoundReport rep;
  rep.lemma_id = "global_minimizer";
  rep.params = to_json(dp);
  rep.params["loss"] = loss.mean;
  rep.params["loss_std_error"] = loss.std_error;
  rep.params["m"] = opt.m;
  rep.add("loss <= 8 L d^2 2^{2L} / sqrt n", loss.mean, dp.loss_bound_opt + 4.0 * loss.std_error);
  rep.add("loss <= d (2 delta)^{2L}", loss.mean, d * std::pow(2.0 * dp.delta, 2 * L) + 4.0 * loss.std_error, false);

  const BandCheck band = loewner_band(A, dist.sigma_star_inv(), 1.0 - dp.c_opt, 1.0 + dp.c_opt);
  rep.params["band_min_ratio"] = band.min_ratio;
  rep.params["band_max_ratio"] = band.max_ratio;
  rep.add("(1 - c) Sigma*^-1 <= A", 1.0 - dp.c_opt, band.min_ratio);
  rep.add("A <= (1 + c) Sigma*^-1", band.max_ratio, 1.0 + dp.c_opt);
  rep.add("|u| <= tol", u.norm(), opt.u_tolerance);
  if (!dp.condition_ok) {
    rep.verdict = Verdict::kAdvisory;
    rep.note = "n-condition 8Ld^2/sqrt(n) <= 2^-2L does not hold; verdict advisory";
  }
  rep.finalize();
  return rep;
}

double composed_lower(double w, double c) {
  // The minimizer is taken PSD, so its lower edge is never below 0.
  return w <= 1.0 ? (1.0 - w) * std::max(0.0, 1.0 - c) : (1.0 - w) * (1.0 + c);
}

ProximityBand proximity_band(double eps, int d, int L, double c_opt) {
  ProximityBand b;
  b.eps = eps;
  b.c = 4.0 + 16.0 * std::pow(static_cast<double>(d), 1.0 / (2.0 * L));
  b.lo = composed_lower(b.c * eps, c_opt);
  b.hi = (1.0 + b.c * eps) * (1.0 + c_opt);
  return b;
}

double proximity_eps(double loss, double delta, int L) {
  return std::max(std::pow(2.0 * std::max(loss, 0.0), 1.0 / (2.0 * L)), 4.0 * delta);
}

BoundReport verify_proximity_at(const SymMatrix& A, int L, const TaskDistribution& dist, const LossEstimate& loss) {
  const int d = dist.d();
  const DeltaParams dp = delta_params(dist.n(), d, L);
  const double eps = proximity_eps(loss.mean, dp.delta, L);
  const ProximityBand band = proximity_band(eps, d, L, dp.c_opt);
  const BandCheck check = loewner_band(A, dist.sigma_star_inv(), band.lo, band.hi);

  BoundReport rep;
  rep.lemma_id = "proximity";
  rep.params = to_json(dp);
  rep.params["loss"] = loss.mean;
  rep.params["loss_std_error"] = loss.std_error;
  rep.params["eps"] = eps;
  rep.params["c"] = band.c;
  rep.params["band"] = {band.lo, band.hi};
  rep.add("loss <= eps^{2L} / 2", loss.mean, std::pow(eps, 2 * L) / 2.0);
  rep.add("band lower", band.lo, check.min_ratio);
  rep.add("band upper", check.max_ratio, band.hi);
  if (loss.std_error > 0.25 * loss.mean) {
    rep.verdict = Verdict::kInconclusive;
    rep.note = "loss standard error exceeds 25% of the loss";
  }
  rep.finalize();
  return rep;
}

BoundReport verify_proximity(const SymMatrix& A, int L, const TaskDistribution& dist, std::int64_t m) {
  const LossEstimate loss = conditional_loss(LoopedParams{A, Vector::Zero(A.dim()), L}, dist, m);
  return verify_proximity_at(A, L, dist, loss);
}

BoundReport ood_check(const RegressionInstance& inst_out, const SymMatrix& A, int L, const TaskDistribution& dist,
                      double zeta) {
  if (!(zeta > 0.0 && zeta < 1.0)) throw std::invalid_argument("ood_check: zeta must be in (0, 1)");
  const int d = dist.d();
  if (inst_out.d() != d || A.dim() != d) throw DimensionError("ood_check: dimension mismatch");
  const DeltaParams dp = delta_params(inst_out.n(), d, L);

  BoundReport rep;
  rep.lemma_id = "out_of_distribution";
  rep.params = to_json(dp);
  rep.params["zeta"] = zeta;
  rep.params["sigma_out_normalization"] = "1/n";

  const SymMatrix sigma_out(inst_out.data_covariance());
  const BandCheck sandwich = loewner_band(sigma_out, dist.sigma_star(), zeta, 2.0 - zeta);
  rep.params["sandwich_min_ratio"] = sandwich.min_ratio;
  rep.params["sandwich_max_ratio"] = sandwich.max_ratio;

  const double pred = forward_looped(inst_out, LoopedParams{A, Vector::Zero(d), L});
  const double lhs = (pred - inst_out.y_q) * (pred - inst_out.y_q);
  const double g = 16.0 * dp.delta * std::pow(static_cast<double>(d), 1.0 / (2.0 * L));
  const double xq_norm = inst_out.x_q.dot(dist.sigma_star().mat() * inst_out.x_q);
  const double w_norm = inst_out.w_star.dot(dist.sigma_star_inv().mat() * inst_out.w_star);
  const double rhs = (1.0 + g) * (1.0 + g) * std::pow(1.0 + g - zeta, 2 * L) * xq_norm * w_norm;
  rep.add("(TF - y_q)^2 <= bound", lhs, rhs);
  if (!sandwich.inside) {
    rep.verdict = Verdict::kPreconditionFailed;
    rep.note = "sandwich zeta Sigma* <= Sigma_out <= (2 - zeta) Sigma* violated";
  }
  rep.finalize();
  return rep;
}

RegressionInstance sample_ood_instance(const TaskDistribution& dist, const SymMatrix& cov_out, std::uint64_t index) {
  if (cov_out.dim() != dist.d()) throw DimensionError("sample_ood_instance: dimension mismatch");
  Stream rng(dist.seed(), StreamTag::kOod, index);
  const Matrix root = psd_sqrt(cov_out).mat();
  const Matrix z = rng.gaussian_matrix(dist.d(), dist.n());
  const Vector zq = rng.gaussian_vector(dist.d());
  const Vector zw = rng.gaussian_vector(dist.d());
  RegressionInstance inst = make_instance(root * z, root * zq, dist.sigma_star_inv_sqrt().mat() * zw);
  inst.seed = substream_seed(dist.seed(), StreamTag::kOod, index);
  return inst;
}

}  // namespace looptf
