#include "looptf/moments.hpp"

#include "looptf/delta.hpp"
#include "looptf/parallel.hpp"
#include "looptf/rng.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace looptf {

namespace {

constexpr int kMaxExactDim = 3;
constexpr int kMaxExactK = 4;
constexpr int kMaxPairK = 6;
constexpr double kMultiIndexBudget = 5e7;
constexpr double kRoundoff = 1e-12;

using Pairing = std::vector<std::pair<int, int>>;

void build_pairings(std::vector<int>& free, Pairing& cur, std::vector<Pairing>& out) {
  if (free.empty()) {
    out.push_back(cur);
    return;
  }
  const int first = free.front();
  for (std::size_t j = 1; j < free.size(); ++j) {
    const int partner = free[j];
    std::vector<int> rest;
    rest.reserve(free.size() - 2);
    for (std::size_t t = 1; t < free.size(); ++t)
      if (t != j) rest.push_back(free[t]);
    cur.emplace_back(first, partner);
    build_pairings(rest, cur, out);
    cur.pop_back();
  }
}

int find_root(std::vector<int>& parent, int x) {
  while (parent[x] != x) x = parent[x] = parent[parent[x]];
  return x;
}

/// Connected components of the k factor slots under the pairing's ties.
int component_count(const Pairing& p, int k) {
  std::vector<int> parent(k);
  std::iota(parent.begin(), parent.end(), 0);
  int comps = k;
  for (const auto& [a, b] : p) {
    const int ra = find_root(parent, a / 2);
    const int rb = find_root(parent, b / 2);
    if (ra != rb) {
      parent[ra] = rb;
      --comps;
    }
  }
  return comps;
}

void check_moment_args(const SymMatrix& sigma, int n, int k) {
  if (n < 1) throw std::invalid_argument("moment: n must be >= 1");
  if (k < 1) throw std::invalid_argument("moment: k must be >= 1");
  if (!is_psd(sigma)) throw NotPsdError("moment: sigma must be PSD");
}

void check_envelope(int d, int k) {
  if (!in_exact_envelope(d, k)) {
    std::ostringstream os;
    os << "exact moment envelope is d <= " << kMaxExactDim << ", k <= " << kMaxExactK << " (got d=" << d
       << ", k=" << k << "); use the Monte-Carlo estimator";
    throw EnvelopeError(os.str());
  }
}

/// Visits every coordinate path c_0 = a, c_1..c_{k−1}, c_k = b.
template <class F>
void for_each_path(int d, int k, int a, int b, F&& f) {
  std::vector<int> c(static_cast<std::size_t>(k) + 1, 0);
  c[0] = a;
  c[static_cast<std::size_t>(k)] = b;
  const int interior = k - 1;
  long total = 1;
  for (int t = 0; t < interior; ++t) total *= d;
  for (long code = 0; code < total; ++code) {
    long rem = code;
    for (int t = 1; t <= interior; ++t) {
      c[static_cast<std::size_t>(t)] = static_cast<int>(rem % d);
      rem /= d;
    }
    f(c);
  }
}

/// Coordinate at position pos (factor pos/2 contributes x_{c_t} x_{c_{t+1}}).
inline int coord(const std::vector<int>& c, int pos) { return c[static_cast<std::size_t>(pos / 2 + pos % 2)]; }

double pair_product(const Pairing& p, const std::vector<int>& c, const Matrix& s) {
  double prod = 1.0;
  for (const auto& [x, y] : p) prod *= s(coord(c, x), coord(c, y));
  return prod;
}

void fill_coeffs(MomentResult& r) {
  const EigDecomp e = eig_sym(r.sigma);
  r.sigma_eigenvalues = e.eigenvalues;
  r.coeffs.resize(e.eigenvalues.size());
  for (Eigen::Index j = 0; j < r.coeffs.size(); ++j)
    r.coeffs(j) = e.eigenvectors.col(j).dot(r.moment.mat() * e.eigenvectors.col(j));
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

double binomial(int k, int j) {
  double r = 1.0;
  for (int t = 1; t <= j; ++t) r = r * (k - j + t) / t;
  return r;
}

struct McDraws {
  Matrix mean;
  Matrix std_error;
  Vector proj_mean;
  Vector proj_std_error;
};

/// MC over m draws of f(Σ̂) with per-entry and projected (v_jᵀ f v_j) errors.
template <class F>
McDraws mc_draws(const SymMatrix& cov, int n, std::int64_t m, std::uint64_t seed, const Matrix& basis, F&& f) {
  const int d = cov.dim();
  const Matrix root = psd_sqrt(cov).mat();
  const std::size_t count = static_cast<std::size_t>(m);
  std::vector<Matrix> draws(count);
  parallel_for(count, [&](std::size_t i) {
    Stream rng(seed, StreamTag::kMoments, i);
    const Matrix X = root * rng.gaussian_matrix(d, n);
    const Matrix s = X * X.transpose() / static_cast<double>(n);
    const Matrix v = f(s);
    draws[i] = 0.5 * (v + v.transpose());
  });
  McDraws out;
  out.mean = Matrix::Zero(d, d);
  for (const auto& v : draws) out.mean += v;
  out.mean /= static_cast<double>(m);
  Matrix ss = Matrix::Zero(d, d);
  Vector pm = Vector::Zero(d);
  std::vector<Vector> proj(count);
  for (std::size_t i = 0; i < count; ++i) {
    ss += (draws[i] - out.mean).cwiseAbs2();
    proj[i] = (basis.transpose() * draws[i] * basis).diagonal();
    pm += proj[i];
  }
  pm /= static_cast<double>(m);
  Vector ps = Vector::Zero(d);
  for (const auto& p : proj) ps += (p - pm).cwiseAbs2();
  const double denom = m > 1 ? static_cast<double>(m - 1) * static_cast<double>(m) : 1.0;
  out.std_error = (ss / denom).cwiseSqrt();
  out.proj_mean = pm;
  out.proj_std_error = (ps / denom).cwiseSqrt();
  return out;
}

}  // namespace

const std::vector<Pairing>& pairings(int k) {
  static const std::vector<std::vector<Pairing>> table = [] {
    std::vector<std::vector<Pairing>> t(kMaxPairK + 1);
    for (int kk = 1; kk <= kMaxPairK; ++kk) {
      std::vector<int> free(static_cast<std::size_t>(2 * kk));
      std::iota(free.begin(), free.end(), 0);
      Pairing cur;
      build_pairings(free, cur, t[static_cast<std::size_t>(kk)]);
    }
    return t;
  }();
  if (k < 1 || k > kMaxPairK) throw EnvelopeError("pairings: k out of range");
  return table[static_cast<std::size_t>(k)];
}

bool in_exact_envelope(int d, int k) { return d >= 1 && d <= kMaxExactDim && k >= 1 && k <= kMaxExactK; }

MomentResult moment_exact(const SymMatrix& sigma, int n, int k) {
  check_moment_args(sigma, n, k);
  const int d = sigma.dim();
  check_envelope(d, k);
  const auto& ps = pairings(k);
  // Weight of a pairing after summing sample indices and dividing by n^k.
  std::vector<double> weight(ps.size());
  for (std::size_t p = 0; p < ps.size(); ++p)
    weight[p] = std::pow(static_cast<double>(n), component_count(ps[p], k) - k);

  const Matrix& s = sigma.mat();
  Matrix m = Matrix::Zero(d, d);
  for (int a = 0; a < d; ++a) {
    for (int b = a; b < d; ++b) {
      double entry = 0.0;
      for_each_path(d, k, a, b, [&](const std::vector<int>& c) {
        for (std::size_t p = 0; p < ps.size(); ++p) entry += weight[p] * pair_product(ps[p], c, s);
      });
      m(a, b) = m(b, a) = entry;
    }
  }
  MomentResult r;
  r.k = k;
  r.n = n;
  r.sigma = sigma;
  r.moment = SymMatrix(m);
  r.std_error = Matrix::Zero(d, d);
  r.pairings_per_expectation = static_cast<std::int64_t>(ps.size());
  fill_coeffs(r);
  return r;
}

MomentResult moment_exact_multiindex(const SymMatrix& sigma, int n, int k) {
  check_moment_args(sigma, n, k);
  const int d = sigma.dim();
  check_envelope(d, k);
  const auto& ps = pairings(k);
  const double cost = std::pow(static_cast<double>(n), k) * static_cast<double>(ps.size());
  if (cost > kMultiIndexBudget) throw EnvelopeError("multi-index enumeration too large; use moment_exact");

  long total = 1;
  for (int t = 0; t < k; ++t) total *= n;
  // Pairing consistency only depends on the multi-index, so count how many
  // multi-indices admit each pairing, then weight the coordinate sums.
  std::vector<double> admitted(ps.size(), 0.0);
  std::vector<int> idx(static_cast<std::size_t>(k));
  for (long code = 0; code < total; ++code) {
    long rem = code;
    for (int t = 0; t < k; ++t) {
      idx[static_cast<std::size_t>(t)] = static_cast<int>(rem % n);
      rem /= n;
    }
    for (std::size_t p = 0; p < ps.size(); ++p) {
      bool ok = true;
      for (const auto& [x, y] : ps[p])
        if (idx[static_cast<std::size_t>(x / 2)] != idx[static_cast<std::size_t>(y / 2)]) {
          ok = false;
          break;
        }
      if (ok) admitted[p] += 1.0;
    }
  }
  const double scale = std::pow(static_cast<double>(n), -k);
  const Matrix& s = sigma.mat();
  Matrix m = Matrix::Zero(d, d);
  for (int a = 0; a < d; ++a) {
    for (int b = a; b < d; ++b) {
      double entry = 0.0;
      for_each_path(d, k, a, b, [&](const std::vector<int>& c) {
        for (std::size_t p = 0; p < ps.size(); ++p) entry += admitted[p] * pair_product(ps[p], c, s);
      });
      m(a, b) = m(b, a) = entry * scale;
    }
  }
  MomentResult r;
  r.k = k;
  r.n = n;
  r.sigma = sigma;
  r.moment = SymMatrix(m);
  r.std_error = Matrix::Zero(d, d);
  r.pairings_per_expectation = static_cast<std::int64_t>(ps.size());
  fill_coeffs(r);
  return r;
}

MomentResult moment_mc(const SymMatrix& sigma, int n, int k, std::int64_t m, std::uint64_t seed) {
  check_moment_args(sigma, n, k);
  if (m < 100) throw std::invalid_argument("moment_mc: m must be >= 100");
  const EigDecomp e = eig_sym(sigma);
  const McDraws draws = mc_draws(sigma, n, m, seed, e.eigenvectors, [k](const Matrix& s) { return int_power(s, k); });
  MomentResult r;
  r.k = k;
  r.n = n;
  r.sigma = sigma;
  r.moment = SymMatrix(draws.mean);
  r.std_error = draws.std_error;
  r.exact = false;
  r.sigma_eigenvalues = e.eigenvalues;
  r.coeffs = draws.proj_mean;
  r.coeff_std_error = draws.proj_std_error.maxCoeff();
  return r;
}

MomentResult moment_auto(const SymMatrix& sigma, int n, int k, std::int64_t m, std::uint64_t seed) {
  if (in_exact_envelope(sigma.dim(), k)) return moment_exact(sigma, n, k);
  return moment_mc(sigma, n, k, m, seed);
}

BoundReport check_moment_bounds(const SymMatrix& sigma, int n, int k, const MomentCheckOptions& opt) {
  const int d = sigma.dim();
  BoundReport rep;
  rep.lemma_id = "moment_control";
  rep.params = {{"d", d}, {"n", n}, {"k", k}};
  const MomentResult r = moment_auto(sigma, n, k, opt.mc_samples, opt.seed);
  rep.params["exact"] = r.exact;
  rep.params["sigma_eigenvalues"] = std::vector<double>(r.sigma_eigenvalues.data(),
                                                        r.sigma_eigenvalues.data() + d);
  rep.params["coeffs"] = std::vector<double>(r.coeffs.data(), r.coeffs.data() + d);

  const double lam1k = std::pow(r.sigma_eigenvalues(0), k);
  const double slack = moment_slack(n, d, k);
  const double noise = r.exact ? kRoundoff * std::max(1.0, lam1k) : 4.0 * r.coeff_std_error;
  const DeltaParams dp = delta_params(n, d, opt.L);
  for (int j = 0; j < d; ++j) {
    const double dev = std::abs(r.coeffs(j) - std::pow(r.sigma_eigenvalues(j), k));
    const std::string tag = "alpha_" + std::to_string(j);
    rep.add(tag + ": |alpha - lambda^k| <= (4kd/sqrt n) lambda_1^k", dev, slack * lam1k + noise);
    rep.add(tag + ": delta^k reading", dev, std::pow(dp.delta, k) * lam1k, false);
    rep.add(tag + ": delta reading", dev, dp.delta * lam1k, false);
  }
  const bool identity = (sigma.mat() - Matrix::Identity(d, d)).norm() < 1e-14;
  if (identity) {
    for (int j = 0; j < d; ++j) {
      const std::string tag = "alpha_" + std::to_string(j);
      rep.add(tag + ": 1 <= alpha", 1.0, r.coeffs(j) + noise);
      rep.add(tag + ": alpha <= 1 + 4kd/sqrt n", r.coeffs(j), 1.0 + slack + noise);
    }
  }
  if (static_cast<double>(n) < 4.0 * k * k * d * d) {
    rep.verdict = Verdict::kPreconditionFailed;
    rep.note = "needs n >= 4 k^2 d^2";
  }
  rep.finalize();
  return rep;
}

SymMatrix expected_centered_power(const SymMatrix& cov_a, int n, int k, const MomentCheckOptions& opt,
                                  bool* exact) {
  const int d = cov_a.dim();
  if (in_exact_envelope(d, k)) {
    Matrix acc = Matrix::Identity(d, d);  // j = 0 term
    for (int j = 1; j <= k; ++j) {
      const double sign = (j % 2 == 0) ? 1.0 : -1.0;
      acc += sign * binomial(k, j) * moment_exact(cov_a, n, j).moment.mat();
    }
    if (exact) *exact = true;
    return SymMatrix(acc);
  }
  const EigDecomp e = eig_sym(cov_a);
  const Matrix I = Matrix::Identity(d, d);
  const McDraws draws = mc_draws(cov_a, n, opt.mc_samples, opt.seed, e.eigenvectors,
                                 [&](const Matrix& s) { return int_power(I - s, k); });
  if (exact) *exact = false;
  return SymMatrix(draws.mean);
}

BoundReport check_eig_approx(const SymMatrix& A, const SymMatrix& sigma_star, int n, int k,
                             const MomentCheckOptions& opt) {
  if (A.dim() != sigma_star.dim()) throw DimensionError("check_eig_approx: dimension mismatch");
  if (!is_psd(A)) throw NotPsdError("check_eig_approx: A must be PSD");
  const int d = A.dim();
  const Matrix root = psd_sqrt(A).mat();
  const SymMatrix cov_a(root * sigma_star.mat() * root);
  const EigDecomp e = eig_sym(cov_a);

  BoundReport rep;
  rep.lemma_id = "eig_approx";
  rep.params = {{"d", d}, {"n", n}, {"k", k}};

  double noise = 0.0;
  Vector beta(d);
  bool exact = true;
  if (in_exact_envelope(d, k)) {
    const SymMatrix expect = expected_centered_power(cov_a, n, k, opt, &exact);
    for (int i = 0; i < d; ++i) beta(i) = e.eigenvectors.col(i).dot(expect.mat() * e.eigenvectors.col(i));
    noise = kRoundoff * std::pow(e.eigenvalues(0) + 1.0, k);
  } else {
    const Matrix I = Matrix::Identity(d, d);
    const McDraws draws = mc_draws(cov_a, n, opt.mc_samples, opt.seed, e.eigenvectors,
                                   [&](const Matrix& s) { return int_power(I - s, k); });
    beta = draws.proj_mean;
    noise = 4.0 * draws.proj_std_error.maxCoeff();
    exact = false;
  }
  rep.params["exact"] = exact;
  rep.params["lambda"] = std::vector<double>(e.eigenvalues.data(), e.eigenvalues.data() + d);
  rep.params["beta"] = std::vector<double>(beta.data(), beta.data() + d);

  const double half = moment_slack(n, d, k) * std::pow(e.eigenvalues(0) + 1.0, k);
  for (int i = 0; i < d; ++i) {
    const double lam = e.eigenvalues(i);
    const std::string tag = "beta_" + std::to_string(i);
    rep.add(tag + ": |beta - (1 - lambda)^k| <= dbar (lambda_1 + 1)^k",
            std::abs(beta(i) - std::pow(1.0 - lam, k)), half + noise);
    rep.add(tag + ": (lambda - 1)^k center reading", std::abs(beta(i) - std::pow(lam - 1.0, k)),
            half + noise, false);
  }
  if (static_cast<double>(n) < 4.0 * k * k * d * d) {
    rep.verdict = Verdict::kPreconditionFailed;
    rep.note = "needs n >= 4 k^2 d^2";
  }
  rep.finalize();
  return rep;
}

}  // namespace looptf
