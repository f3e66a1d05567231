#include "looptf/tasks.hpp"

#include <sstream>
#include <stdexcept>

namespace looptf {

namespace {

constexpr double kMaxGramCondition = 1e12;

std::vector<double> to_row_major(const Matrix& m) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
  return out;
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector from_std(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

TaskDistribution::TaskDistribution(int d, int n, SymMatrix sigma_star, std::uint64_t seed)
    : d_(d), n_(n), sigma_star_(std::move(sigma_star)), seed_(seed) {
  if (d < 1 || n < 1) throw std::invalid_argument("TaskDistribution: d and n must be >= 1");
  if (sigma_star_.dim() != d) throw DimensionError("TaskDistribution: Σ* has wrong dimension");
  if (min_eigenvalue(sigma_star_) <= 0.0)
    throw NotPsdError("TaskDistribution: Σ* must be positive definite");
  sqrt_ = psd_sqrt(sigma_star_);
  inv_ = spd_inverse(sigma_star_);
  inv_sqrt_ = psd_sqrt(inv_);
}

TaskDistribution TaskDistribution::isotropic(int d, int n, std::uint64_t seed) {
  return TaskDistribution(d, n, SymMatrix::identity(d), seed);
}

TaskDistribution TaskDistribution::with_n(int n) const {
  TaskDistribution copy = *this;
  if (n < 1) throw std::invalid_argument("TaskDistribution: n must be >= 1");
  copy.n_ = n;
  return copy;
}

TaskDistribution TaskDistribution::with_seed(std::uint64_t seed) const {
  TaskDistribution copy = *this;
  copy.seed_ = seed;
  return copy;
}

RegressionInstance sample_instance(const TaskDistribution& dist, Stream& rng) {
  const int d = dist.d();
  const int n = dist.n();
  const Matrix z = rng.gaussian_matrix(d, n);
  const Vector zq = rng.gaussian_vector(d);
  const Vector zw = rng.gaussian_vector(d);
  return make_instance(dist.sigma_star_sqrt().mat() * z, dist.sigma_star_sqrt().mat() * zq,
                       dist.sigma_star_inv_sqrt().mat() * zw);
}

RegressionInstance sample_instance(const TaskDistribution& dist, std::uint64_t index) {
  const std::uint64_t s = substream_seed(dist.seed(), StreamTag::kInstance, index);
  Stream rng(s);
  RegressionInstance inst = sample_instance(dist, rng);
  inst.seed = s;
  return inst;
}

RegressionInstance make_instance(Matrix X, Vector x_q, Vector w_star) {
  if (x_q.size() != X.rows() || w_star.size() != X.rows())
    throw DimensionError("make_instance: x_q / w_star must have length d");
  RegressionInstance inst;
  inst.y = X.transpose() * w_star;
  inst.y_q = w_star.dot(x_q);
  inst.X = std::move(X);
  inst.x_q = std::move(x_q);
  inst.w_star = std::move(w_star);
  return inst;
}

Vector solve_exact(const RegressionInstance& inst) {
  const Matrix gram = inst.X * inst.X.transpose();
  const EigDecomp e = eig_sym(SymMatrix(gram));
  const double hi = e.eigenvalues(0);
  const double lo = e.eigenvalues(e.eigenvalues.size() - 1);
  if (!(lo > 0.0) || hi / lo > kMaxGramCondition) {
    std::ostringstream os;
    os << "X Xᵀ is singular or ill-conditioned (eigenvalues " << lo << " .. " << hi << ")";
    throw SingularGramError(os.str());
  }
  return gram.ldlt().solve(inst.X * inst.y);
}

std::vector<Vector> gd_oracle(const RegressionInstance& inst, const SymMatrix& A, int steps) {
  if (steps < 0) throw std::invalid_argument("gd_oracle: negative step count");
  if (A.dim() != inst.d()) throw DimensionError("gd_oracle: A has wrong dimension");
  const double inv_n = 1.0 / static_cast<double>(inst.n());
  std::vector<Vector> ws;
  ws.reserve(static_cast<std::size_t>(steps) + 1);
  ws.push_back(Vector::Zero(inst.d()));
  for (int t = 0; t < steps; ++t) {
    const Vector& w = ws.back();
    const Vector residual = inst.y - inst.X.transpose() * w;
    ws.push_back(w + inv_n * (A.mat() * (inst.X * residual)));
  }
  return ws;
}

nlohmann::json to_json(const RegressionInstance& inst) {
  return nlohmann::json{{"d", inst.d()},
                        {"n", inst.n()},
                        {"X", to_row_major(inst.X)},
                        {"y", to_std(inst.y)},
                        {"x_q", to_std(inst.x_q)},
                        {"w_star", to_std(inst.w_star)},
                        {"y_q", inst.y_q},
                        {"seed", inst.seed}};
}

RegressionInstance instance_from_json(const nlohmann::json& j) {
  const int d = j.at("d").get<int>();
  const int n = j.at("n").get<int>();
  const auto flat = j.at("X").get<std::vector<double>>();
  if (static_cast<int>(flat.size()) != d * n) throw DimensionError("instance JSON: X has wrong size");
  Matrix X(d, n);
  for (int i = 0; i < d; ++i)
    for (int k = 0; k < n; ++k) X(i, k) = flat[static_cast<std::size_t>(i * n + k)];
  RegressionInstance inst;
  inst.X = std::move(X);
  inst.y = from_std(j.at("y").get<std::vector<double>>());
  inst.x_q = from_std(j.at("x_q").get<std::vector<double>>());
  inst.w_star = from_std(j.at("w_star").get<std::vector<double>>());
  inst.y_q = j.at("y_q").get<double>();
  inst.seed = j.value("seed", std::uint64_t{0});
  if (inst.y.size() != n || inst.x_q.size() != d || inst.w_star.size() != d)
    throw DimensionError("instance JSON: vector lengths inconsistent with d, n");
  return inst;
}

}  // namespace looptf
