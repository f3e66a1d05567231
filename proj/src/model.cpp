#include "looptf/model.hpp"

#include <sstream>
#include <stdexcept>

namespace looptf {

namespace {

void check_layer(const LayerParams& layer, int d) {
  if (layer.A.dim() != d || layer.u.size() != d)
    throw DimensionError("layer parameters do not match the instance dimension");
}

}  // namespace

Prompt make_prompt(const RegressionInstance& inst) {
  const int d = inst.d();
  const int n = inst.n();
  Prompt p;
  p.z = Matrix::Zero(d + 1, n + 1);
  p.z.topLeftCorner(d, n) = inst.X;
  p.z.topRightCorner(d, 1) = inst.x_q;
  p.z.bottomLeftCorner(1, n) = inst.y.transpose();
  return p;
}

void LoopedParams::validate() const {
  if (L < 1) throw std::invalid_argument("LoopedParams: L must be >= 1");
  if (u.size() != A.dim()) throw DimensionError("LoopedParams: u and A dimensions differ");
}

void LayerParamsSeq::validate() const {
  if (layers.empty()) throw std::invalid_argument("LayerParamsSeq: no layers");
  const int dim = d();
  for (const auto& layer : layers) check_layer(layer, dim);
}

LayerParamsSeq LayerParamsSeq::expand(const LoopedParams& p) {
  p.validate();
  LayerParamsSeq seq;
  seq.layers.assign(static_cast<std::size_t>(p.L), LayerParams{p.A, p.u});
  return seq;
}

Matrix query_key_matrix(const SymMatrix& A) {
  const int d = A.dim();
  Matrix q = Matrix::Zero(d + 1, d + 1);
  q.topLeftCorner(d, d) = A.mat();
  return q;
}

Matrix value_matrix(const Vector& u) {
  const int d = static_cast<int>(u.size());
  Matrix p = Matrix::Zero(d + 1, d + 1);
  p.bottomLeftCorner(1, d) = u.transpose();
  p(d, d) = 1.0;
  return p;
}

Matrix attention_update(const Matrix& z, const Matrix& P, const Matrix& Q, int n) {
  if (z.cols() != n + 1) {
    std::ostringstream os;
    os << "prompt has " << z.cols() - 1 << " samples, expected " << n;
    throw DimensionError(os.str());
  }
  if (P.rows() != z.rows() || P.cols() != z.rows() || Q.rows() != z.rows() || Q.cols() != z.rows())
    throw DimensionError("attention_update: P and Q must be (d+1)x(d+1)");
  // Z M zeroes the query column so context tokens never attend to it.
  Matrix zm = z;
  zm.col(n).setZero();
  // P Z M (Zᵀ Q Z) evaluated as ((P Z M) Zᵀ) (Q Z).
  const Matrix left = (P * zm) * z.transpose();
  return z - (left * (Q * z)) / static_cast<double>(n);
}

Prompt lsa_step(const Prompt& z, const SymMatrix& A, const Vector& u, int n) {
  if (A.dim() != z.d() || u.size() != z.d())
    throw DimensionError("lsa_step: parameter dimension does not match the prompt");
  return Prompt{attention_update(z.z, value_matrix(u), query_key_matrix(A), n)};
}

std::vector<Prompt> forward_trace(const RegressionInstance& inst, const LayerParamsSeq& seq) {
  seq.validate();
  if (seq.d() != inst.d()) throw DimensionError("forward: parameter/instance dimension mismatch");
  std::vector<Prompt> trace;
  trace.reserve(seq.layers.size() + 1);
  trace.push_back(make_prompt(inst));
  for (const auto& layer : seq.layers) trace.push_back(lsa_step(trace.back(), layer.A, layer.u, inst.n()));
  return trace;
}

double forward_looped(const RegressionInstance& inst, const LoopedParams& p) {
  p.validate();
  if (p.d() != inst.d()) throw DimensionError("forward: parameter/instance dimension mismatch");
  Prompt z = make_prompt(inst);
  for (int t = 0; t < p.L; ++t) z = lsa_step(z, p.A, p.u, inst.n());
  return -z.query_slot();
}

double forward_multilayer(const RegressionInstance& inst, const LayerParamsSeq& seq) {
  seq.validate();
  if (seq.d() != inst.d()) throw DimensionError("forward: parameter/instance dimension mismatch");
  Prompt z = make_prompt(inst);
  for (const auto& layer : seq.layers) z = lsa_step(z, layer.A, layer.u, inst.n());
  return -z.query_slot();
}

RecursionResult recursion_formula(const RegressionInstance& inst, const LayerParamsSeq& seq) {
  seq.validate();
  const int d = inst.d();
  if (seq.d() != d) throw DimensionError("recursion_formula: dimension mismatch");
  const Matrix sigma = inst.data_covariance();
  const Matrix I = Matrix::Identity(d, d);
  std::vector<Matrix> step;  // I − Σ A_i
  for (const auto& layer : seq.layers) step.push_back(I - sigma * layer.A.mat());

  RecursionResult out;
  for (int t = 0; t <= seq.L(); ++t) {
    Eigen::RowVectorXd v = inst.w_star.transpose();
    for (int i = 0; i < t; ++i) v = v * step[static_cast<std::size_t>(i)];
    for (int i = 0; i < t; ++i) {
      const auto& layer = seq.layers[static_cast<std::size_t>(i)];
      Eigen::RowVectorXd term = layer.u.transpose() * sigma * layer.A.mat();
      for (int j = i + 1; j < t; ++j) term = term * step[static_cast<std::size_t>(j)];
      v -= term;
    }
    out.y_rows.push_back((v * inst.X).transpose());
    out.y_q.push_back(inst.y_q - v.dot(inst.x_q));
  }
  return out;
}

LoopedParams construct_expressive_params(const SymMatrix& A_pre, int L) {
  LoopedParams p{A_pre, Vector::Zero(A_pre.dim()), L};
  p.validate();
  return p;
}

PredictionGradient prediction_gradient(const RegressionInstance& inst, const LayerParamsSeq& seq) {
  seq.validate();
  const int d = inst.d();
  const int n = inst.n();
  if (seq.d() != d) throw DimensionError("prediction_gradient: dimension mismatch");
  const double inv_n = 1.0 / static_cast<double>(n);

  Matrix top(d, n + 1);
  top << inst.X, inst.x_q;

  // Bottom row b (length n+1); the top block never changes.
  // Layer t: r = u_tᵀX + b_{1:n}, c = X rᵀ, b ← b − (1/n) cᵀ A_t [X x_q].
  const std::size_t L = seq.layers.size();
  std::vector<Vector> c(L);
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(n + 1);
  b.head(n) = inst.y.transpose();
  for (std::size_t t = 0; t < L; ++t) {
    const auto& layer = seq.layers[t];
    const Eigen::RowVectorXd r = layer.u.transpose() * inst.X + b.head(n);
    c[t] = inst.X * r.transpose();
    b -= inv_n * (c[t].transpose() * layer.A.mat()) * top;
  }

  PredictionGradient out;
  out.prediction = -b(n);
  out.dA.resize(L);
  out.du.resize(L);
  Vector g = Vector::Zero(n + 1);  // ∂prediction/∂b
  g(n) = -1.0;
  for (std::size_t t = L; t-- > 0;) {
    const auto& layer = seq.layers[t];
    const Vector top_g = top * g;
    const Vector s = layer.A.mat() * top_g;
    const Vector dr = -inv_n * (inst.X.transpose() * s);
    out.du[t] = inst.X * dr;
    const Matrix full = -inv_n * (c[t] * top_g.transpose());
    out.dA[t] = 0.5 * (full + full.transpose());
    g.head(n) += dr;
  }
  return out;
}

nlohmann::json to_json(const LoopedParams& p) {
  std::vector<double> a;
  for (int i = 0; i < p.A.dim(); ++i)
    for (int j = 0; j < p.A.dim(); ++j) a.push_back(p.A(i, j));
  return nlohmann::json{{"A", a}, {"u", std::vector<double>(p.u.data(), p.u.data() + p.u.size())},
                        {"L", p.L}};
}

LoopedParams looped_params_from_json(const nlohmann::json& j) {
  const auto a = j.at("A").get<std::vector<double>>();
  const auto u = j.at("u").get<std::vector<double>>();
  const int d = static_cast<int>(u.size());
  if (static_cast<int>(a.size()) != d * d) throw DimensionError("params JSON: A is not d×d");
  Matrix m(d, d);
  for (int i = 0; i < d; ++i)
    for (int k = 0; k < d; ++k) m(i, k) = a[static_cast<std::size_t>(i * d + k)];
  LoopedParams p{SymMatrix(m), Eigen::Map<const Vector>(u.data(), d), j.at("L").get<int>()};
  p.validate();
  return p;
}

}  // namespace looptf
