#include "looptf/model.hpp"
#include "looptf/rng.hpp"
#include "looptf/tasks.hpp"

#include <doctest.h>

using namespace looptf;

namespace {

// d = 1, n = 2: X = [1 2], w* = 1, x_q = 1. Σ = (1 + 4)/2 = 2.5.
RegressionInstance tiny() {
  Matrix X(1, 2);
  X << 1.0, 2.0;
  return make_instance(X, Vector::Constant(1, 1.0), Vector::Constant(1, 1.0));
}

RegressionInstance random_instance(int d, int n, std::uint64_t seed) {
  return sample_instance(TaskDistribution::isotropic(d, n, seed), 0);
}

}  // namespace

TEST_CASE("one attention step on a hand-computed prompt") {
  // a = 0.1, u = 0.2. ZᵀQZ = a·[1 2 1]ᵀ[1 2 1]; masked bottom row of PZ is
  // u·x + y = [1.2 2.4 0]; times ZᵀQZ / n gives [0.3 0.6 0.3].
  const RegressionInstance inst = tiny();
  const Prompt z1 = lsa_step(make_prompt(inst), SymMatrix::scaled_identity(1, 0.1), Vector::Constant(1, 0.2), 2);
  CHECK(z1.z(1, 0) == doctest::Approx(0.7).epsilon(1e-14));
  CHECK(z1.z(1, 1) == doctest::Approx(1.4).epsilon(1e-14));
  CHECK(z1.z(1, 2) == doctest::Approx(-0.3).epsilon(1e-14));
  // The data rows never change.
  CHECK(z1.z(0, 0) == 1.0);
  CHECK(z1.z(0, 1) == 2.0);
  CHECK(z1.z(0, 2) == 1.0);
}

TEST_CASE("dense attention update agrees with the restricted step") {
  const RegressionInstance inst = random_instance(3, 7, 11);
  Stream rng(5);
  const SymMatrix A = random_symmetric_with_spectrum(Vector::LinSpaced(3, 0.2, 1.1), rng);
  const Vector u = rng.gaussian_vector(3);
  const Prompt z0 = make_prompt(inst);
  const Matrix dense = attention_update(z0.z, value_matrix(u), query_key_matrix(A), 7);
  CHECK((dense - lsa_step(z0, A, u, 7).z).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("recursion on the tiny instance") {
  const RegressionInstance inst = tiny();
  LayerParamsSeq seq;
  seq.layers.push_back({SymMatrix::scaled_identity(1, 0.1), Vector::Constant(1, 0.2)});
  const RecursionResult r = recursion_formula(inst, seq);
  CHECK(r.y_rows[1](0) == doctest::Approx(0.7));
  CHECK(r.y_rows[1](1) == doctest::Approx(1.4));
  CHECK(r.y_q[0] == doctest::Approx(0.0));
  CHECK(r.y_q[1] == doctest::Approx(0.3));
  CHECK(forward_multilayer(inst, seq) == doctest::Approx(0.3));
}

TEST_CASE("u = 0 gives preconditioned gradient descent") {
  const RegressionInstance inst = tiny();
  // w_1 = (1/n) a X y = 0.1 · 5 / 2
  const auto w = gd_oracle(inst, SymMatrix::scaled_identity(1, 0.1), 1);
  CHECK(w[1](0) == doctest::Approx(0.25));
  CHECK(forward_looped(inst, construct_expressive_params(SymMatrix::scaled_identity(1, 0.1), 1)) ==
        doctest::Approx(0.25));
  // a = 1/Σ solves in one step.
  CHECK(forward_looped(inst, construct_expressive_params(SymMatrix::scaled_identity(1, 0.4), 3)) ==
        doctest::Approx(1.0));
  CHECK(solve_exact(inst)(0) == doctest::Approx(1.0));
}

TEST_CASE("looped equals expanded multilayer bitwise") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const RegressionInstance inst = random_instance(4, 9, s);
    Stream rng(s + 100);
    const LoopedParams p{random_symmetric_with_spectrum(Vector::LinSpaced(4, -0.3, 1.2), rng),
                         rng.gaussian_vector(4), 1 + static_cast<int>(s % 5)};
    CHECK(forward_looped(inst, p) == forward_multilayer(inst, LayerParamsSeq::expand(p)));
  }
}

TEST_CASE("prediction is equivariant under rotations") {
  const RegressionInstance inst = random_instance(3, 6, 21);
  Stream rng(22);
  const Matrix R = random_orthogonal(3, rng);
  const SymMatrix A = random_symmetric_with_spectrum(Vector::LinSpaced(3, 0.1, 0.9), rng);
  const Vector u = rng.gaussian_vector(3);
  const RegressionInstance rot = make_instance(R * inst.X, R * inst.x_q, R * inst.w_star);
  const double a = forward_looped(inst, {A, u, 3});
  const double b = forward_looped(rot, {SymMatrix(R * A.mat() * R.transpose()), R * u, 3});
  CHECK(a == doctest::Approx(b).epsilon(1e-11));
}

TEST_CASE("reverse-mode gradient matches central differences") {
  const RegressionInstance inst = random_instance(3, 8, 31);
  Stream rng(32);
  LayerParamsSeq seq;
  for (int t = 0; t < 3; ++t)
    seq.layers.push_back({random_symmetric_with_spectrum(Vector::LinSpaced(3, 0.0, 0.8), rng), rng.gaussian_vector(3)});
  const PredictionGradient g = prediction_gradient(inst, seq);
  CHECK(g.prediction == doctest::Approx(forward_multilayer(inst, seq)));
  const double h = 1e-6;
  for (int t = 0; t < 3; ++t) {
    for (int a = 0; a < 3; ++a)
      for (int b = a; b < 3; ++b) {
        Matrix E = Matrix::Zero(3, 3);
        E(a, b) = E(b, a) = 1.0;
        LayerParamsSeq p = seq, m = seq;
        p.layers[t].A = SymMatrix(seq.layers[t].A.mat() + h * E);
        m.layers[t].A = SymMatrix(seq.layers[t].A.mat() - h * E);
        const double fd = (forward_multilayer(inst, p) - forward_multilayer(inst, m)) / (2 * h);
        const double an = a == b ? g.dA[t](a, a) : 2.0 * g.dA[t](a, b);
        CHECK(an == doctest::Approx(fd).epsilon(1e-6));
      }
    for (int a = 0; a < 3; ++a) {
      LayerParamsSeq p = seq, m = seq;
      p.layers[t].u(a) += h;
      m.layers[t].u(a) -= h;
      const double fd = (forward_multilayer(inst, p) - forward_multilayer(inst, m)) / (2 * h);
      CHECK(g.du[t](a) == doctest::Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("parameter JSON round trip and validation") {
  Stream rng(3);
  const LoopedParams p{random_symmetric_with_spectrum(Vector::LinSpaced(2, 0.5, 1.0), rng), rng.gaussian_vector(2), 4};
  const LoopedParams q = looped_params_from_json(to_json(p));
  CHECK(q.L == 4);
  CHECK((q.A.mat() - p.A.mat()).norm() == 0.0);
  CHECK((q.u - p.u).norm() == 0.0);
  LoopedParams bad = p;
  bad.L = 0;
  CHECK_THROWS(bad.validate());
}
