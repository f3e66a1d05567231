#include "looptf/delta.hpp"
#include "looptf/report.hpp"
#include "looptf/theory.hpp"

#include <doctest.h>

#include <cmath>

using namespace looptf;

TEST_CASE("delta parameters, d = 2, L = 2, n = 1e4") {
  const DeltaParams p = delta_params(1e4, 2, 2);
  // (8·2·2/100)^{1/4}
  CHECK(p.delta == doctest::Approx(0.7521206186));
  CHECK(p.c_opt == doctest::Approx(8.0 * 0.7521206186 * 1.1892071150));
  CHECK(p.loss_bound_opt == doctest::Approx(10.24));
  CHECK_FALSE(p.condition_ok);
  // Boundary case 8/32 = 2^-2 holds.
  const DeltaParams q = delta_params(1024, 1, 1);
  CHECK(q.delta == doctest::Approx(0.5));
  CHECK(q.loss_bound_opt == doctest::Approx(1.0));
  CHECK(q.condition_ok);
}

TEST_CASE("derived constants") {
  CHECK(moment_slack(100, 2, 3) == doctest::Approx(2.4));
  // √10 · 32^{1/3}
  CHECK(flow_time_bound(0.1, 2) == doctest::Approx(10.0396841995));
  const DominanceThreshold t = dominance_threshold(1e4, 2, 2);
  CHECK(t.from_delta == doctest::Approx(163.84));
  CHECK(t.from_n == doctest::Approx(10.24));
  CHECK(t.used == t.from_delta);
  CHECK_THROWS(flow_time_bound(0.1, 1));
}

TEST_CASE("proximity band constants") {
  const ProximityBand b = proximity_band(0.3, 3, 2, 0.0);
  const double c = 4.0 + 16.0 * std::pow(3.0, 0.25);
  CHECK(b.c == doctest::Approx(c));
  CHECK(b.lo == doctest::Approx(1.0 - 0.3 * c));
  CHECK(b.hi == doctest::Approx(1.0 + 0.3 * c));
  CHECK(proximity_eps(0.0, 0.1, 2) == doctest::Approx(0.4));
  CHECK(proximity_eps(8.0, 0.01, 1) == doctest::Approx(4.0));
}

TEST_CASE("composed band edges") {
  CHECK(composed_lower(0.5, 0.2) == doctest::Approx(0.4));
  // w > 1: (1 − w) pairs with the upper edge of the inner band.
  CHECK(composed_lower(3.0, 0.5) == doctest::Approx(-3.0));
  CHECK(composed_lower(3.0, 7.0) == doctest::Approx(-16.0));
  CHECK(composed_lower(0.5, 7.0) == 0.0);
}

TEST_CASE("band nesting: widening epsilon never shrinks the band") {
  for (int d = 1; d <= 4; ++d)
    for (int L = 1; L <= 4; ++L)
      for (double c_opt : {0.0, 0.3, 2.0})
        for (double e1 = 0.001; e1 < 2.0; e1 *= 1.7) {
          const ProximityBand a = proximity_band(e1, d, L, c_opt);
          const ProximityBand b = proximity_band(e1 * 1.3, d, L, c_opt);
          CHECK(b.lo <= a.lo + 1e-15);
          CHECK(b.hi >= a.hi - 1e-15);
        }
}

TEST_CASE("out-of-distribution bound edge cases") {
  const TaskDistribution dist = TaskDistribution::isotropic(3, 10000, 5);
  RegressionInstance inst = sample_ood_instance(dist, SymMatrix::identity(3), 0);
  inst = make_instance(inst.X, inst.x_q, Vector::Zero(3));
  const BoundReport zero = ood_check(inst, SymMatrix::identity(3), 3, dist, 0.5);
  CHECK(zero.bounds.front().lhs == 0.0);
  CHECK(zero.bounds.front().rhs == 0.0);
  CHECK(zero.verdict == Verdict::kPass);
  // Far outside the sandwich.
  const RegressionInstance wide = sample_ood_instance(dist, SymMatrix::scaled_identity(3, 4.0), 1);
  CHECK(ood_check(wide, SymMatrix::identity(3), 3, dist, 0.5).verdict == Verdict::kPreconditionFailed);
}

TEST_CASE("minimizer check chain at an easy point") {
  const TaskDistribution dist = TaskDistribution::isotropic(1, 1024, 3);
  MinimizerOptions opt;
  opt.m = 20000;
  const BoundReport r = verify_global_minimizer(SymMatrix::identity(1), Vector::Zero(1), 1, dist, opt);
  CHECK(r.verdict == Verdict::kPass);
  // Measured loss 2/n sits well below d(2δ)^{2L} = 1 = 8Ld²2^{2L}/√n.
  CHECK(r.params["loss"].get<double>() == doctest::Approx(2.0 / 1024).epsilon(0.05));
  const BoundReport far = verify_global_minimizer(SymMatrix::identity(1), Vector::Constant(1, 0.5), 1, dist, opt);
  CHECK(far.verdict == Verdict::kFail);
}

TEST_CASE("report finalize keeps special verdicts") {
  BoundReport r;
  r.add("a", 1.0, 2.0);
  r.add("info", 3.0, 2.0, false);
  r.finalize();
  CHECK(r.verdict == Verdict::kPass);
  CHECK(r.min_slack() == doctest::Approx(1.0));
  r.add("b", 3.0, 2.0);
  r.finalize();
  CHECK(r.verdict == Verdict::kFail);
  BoundReport p;
  p.verdict = Verdict::kPreconditionFailed;
  p.add("a", 3.0, 2.0);
  p.finalize();
  CHECK(p.verdict == Verdict::kPreconditionFailed);
  CHECK(to_json(p)["verdict"] == "precondition_failed");
}
