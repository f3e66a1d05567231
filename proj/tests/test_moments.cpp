#include "looptf/moments.hpp"
#include "looptf/rng.hpp"

#include <doctest.h>

using namespace looptf;

TEST_CASE("frozen moment values") {
  // χ²_2 / 2: E = 1, E² = (2·4)/4.
  CHECK(moment_exact(SymMatrix::identity(1), 2, 2).moment(0, 0) == doctest::Approx(2.0).epsilon(1e-14));
  // n = 4, k = 3: 4·6·8 / 64.
  CHECK(moment_exact(SymMatrix::identity(1), 4, 3).moment(0, 0) == doctest::Approx(3.0).epsilon(1e-14));
  // Σ = diag(2, 1), n = 4: (5/4)Σ² + (3/4)Σ.
  Vector v(2);
  v << 2.0, 1.0;
  const MomentResult r = moment_exact(SymMatrix::diagonal(v), 4, 2);
  CHECK(r.moment(0, 0) == doctest::Approx(6.5).epsilon(1e-14));
  CHECK(r.moment(1, 1) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(std::abs(r.moment(0, 1)) < 1e-14);
}

TEST_CASE("pairing counts") {
  CHECK(pairings(1).size() == 1);
  CHECK(pairings(2).size() == 3);
  CHECK(pairings(3).size() == 15);
  CHECK(pairings(4).size() == 105);
  for (const auto& p : pairings(3)) {
    std::vector<int> seen(6, 0);
    for (const auto& [a, b] : p) {
      ++seen[a];
      ++seen[b];
    }
    for (int s : seen) CHECK(s == 1);
  }
}

TEST_CASE("component counting and multi-index enumeration agree") {
  Stream rng(4);
  for (int d = 1; d <= 3; ++d)
    for (int k = 1; k <= 3; ++k)
      for (int n : {1, 3}) {
        const SymMatrix s = random_symmetric_with_spectrum(Vector::LinSpaced(d, 0.5, 1.7), rng);
        const Matrix a = moment_exact(s, n, k).moment.mat();
        const Matrix b = moment_exact_multiindex(s, n, k).moment.mat();
        CHECK((a - b).norm() <= 1e-12 * b.norm());
      }
}

TEST_CASE("moments are rotation covariant") {
  Stream rng(5);
  const SymMatrix s = random_symmetric_with_spectrum(Vector::LinSpaced(3, 0.5, 2.0), rng);
  const Matrix R = random_orthogonal(3, rng);
  const Matrix a = R * moment_exact(s, 7, 3).moment.mat() * R.transpose();
  const Matrix b = moment_exact(SymMatrix(R * s.mat() * R.transpose()), 7, 3).moment.mat();
  CHECK((a - b).norm() < 1e-11 * b.norm());
}

TEST_CASE("envelope and Monte Carlo fallback") {
  CHECK(in_exact_envelope(3, 4));
  CHECK_FALSE(in_exact_envelope(4, 2));
  CHECK_THROWS_AS(moment_exact(SymMatrix::identity(4), 10, 2), EnvelopeError);
  const MomentResult mc = moment_auto(SymMatrix::identity(4), 10, 2, 20000, 3);
  CHECK_FALSE(mc.exact);
  // E Σ̂² = (1 + (d + 1)/n) I for Σ = I.
  for (int i = 0; i < 4; ++i) CHECK(std::abs(mc.moment(i, i) - 1.5) <= 4.0 * mc.std_error(i, i));
}

TEST_CASE("moment bound report verdicts") {
  const BoundReport ok = check_moment_bounds(SymMatrix::identity(1), 64, 2);
  CHECK(ok.verdict == Verdict::kPass);
  const BoundReport pre = check_moment_bounds(SymMatrix::identity(2), 16, 2);
  CHECK(pre.verdict == Verdict::kPreconditionFailed);
  Vector v(2);
  v << 1.5, 0.7;
  const BoundReport band = check_eig_approx(SymMatrix::scaled_identity(2, 0.5), SymMatrix::diagonal(v), 256, 2);
  CHECK(band.verdict == Verdict::kPass);
}
