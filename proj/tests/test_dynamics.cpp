#include "looptf/dynamics.hpp"

#include <doctest.h>

#include <cstdlib>
#include <sstream>

using namespace looptf;

TEST_CASE("comparison ODE") {
  CHECK(comparison_ode(1.0, 0.0, 2) == doctest::Approx(1.0));
  // L = 2: g = (1 + t/32)^{-2}
  CHECK(comparison_ode(1.0, 32.0, 2) == doctest::Approx(0.25));
  // g' = −(1/16) g^{(2L−1)/L}
  const double t = 3.0, h = 1e-5;
  for (int L : {1, 2, 3}) {
    const double dg = (comparison_ode(2.0, t + h, L) - comparison_ode(2.0, t - h, L)) / (2 * h);
    CHECK(dg == doctest::Approx(-std::pow(comparison_ode(2.0, t, L), (2.0 * L - 1.0) / L) / 16.0).epsilon(1e-6));
  }
  CHECK(dominance_rhs(1.0, 3) == doctest::Approx(1.0 / 16.0));
}

TEST_CASE("flow decreases the batch loss and lands on checkpoints") {
  const TaskDistribution dist = TaskDistribution::isotropic(2, 1000, 3);
  const CovarianceBatch b = sample_covariances(dist, 500);
  FlowConfig cfg;
  cfg.checkpoints = {flow_time_bound(0.1, 2)};
  cfg.t_end = cfg.checkpoints[0];
  const FlowTrace tr = integrate_flow(SymMatrix::scaled_identity(2, 0.2), 2, b, cfg);
  REQUIRE(tr.snapshots.size() == 1);
  CHECK(tr.snapshots[0].time == cfg.checkpoints[0]);
  for (std::size_t i = 1; i < tr.rows.size(); ++i) CHECK(tr.rows[i].loss < tr.rows[i - 1].loss);
  CHECK(tr.rows.back().step_or_time == doctest::Approx(cfg.t_end));
  CHECK(tr.rows.back().loss < 0.1);
}

TEST_CASE("trace CSV layout") {
  FlowTrace t;
  t.rows.push_back({1.0, 0.5, 0.5, 0.25, 0.125, 0.0});
  std::ostringstream os;
  write_trace_csv(os, t);
  std::istringstream in(os.str());
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == kTraceCsvHeader);
  CHECK(row == "1,0.5,0.5,0.25,0.125,0");
}

TEST_CASE("training is reproducible across worker counts") {
  const TaskDistribution dist = TaskDistribution::isotropic(3, 10, 5);
  TrainConfig cfg;
  cfg.steps = 200;
  cfg.batch = 16;
  cfg.lr = 3e-3;
  const LayerParamsSeq p0 = LayerParamsSeq::expand(random_init(3, 3, 0.1, 0.1, 5));
  auto run = [&](const char* threads) {
    setenv("LOOPTF_THREADS", threads, 1);
    std::ostringstream os;
    write_trace_csv(os, train_sgd(dist, p0, cfg));
    return os.str();
  };
  const std::string a = run("1"), b = run("3");
  unsetenv("LOOPTF_THREADS");
  CHECK(a == b);
}

TEST_CASE("short training run lowers the loss") {
  const TaskDistribution dist = TaskDistribution::isotropic(3, 20, 6);
  TrainConfig cfg;
  cfg.steps = 1500;
  cfg.lr = 1e-2;
  const LayerParamsSeq p0 = LayerParamsSeq::expand(random_init(3, 2, 0.1, 0.1, 6));
  const FlowTrace tr = train_sgd(dist, p0, cfg);
  CHECK_FALSE(tr.aborted);
  const double before = evaluate_loss(p0, dist, 5000).mean;
  const double after = evaluate_loss(tr.final_params, dist, 5000).mean;
  CHECK(after < 0.5 * before);
  // Shared weights stay shared.
  CHECK(tr.final_params.L() == 2);
  CHECK((tr.final_params.layers[0].A.mat() - tr.final_params.layers[1].A.mat()).norm() == 0.0);
}

TEST_CASE("loop override and optimizer names") {
  const LayerParamsSeq s = LayerParamsSeq::expand(random_init(2, 3, 0.5, 0.0, 1));
  CHECK(with_loops(s, 7).L() == 7);
  CHECK(optimizer_from_string("sgd") == Optimizer::kSgd);
  CHECK(to_string(Optimizer::kAdam) == "adam");
  CHECK_THROWS(optimizer_from_string("rmsprop"));
}

TEST_CASE("dominance scan rejects a non-identity covariance") {
  Vector v(2);
  v << 1.0, 2.0;
  const TaskDistribution dist(2, 100, SymMatrix::diagonal(v), 1);
  CHECK_THROWS_AS(scan_dominance(dist, 2, DominanceConfig{}), std::invalid_argument);
}
