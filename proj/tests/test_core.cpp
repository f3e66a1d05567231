#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "looptf/config.hpp"
#include "looptf/matkernel.hpp"
#include "looptf/rng.hpp"
#include "looptf/tasks.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace looptf;

TEST_CASE("square roots and inverses") {
  Stream rng(1);
  const SymMatrix s = random_symmetric_with_spectrum(Vector::LinSpaced(4, 0.3, 3.0), rng);
  const Matrix r = psd_sqrt(s).mat();
  CHECK((r * r - s.mat()).norm() < 1e-12);
  CHECK((psd_inv_sqrt(s).mat() * r - Matrix::Identity(4, 4)).norm() < 1e-12);
  CHECK((spd_inverse(s).mat() * s.mat() - Matrix::Identity(4, 4)).norm() < 1e-12);
  CHECK(max_eigenvalue(s) == doctest::Approx(3.0));
  CHECK(min_eigenvalue(s) == doctest::Approx(0.3));
  CHECK((matrix_power(s, 3).mat() - s.mat() * s.mat() * s.mat()).norm() < 1e-11);
  CHECK_THROWS_AS(psd_sqrt(SymMatrix::scaled_identity(2, -1.0)), NotPsdError);
}

TEST_CASE("Loewner band") {
  Vector v(2);
  v << 0.5, 2.0;
  const BandCheck in = loewner_band(SymMatrix::diagonal(v), SymMatrix::identity(2), 0.4, 2.5);
  CHECK(in.inside);
  CHECK(in.min_ratio == doctest::Approx(0.5));
  CHECK(in.max_ratio == doctest::Approx(2.0));
  CHECK_FALSE(loewner_band(SymMatrix::diagonal(v), SymMatrix::identity(2), 0.6, 2.5).inside);
}

TEST_CASE("sub-streams are independent of draw order") {
  const TaskDistribution dist = TaskDistribution::isotropic(3, 5, 42);
  const RegressionInstance a = sample_instance(dist, 7);
  sample_instance(dist, 3);
  const RegressionInstance b = sample_instance(dist, 7);
  CHECK((a.X - b.X).norm() == 0.0);
  CHECK(a.y_q == b.y_q);
  CHECK(substream_seed(1, StreamTag::kInstance, 0) != substream_seed(1, StreamTag::kEval, 0));
}

TEST_CASE("labels are noiseless and instances round-trip") {
  const TaskDistribution dist = TaskDistribution::isotropic(4, 9, 2);
  const RegressionInstance inst = sample_instance(dist, 0);
  CHECK((inst.y - inst.X.transpose() * inst.w_star).norm() < 1e-12);
  const RegressionInstance back = instance_from_json(to_json(inst));
  CHECK((back.X - inst.X).norm() == 0.0);
  CHECK(back.y_q == inst.y_q);
  // n < d: the Gram matrix is singular.
  CHECK_THROWS_AS(solve_exact(sample_instance(TaskDistribution::isotropic(4, 2, 1), 0)), SingularGramError);
}

TEST_CASE("config rejects unknown fields and hashes canonically") {
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"d", 3}, {"lerning_rate", 0.1}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"sigma", {{"kind", "random"}, {"sed", 1}}}}), ConfigError);
  RunConfig a = config_from_json(nlohmann::json{{"command", "train"}, {"d", 5}, {"n", 20}});
  RunConfig b = a;
  b.output_dir = "/elsewhere";
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 16);
  b.seed = 8;
  CHECK(config_hash(a) != config_hash(b));
  const RunConfig c = config_from_json(to_json(a));
  CHECK(config_hash(c) == config_hash(a));
  // Manifest form.
  const RunConfig m = config_from_json(nlohmann::json{{"config", to_json(a)}, {"artifacts", nlohmann::json::array()}});
  CHECK(config_hash(m) == config_hash(a));
}

TEST_CASE("config validation") {
  RunConfig c;
  c.d = 2;
  c.sigma.kind = "diagonal";
  c.sigma.values = {1.0, 2.0};
  CHECK_NOTHROW(c.validate());
  c.sigma.values = {1.0};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.sigma.kind = "banana";
  CHECK_THROWS_AS(c.validate(), ConfigError);
  RunConfig z;
  z.zeta = 1.5;
  CHECK_THROWS_AS(z.validate(), ConfigError);
}

TEST_CASE("run recorder writes a manifest") {
  RunConfig c;
  c.command = "sample";
  c.output_dir = (std::filesystem::temp_directory_path() / "looptf_recorder_test").string();
  std::filesystem::remove_all(c.output_dir);
  RunRecorder rec(c);
  rec.write_text("x.txt", "hi\n");
  rec.finish(0);
  std::ifstream in(rec.path("manifest.json"));
  nlohmann::json j;
  in >> j;
  CHECK(j["artifacts"] == nlohmann::json::array({"x.txt"}));
  CHECK(j["config_hash"] == config_hash(c));
  CHECK(j["exit_code"] == 0);
  CHECK(rec.dir().filename().string() == "sample-" + config_hash(c));
}
