#pragma once

#include "looptf/matkernel.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace looptf {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

constexpr int kConfigSchemaVersion = 1;
constexpr const char* kVersion = "1.0.0";

/// Σ* as identity, an explicit diagonal, or a random SPD matrix with
/// eigenvalues uniform in [lo, hi] and a Haar basis drawn from `seed`.
struct SigmaSpec {
  std::string kind = "identity";
  std::vector<double> values;
  std::uint64_t seed = 0;
  double lo = 0.5;
  double hi = 2.0;

  SymMatrix build(int d) const;
};

nlohmann::json to_json(const SigmaSpec& s);
SigmaSpec sigma_spec_from_json(const nlohmann::json& j);

struct RunConfig {
  int schema_version = kConfigSchemaVersion;
  std::string command;
  int d = 10;
  int n = 20;
  int L = 5;
  SigmaSpec sigma;
  std::int64_t m = 10000;
  std::uint64_t seed = 7;

  // train / ood
  int steps = 10000;
  int batch = 64;
  double lr = 3e-3;
  double lr_final_fraction = 1e-2;
  std::string optimizer = "adam";
  double a_init = 0.1;
  double u_init = 0.1;
  bool train_u = true;
  bool multilayer = false;
  int record_every = 10;
  int train_loops = 5;
  int eval_loops = 20;
  double ood_lo = 0.6;
  double ood_hi = 1.2;

  // sample
  int count = 10;
  // loss
  std::string params_file;
  double a_scale = 1.0;
  // moments
  int k = 4;
  // flow
  std::vector<double> xi{0.1, 0.01};
  int starts = 5;
  // dominance
  std::int64_t trials = 1000;
  // ood bound
  double zeta = 0.5;
  // verify
  std::vector<int> criteria;

  /// Not part of the hash.
  std::string output_dir;

  void validate() const;
};

nlohmann::json to_json(const RunConfig& c);
/// Rejects unknown fields. Accepts a manifest too (its "config" member).
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);

/// FNV-1a over the canonical (sorted-key) JSON of the config without output_dir.
std::string config_hash(const RunConfig& c);

/// <root>/<command>-<hash>, root = output_dir, else $LOOPTF_OUT, else "runs".
std::filesystem::path run_directory(const RunConfig& c);

/// Tracks artifacts and writes manifest.json on finish.
class RunRecorder {
 public:
  explicit RunRecorder(RunConfig cfg);

  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path path(const std::string& name) const { return dir_ / name; }
  void add_artifact(const std::string& relative);
  void write_json(const std::string& name, const nlohmann::json& j);
  void write_text(const std::string& name, const std::string& text);
  void finish(int exit_code);

 private:
  RunConfig cfg_;
  std::filesystem::path dir_;
  std::vector<std::string> artifacts_;
  std::string started_;
  std::chrono::steady_clock::time_point t0_;
};

std::string utc_timestamp();
nlohmann::json version_info();

}  // namespace looptf
