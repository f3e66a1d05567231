#include "looptf/config.hpp"

#include "looptf/rng.hpp"

#include <Eigen/Core>
#include <boost/version.hpp>

#include <algorithm>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace looptf {

namespace {

const std::set<std::string> kConfigKeys = {
    "schema_version", "command", "d",         "n",          "L",          "sigma",       "m",
    "seed",           "steps",   "batch",     "lr",         "lr_final_fraction", "optimizer", "a_init",
    "u_init",         "train_u", "multilayer", "record_every", "train_loops", "eval_loops", "ood_lo",
    "ood_hi",         "count",   "params_file", "a_scale",  "k",          "xi",          "starts",
    "trials",         "zeta",    "criteria",  "output_dir"};

const std::set<std::string> kSigmaKeys = {"kind", "values", "seed", "lo", "hi"};

template <class T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw ConfigError("unknown field '" + it.key() + "' in " + where);
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

SymMatrix SigmaSpec::build(int d) const {
  if (kind == "identity") return SymMatrix::identity(d);
  if (kind == "diagonal") {
    if (static_cast<int>(values.size()) != d)
      throw ConfigError("sigma.values must have d = " + std::to_string(d) + " entries");
    Vector v(d);
    for (int i = 0; i < d; ++i) {
      if (!(values[static_cast<std::size_t>(i)] > 0.0)) throw ConfigError("sigma.values must be positive");
      v(i) = values[static_cast<std::size_t>(i)];
    }
    return SymMatrix::diagonal(v);
  }
  if (kind == "random") {
    if (!(lo > 0.0 && hi >= lo)) throw ConfigError("sigma needs 0 < lo <= hi");
    Stream rng(seed, StreamTag::kConfig, 0);
    Vector v(d);
    for (int i = 0; i < d; ++i) v(i) = lo + (hi - lo) * rng.uniform();
    return random_symmetric_with_spectrum(v, rng);
  }
  throw ConfigError("sigma.kind must be identity, diagonal or random (got '" + kind + "')");
}

nlohmann::json to_json(const SigmaSpec& s) {
  nlohmann::json j{{"kind", s.kind}};
  if (s.kind == "diagonal") j["values"] = s.values;
  if (s.kind == "random") {
    j["seed"] = s.seed;
    j["lo"] = s.lo;
    j["hi"] = s.hi;
  }
  return j;
}

SigmaSpec sigma_spec_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    SigmaSpec s;
    s.kind = j.get<std::string>();
    return s;
  }
  reject_unknown(j, kSigmaKeys, "sigma");
  SigmaSpec s;
  read(j, "kind", s.kind);
  read(j, "values", s.values);
  read(j, "seed", s.seed);
  read(j, "lo", s.lo);
  read(j, "hi", s.hi);
  return s;
}

void RunConfig::validate() const {
  if (schema_version != kConfigSchemaVersion)
    throw ConfigError("unsupported schema_version " + std::to_string(schema_version));
  if (d < 1 || d > 64) throw ConfigError("d must be in [1, 64]");
  if (n < 1) throw ConfigError("n must be >= 1");
  if (L < 1) throw ConfigError("L must be >= 1");
  if (m < 1) throw ConfigError("m must be >= 1");
  if (steps < 1 || batch < 1) throw ConfigError("steps and batch must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(lr_final_fraction > 0.0 && lr_final_fraction <= 1.0)) throw ConfigError("lr_final_fraction must be in (0, 1]");
  if (optimizer != "sgd" && optimizer != "adam") throw ConfigError("optimizer must be sgd or adam");
  if (record_every < 1) throw ConfigError("record_every must be >= 1");
  if (train_loops < 1 || eval_loops < 1) throw ConfigError("train_loops and eval_loops must be >= 1");
  if (!(ood_lo > 0.0 && ood_hi >= ood_lo)) throw ConfigError("need 0 < ood_lo <= ood_hi");
  if (count < 1) throw ConfigError("count must be >= 1");
  if (k < 1) throw ConfigError("k must be >= 1");
  for (double x : xi)
    if (!(x > 0.0)) throw ConfigError("xi values must be positive");
  if (starts < 1 || trials < 1) throw ConfigError("starts and trials must be >= 1");
  if (!(zeta > 0.0 && zeta < 1.0)) throw ConfigError("zeta must be in (0, 1)");
  (void)sigma.build(d);
}

nlohmann::json to_json(const RunConfig& c) {
  return {{"schema_version", c.schema_version},
          {"command", c.command},
          {"d", c.d},
          {"n", c.n},
          {"L", c.L},
          {"sigma", to_json(c.sigma)},
          {"m", c.m},
          {"seed", c.seed},
          {"steps", c.steps},
          {"batch", c.batch},
          {"lr", c.lr},
          {"lr_final_fraction", c.lr_final_fraction},
          {"optimizer", c.optimizer},
          {"a_init", c.a_init},
          {"u_init", c.u_init},
          {"train_u", c.train_u},
          {"multilayer", c.multilayer},
          {"record_every", c.record_every},
          {"train_loops", c.train_loops},
          {"eval_loops", c.eval_loops},
          {"ood_lo", c.ood_lo},
          {"ood_hi", c.ood_hi},
          {"count", c.count},
          {"params_file", c.params_file},
          {"a_scale", c.a_scale},
          {"k", c.k},
          {"xi", c.xi},
          {"starts", c.starts},
          {"trials", c.trials},
          {"zeta", c.zeta},
          {"criteria", c.criteria},
          {"output_dir", c.output_dir}};
}

RunConfig config_from_json(const nlohmann::json& in) {
  const nlohmann::json& j = (in.is_object() && in.contains("config") && in.contains("artifacts")) ? in.at("config") : in;
  reject_unknown(j, kConfigKeys, "config");
  RunConfig c;
  read(j, "schema_version", c.schema_version);
  read(j, "command", c.command);
  read(j, "d", c.d);
  read(j, "n", c.n);
  read(j, "L", c.L);
  if (j.contains("sigma")) c.sigma = sigma_spec_from_json(j.at("sigma"));
  read(j, "m", c.m);
  read(j, "seed", c.seed);
  read(j, "steps", c.steps);
  read(j, "batch", c.batch);
  read(j, "lr", c.lr);
  read(j, "lr_final_fraction", c.lr_final_fraction);
  read(j, "optimizer", c.optimizer);
  read(j, "a_init", c.a_init);
  read(j, "u_init", c.u_init);
  read(j, "train_u", c.train_u);
  read(j, "multilayer", c.multilayer);
  read(j, "record_every", c.record_every);
  read(j, "train_loops", c.train_loops);
  read(j, "eval_loops", c.eval_loops);
  read(j, "ood_lo", c.ood_lo);
  read(j, "ood_hi", c.ood_hi);
  read(j, "count", c.count);
  read(j, "params_file", c.params_file);
  read(j, "a_scale", c.a_scale);
  read(j, "k", c.k);
  read(j, "xi", c.xi);
  read(j, "starts", c.starts);
  read(j, "trials", c.trials);
  read(j, "zeta", c.zeta);
  read(j, "criteria", c.criteria);
  read(j, "output_dir", c.output_dir);
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

std::string config_hash(const RunConfig& c) {
  nlohmann::json j = to_json(c);
  j.erase("output_dir");
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(j.dump());
  return os.str();
}

std::filesystem::path run_directory(const RunConfig& c) {
  std::filesystem::path root = "runs";
  if (!c.output_dir.empty())
    root = c.output_dir;
  else if (const char* env = std::getenv("LOOPTF_OUT"); env && *env)
    root = env;
  return root / (c.command + "-" + config_hash(c));
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

nlohmann::json version_info() {
  std::ostringstream eigen;
  eigen << EIGEN_WORLD_VERSION << '.' << EIGEN_MAJOR_VERSION << '.' << EIGEN_MINOR_VERSION;
  return {{"looptf", kVersion},
          {"eigen", eigen.str()},
          {"boost", BOOST_LIB_VERSION},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
          {"compiler", __VERSION__}};
}

RunRecorder::RunRecorder(RunConfig cfg)
    : cfg_(std::move(cfg)), dir_(run_directory(cfg_)), started_(utc_timestamp()), t0_(std::chrono::steady_clock::now()) {
  std::filesystem::create_directories(dir_);
}

void RunRecorder::add_artifact(const std::string& relative) {
  if (std::find(artifacts_.begin(), artifacts_.end(), relative) == artifacts_.end()) artifacts_.push_back(relative);
}

void RunRecorder::write_json(const std::string& name, const nlohmann::json& j) {
  std::ofstream out(path(name));
  if (!out) throw std::runtime_error("cannot write " + path(name).string());
  out << j.dump(2) << '\n';
  add_artifact(name);
}

void RunRecorder::write_text(const std::string& name, const std::string& text) {
  std::ofstream out(path(name));
  if (!out) throw std::runtime_error("cannot write " + path(name).string());
  out << text;
  add_artifact(name);
}

void RunRecorder::finish(int exit_code) {
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  nlohmann::json manifest{{"schema_version", kConfigSchemaVersion},
                          {"config", to_json(cfg_)},
                          {"config_hash", config_hash(cfg_)},
                          {"seed", cfg_.seed},
                          {"started_at", started_},
                          {"finished_at", utc_timestamp()},
                          {"wall_seconds", wall},
                          {"exit_code", exit_code},
                          {"versions", version_info()},
                          {"artifacts", artifacts_}};
  std::ofstream out(path("manifest.json"));
  if (!out) throw std::runtime_error("cannot write manifest.json");
  out << manifest.dump(2) << '\n';
}

}  // namespace looptf
