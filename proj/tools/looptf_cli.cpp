#include "looptf/acceptance.hpp"
#include "looptf/config.hpp"
#include "looptf/delta.hpp"
#include "looptf/dynamics.hpp"
#include "looptf/loss.hpp"
#include "looptf/moments.hpp"
#include "looptf/theory.hpp"

#include <CLI11.hpp>

#include <cstring>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

using namespace looptf;

namespace {

// Exit codes.
constexpr int kOk = 0;
constexpr int kMathFailure = 1;
constexpr int kConfigFailure = 2;

/// "identity", "diagonal:1,2,3", "random:SEED" or "random:SEED:LO:HI".
SigmaSpec parse_sigma(const std::string& s) {
  SigmaSpec spec;
  const auto colon = s.find(':');
  spec.kind = s.substr(0, colon);
  if (colon == std::string::npos) return spec;
  std::vector<std::string> parts;
  std::stringstream rest(s.substr(colon + 1));
  std::string tok;
  const char sep = spec.kind == "diagonal" ? ',' : ':';
  while (std::getline(rest, tok, sep)) parts.push_back(tok);
  try {
    if (spec.kind == "diagonal") {
      for (const auto& p : parts) spec.values.push_back(std::stod(p));
    } else if (spec.kind == "random") {
      if (parts.empty() || parts.size() == 2 || parts.size() > 3) throw ConfigError("bad random sigma");
      spec.seed = std::stoull(parts[0]);
      if (parts.size() == 3) {
        spec.lo = std::stod(parts[1]);
        spec.hi = std::stod(parts[2]);
      }
    }
  } catch (const std::logic_error&) {
    throw ConfigError("cannot parse --sigma '" + s + "'");
  }
  return spec;
}

TaskDistribution make_dist(const RunConfig& c) { return TaskDistribution(c.d, c.n, c.sigma.build(c.d), c.seed); }

std::string csv_escape(const std::string& s) {
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

/// Tightest asserted bound of a report, for the summary table.
const Bound* tightest(const BoundReport& r) {
  const Bound* best = nullptr;
  for (const auto& b : r.bounds)
    if (b.asserted && (!best || b.slack() < best->slack())) best = &b;
  return best;
}

struct ReportSink {
  std::ostringstream jsonl;
  std::ostringstream summary;
  std::vector<BoundReport> failing;

  ReportSink() { summary << "criterion,params,lhs,rhs,slack,verdict\n"; }

  void add(const std::string& criterion, const BoundReport& r) {
    nlohmann::json j = to_json(r);
    j["criterion"] = criterion;
    jsonl << j.dump() << '\n';
    const Bound* b = tightest(r);
    summary << csv_escape(criterion + ":" + r.lemma_id) << ',' << csv_escape(r.params.dump()) << ','
            << std::setprecision(17) << (b ? b->lhs : 0.0) << ',' << (b ? b->rhs : 0.0) << ','
            << (b ? b->slack() : 0.0) << ',' << to_string(r.verdict) << '\n';
    if (r.verdict == Verdict::kFail) failing.push_back(r);
  }

  int finish(RunRecorder& rec) {
    rec.write_text("reports.jsonl", jsonl.str());
    rec.write_text("summary.csv", summary.str());
    for (const auto& r : failing) std::cerr << "FAILED " << to_json(r).dump(2) << '\n';
    return failing.empty() ? kOk : kMathFailure;
  }
};

std::string trace_csv_name(const std::string& stem) { return stem + ".csv"; }

void save_trace(RunRecorder& rec, const std::string& stem, const FlowTrace& t) {
  write_trace_csv(rec.path(trace_csv_name(stem)).string(), t);
  rec.add_artifact(trace_csv_name(stem));
}

nlohmann::json seq_json(const LayerParamsSeq& s) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : s.layers)
    layers.push_back(to_json(LoopedParams{l.A, l.u, 1}));
  return {{"L", s.L()}, {"layers", layers}};
}

// ------------------------------------------------------------------ commands

int cmd_sample(const RunConfig& c, RunRecorder& rec) {
  const TaskDistribution dist = make_dist(c);
  std::ostringstream os;
  for (int i = 0; i < c.count; ++i) os << to_json(sample_instance(dist, static_cast<std::uint64_t>(i))).dump() << '\n';
  rec.write_text("instances.jsonl", os.str());
  std::cout << "wrote " << c.count << " instances to " << rec.path("instances.jsonl").string() << '\n';
  return kOk;
}

int cmd_loss(const RunConfig& c, RunRecorder& rec) {
  const TaskDistribution dist = make_dist(c);
  LoopedParams p;
  if (!c.params_file.empty()) {
    std::ifstream in(c.params_file);
    if (!in) throw ConfigError("cannot read params_file " + c.params_file);
    nlohmann::json j;
    try {
      in >> j;
      p = looped_params_from_json(j);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("params_file: " + std::string(e.what()));
    }
    if (p.d() != c.d) throw ConfigError("params_file dimension does not match d");
  } else {
    p = LoopedParams{c.a_scale * dist.sigma_star_inv(), Vector::Zero(c.d), c.L};
  }
  const LossEstimate emp = empirical_loss(p, dist, c.m);
  const LossEstimate cf = closedform_loss_with_u(p.A, p.u, p.L, dist, c.m);
  const LossEstimate cond = conditional_loss(p, dist, c.m);
  const SymMatrix g = grad_loss(p.A, p.L, dist, c.m);
  auto est = [](const LossEstimate& e) { return nlohmann::json{{"mean", e.mean}, {"std_error", e.std_error}, {"m", e.m}}; };
  nlohmann::json out{{"params", to_json(p)},
                     {"empirical", est(emp)},
                     {"closedform_trace", est(cf)},
                     {"closedform_u_term", {{"mean", cf.u_term_mean}, {"std_error", cf.u_term_std_error}}},
                     {"conditional", est(cond)},
                     {"grad_u0", std::vector<std::vector<double>>()}};
  for (int i = 0; i < c.d; ++i) {
    std::vector<double> row;
    for (int j = 0; j < c.d; ++j) row.push_back(g(i, j));
    out["grad_u0"].push_back(row);
  }
  rec.write_json("loss.json", out);
  std::cout << std::setprecision(6) << "empirical " << emp.mean << " +- " << emp.std_error << "\ntrace form "
            << cf.mean << " +- " << cf.std_error << "\nconditional " << cond.mean << " +- " << cond.std_error << '\n';
  return kOk;
}

TrainConfig train_config(const RunConfig& c) {
  TrainConfig t = reproduction_train_config();
  t.steps = c.steps;
  t.batch = c.batch;
  t.lr = c.lr;
  t.lr_final_fraction = c.lr_final_fraction;
  t.optimizer = optimizer_from_string(c.optimizer);
  t.record_every = c.record_every;
  t.train_u = c.train_u;
  t.shared = !c.multilayer;
  return t;
}

int cmd_train(const RunConfig& c, RunRecorder& rec) {
  const TaskDistribution dist = make_dist(c);
  const LayerParamsSeq p0 = LayerParamsSeq::expand(random_init(c.d, c.L, c.a_init, c.u_init, c.seed));
  const FlowTrace tr = train_sgd(dist, p0, train_config(c));
  save_trace(rec, "trace", tr);
  const LossEstimate eval = evaluate_loss(tr.final_params, dist.with_seed(mix64(c.seed + 1)), c.m);
  const double dist_id = tr.rows.empty() ? 0.0 : tr.rows.back().spec_dist_to_identity;
  rec.write_json("params.json", seq_json(tr.final_params));
  rec.write_json("summary.json", {{"eval_loss", eval.mean},
                                  {"eval_std_error", eval.std_error},
                                  {"spec_dist_to_identity", dist_id},
                                  {"aborted", tr.aborted},
                                  {"message", tr.message}});
  std::cout << std::setprecision(6) << "eval loss " << eval.mean << " +- " << eval.std_error
            << ", ||A Sigma* - I|| " << dist_id << ", run dir " << rec.dir().string() << '\n';
  if (tr.aborted) {
    std::cerr << "training diverged: " << tr.message << '\n';
    return kMathFailure;
  }
  return kOk;
}

int cmd_flow(const RunConfig& c, RunRecorder& rec) {
  if (c.L < 2) throw ConfigError("flow needs L >= 2 for the rate bound");
  const TaskDistribution dist = make_dist(c);
  const CovarianceBatch batch = sample_covariances(dist, c.m);
  const CovarianceBatch fresh = sample_covariances(dist.with_seed(mix64(c.seed + 1)), c.m);
  FlowConfig cfg;
  cfg.m = c.m;
  for (double xi : c.xi) cfg.checkpoints.push_back(flow_time_bound(xi, c.L));
  cfg.t_end = *std::max_element(cfg.checkpoints.begin(), cfg.checkpoints.end());
  ReportSink sink;
  for (int s = 0; s < c.starts; ++s) {
    Stream rng(c.seed, StreamTag::kInit, static_cast<std::uint64_t>(s));
    SymMatrix A0;
    double f0 = 0.0;
    do {
      Vector spec(c.d);
      for (int i = 0; i < c.d; ++i) spec(i) = 0.05 + 1.45 * rng.uniform();
      A0 = random_symmetric_with_spectrum(spec, rng);
      f0 = closedform_loss(A0, c.L, batch).mean;
    } while (f0 > c.d);
    const FlowTrace tr = integrate_flow(A0, c.L, batch, cfg);
    save_trace(rec, "flow_start" + std::to_string(s), tr);
    for (std::size_t k = 0; k < c.xi.size(); ++k) {
      const LossEstimate pop = closedform_loss(tr.snapshots.at(k).A, c.L, fresh);
      BoundReport r;
      r.lemma_id = "flow_rate_start" + std::to_string(s);
      r.params = {{"xi", c.xi[k]}, {"t_star", tr.snapshots[k].time}, {"loss", pop.mean}, {"loss_se", pop.std_error}};
      r.add("L(A(t*)) + 4se <= xi", pop.mean + 4.0 * pop.std_error, c.xi[k]);
      r.finalize();
      sink.add("flow", r);
    }
    BoundReport ode;
    ode.lemma_id = "flow_ode_start" + std::to_string(s);
    double worst = 0.0;
    for (const auto& row : tr.rows) worst = std::max(worst, row.loss / comparison_ode(f0, row.step_or_time, c.L));
    ode.add("max f/g", worst, 1.05);
    ode.finalize();
    sink.add("flow", ode);
  }
  return sink.finish(rec);
}

int cmd_dominance(const RunConfig& c, RunRecorder& rec) {
  DominanceConfig cfg;
  cfg.trials = c.trials;
  cfg.m = c.m;
  const DominanceReport r = scan_dominance(make_dist(c), c.L, cfg);
  std::ostringstream os;
  os << "trial,loss,loss_std_error,grad_norm_sq,ratio,qualifies\n" << std::setprecision(17);
  for (std::size_t i = 0; i < r.samples.size(); ++i) {
    const auto& s = r.samples[i];
    os << i << ',' << s.loss << ',' << s.loss_std_error << ',' << s.grad_norm_sq << ',' << s.ratio << ','
       << (s.qualifies ? 1 : 0) << '\n';
  }
  rec.write_text("samples.csv", os.str());
  nlohmann::json j = to_json(r);
  rec.write_json("dominance.json", j);
  std::cout << "min ratio " << r.min_ratio << " over " << r.qualifying << " qualifying samples (need >= 1/16): "
            << to_string(r.verdict) << '\n';
  if (r.verdict == Verdict::kFail) return kMathFailure;
  return kOk;
}

int cmd_moments(const RunConfig& c, RunRecorder& rec) {
  const SymMatrix sigma = c.sigma.build(c.d);
  std::ostringstream table;
  table << "k,i,j,value,std_error,exact\n" << std::setprecision(17);
  ReportSink sink;
  MomentCheckOptions opt;
  opt.mc_samples = c.m;
  opt.seed = c.seed;
  opt.L = c.L;
  for (int k = 1; k <= c.k; ++k) {
    const MomentResult r = moment_auto(sigma, c.n, k, c.m, c.seed);
    for (int i = 0; i < c.d; ++i)
      for (int j = 0; j < c.d; ++j)
        table << k << ',' << i << ',' << j << ',' << r.moment(i, j) << ',' << r.std_error(i, j) << ','
              << (r.exact ? 1 : 0) << '\n';
    sink.add("moment_control", check_moment_bounds(sigma, c.n, k, opt));
    sink.add("eig_approx", check_eig_approx(spd_inverse(sigma), sigma, c.n, k, opt));
  }
  rec.write_text("moments.csv", table.str());
  return sink.finish(rec);
}

int cmd_verify(const RunConfig& c, RunRecorder& rec) {
  ReportSink sink;
  // Point checks at the requested (d, n, L).
  const TaskDistribution dist = make_dist(c);
  sink.add("global_minimizer", verify_global_minimizer(dist.sigma_star_inv(), Vector::Zero(c.d), c.L, dist));
  MomentCheckOptions opt;
  opt.seed = c.seed;
  opt.L = c.L;
  for (int k = 1; k <= std::min(c.k, 4); ++k) {
    if (!in_exact_envelope(c.d, k)) break;
    sink.add("moment_control", check_moment_bounds(dist.sigma_star(), c.n, k, opt));
    sink.add("eig_approx", check_eig_approx(dist.sigma_star_inv(), dist.sigma_star(), c.n, k, opt));
  }
  for (std::uint64_t i = 0; i < 20; ++i)
    sink.add("ood_bound", ood_check(sample_ood_instance(dist, dist.sigma_star(), i), dist.sigma_star_inv(), c.L, dist,
                                    c.zeta));

  // Acceptance suite.
  AcceptanceContext ctx(c.seed);
  ctx.trace_sink = [&rec](const std::string& name, const FlowTrace& t) {
    write_trace_csv(rec.path(name).string(), t);
    rec.add_artifact(name);
  };
  std::vector<int> ids = c.criteria;
  if (ids.empty())
    for (const auto& info : acceptance_criteria()) ids.push_back(info.id);
  nlohmann::json results = nlohmann::json::array();
  bool criteria_ok = true;
  for (int id : ids) {
    const CriterionResult r = run_criterion(id, ctx);
    std::cout << format_result_line(r) << std::endl;
    for (const auto& check : r.checks) sink.add("criterion_" + std::to_string(id), check);
    if (!r.passed) criteria_ok = false;
    results.push_back(to_json(r));
  }
  rec.write_json("acceptance.json", results);
  const int status = sink.finish(rec);
  return (status == kOk && criteria_ok) ? kOk : kMathFailure;
}

int cmd_ood(const RunConfig& c, RunRecorder& rec) {
  const TaskDistribution dist = make_dist(c);
  const LayerParamsSeq p0 = LayerParamsSeq::expand(random_init(c.d, c.train_loops, c.a_init, c.u_init, c.seed));
  const FlowTrace tr = train_sgd(dist, p0, train_config(c));
  save_trace(rec, "trace", tr);
  if (tr.aborted) {
    std::cerr << "training diverged: " << tr.message << '\n';
    return kMathFailure;
  }
  Stream rng(c.seed, StreamTag::kConfig, 12100);
  Vector spec(c.d);
  for (int i = 0; i < c.d; ++i) spec(i) = c.ood_lo + (c.ood_hi - c.ood_lo) * rng.uniform();
  const Matrix& root = dist.sigma_star_sqrt().mat();
  const SymMatrix cov_out(root * random_symmetric_with_spectrum(spec, rng).mat() * root);
  std::vector<int> loops{c.train_loops};
  while (loops.back() < c.eval_loops) loops.push_back(std::min(c.eval_loops, loops.back() * 2));
  const TaskDistribution eval_dist = dist.with_seed(mix64(c.seed + 12100));
  std::ostringstream os;
  os << "loops,set,loss,std_error\n" << std::setprecision(17);
  BoundReport r;
  r.lemma_id = "ood_more_loops";
  r.params = {{"train_loops", c.train_loops}, {"eval_loops", c.eval_loops}, {"ood_lo", c.ood_lo}, {"ood_hi", c.ood_hi}};
  for (bool ood : {false, true}) {
    const std::string set = ood ? "ood" : "id";
    const auto cov = ood ? std::optional<SymMatrix>(cov_out) : std::nullopt;
    std::vector<LossEstimate> ls;
    for (int l : loops) {
      ls.push_back(evaluate_loss(with_loops(tr.final_params, l), eval_dist, c.m, cov));
      os << l << ',' << set << ',' << ls.back().mean << ',' << ls.back().std_error << '\n';
      std::cout << set << " loops " << l << ": " << ls.back().mean << " +- " << ls.back().std_error << '\n';
    }
    r.add(set + ": loss(eval_loops) <= loss(train_loops) + 3se", ls.back().mean,
          ls.front().mean + 3.0 * std::hypot(ls.back().std_error, ls.front().std_error));
  }
  r.finalize();
  rec.write_text("ood.csv", os.str());
  ReportSink sink;
  sink.add("ood", r);
  return sink.finish(rec);
}

/// Value of --config before full parsing, so that flags can override the file.
std::optional<std::string> prescan_config(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) return std::string(argv[i + 1]);
    if (a.rfind("--config=", 0) == 0) return a.substr(9);
  }
  return std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
  RunConfig cfg;
  try {
    if (auto path = prescan_config(argc, argv)) cfg = load_config(*path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigFailure;
  }

  CLI::App app{"looped linear-attention transformer toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  std::string config_path, sigma_text;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file (flags override it)");
    sub->add_option("--d", cfg.d, "input dimension");
    sub->add_option("--n", cfg.n, "in-context examples");
    sub->add_option("--L", cfg.L, "loops");
    sub->add_option("--sigma", sigma_text, "identity | diagonal:v1,v2,.. | random:SEED[:LO:HI]");
    sub->add_option("--m", cfg.m, "Monte Carlo samples");
    sub->add_option("--seed", cfg.seed, "root seed");
    sub->add_option("--output-dir", cfg.output_dir, "output root (default $LOOPTF_OUT or ./runs)");
  };
  auto training = [&](CLI::App* sub) {
    sub->add_option("--steps", cfg.steps);
    sub->add_option("--batch", cfg.batch);
    sub->add_option("--lr", cfg.lr);
    sub->add_option("--lr-final-fraction", cfg.lr_final_fraction);
    sub->add_option("--optimizer", cfg.optimizer, "sgd | adam");
    sub->add_option("--a-init", cfg.a_init);
    sub->add_option("--u-init", cfg.u_init);
    sub->add_option("--train-u", cfg.train_u);
    sub->add_option("--record-every", cfg.record_every);
  };

  auto* sample = app.add_subcommand("sample", "emit regression instances as JSON lines");
  common(sample);
  sample->add_option("--count", cfg.count);
  auto* loss = app.add_subcommand("loss", "loss estimates and gradient at given parameters");
  common(loss);
  loss->add_option("--params-file", cfg.params_file, "LoopedParams JSON; default A = a_scale * Sigma*^-1, u = 0");
  loss->add_option("--a-scale", cfg.a_scale);
  auto* train = app.add_subcommand("train", "SGD training of the looped (or multilayer) model");
  common(train);
  training(train);
  train->add_option("--multilayer", cfg.multilayer, "independent layers instead of shared weights");
  auto* flow = app.add_subcommand("flow", "gradient flow on the population loss and rate checks");
  common(flow);
  flow->add_option("--xi", cfg.xi)->delimiter(',');
  flow->add_option("--starts", cfg.starts);
  auto* dom = app.add_subcommand("dominance", "gradient-dominance scan");
  common(dom);
  dom->add_option("--trials", cfg.trials);
  auto* mom = app.add_subcommand("moments", "sample-covariance moment table and bound reports");
  common(mom);
  mom->add_option("--k", cfg.k, "largest moment order");
  auto* verify = app.add_subcommand("verify", "bound checks at (d, n, L) plus the acceptance suite");
  common(verify);
  verify->add_option("--criteria", cfg.criteria, "acceptance criteria ids (default all)")->delimiter(',');
  verify->add_option("--k", cfg.k);
  verify->add_option("--zeta", cfg.zeta);
  auto* ood = app.add_subcommand("ood", "ID vs OOD evaluation with more loops than trained");
  common(ood);
  training(ood);
  ood->add_option("--train-loops", cfg.train_loops);
  ood->add_option("--eval-loops", cfg.eval_loops);
  ood->add_option("--ood-lo", cfg.ood_lo);
  ood->add_option("--ood-hi", cfg.ood_hi);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigFailure;
  }

  const CLI::App* chosen = app.get_subcommands().front();
  cfg.command = chosen->get_name();
  try {
    if (!sigma_text.empty()) cfg.sigma = parse_sigma(sigma_text);
    cfg.validate();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigFailure;
  }

  RunRecorder rec(cfg);
  int rc = kOk;
  try {
    const std::string& name = cfg.command;
    if (name == "sample") rc = cmd_sample(cfg, rec);
    else if (name == "loss") rc = cmd_loss(cfg, rec);
    else if (name == "train") rc = cmd_train(cfg, rec);
    else if (name == "flow") rc = cmd_flow(cfg, rec);
    else if (name == "dominance") rc = cmd_dominance(cfg, rec);
    else if (name == "moments") rc = cmd_moments(cfg, rec);
    else if (name == "verify") rc = cmd_verify(cfg, rec);
    else if (name == "ood") rc = cmd_ood(cfg, rec);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    rc = kConfigFailure;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    rc = kConfigFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    rc = kMathFailure;
  }
  rec.finish(rc);
  return rc;
}
