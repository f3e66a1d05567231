// Acceptance suite: one line per criterion, exit status per the expected-failure list.
#include "looptf/acceptance.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

int main(int argc, char** argv) {
  CLI::App app{"looptf acceptance criteria 1-13"};
  std::vector<int> only;
  std::uint64_t seed = 7;
  std::string out;
  app.add_option("--only", only, "criterion ids to run (default: all)")->delimiter(',');
  app.add_option("--seed", seed, "root seed");
  app.add_option("--out", out, "directory for acceptance.json and traces");
  CLI11_PARSE(app, argc, argv);

  looptf::AcceptanceContext ctx(seed);
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    ctx.trace_sink = [&out](const std::string& name, const looptf::FlowTrace& t) {
      looptf::write_trace_csv((std::filesystem::path(out) / name).string(), t);
    };
  }

  std::ostringstream lines;
  std::set<std::string> failed;
  int failed_criteria = 0;
  nlohmann::json all = nlohmann::json::array();
  for (const auto& info : looptf::acceptance_criteria()) {
    if (!only.empty() && std::find(only.begin(), only.end(), info.id) == only.end()) continue;
    const looptf::CriterionResult r = looptf::run_criterion(info.id, ctx);
    std::cout << looptf::format_result_line(r) << std::endl;
    lines << looptf::format_result_line(r) << '\n';
    if (!r.passed) ++failed_criteria;
    if (!r.error.empty()) failed.insert("criterion_" + std::to_string(info.id) + "_error");
    if (!r.within_budget) failed.insert("criterion_" + std::to_string(info.id) + "_budget");
    for (const auto& f : r.failed_checks()) failed.insert(f);
    for (const auto& c : r.checks)
      if (c.verdict == looptf::Verdict::kInconclusive || c.verdict == looptf::Verdict::kPreconditionFailed)
        failed.insert(c.lemma_id);
    all.push_back(looptf::to_json(r));
  }

  // Only the listed known failures may fail, and only if their criterion ran.
  std::ostringstream tail;
  int status = 0;
  for (const auto& f : failed) {
    const auto& known = looptf::expected_failures();
    if (std::find(known.begin(), known.end(), f) == known.end()) {
      tail << "unexpected failure: " << f << '\n';
      status = 1;
    }
  }
  const bool ran11 = only.empty() || std::find(only.begin(), only.end(), 11) != only.end();
  for (const auto& f : looptf::expected_failures()) {
    if (ran11 && !failed.count(f)) {
      tail << "expected failure now passes: " << f << " (update the expected-failure list)\n";
      status = 1;
    } else if (failed.count(f)) {
      tail << "known failure: " << f << '\n';
    }
  }
  tail << failed_criteria << " criteria failed\n";
  std::cout << tail.str();
  if (!out.empty()) {
    std::ofstream(std::filesystem::path(out) / "acceptance.json") << all.dump(2) << '\n';
    std::ofstream(std::filesystem::path(out) / "acceptance.txt") << lines.str() << tail.str();
  }
  return status;
}
