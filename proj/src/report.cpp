#include "looptf/report.hpp"

#include <limits>

namespace looptf {

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::kPass:
      return "pass";
    case Verdict::kFail:
      return "fail";
    case Verdict::kPreconditionFailed:
      return "precondition_failed";
    case Verdict::kInconclusive:
      return "inconclusive";
    case Verdict::kAdvisory:
      return "advisory";
  }
  return "unknown";
}

void BoundReport::add(std::string name, double lhs, double rhs, bool asserted) {
  bounds.push_back({std::move(name), lhs, rhs, asserted});
}

void BoundReport::finalize() {
  if (verdict == Verdict::kPreconditionFailed || verdict == Verdict::kInconclusive) return;
  bool ok = true;
  for (const auto& b : bounds)
    if (b.asserted && !b.holds()) ok = false;
  if (verdict == Verdict::kAdvisory) return;
  verdict = ok ? Verdict::kPass : Verdict::kFail;
}

double BoundReport::min_slack() const {
  double s = std::numeric_limits<double>::infinity();
  for (const auto& b : bounds)
    if (b.asserted) s = std::min(s, b.slack());
  return s;
}

nlohmann::json to_json(const BoundReport& r) {
  nlohmann::json bounds = nlohmann::json::array();
  for (const auto& b : r.bounds) {
    bounds.push_back({{"name", b.name},
                      {"lhs", b.lhs},
                      {"rhs", b.rhs},
                      {"slack", b.slack()},
                      {"asserted", b.asserted},
                      {"holds", b.holds()}});
  }
  nlohmann::json j{{"lemma_id", r.lemma_id},
                   {"params", r.params},
                   {"bounds", bounds},
                   {"verdict", to_string(r.verdict)}};
  if (!r.note.empty()) j["note"] = r.note;
  return j;
}

}  // namespace looptf
