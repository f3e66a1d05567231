#pragma once

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace looptf {

enum class Verdict { kPass, kFail, kPreconditionFailed, kInconclusive, kAdvisory };

std::string to_string(Verdict v);

/// One inequality lhs ≤ rhs. Informational bounds are reported but do not
/// enter the verdict.
struct Bound {
  std::string name;
  double lhs = 0.0;
  double rhs = 0.0;
  bool asserted = true;

  bool holds() const { return lhs <= rhs; }
  double slack() const { return rhs - lhs; }
};

struct BoundReport {
  std::string lemma_id;
  nlohmann::json params = nlohmann::json::object();
  std::vector<Bound> bounds;
  Verdict verdict = Verdict::kPass;
  std::string note;

  void add(std::string name, double lhs, double rhs, bool asserted = true);
  /// Pass iff every asserted bound holds; keeps a precondition/inconclusive verdict.
  void finalize();
  bool passed() const { return verdict == Verdict::kPass; }
  double min_slack() const;
};

nlohmann::json to_json(const BoundReport& r);

}  // namespace looptf
