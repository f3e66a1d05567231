#include "looptf/delta.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace looptf {

DeltaParams delta_params(double n, int d, int L) {
  if (n < 1 || d < 1 || L < 1) throw std::invalid_argument("delta_params: n, d, L must be >= 1");
  DeltaParams p;
  p.n = n;
  p.d = d;
  p.L = L;
  const double root_n = std::sqrt(n);
  const double inv2L = 1.0 / (2.0 * L);
  p.delta = std::pow(8.0 * L * d / root_n, inv2L);
  p.c_opt = 8.0 * p.delta * std::pow(static_cast<double>(d), inv2L);
  p.loss_bound_opt = 8.0 * L * d * d * std::pow(2.0, 2 * L) / root_n;
  p.condition_ok = 8.0 * L * d * d / root_n <= std::pow(2.0, -2 * L);
  return p;
}

double moment_slack(double n, int d, int k) { return 4.0 * k * d / std::sqrt(n); }

DominanceThreshold dominance_threshold(double n, int d, int L) {
  const DeltaParams p = delta_params(n, d, L);
  DominanceThreshold t;
  t.from_delta = 2.0 * std::pow(4.0 * p.delta, 2 * L);
  t.from_n = 16.0 * L * d * std::pow(4.0, L) / std::sqrt(n);
  t.used = std::max(t.from_delta, t.from_n);
  return t;
}

double flow_time_bound(double xi, int L) {
  if (L < 2) throw std::invalid_argument("flow_time_bound: needs L >= 2");
  if (!(xi > 0.0)) throw std::invalid_argument("flow_time_bound: xi must be positive");
  const double l = L;
  return std::pow(1.0 / xi, (l - 1.0) / l) * std::pow(16.0 * l / (l - 1.0), (l - 1.0) / (2.0 * l - 1.0));
}

nlohmann::json to_json(const DeltaParams& p) {
  return {{"n", p.n},
          {"d", p.d},
          {"L", p.L},
          {"delta", p.delta},
          {"c_opt", p.c_opt},
          {"loss_bound_opt", p.loss_bound_opt},
          {"condition_ok", p.condition_ok}};
}

}  // namespace looptf
