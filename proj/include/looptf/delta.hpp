#pragma once

#include <nlohmann/json.hpp>

namespace looptf {

/// Accuracy bookkeeping shared by the moment, dynamics and minimizer checks.
struct DeltaParams {
  double n = 0;
  int d = 0;
  int L = 0;
  double delta = 0.0;           // (8Ld/√n)^{1/(2L)}
  double c_opt = 0.0;           // 8 δ d^{1/(2L)}
  double loss_bound_opt = 0.0;  // 8 L d² 2^{2L} / √n
  bool condition_ok = false;    // 8Ld²/√n ≤ 2^{−2L}
};

DeltaParams delta_params(double n, int d, int L);

/// Proof-level moment slack 4kd/√n.
double moment_slack(double n, int d, int k);

/// max(2(4δ)^{2L}, 16 L d 4^L / √n), and the two pieces.
struct DominanceThreshold {
  double from_delta = 0.0;
  double from_n = 0.0;
  double used = 0.0;
};
DominanceThreshold dominance_threshold(double n, int d, int L);

/// (1/ξ)^{(L−1)/L} (16L/(L−1))^{(L−1)/(2L−1)}; L ≥ 2.
double flow_time_bound(double xi, int L);

nlohmann::json to_json(const DeltaParams& p);

}  // namespace looptf
