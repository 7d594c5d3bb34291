#pragma once

#include <optional>
#include <vector>

#include "unimpc/types.hpp"

namespace unimpc {

/**
 * @brief Primal-dual iterate over a horizon of N stages.
 *
 * `eq_mult[i]` multiplies the constraint ending in state i: index 0 is the
 * initial-condition constraint, index i >= 1 the dynamics x_i = f(x_{i-1},
 * u_{i-1}). `ineq_mult[i]` belongs to h(x_i, u_i) for i < N and to h_N for
 * i = N. `scheduling`, when present, holds rho_i = [x_i; u_i] for i < N.
 */
struct Trajectory {
  std::vector<Vec> X;
  std::vector<Vec> U;
  std::vector<Vec> eq_mult;
  std::vector<Vec> ineq_mult;
  std::optional<std::vector<Vec>> scheduling;

  int horizon() const { return static_cast<int>(U.size()); }

  /// Constant state x0 everywhere, zero inputs and multipliers.
  static Trajectory constant(const Vec& x0, int nu, int N, int nh, int nh_terminal) {
    Trajectory t;
    t.X.assign(N + 1, x0);
    t.U.assign(N, Vec::Zero(nu));
    t.eq_mult.assign(N + 1, Vec::Zero(x0.size()));
    t.ineq_mult.assign(N, Vec::Zero(nh));
    t.ineq_mult.push_back(Vec::Zero(nh_terminal));
    return t;
  }

  std::vector<Vec> scheduling_sequence() const {
    std::vector<Vec> P;
    P.reserve(U.size());
    for (std::size_t i = 0; i < U.size(); ++i) P.push_back(concat(X[i], U[i]));
    return P;
  }

  void refresh_scheduling() { scheduling = scheduling_sequence(); }
};

}  // namespace unimpc
