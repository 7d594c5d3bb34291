#pragma once

#include <cmath>
#include <numbers>

#include "unimpc/models/cart_pendulum.hpp"
#include "unimpc/ocp.hpp"

namespace unimpc {

/// Swing-up benchmark: hanging start, box constraints, quadratic regulation cost.
struct CartPendulumSetup {
  CartPendulumParams params;
  double Ts = 0.01;
  int substeps = 1;
  int N = 20;
  Vec Q_diag = (Vec(4) << 100.0, 1.0, 100.0, 1.0).finished();
  double R = 10.0;
  Vec W_diag = (Vec(4) << 100.0, 1.0, 100.0, 1.0).finished();
  Vec x_lb = (Vec(4) << -5.0, -5.0, -2.0 * std::numbers::pi, -10.0).finished();
  Vec x_ub = (Vec(4) << 5.0, 5.0, 2.0 * std::numbers::pi, 10.0).finished();
  double u_max = 4.0;
  Vec x0 = (Vec(4) << 0.0, 0.0, -std::numbers::pi, 0.0).finished();
};

inline OcpProblem make_cart_pendulum_ocp(const CartPendulumSetup& s) {
  require(s.Ts > 0.0, "cart-pendulum: Ts must be positive");
  OcpProblem ocp;
  ocp.model = discretize(CartPendulumModel{s.params}.continuous(), s.Ts, s.substeps);
  ocp.constraints = make_box_constraints(s.x_lb, s.x_ub, Vec::Constant(1, -s.u_max), Vec::Constant(1, s.u_max));
  ocp.terminal_constraints = make_state_box(s.x_lb, s.x_ub);
  ocp.Q = s.Q_diag.asDiagonal();
  ocp.R = Mat::Constant(1, 1, s.R);
  ocp.W = s.W_diag.asDiagonal();
  ocp.N = s.N;
  ocp.x0 = s.x0;
  ocp.validate();
  return ocp;
}

}  // namespace unimpc
