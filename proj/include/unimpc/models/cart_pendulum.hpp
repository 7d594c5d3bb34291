#pragma once

#include "unimpc/model.hpp"

namespace unimpc {

/**
 * Cart with a pole pivoting on top. State [p, pdot, phi, phidot] with phi = 0
 * upright and phi = -pi hanging down; input is the horizontal force on the
 * cart. The pole is a point mass at distance `length` from the pivot.
 */
struct CartPendulumParams {
  double cart_mass = 1.0;
  double pole_mass = 0.1;
  double length = 0.5;
  double gravity = 9.81;
};

struct CartPendulumModel {
  CartPendulumParams params;

  static constexpr int kNx = 4;
  static constexpr int kNu = 1;

  template <typename X, typename U>
  auto operator()(const X& x, const U& u) const {
    using T = scalar_of<X>;
    using std::cos;
    using std::sin;
    const double M = params.cart_mass;
    const double m = params.pole_mass;
    const double l = params.length;
    const double g = params.gravity;
    const T s = sin(x(2));
    const T c = cos(x(2));
    const T pdd = (u(0) + m * s * (l * x(3) * x(3) - g * c)) / (M + m * s * s);
    const T phidd = (g * s - pdd * c) / l;
    VecT<T> dx(kNx);
    dx << x(1), pdd, x(3), phidd;
    return dx;
  }

  DynamicsModel continuous() const {
    return make_model(kNx, kNu, TimeDomain::Continuous, "cart_pendulum", *this);
  }
};

}  // namespace unimpc
