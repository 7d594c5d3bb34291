#pragma once

#include "unimpc/model.hpp"

namespace unimpc {

/**
 * Dynamic single-track car with Pacejka lateral tire forces and a lumped
 * drivetrain, extended by integrator states for motor command, steering and
 * track progress.
 *
 * State  [px, py, psi, vx, vy, omega, T, delta, theta]
 * Input  [Tdot, deltadot, thetadot]
 *
 * Defaults describe a 1/28-scale car (about 0.2 kg). Slip angles use a
 * smoothed longitudinal speed sqrt(vx^2 + v_reg^2) so the map stays
 * differentiable near standstill.
 */
struct SingleTrackParams {
  double mass = 0.2;
  double inertia_z = 3.0e-4;
  double l_front = 0.045;
  double l_rear = 0.045;
  // Pacejka magic formula F = D sin(C atan(B alpha)).
  double B_front = 4.0;
  double C_front = 1.3;
  double D_front = 0.8;
  double B_rear = 4.0;
  double C_rear = 1.3;
  double D_rear = 0.8;
  // Longitudinal force Fx = (c1 - c2 vx) T - c3 vx^2 - c4.
  double c1 = 0.8;
  double c2 = 0.2;
  double c3 = 0.02;
  double c4 = 0.02;
  double v_reg = 0.05;
};

struct SingleTrackModel {
  SingleTrackParams params;

  static constexpr int kNx = 9;
  static constexpr int kNu = 3;

  enum StateIndex { kPx = 0, kPy, kPsi, kVx, kVy, kOmega, kMotor, kSteer, kProgress };

  template <typename X, typename U>
  auto operator()(const X& x, const U& u) const {
    using T = scalar_of<X>;
    using std::atan;
    using std::atan2;
    using std::cos;
    using std::sin;
    using std::sqrt;
    const auto& p = params;
    const T psi = x(kPsi);
    const T vx = x(kVx);
    const T vy = x(kVy);
    const T om = x(kOmega);
    const T motor = x(kMotor);
    const T steer = x(kSteer);

    const T vx_s = sqrt(vx * vx + p.v_reg * p.v_reg);
    const T alpha_f = steer - atan2(vy + p.l_front * om, vx_s);
    const T alpha_r = atan2(p.l_rear * om - vy, vx_s);
    const T Ff = p.D_front * sin(p.C_front * atan(p.B_front * alpha_f));
    const T Fr = p.D_rear * sin(p.C_rear * atan(p.B_rear * alpha_r));
    const T Fx = (p.c1 - p.c2 * vx) * motor - p.c3 * vx * vx - p.c4;

    const T cs = cos(steer);
    const T sn = sin(steer);
    VecT<T> dx(kNx);
    dx(kPx) = vx * cos(psi) - vy * sin(psi);
    dx(kPy) = vx * sin(psi) + vy * cos(psi);
    dx(kPsi) = om;
    dx(kVx) = (Fx - Ff * sn + p.mass * vy * om) / p.mass;
    dx(kVy) = (Fr + Ff * cs - p.mass * vx * om) / p.mass;
    dx(kOmega) = (Ff * p.l_front * cs - Fr * p.l_rear) / p.inertia_z;
    dx(kMotor) = u(0);
    dx(kSteer) = u(1);
    dx(kProgress) = u(2);
    return dx;
  }

  DynamicsModel continuous() const {
    return make_model(kNx, kNu, TimeDomain::Continuous, "single_track", *this);
  }
};

}  // namespace unimpc
