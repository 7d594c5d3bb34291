#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "unimpc/cart_pendulum_ocp.hpp"
#include "unimpc/engine.hpp"
#include "unimpc/mpcc.hpp"

using namespace unimpc;

namespace {

OcpProblem lq_problem(bool with_box) {
  OcpProblem ocp;
  const Mat A = (Mat(2, 2) << 1.0, 0.1, 0.0, 1.0).finished();
  const Mat B = (Mat(2, 1) << 0.005, 0.1).finished();
  ocp.model = make_linear_discrete(A, B);
  if (with_box) {
    ocp.constraints = make_box_constraints(Vec::Constant(2, -2.0), Vec::Constant(2, 2.0), Vec::Constant(1, -1.0),
                                           Vec::Constant(1, 1.0));
    ocp.terminal_constraints = make_state_box(Vec::Constant(2, -2.0), Vec::Constant(2, 2.0));
  }
  ocp.Q = Mat::Identity(2, 2);
  ocp.R = 0.1 * Mat::Identity(1, 1);
  ocp.W = 10.0 * Mat::Identity(2, 2);
  ocp.N = 10;
  ocp.x0 = (Vec(2) << 1.5, 0.0).finished();
  return ocp;
}

// Nonlinear in y = x0, linear in z = x1; dyadic coefficients keep every
// product exact in floating point.
OcpProblem linear_in_z_problem() {
  OcpProblem ocp;
  ocp.model = make_model(2, 1, TimeDomain::Discrete, "dyadic", [](const auto& x, const auto& u) {
    using T = scalar_of<decltype(x)>;
    VecT<T> y(2);
    y(0) = 0.5 * x(0) - 0.25 * x(0) * x(0) + 0.5 * u(0);
    y(1) = x(1) + 0.5 * x(0) + 0.25 * u(0) * u(0);
    return y;
  });
  ocp.Q = Mat::Identity(2, 2);
  ocp.R = Mat::Identity(1, 1);
  ocp.W = Mat::Identity(2, 2);
  ocp.N = 12;
  ocp.x0 = (Vec(2) << 0.5, -1.0).finished();
  return ocp;
}

Trajectory perturbed(const OcpProblem& ocp, unsigned seed, double scale) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> nd(0.0, scale);
  Trajectory t = ocp.cold_start();
  for (int i = 1; i <= ocp.N; ++i)
    for (int j = 0; j < t.X[i].size(); ++j) t.X[i](j) += nd(rng);
  for (auto& u : t.U)
    for (int j = 0; j < u.size(); ++j) u(j) = nd(rng);
  for (auto& l : t.eq_mult)
    for (int j = 0; j < l.size(); ++j) l(j) = nd(rng);
  for (auto& m : t.ineq_mult)
    for (int j = 0; j < m.size(); ++j) m(j) = std::abs(nd(rng));
  return t;
}

// Halved-objective Lagrangian over w = [u0, x1, u1, ..., xN] (x0 pinned).
double lagrangian(const OcpProblem& ocp, const Trajectory& t) {
  const int N = ocp.N;
  double L = 0.5 * eval_nlp_cost(ocp, t.X, t.U);
  for (int i = 0; i < N; ++i) {
    L += t.eq_mult[i + 1].dot(ocp.model.f(t.X[i], t.U[i]) - t.X[i + 1]);
    if (ocp.nh() > 0) L += t.ineq_mult[i].dot(ocp.constraints(t.X[i], t.U[i]));
  }
  if (ocp.nh_terminal() > 0) L += t.ineq_mult[N].dot(ocp.terminal_constraints(t.X[N], Vec(0)));
  return L;
}

Vec pack(const Trajectory& t) {
  std::vector<double> w;
  for (std::size_t i = 0; i < t.U.size(); ++i) {
    for (int j = 0; j < t.U[i].size(); ++j) w.push_back(t.U[i](j));
    for (int j = 0; j < t.X[i + 1].size(); ++j) w.push_back(t.X[i + 1](j));
  }
  return Eigen::Map<Vec>(w.data(), static_cast<Eigen::Index>(w.size()));
}

Trajectory unpack(Trajectory t, const Vec& w) {
  int k = 0;
  for (std::size_t i = 0; i < t.U.size(); ++i) {
    for (int j = 0; j < t.U[i].size(); ++j) t.U[i](j) = w(k++);
    for (int j = 0; j < t.X[i + 1].size(); ++j) t.X[i + 1](j) = w(k++);
  }
  return t;
}

SolveResult converge_sqp(const OcpProblem& ocp) {
  IterationPolicy p = IterationPolicy::sqp(Termination::kkt(1e-10));
  p.max_outer = 200;
  return solve_ocp(ocp, ocp.cold_start(), p);
}

}  // namespace

TEST(NlpKkt, LqSolvedByOneExactQp) {
  const OcpProblem ocp = lq_problem(true);
  const StepResult s = outer_step(ocp, pin_initial_state(ocp, ocp.cold_start()), IterationPolicy::sqp());
  ASSERT_TRUE(s.accepted);
  EXPECT_LE(s.row.kkt.combined, 1e-8);
}

TEST(NlpKkt, FeasibleInteriorRolloutWithZeroMultipliers) {
  const OcpProblem ocp = lq_problem(true);
  Trajectory t = ocp.cold_start();
  for (int i = 0; i < ocp.N; ++i) {
    t.U[i](0) = -0.2;
    t.X[i + 1] = ocp.model.f(t.X[i], t.U[i]);
  }
  const NlpResiduals r = nlp_kkt_residual(ocp, t);
  EXPECT_EQ(r.feasibility, 0.0);
  EXPECT_EQ(r.complementarity, 0.0);
  EXPECT_GT(r.stationarity, 1e-3);
}

TEST(NlpKkt, StationarityMatchesFiniteDifferenceLagrangian) {
  for (const OcpProblem& ocp : {make_cart_pendulum_ocp({}), lq_problem(true)}) {
    for (unsigned seed : {1u, 2u, 3u}) {
      const Trajectory t = perturbed(ocp, seed, 0.5);
      const Vec g = nlp_lagrangian_gradient(ocp, t);
      const Vec gfd = oracle::fd_gradient([&](const Vec& w) { return lagrangian(ocp, unpack(t, w)); }, pack(t));
      ASSERT_EQ(g.size(), gfd.size());
      EXPECT_LE(inf_norm(Vec(g - gfd)), 1e-5 * std::max(1.0, inf_norm(gfd)));
    }
  }
}

TEST(OuterStep, VanishingStepAtKktPoint) {
  const OcpProblem ocp = make_cart_pendulum_ocp({});
  const SolveResult opt = converge_sqp(ocp);
  ASSERT_EQ(opt.status, SolveStatus::Converged);
  const StepResult s = outer_step(ocp, opt.traj, IterationPolicy::lpv(QuadratureRule::rectangular(20),
                                                                       AnchorPolicy::previous_iterate()));
  EXPECT_LE(s.qp.step_norm(), 1e-8);
}

TEST(OuterStep, RejectsUnpinnedInitialState) {
  const OcpProblem ocp = lq_problem(false);
  Trajectory t = ocp.cold_start();
  t.X[0](0) += 1.0;
  EXPECT_THROW(outer_step(ocp, t, IterationPolicy::sqp()), ContractError);
}

TEST(OuterStep, InfeasibleQpFallsBackOrAborts) {
  OcpProblem ocp = lq_problem(false);
  // x_1 >= 1 and x_1 <= -1 cannot both hold.
  ocp.constraints = VectorFunction(2, 1, 2, [](const auto& x, const auto&) {
    using T = scalar_of<decltype(x)>;
    VecT<T> h(2);
    h(0) = 1.0 - x(1);
    h(1) = x(1) + 1.0;
    return h;
  });
  const StepResult s = outer_step(ocp, pin_initial_state(ocp, ocp.cold_start()), IterationPolicy::sqp());
  EXPECT_NE(s.qp.status, QpStatus::Solved);
  if (s.accepted) {
    EXPECT_GE(s.row.halvings, 1);
    EXPECT_LE(s.row.halvings, 5);
  } else {
    EXPECT_FALSE(s.diagnostic.empty());
  }
}

TEST(SolveOcp, CartPendulumSqpResidualDecreasesToTolerance) {
  const OcpProblem ocp = make_cart_pendulum_ocp({});
  const SolveResult r = solve_ocp(ocp, ocp.cold_start(), IterationPolicy::sqp(Termination::fixed(10)));
  ASSERT_EQ(r.iterations(), 10);
  for (int j = 2; j + 1 < 10; ++j) {
    if (r.trace[j].kkt.combined < 1e-10) break;  // round-off floor
    EXPECT_LT(r.trace[j + 1].kkt.combined, r.trace[j].kkt.combined) << "iteration " << j + 2;
  }
  EXPECT_LE(r.trace.back().kkt.combined, 1e-6);
}

TEST(SolveOcp, PreviousIterateLpvReproducesSqpTrace) {
  const OcpProblem ocp = make_cart_pendulum_ocp({});
  const SolveResult a = solve_ocp(ocp, ocp.cold_start(), IterationPolicy::sqp(Termination::fixed(10)));
  const SolveResult b =
      solve_ocp(ocp, ocp.cold_start(),
                IterationPolicy::lpv(QuadratureRule::rectangular(20), AnchorPolicy::previous_iterate(),
                                     Termination::fixed(10)));
  ASSERT_EQ(a.iterations(), b.iterations());
  for (int j = 0; j < a.iterations(); ++j) {
    EXPECT_NEAR(a.trace[j].kkt.combined, b.trace[j].kkt.combined, 1e-10 * std::max(1.0, a.trace[j].kkt.combined));
    EXPECT_NEAR(a.trace[j].sched_delta, b.trace[j].sched_delta, 1e-10 * std::max(1.0, a.trace[j].sched_delta));
  }
  for (int i = 0; i <= ocp.N; ++i) EXPECT_LE(inf_norm(Vec(a.traj.X[i] - b.traj.X[i])), 1e-10);
}

TEST(SolveOcp, OptimalAnchorsStopAfterOneIteration) {
  const OcpProblem ocp = make_cart_pendulum_ocp({});
  const SolveResult opt = converge_sqp(ocp);
  ASSERT_EQ(opt.status, SolveStatus::Converged);
  const IterationPolicy p = IterationPolicy::lpv(QuadratureRule::rectangular(20),
                                                 AnchorPolicy::external(opt.traj.X, opt.traj.U));
  const SolveResult r = solve_ocp(ocp, opt.traj, p);
  EXPECT_EQ(r.status, SolveStatus::Converged);
  EXPECT_EQ(r.iterations(), 1);
  EXPECT_LE(r.last_qp.step_norm(), 1e-8);
}

TEST(SolveOcp, FixedIterationsRunsExactlyN) {
  const OcpProblem ocp = lq_problem(true);
  for (int n : {1, 3, 7}) EXPECT_EQ(solve_ocp(ocp, ocp.cold_start(), IterationPolicy::sqp(Termination::fixed(n))).iterations(), n);
}

TEST(SolveOcp, TraceBoundedByMaxOuter) {
  const OcpProblem ocp = make_cart_pendulum_ocp({});
  IterationPolicy p = IterationPolicy::sqp(Termination::kkt(1e-30));
  p.max_outer = 4;
  const SolveResult r = solve_ocp(ocp, ocp.cold_start(), p);
  EXPECT_EQ(r.status, SolveStatus::MaxOuter);
  EXPECT_EQ(r.iterations(), 4);
}

TEST(SolveOcp, FixedAnchorLpvMeetsSchedulingCriterionFeasibly) {
  const OcpProblem ocp = make_cart_pendulum_ocp({});
  IterationPolicy p = IterationPolicy::lpv(QuadratureRule::rectangular(20), AnchorPolicy::zero());
  p.max_outer = 200;
  const SolveResult r = solve_ocp(ocp, ocp.cold_start(), p);
  ASSERT_EQ(r.status, SolveStatus::Converged);
  EXPECT_LE(dynamics_defect(ocp, r.traj.X, r.traj.U), 1e-8);
  EXPECT_LE(eval_constraints(ocp, r.traj.X, r.traj.U).max_violation, 1e-8);
}

TEST(Rti, LqStepIsConstrainedOptimum) {
  const OcpProblem ocp = lq_problem(true);
  IterationPolicy p = IterationPolicy::sqp(Termination::fixed(1));
  p.mode = IterationMode::RTI;
  const RtiResult r = rti_step(ocp, ocp.cold_start(), p);
  ASSERT_TRUE(r.ok);
  const SolveResult ref = solve_ocp(ocp, ocp.cold_start(), IterationPolicy::sqp(Termination::kkt(1e-10)));
  EXPECT_LE(inf_norm(Vec(r.u_apply - ref.traj.U[0])), 1e-8);
  EXPECT_LT(r.r_after, r.r_before);
}

TEST(Rti, ConsecutiveStepsOnStaticProblemReduceResidual) {
  const OcpProblem ocp = make_cart_pendulum_ocp({});
  IterationPolicy p = IterationPolicy::sqp(Termination::fixed(1));
  p.mode = IterationMode::RTI;
  p.shift = false;
  const RtiResult a = rti_step(ocp, ocp.cold_start(), p);
  const RtiResult b = rti_step(ocp, a.next, p);
  ASSERT_TRUE(a.ok && b.ok);
  EXPECT_LT(a.r_after, a.r_before);
  EXPECT_LT(b.r_after, a.r_after);
  EXPECT_EQ(b.r_before, a.r_after);
}

TEST(Rti, RequiresRtiMode) {
  const OcpProblem ocp = lq_problem(false);
  EXPECT_THROW(rti_step(ocp, ocp.cold_start(), IterationPolicy::sqp()), ContractError);
}

TEST(Shift, DuplicatesTerminalStage) {
  Trajectory t = Trajectory::constant(Vec::Zero(1), 1, 3, 0, 0);
  for (int i = 0; i <= 3; ++i) t.X[i](0) = i;
  for (int i = 0; i < 3; ++i) t.U[i](0) = 10 + i;
  const Trajectory s = shift_trajectory(t);
  EXPECT_EQ(s.X[0](0), 1);
  EXPECT_EQ(s.X[2](0), 3);
  EXPECT_EQ(s.X[3](0), 3);
  EXPECT_EQ(s.U[0](0), 11);
  EXPECT_EQ(s.U[2](0), 12);
  ASSERT_TRUE(s.scheduling.has_value());
  EXPECT_EQ(s.scheduling->size(), 3u);
}

TEST(ZeroOrder, PartitionValidation) {
  ZeroOrderPartition p{{0, 1}, {2}};
  EXPECT_NO_THROW(p.validate(3));
  EXPECT_THROW((ZeroOrderPartition{{0}, {2}}.validate(3)), ContractError);
  EXPECT_THROW((ZeroOrderPartition{{0, 1}, {1, 2}}.validate(3)), ContractError);
  EXPECT_THROW((ZeroOrderPartition{{1, 0}, {2}}.validate(3)), ContractError);
  EXPECT_THROW((ZeroOrderPartition{{0, 1}, {3}}.validate(3)), ContractError);
}

TEST(ZeroOrder, EmptyPartitionIsIdentity) {
  const OcpProblem ocp = make_cart_pendulum_ocp({});
  const Trajectory t = perturbed(ocp, 4, 0.3);
  const QpData qp = assemble_qp(ocp, t, SensitivityPolicy::linearize(), nullptr, {});
  const ZeroOrderPartition part{{0, 1, 2, 3}, {}};
  const ZeroOrderRollout roll = zero_order_rollout(qp, part, ocp, t);
  const ZeroOrderReduced red = zero_order_reduce(qp, part, roll);
  for (int i = 0; i < ocp.N; ++i) {
    EXPECT_EQ(red.qp.stages[i].M, qp.stages[i].M);
    EXPECT_EQ(red.qp.stages[i].A, qp.stages[i].A);
    EXPECT_EQ(red.qp.stages[i].dWh, qp.stages[i].dWh);
  }
  EXPECT_EQ(red.qp.Hx_N, qp.Hx_N);

  IterationPolicy with = IterationPolicy::sqp(Termination::fixed(3));
  with.zero_order = part;
  const SolveResult a = solve_ocp(ocp, t, with);
  const SolveResult b = solve_ocp(ocp, t, IterationPolicy::sqp(Termination::fixed(3)));
  for (int i = 0; i < ocp.N; ++i) EXPECT_EQ(a.traj.U[i], b.traj.U[i]);
}

TEST(ZeroOrder, LinearAndNonlinearRolloutsAgreeBitwise) {
  const OcpProblem ocp = linear_in_z_problem();
  Trajectory t = ocp.cold_start();
  for (int i = 0; i < ocp.N; ++i) {
    t.U[i](0) = 0.25 * ((i % 5) - 2);
    t.X[i + 1] << 0.125 * ((i % 3) - 1), 0.5 * ((i % 4) - 1);
  }
  const QpData qp = assemble_qp(ocp, t, SensitivityPolicy::linearize(), nullptr, {});
  ZeroOrderPartition part{{0}, {1}, ZeroOrderPartition::Propagation::LinearRollout};
  const ZeroOrderRollout lin = zero_order_rollout(qp, part, ocp, t);
  part.propagation = ZeroOrderPartition::Propagation::NonlinearRollout;
  const ZeroOrderRollout nl = zero_order_rollout(qp, part, ocp, t);
  ASSERT_EQ(lin.dZ.size(), nl.dZ.size());
  double biggest = 0.0;
  for (std::size_t i = 0; i < lin.dZ.size(); ++i) {
    EXPECT_EQ(lin.dZ[i], nl.dZ[i]) << "stage " << i;
    biggest = std::max(biggest, inf_norm(lin.dZ[i]));
  }
  EXPECT_EQ(inf_norm(lin.dZ[0]), 0.0);
  EXPECT_GT(biggest, 0.0);
}

TEST(ZeroOrder, ZOnlyRowsAreDroppedAndGetZeroMultipliers) {
  OcpProblem ocp = linear_in_z_problem();
  // Row 0 involves y, row 1 only z.
  ocp.constraints = VectorFunction(2, 1, 2, [](const auto& x, const auto&) {
    using T = scalar_of<decltype(x)>;
    VecT<T> h(2);
    h(0) = x(0) - 2.0;
    h(1) = x(1) - 5.0;
    return h;
  });
  const Trajectory t = pin_initial_state(ocp, ocp.cold_start());
  const QpData qp = assemble_qp(ocp, t, SensitivityPolicy::linearize(), nullptr, {});
  const ZeroOrderPartition part{{0}, {1}};
  const ZeroOrderRollout roll = zero_order_rollout(qp, part, ocp, t);
  const ZeroOrderReduced red = zero_order_reduce(qp, part, roll);
  for (int i = 0; i < ocp.N; ++i) {
    ASSERT_EQ(red.rows[i], std::vector<int>{0});
    EXPECT_EQ(red.qp.stages[i].dWh.size(), 1);
    EXPECT_EQ(red.qp.stages[i].A.rows(), 1);
  }
  const QpSolution sol = solve_qp(red.qp);
  ASSERT_EQ(sol.status, QpStatus::Solved);
  const QpSolution full = zero_order_expand(sol, part, roll, qp, red);
  for (int i = 0; i < ocp.N; ++i) {
    EXPECT_EQ(full.ineq_mult[i].size(), 2);
    EXPECT_EQ(full.ineq_mult[i](1), 0.0);
    EXPECT_EQ(full.dX[i](1), roll.dZ[i](0));
  }
}

TEST(ZeroOrder, SingleTrackDiscardsInputCouplingOfZ) {
  const auto track = std::make_shared<const Track>(make_stadium_track(1.5, 0.5, 0.115));
  Vec x0 = Vec::Zero(9);
  x0(SingleTrackModel::kPx) = 0.1;
  x0(SingleTrackModel::kPy) = -0.5;
  x0(SingleTrackModel::kVx) = 1.0;
  x0(SingleTrackModel::kProgress) = 0.1;
  const OcpProblem ocp = build_mpcc_ocp(SingleTrackModel{}, track, {}, {}, 15, 0.03, x0, 3);
  const Trajectory init = mpcc_initial_guess(ocp);
  IterationPolicy full = IterationPolicy::sqp(Termination::fixed(1));
  IterationPolicy zo = full;
  zo.zero_order = ZeroOrderPartition{{0, 1, 2, 3, 4, 5}, {6, 7, 8}};
  const StepResult a = outer_step(ocp, pin_initial_state(ocp, init), full);
  const StepResult b = outer_step(ocp, pin_initial_state(ocp, init), zo);
  ASSERT_TRUE(a.accepted && b.accepted);
  double du = 0.0;
  for (int i = 0; i < ocp.N; ++i) du = std::max(du, inf_norm(Vec(a.qp.dU[i] - b.qp.dU[i])));
  EXPECT_GT(du, 1e-6);
  EXPECT_TRUE(std::isfinite(du));
  // The initial guess is a feasible rollout, so the z rollout is zero and the
  // integrator states do not move even though the inputs do.
  for (int i = 0; i <= ocp.N; ++i) EXPECT_EQ(inf_norm(Vec(b.qp.dX[i].tail(3))), 0.0) << "stage " << i;
}
