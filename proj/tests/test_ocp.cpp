#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "unimpc/cart_pendulum_ocp.hpp"

using namespace unimpc;

namespace {

OcpProblem lq_box_problem() {
  OcpProblem ocp;
  const Mat A = (Mat(2, 2) << 1.0, 0.1, 0.0, 1.0).finished();
  const Mat B = (Mat(2, 1) << 0.005, 0.1).finished();
  ocp.model = make_linear_discrete(A, B);
  ocp.constraints = make_box_constraints(Vec::Constant(2, -1.0), Vec::Constant(2, 1.0), Vec::Constant(1, -0.5),
                                         Vec::Constant(1, 0.5));
  ocp.terminal_constraints = make_state_box(Vec::Constant(2, -1.0), Vec::Constant(2, 1.0));
  ocp.Q = Mat::Identity(2, 2);
  ocp.R = Mat::Identity(1, 1);
  ocp.W = 2.0 * Mat::Identity(2, 2);
  ocp.N = 4;
  ocp.x0 = Vec::Zero(2);
  return ocp;
}

Trajectory random_traj(const OcpProblem& ocp, std::mt19937& rng, double scale) {
  std::normal_distribution<double> nd(0.0, scale);
  Trajectory t = ocp.cold_start();
  for (auto& x : t.X)
    for (int i = 0; i < x.size(); ++i) x(i) += nd(rng);
  t.X[0] = ocp.x0;
  for (auto& u : t.U)
    for (int i = 0; i < u.size(); ++i) u(i) = nd(rng);
  for (auto& l : t.eq_mult)
    for (int i = 0; i < l.size(); ++i) l(i) = nd(rng);
  for (auto& m : t.ineq_mult)
    for (int i = 0; i < m.size(); ++i) m(i) = std::abs(nd(rng));
  return t;
}

double max_abs(const Mat& a) { return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff(); }

}  // namespace

TEST(OcpProblem, ValidationRejectsBadWeights) {
  OcpProblem ocp = lq_box_problem();
  EXPECT_NO_THROW(ocp.validate());
  OcpProblem bad = ocp;
  bad.R = Mat::Zero(1, 1);
  EXPECT_THROW(bad.validate(), ContractError);
  bad = ocp;
  bad.Q(0, 0) = -1.0;
  EXPECT_THROW(bad.validate(), ContractError);
  bad = ocp;
  bad.Q(0, 1) = 0.3;
  EXPECT_THROW(bad.validate(), ContractError);
  bad = ocp;
  bad.N = 0;
  EXPECT_THROW(bad.validate(), ContractError);
  bad = ocp;
  bad.model = make_linear_continuous(Mat::Identity(2, 2), Mat::Ones(2, 1));
  EXPECT_THROW(bad.validate(), ContractError);
}

TEST(AssembleQp, LinearZeroIterateIsPlainLqWithBox) {
  const OcpProblem ocp = lq_box_problem();
  const QpData qp = assemble_qp(ocp, ocp.cold_start(), SensitivityPolicy::linearize(), nullptr, {});
  for (const auto& s : qp.stages) {
    EXPECT_EQ(inf_norm(s.dWx), 0.0);
    EXPECT_EQ(inf_norm(s.m), 0.0);
    EXPECT_EQ(s.A, (Mat(2, 2) << 1.0, 0.1, 0.0, 1.0).finished());
    // Box rows at the origin sit at minus the bound.
    EXPECT_EQ(s.dWh, (Vec(6) << -1, -1, -1, -1, -0.5, -0.5).finished());
  }
  EXPECT_EQ(qp.M_N, ocp.W);
}

TEST(AssembleQp, GaussNewtonHessianIsConfigWeights) {
  const OcpProblem ocp = make_cart_pendulum_ocp({});
  std::mt19937 rng(1);
  Mat expected = Mat::Zero(5, 5);
  expected.diagonal() << 100, 1, 100, 1, 10;
  for (int rep = 0; rep < 3; ++rep) {
    const Trajectory t = random_traj(ocp, rng, 0.5);
    const AnchorSequence a = select_anchors(AnchorPolicy::zero(), 0, ocp.x0, Vec::Zero(1), t);
    for (const auto& sens : {SensitivityPolicy::linearize(), SensitivityPolicy::ftc(QuadratureRule::rectangular(20))}) {
      const QpData qp = assemble_qp(ocp, t, sens, &a, {});
      for (const auto& s : qp.stages) EXPECT_EQ(s.M, expected);
      for (int i = 0; i < ocp.N; ++i) {
        EXPECT_EQ(qp.stages[i].m.head(4), ocp.Q * t.X[i]);
        EXPECT_EQ(qp.stages[i].m.tail(1), ocp.R * t.U[i]);
      }
      EXPECT_EQ(qp.m_N, ocp.W * t.X[ocp.N]);
    }
  }
}

TEST(AssembleQp, ExactHessianWithZeroMultipliersEqualsGaussNewton) {
  const OcpProblem ocp = make_cart_pendulum_ocp({});
  std::mt19937 rng(2);
  Trajectory t = random_traj(ocp, rng, 0.5);
  for (auto& l : t.eq_mult) l.setZero();
  for (auto& m : t.ineq_mult) m.setZero();
  const QpData gn = assemble_qp(ocp, t, SensitivityPolicy::linearize(), nullptr, {});
  const QpData ex = assemble_qp(ocp, t, SensitivityPolicy::linearize(), nullptr,
                                {HessianPolicy::Kind::ExactLagrangian, 1e-8});
  for (int i = 0; i < ocp.N; ++i) EXPECT_EQ(ex.stages[i].M, gn.stages[i].M);
  EXPECT_EQ(ex.M_N, gn.M_N);
  EXPECT_EQ(ex.n_indefinite, 0);
}

TEST(AssembleQp, ExactHessianOnLinearProblemIsCostCurvature) {
  const OcpProblem ocp = lq_box_problem();
  std::mt19937 rng(3);
  const Trajectory t = random_traj(ocp, rng, 1.0);
  const QpData ex = assemble_qp(ocp, t, SensitivityPolicy::linearize(), nullptr,
                                {HessianPolicy::Kind::ExactLagrangian, 1e-8});
  for (const auto& s : ex.stages) {
    EXPECT_LE(max_abs(s.M.topLeftCorner(2, 2) - ocp.Q), 1e-15);
    EXPECT_LE(max_abs(s.M.bottomRightCorner(1, 1) - ocp.R), 1e-15);
  }
}

TEST(AssembleQp, ExactStageHessianMatchesFiniteDifferences) {
  const OcpProblem ocp = make_cart_pendulum_ocp({});
  std::mt19937 rng(4);
  for (int rep = 0; rep < 5; ++rep) {
    const Trajectory t = random_traj(ocp, rng, 1.0);
    const Vec& th = t.eq_mult[2];
    const Vec& mu = t.ineq_mult[1];
    const Mat H = hessian_lagrangian_stage(ocp, StageTag::Intermediate, t.X[1], t.U[1], th, mu);
    auto grad = [&](const Vec& z) -> Vec {
      const Vec x = z.head(4), u = z.tail(1);
      Vec g = concat(ocp.Q * x, ocp.R * u);
      g += jacobian(ocp.model.f, x, u).transpose() * th;
      g += jacobian(ocp.constraints, x, u).transpose() * mu;
      return g;
    };
    EXPECT_LE(oracle::rel_err(H, oracle::fd_hessian(grad, concat(t.X[1], t.U[1]))), 1e-4);
    EXPECT_LE(max_abs(H - H.transpose()), 1e-12);
  }
}

TEST(AssembleQp, PreviousIterateFtcEqualsLinearization) {
  const OcpProblem ocp = make_cart_pendulum_ocp({});
  std::mt19937 rng(5);
  for (int rep = 0; rep < 3; ++rep) {
    const Trajectory t = random_traj(ocp, rng, 1.0);
    const AnchorSequence a = select_anchors(AnchorPolicy::previous_iterate(), 0, ocp.x0, Vec::Zero(1), t);
    const QpData lin = assemble_qp(ocp, t, SensitivityPolicy::linearize(), nullptr, {});
    const QpData ftc = assemble_qp(ocp, t, SensitivityPolicy::ftc(QuadratureRule::gauss_legendre(4)), &a, {});
    for (int i = 0; i < ocp.N; ++i) {
      EXPECT_LE(max_abs(lin.stages[i].A - ftc.stages[i].A), 1e-13);
      EXPECT_LE(max_abs(lin.stages[i].B - ftc.stages[i].B), 1e-13);
      EXPECT_LE(max_abs(lin.stages[i].Hx - ftc.stages[i].Hx), 1e-13);
      EXPECT_EQ(lin.stages[i].dWx, ftc.stages[i].dWx);
      EXPECT_EQ(lin.stages[i].m, ftc.stages[i].m);
    }
    EXPECT_LE(max_abs(lin.Hx_N - ftc.Hx_N), 1e-13);
  }
}

TEST(AssembleQp, FeasibleRolloutHasZeroDefects) {
  const OcpProblem ocp = make_cart_pendulum_ocp({});
  Trajectory t = ocp.cold_start();
  for (int i = 0; i < ocp.N; ++i) {
    t.U[i](0) = std::sin(0.3 * i);
    t.X[i + 1] = ocp.model.f(t.X[i], t.U[i]);
  }
  const QpData qp = assemble_qp(ocp, t, SensitivityPolicy::linearize(), nullptr, {});
  for (const auto& s : qp.stages) EXPECT_LE(inf_norm(s.dWx), 1e-12);
}

TEST(AssembleQp, FtcWithoutAnchorsIsContractError) {
  const OcpProblem ocp = lq_box_problem();
  EXPECT_THROW(assemble_qp(ocp, ocp.cold_start(), SensitivityPolicy::ftc(QuadratureRule::rectangular(3)), nullptr, {}),
               ContractError);
}

TEST(ClipEigenvalues, ProjectsNegativeCurvature) {
  Mat S = (Mat(2, 2) << 1.0, 0.0, 0.0, -2.0).finished();
  EXPECT_TRUE(clip_eigenvalues(S, 1e-8));
  EXPECT_NEAR(S(1, 1), 1e-8, 1e-20);
  Mat P = Mat::Identity(2, 2);
  EXPECT_FALSE(clip_eigenvalues(P, 1e-8));
  EXPECT_EQ(P, Mat::Identity(2, 2));
}

TEST(NlpCost, Examples) {
  OcpProblem ocp = lq_box_problem();
  EXPECT_EQ(eval_nlp_cost(ocp, ocp.cold_start().X, ocp.cold_start().U), 0.0);

  ocp.N = 1;
  ocp.W = Mat::Identity(2, 2);
  ocp.x0 = (Vec(2) << 1.0, 0.0).finished();
  EXPECT_EQ(eval_nlp_cost(ocp, {ocp.x0, Vec::Zero(2)}, {Vec::Zero(1)}), 1.0);
}

TEST(NlpCost, CartPendulumColdStartMatchesSummation) {
  const OcpProblem ocp = make_cart_pendulum_ocp({});
  const Trajectory t = ocp.cold_start();
  const double phi = std::numbers::pi;
  // N stages of 100 phi^2 plus the terminal 100 phi^2.
  const double expected = (ocp.N + 1) * 100.0 * phi * phi;
  EXPECT_NEAR(eval_nlp_cost(ocp, t.X, t.U), expected, 1e-10 * expected);
}

TEST(Constraints, Examples) {
  const OcpProblem ocp = make_cart_pendulum_ocp({});
  Trajectory t = ocp.cold_start();
  for (auto& x : t.X) x.setZero();
  EXPECT_EQ(eval_constraints(ocp, t.X, t.U).max_violation, 0.0);
  t.X[3](2) = 2.5 * std::numbers::pi;
  EXPECT_NEAR(eval_constraints(ocp, t.X, t.U).max_violation, 0.5 * std::numbers::pi, 1e-14);
}

TEST(Constraints, StackedMatchesPerStageEvaluation) {
  const OcpProblem ocp = make_cart_pendulum_ocp({});
  std::mt19937 rng(6);
  const Trajectory t = random_traj(ocp, rng, 3.0);
  const ConstraintValues cv = eval_constraints(ocp, t.X, t.U);
  const int nh = ocp.nh();
  ASSERT_EQ(cv.stacked.size(), ocp.N * nh + ocp.nh_terminal());
  double worst = 0.0;
  for (int i = 0; i < ocp.N; ++i) {
    const Vec h = ocp.constraints(t.X[i], t.U[i]);
    EXPECT_EQ(Vec(cv.stacked.segment(i * nh, nh)), h);
    worst = std::max(worst, h.maxCoeff());
  }
  const Vec hN = ocp.terminal_constraints(t.X[ocp.N], Vec(0));
  EXPECT_EQ(Vec(cv.stacked.tail(hN.size())), hN);
  worst = std::max(worst, hN.maxCoeff());
  EXPECT_EQ(cv.max_violation, std::max(0.0, worst));
}
