#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "unimpc/cart_pendulum_ocp.hpp"
#include "unimpc/sensitivity.hpp"

using namespace unimpc;

namespace {

DynamicsModel cart() { return discretize(CartPendulumModel{}.continuous(), 0.01); }

Vec random_in_box(std::mt19937& rng, const Vec& half) {
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  Vec v(half.size());
  for (int i = 0; i < v.size(); ++i) v(i) = U(rng) * half(i);
  return v;
}

const Vec kCartBox = (Vec(4) << 5.0, 5.0, 2.0 * std::numbers::pi, 10.0).finished();

double max_abs(const Mat& a) { return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff(); }

DynamicsModel poly_model() {
  // Jacobian entries are polynomials of degree up to 3.
  return make_model(2, 1, TimeDomain::Discrete, "poly", [](const auto& x, const auto& u) {
    using T = scalar_of<decltype(x)>;
    VecT<T> y(2);
    y(0) = x(0) * x(0) * x(1) * x(1) + u(0) * x(0);
    y(1) = x(1) * x(1) * x(1) - 2.0 * u(0) * u(0) * x(0);
    return y;
  });
}

}  // namespace

TEST(Quadrature, WeightsSumToOne) {
  for (int n : {1, 2, 5, 20, 32}) {
    for (const auto& q : {QuadratureRule::rectangular(n), QuadratureRule::gauss_legendre(n)}) {
      double s = 0.0;
      for (double w : q.weights) s += w;
      EXPECT_NEAR(s, 1.0, 1e-14) << q.label();
      for (double l : q.nodes) {
        EXPECT_GT(l, 0.0);
        EXPECT_LT(l, 1.0);
      }
    }
  }
  EXPECT_THROW(QuadratureRule::rectangular(0), ContractError);
  EXPECT_THROW(QuadratureRule::gauss_legendre(0), ContractError);
}

TEST(Quadrature, RectangularUsesMidpoints) {
  const auto q = QuadratureRule::rectangular(4);
  EXPECT_EQ(q.nodes, (std::vector<double>{0.125, 0.375, 0.625, 0.875}));
}

TEST(Quadrature, GaussLegendreExactForDegree2nMinus1) {
  for (int n = 1; n <= 8; ++n) {
    const auto q = QuadratureRule::gauss_legendre(n);
    for (int d = 0; d <= 2 * n - 1; ++d) {
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += q.weights[j] * std::pow(q.nodes[j], d);
      EXPECT_NEAR(s, 1.0 / (d + 1), 1e-14) << "n " << n << " degree " << d;
    }
  }
}

TEST(LinearizeStage, LinearSystemGivesSystemMatrices) {
  const Mat A = (Mat(2, 2) << 1.0, 0.1, 0.0, 1.0).finished();
  const Mat B = (Mat(2, 1) << 0.005, 0.1).finished();
  const DynamicsModel m = make_linear_discrete(A, B);
  const StageFunctions fn{&m};
  const auto s = linearize_stage(fn, Vec::Random(2), Vec::Random(1), Vec::Random(2));
  EXPECT_EQ(s.A, A);
  EXPECT_EQ(s.B, B);
}

TEST(LinearizeStage, FeasibleRolloutHasZeroDefect) {
  const DynamicsModel m = cart();
  const StageFunctions fn{&m};
  const Vec x = (Vec(4) << 0.1, 0.2, -2.0, 0.3).finished();
  const Vec u = Vec::Constant(1, 1.5);
  EXPECT_EQ(inf_norm(linearize_stage(fn, x, u, m.f(x, u)).dWx), 0.0);
}

TEST(LinearizeStage, ColdStartDefectAtHangingState) {
  const DynamicsModel m = cart();
  const StageFunctions fn{&m};
  const Vec x = (Vec(4) << 0.0, 0.0, -std::numbers::pi, 0.0).finished();
  const Vec u = Vec::Zero(1);
  const Vec expected = rk4_step(CartPendulumModel{}.continuous(), x, u, 0.01) - x;
  EXPECT_LE(inf_norm(Vec(linearize_stage(fn, x, u, x).dWx - expected)), 1e-15);
}

TEST(FtcStage, AnchorAtIterateEqualsLinearization) {
  const OcpProblem ocp = make_cart_pendulum_ocp({});
  const StageFunctions fn = ocp.functions();
  std::mt19937 rng(4);
  for (int rep = 0; rep < 20; ++rep) {
    const Vec x = random_in_box(rng, kCartBox);
    const Vec u = random_in_box(rng, Vec::Constant(1, 4.0));
    const Vec xn = random_in_box(rng, kCartBox);
    const auto lin = linearize_stage(fn, x, u, xn);
    for (const auto& rule : {QuadratureRule::rectangular(20), QuadratureRule::gauss_legendre(5),
                             QuadratureRule::rectangular(1)}) {
      const auto ftc = ftc_stage(fn, x, u, xn, x, u, rule);
      EXPECT_LE(max_abs(ftc.A - lin.A), 1e-13);
      EXPECT_LE(max_abs(ftc.B - lin.B), 1e-13);
      EXPECT_LE(max_abs(ftc.Hx - lin.Hx), 1e-13);
      EXPECT_LE(max_abs(ftc.Hu - lin.Hu), 1e-13);
      EXPECT_EQ(ftc.dWx, lin.dWx);
      EXPECT_EQ(ftc.dWh, lin.dWh);
    }
  }
}

TEST(FtcStage, LinearDynamicsAnyAnchor) {
  const Mat A = (Mat(2, 2) << 0.9, 0.2, -0.1, 1.1).finished();
  const Mat B = (Mat(2, 1) << 0.3, 0.7).finished();
  const DynamicsModel m = make_linear_discrete(A, B);
  const StageFunctions fn{&m};
  const auto s =
      ftc_stage(fn, Vec::Random(2), Vec::Random(1), Vec::Random(2), Vec::Random(2), Vec::Random(1),
                QuadratureRule::gauss_legendre(3));
  EXPECT_LE(max_abs(s.A - A), 1e-15);
  EXPECT_LE(max_abs(s.B - B), 1e-15);
  for (const auto& rule : {QuadratureRule::rectangular(7), QuadratureRule::gauss_legendre(2)})
    EXPECT_LE(ftc_embedding_residual(m, Vec::Random(2), Vec::Random(1), Vec::Random(2), Vec::Random(1), rule), 1e-12);
}

TEST(FtcStage, SquareMapIntegratesToSecant) {
  const DynamicsModel m = make_model(1, 1, TimeDomain::Discrete, "sq", [](const auto& x, const auto&) {
    using T = scalar_of<decltype(x)>;
    VecT<T> y(1);
    y(0) = x(0) * x(0);
    return y;
  });
  const StageFunctions fn{&m};
  const Vec x = Vec::Constant(1, 2.0), u = Vec::Zero(1);
  const Mat dense = oracle::dense_midpoint(
      [&](double l) { return Mat(jacobian(m.f, Vec(l * x), u).leftCols(1)); }, 10000);
  EXPECT_NEAR(dense(0, 0), 2.0, 1e-8);
  for (int n = 1; n <= 4; ++n) {
    const auto s = ftc_stage(fn, x, u, x, Vec::Zero(1), u, QuadratureRule::gauss_legendre(n));
    EXPECT_NEAR(s.A(0, 0), 2.0, 1e-14) << n;
  }
}

TEST(FtcStage, PolynomialEmbeddingExactWithEnoughGaussNodes) {
  const DynamicsModel m = poly_model();
  std::mt19937 rng(8);
  for (int rep = 0; rep < 10; ++rep) {
    const Vec x = random_in_box(rng, Vec::Ones(2)), xa = random_in_box(rng, Vec::Ones(2));
    const Vec u = random_in_box(rng, Vec::Ones(1)), ua = random_in_box(rng, Vec::Ones(1));
    EXPECT_LE(ftc_embedding_residual(m, x, u, xa, ua, QuadratureRule::gauss_legendre(2)), 1e-10);
    EXPECT_GT(ftc_embedding_residual(m, x, u, xa, ua, QuadratureRule::rectangular(2)), 1e-10);
  }
}

TEST(FtcStage, CartPendulumEmbeddingResidualShrinksWithNodes) {
  const DynamicsModel m = cart();
  std::mt19937 rng(21);
  for (int rep = 0; rep < 5; ++rep) {
    const Vec x = random_in_box(rng, kCartBox), xa = random_in_box(rng, kCartBox);
    const Vec u = random_in_box(rng, Vec::Constant(1, 4.0)), ua = random_in_box(rng, Vec::Constant(1, 4.0));
    double prev = ftc_embedding_residual(m, x, u, xa, ua, QuadratureRule::rectangular(20));
    for (int n : {40, 80}) {
      const double r = ftc_embedding_residual(m, x, u, xa, ua, QuadratureRule::rectangular(n));
      EXPECT_LT(r, 0.6 * prev) << "n_int " << n;
      prev = r;
    }
  }
}

TEST(FtcStage, GaussAndRectangularConverge) {
  const OcpProblem ocp = make_cart_pendulum_ocp({});
  const StageFunctions fn = ocp.functions();
  std::mt19937 rng(13);
  for (int rep = 0; rep < 3; ++rep) {
    const Vec x = random_in_box(rng, kCartBox), xa = random_in_box(rng, kCartBox);
    const Vec u = random_in_box(rng, Vec::Constant(1, 4.0)), ua = random_in_box(rng, Vec::Constant(1, 4.0));
    const auto g = ftc_stage(fn, x, u, x, xa, ua, QuadratureRule::gauss_legendre(32));
    const auto r = ftc_stage(fn, x, u, x, xa, ua, QuadratureRule::rectangular(4096));
    EXPECT_LE(max_abs(g.A - r.A), 1e-8);
    EXPECT_LE(max_abs(g.B - r.B), 1e-8);
  }
}

TEST(SelectAnchors, Policies) {
  const int N = 3;
  Trajectory it = Trajectory::constant(Vec::Constant(2, 0.5), 1, N, 0, 0);
  it.U[1](0) = 2.0;
  const Vec xm = (Vec(2) << 1.0, -1.0).finished();

  const auto z = select_anchors(AnchorPolicy::zero(), 0, xm, Vec::Zero(1), it);
  ASSERT_EQ(z.X.size(), 4u);
  ASSERT_EQ(z.U.size(), 3u);
  for (const auto& x : z.X) EXPECT_EQ(inf_norm(x), 0.0);

  const auto p = select_anchors(AnchorPolicy::previous_iterate(), 0, xm, Vec::Zero(1), it);
  EXPECT_EQ(p.X, it.X);
  EXPECT_EQ(p.U, it.U);

  const auto m = select_anchors(AnchorPolicy::measured_state_last_input(), 0, xm, Vec::Zero(1), it);
  for (const auto& x : m.X) EXPECT_EQ(x, xm);
  for (const auto& u : m.U) EXPECT_EQ(u(0), 0.0);

  const auto c = select_anchors(AnchorPolicy::constant_point(Vec::Ones(2), Vec::Constant(1, 3.0)), 5, xm,
                                Vec::Zero(1), it);
  for (const auto& u : c.U) EXPECT_EQ(u(0), 3.0);

  EXPECT_THROW(select_anchors(AnchorPolicy::external({}, {}), 0, xm, Vec::Zero(1), it), ContractError);
  const auto e = select_anchors(AnchorPolicy::external({}, {}), 0, xm, Vec::Zero(1), it, &it);
  EXPECT_EQ(e.U, it.U);
  EXPECT_THROW(select_anchors(AnchorPolicy::external({Vec::Zero(2)}, {}), 0, xm, Vec::Zero(1), it), ContractError);
}
