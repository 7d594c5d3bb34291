#pragma once

#include <algorithm>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Eigenvalues>

#include "unimpc/sensitivity.hpp"

namespace unimpc {

/// Output-space cost term ||c(x)||^2_weight, with c differentiated like dynamics.
struct OutputCost {
  VectorFunction map;  // c(x), nu = 0
  Mat weight;
};

/**
 * @brief Discrete-time OCP with quadratic costs.
 *
 * Objective (reported by eval_nlp_cost):
 *   sum_i ||x_i||^2_Q + ||u_i||^2_R + 2 q'u_i + ||c(x_i)||^2_Qy + stage_constant
 *   + ||x_N||^2_W + ||c(x_N)||^2_Qy.
 * The QP and the Lagrangian work with half of this objective, so that the
 * Gauss-Newton Hessian is diag(Q, R) and the gradient is diag(Q, R)[x; u].
 */
struct OcpProblem {
  DynamicsModel model;
  VectorFunction constraints;           // h(x, u) <= 0, may be empty
  VectorFunction terminal_constraints;  // h_N(x) <= 0 with nu = 0, may be empty
  Mat Q, R, W;
  Vec input_linear;  // q, size nu (zero if unused)
  std::optional<OutputCost> output;
  double stage_constant = 0.0;
  int N = 1;
  Vec x0;

  int nx() const { return model.nx(); }
  int nu() const { return model.nu(); }
  int nh() const { return constraints.empty() ? 0 : constraints.rows(); }
  int nh_terminal() const { return terminal_constraints.empty() ? 0 : terminal_constraints.rows(); }

  StageFunctions functions() const {
    return StageFunctions{&model, constraints.empty() ? nullptr : &constraints,
                          terminal_constraints.empty() ? nullptr : &terminal_constraints,
                          output ? &output->map : nullptr};
  }

  Vec linear_term() const { return input_linear.size() == 0 ? Vec::Zero(nu()) : input_linear; }

  Trajectory cold_start() const { return Trajectory::constant(x0, nu(), N, nh(), nh_terminal()); }

  void validate() const {
    require(!model.continuous(), "OcpProblem: dynamics must be discrete (discretize first)");
    require(N >= 1, "OcpProblem: horizon N must be >= 1");
    const int n = nx(), m = nu();
    require(x0.size() == n, "OcpProblem: x0 dimension mismatch");
    require(Q.rows() == n && Q.cols() == n, "OcpProblem: Q dimension mismatch");
    require(W.rows() == n && W.cols() == n, "OcpProblem: W dimension mismatch");
    require(R.rows() == m && R.cols() == m, "OcpProblem: R dimension mismatch");
    require(input_linear.size() == 0 || input_linear.size() == m, "OcpProblem: linear input term mismatch");
    auto min_eig = [](const Mat& S) {
      require((S - S.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, S.cwiseAbs().maxCoeff()),
              "OcpProblem: weight matrix not symmetric");
      return Eigen::SelfAdjointEigenSolver<Mat>(S, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
    };
    require(min_eig(Q) >= -1e-10, "OcpProblem: Q must be PSD");
    require(min_eig(W) >= -1e-10, "OcpProblem: W must be PSD");
    require(min_eig(R) >= 1e-10, "OcpProblem: R must be PD");
    if (!constraints.empty())
      require(constraints.nx() == n && constraints.nu() == m, "OcpProblem: constraint dimension mismatch");
    if (!terminal_constraints.empty())
      require(terminal_constraints.nx() == n && terminal_constraints.nu() == 0,
              "OcpProblem: terminal constraints must depend on x only");
    if (output) {
      require(output->map.nx() == n && output->map.nu() == 0, "OcpProblem: output map must depend on x only");
      require(output->weight.rows() == output->map.rows() && output->weight.cols() == output->map.rows(),
              "OcpProblem: output weight mismatch");
      require(min_eig(output->weight) >= -1e-10, "OcpProblem: output weight must be PSD");
    }
  }
};

/// Rows [x - ub; lb - x; u - ub; lb - u] for every finite bound.
inline VectorFunction make_box_constraints(const Vec& x_lb, const Vec& x_ub, const Vec& u_lb, const Vec& u_ub) {
  const int nx = static_cast<int>(x_lb.size());
  const int nu = static_cast<int>(u_lb.size());
  require(x_ub.size() == nx && u_ub.size() == nu, "make_box_constraints: bound size mismatch");
  struct Row {
    bool is_input;
    int index;
    double sign;
    double bound;
  };
  std::vector<Row> rows;
  for (int i = 0; i < nx; ++i)
    if (std::isfinite(x_ub(i))) rows.push_back({false, i, 1.0, x_ub(i)});
  for (int i = 0; i < nx; ++i)
    if (std::isfinite(x_lb(i))) rows.push_back({false, i, -1.0, x_lb(i)});
  for (int i = 0; i < nu; ++i)
    if (std::isfinite(u_ub(i))) rows.push_back({true, i, 1.0, u_ub(i)});
  for (int i = 0; i < nu; ++i)
    if (std::isfinite(u_lb(i))) rows.push_back({true, i, -1.0, u_lb(i)});
  const int nh = static_cast<int>(rows.size());
  return VectorFunction(nx, nu, nh, [rows](const auto& x, const auto& u) {
    using T = scalar_of<decltype(x)>;
    VecT<T> h(static_cast<int>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const T& v = rows[r].is_input ? u(rows[r].index) : x(rows[r].index);
      h(r) = rows[r].sign * (v - rows[r].bound);
    }
    return h;
  });
}

/// State-only box for the terminal stage.
inline VectorFunction make_state_box(const Vec& x_lb, const Vec& x_ub) {
  return make_box_constraints(x_lb, x_ub, Vec(0), Vec(0));
}

struct HessianPolicy {
  enum class Kind { GaussNewton, ExactLagrangian };
  Kind kind = Kind::GaussNewton;
  double eps_reg = 1e-8;
};

enum class StageTag { Initial, Intermediate, Terminal };

/**
 * Exact Hessian over [x; u] of the stage Lagrangian
 *   1/2 x'Qx + 1/2 u'Ru + q'u + 1/2 ||c(x)||^2_Qy + theta_next' f(x, u) + mu' h(x, u)
 * (Initial / Intermediate), or for Terminal
 *   1/2 x'Wx + 1/2 ||c(x)||^2_Qy + mu' h_N(x)   (size nx).
 * The initial-condition constraint is affine and contributes no curvature.
 */
inline Mat hessian_lagrangian_stage(const OcpProblem& ocp, StageTag tag, const Vec& x, const Vec& u,
                                    const Vec& theta_next, const Vec& mu, int stage = -1) {
  const int nx = ocp.nx(), nu = ocp.nu();
  if (tag == StageTag::Terminal) {
    Mat H = ocp.W;
    if (ocp.output) {
      const auto [c, J] = value_and_jacobian(ocp.output->map, x, Vec(0), stage);
      H += J.transpose() * ocp.output->weight * J;
      H += weighted_hessian(ocp.output->map, x, Vec(0), ocp.output->weight * c, stage);
    }
    if (ocp.nh_terminal() > 0) H += weighted_hessian(ocp.terminal_constraints, x, Vec(0), mu, stage);
    return 0.5 * (H + H.transpose());
  }
  Mat H = Mat::Zero(nx + nu, nx + nu);
  H.topLeftCorner(nx, nx) = ocp.Q;
  H.bottomRightCorner(nu, nu) = ocp.R;
  if (ocp.output) {
    const auto [c, J] = value_and_jacobian(ocp.output->map, x, Vec(0), stage);
    H.topLeftCorner(nx, nx) += J.transpose() * ocp.output->weight * J;
    H.topLeftCorner(nx, nx) += weighted_hessian(ocp.output->map, x, Vec(0), ocp.output->weight * c, stage);
  }
  H += weighted_hessian(ocp.model.f, x, u, theta_next, stage);
  if (ocp.nh() > 0) H += weighted_hessian(ocp.constraints, x, u, mu, stage);
  return 0.5 * (H + H.transpose());
}

/// Project eigenvalues below eps up to eps. Returns true if the input had a
/// negative eigenvalue (beyond round-off).
inline bool clip_eigenvalues(Mat& S, double eps) {
  Eigen::SelfAdjointEigenSolver<Mat> es(S);
  Vec ev = es.eigenvalues();
  const bool indefinite = ev.minCoeff() < -1e-10 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  if (ev.minCoeff() < eps) {
    ev = ev.cwiseMax(eps);
    S = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    S = 0.5 * (S + S.transpose());
  }
  return indefinite;
}

struct QpStage {
  Mat M;  // (nx + nu)^2
  Vec m;
  Mat A, B;
  Vec dWx;
  Mat Hx, Hu;
  Vec dWh;
};

/**
 * @brief Stage-structured QP in delta variables.
 *
 *   min sum_i 1/2 [dx;du]' M_i [dx;du] + m_i'[dx;du] + 1/2 dx_N' M_N dx_N + m_N' dx_N
 *   s.t. dx_{i+1} = A_i dx_i + B_i du_i + dWx_i
 *        Hx_i dx_i + Hu_i du_i + dWh_i <= 0,   Hx_N dx_N + dWh_N <= 0
 *        dx_0 = dx0
 */
struct QpData {
  int nx = 0;
  int nu = 0;
  std::vector<QpStage> stages;
  Mat M_N;
  Vec m_N;
  Mat Hx_N;
  Vec dWh_N;
  Vec dx0;

  // Diagnostics from assembly.
  int n_indefinite = 0;

  int horizon() const { return static_cast<int>(stages.size()); }

  int n_ineq() const {
    int n = static_cast<int>(dWh_N.size());
    for (const auto& s : stages) n += static_cast<int>(s.dWh.size());
    return n;
  }

  void validate() const {
    const int N = horizon();
    require(N >= 1, "QpData: empty horizon");
    require(dx0.size() == nx, "QpData: dx0 dimension mismatch");
    require(M_N.rows() == nx && M_N.cols() == nx && m_N.size() == nx, "QpData: terminal cost mismatch");
    require(Hx_N.rows() == dWh_N.size() && Hx_N.cols() == nx, "QpData: terminal constraint mismatch");
    for (const auto& s : stages) {
      require(s.M.rows() == nx + nu && s.M.cols() == nx + nu && s.m.size() == nx + nu, "QpData: stage cost mismatch");
      require(s.A.rows() == nx && s.A.cols() == nx && s.B.rows() == nx && s.B.cols() == nu && s.dWx.size() == nx,
              "QpData: dynamics mismatch");
      require(s.Hx.rows() == s.dWh.size() && s.Hu.rows() == s.dWh.size() && s.Hx.cols() == nx && s.Hu.cols() == nu,
              "QpData: constraint mismatch");
    }
  }
};

/**
 * Builds the unified QP around `iterate`. With Linearize the stage matrices
 * are Jacobians; with FtcQuadrature they are integrated between `anchors` and
 * the iterate. Offsets, gradients and (Gauss-Newton) Hessians are identical
 * for both policies.
 */
inline QpData assemble_qp(const OcpProblem& ocp, const Trajectory& iterate, const SensitivityPolicy& sens,
                          const AnchorSequence* anchors, const HessianPolicy& hess) {
  const int N = ocp.N, nx = ocp.nx(), nu = ocp.nu();
  require(iterate.horizon() == N && static_cast<int>(iterate.X.size()) == N + 1,
          "assemble_qp: iterate horizon mismatch");
  for (const auto& x : iterate.X) require(x.size() == nx, "assemble_qp: state dimension mismatch");
  for (const auto& u : iterate.U) require(u.size() == nu, "assemble_qp: input dimension mismatch");
  const bool ftc = sens.kind == SensitivityPolicy::Kind::FtcQuadrature;
  require(!ftc || anchors != nullptr, "assemble_qp: FTC policy needs anchors");
  if (anchors != nullptr)
    require(static_cast<int>(anchors->X.size()) == N + 1 && static_cast<int>(anchors->U.size()) == N,
            "assemble_qp: anchor length mismatch");
  const bool exact = hess.kind == HessianPolicy::Kind::ExactLagrangian;
  if (exact)
    require(static_cast<int>(iterate.eq_mult.size()) == N + 1 && static_cast<int>(iterate.ineq_mult.size()) == N + 1,
            "assemble_qp: exact Hessian needs multiplier estimates");

  const StageFunctions fn = ocp.functions();
  const Vec q = ocp.linear_term();
  QpData qp;
  qp.nx = nx;
  qp.nu = nu;
  qp.stages.resize(N);
  qp.dx0 = Vec::Zero(nx);

  for (int i = 0; i < N; ++i) {
    const Vec& x = iterate.X[i];
    const Vec& u = iterate.U[i];
    const StageSensitivities s =
        ftc ? ftc_stage(fn, x, u, iterate.X[i + 1], anchors->X[i], anchors->U[i], sens.rule, i)
            : linearize_stage(fn, x, u, iterate.X[i + 1], i);
    QpStage& st = qp.stages[i];
    st.A = s.A;
    st.B = s.B;
    st.dWx = s.dWx;
    st.Hx = s.Hx;
    st.Hu = s.Hu;
    st.dWh = s.dWh;
    st.m = Vec::Zero(nx + nu);
    st.m.head(nx) = ocp.Q * x;
    st.m.tail(nu) = ocp.R * u + q;
    if (ocp.output) st.m.head(nx) += s.C.transpose() * (ocp.output->weight * s.y);
    if (exact) {
      st.M = hessian_lagrangian_stage(ocp, i == 0 ? StageTag::Initial : StageTag::Intermediate, x, u,
                                      iterate.eq_mult[i + 1], iterate.ineq_mult[i], i);
      if (clip_eigenvalues(st.M, hess.eps_reg)) ++qp.n_indefinite;
    } else {
      st.M = Mat::Zero(nx + nu, nx + nu);
      st.M.topLeftCorner(nx, nx) = ocp.Q;
      st.M.bottomRightCorner(nu, nu) = ocp.R;
      if (ocp.output) st.M.topLeftCorner(nx, nx) += s.C.transpose() * ocp.output->weight * s.C;
    }
  }

  const Vec& xN = iterate.X[N];
  const TerminalSensitivities t = terminal_sensitivities(fn, xN, anchors ? anchors->X[N] : xN, sens, N);
  qp.Hx_N = t.Hx;
  qp.dWh_N = t.dWh;
  qp.m_N = ocp.W * xN;
  if (ocp.output) qp.m_N += t.C.transpose() * (ocp.output->weight * t.y);
  if (exact) {
    qp.M_N = hessian_lagrangian_stage(ocp, StageTag::Terminal, xN, Vec(0), Vec(0), iterate.ineq_mult[N], N);
    if (clip_eigenvalues(qp.M_N, hess.eps_reg)) ++qp.n_indefinite;
  } else {
    qp.M_N = ocp.W;
    if (ocp.output) qp.M_N += t.C.transpose() * ocp.output->weight * t.C;
  }
  return qp;
}

/// Objective as written in the problem (not halved).
inline double eval_nlp_cost(const OcpProblem& ocp, const std::vector<Vec>& X, const std::vector<Vec>& U) {
  const int N = static_cast<int>(U.size());
  require(static_cast<int>(X.size()) == N + 1, "eval_nlp_cost: X must have N + 1 states");
  const Vec q = ocp.linear_term();
  double J = 0.0;
  auto output_term = [&](const Vec& x) {
    if (!ocp.output) return 0.0;
    const Vec y = ocp.output->map(x, Vec(0));
    return y.dot(ocp.output->weight * y);
  };
  for (int i = 0; i < N; ++i) {
    J += X[i].dot(ocp.Q * X[i]) + U[i].dot(ocp.R * U[i]) + 2.0 * q.dot(U[i]) + output_term(X[i]) +
         ocp.stage_constant;
  }
  J += X[N].dot(ocp.W * X[N]) + output_term(X[N]);
  return J;
}

struct ConstraintValues {
  Vec stacked;  // h over stages 0..N-1, then h_N
  double max_violation = 0.0;
};

inline ConstraintValues eval_constraints(const OcpProblem& ocp, const std::vector<Vec>& X, const std::vector<Vec>& U) {
  const int N = static_cast<int>(U.size());
  require(static_cast<int>(X.size()) == N + 1, "eval_constraints: X must have N + 1 states");
  const int nh = ocp.nh(), nhN = ocp.nh_terminal();
  ConstraintValues cv;
  cv.stacked.resize(N * nh + nhN);
  for (int i = 0; i < N; ++i)
    if (nh > 0) cv.stacked.segment(i * nh, nh) = ocp.constraints(X[i], U[i], i);
  if (nhN > 0) cv.stacked.tail(nhN) = ocp.terminal_constraints(X[N], Vec(0), N);
  cv.max_violation = cv.stacked.size() == 0 ? 0.0 : std::max(0.0, cv.stacked.maxCoeff());
  return cv;
}

}  // namespace unimpc
