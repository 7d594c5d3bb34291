#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "unimpc/qp.hpp"

namespace unimpc {

/// Split of the state into QP-optimized y and externally propagated z.
struct ZeroOrderPartition {
  enum class Propagation { LinearRollout, NonlinearRollout };
  std::vector<int> y_idx;
  std::vector<int> z_idx;
  Propagation propagation = Propagation::LinearRollout;

  void validate(int nx) const {
    std::vector<int> seen(nx, 0);
    for (int i : y_idx) {
      require(i >= 0 && i < nx, "ZeroOrderPartition: y index out of range");
      ++seen[i];
    }
    for (int i : z_idx) {
      require(i >= 0 && i < nx, "ZeroOrderPartition: z index out of range");
      ++seen[i];
    }
    for (int c : seen) require(c == 1, "ZeroOrderPartition: y and z must partition the state");
    require(std::is_sorted(y_idx.begin(), y_idx.end()) && std::is_sorted(z_idx.begin(), z_idx.end()),
            "ZeroOrderPartition: index sets must be ascending");
  }
};

inline const char* to_string(ZeroOrderPartition::Propagation p) {
  return p == ZeroOrderPartition::Propagation::LinearRollout ? "linear_rollout" : "nonlinear_rollout";
}

struct Termination {
  enum class Kind { KktResidual, SchedulingDelta, FixedIterations };
  Kind kind = Kind::KktResidual;
  double eps = 1e-6;
  int n = 10;

  static Termination kkt(double eps) { return {Kind::KktResidual, eps, 0}; }
  static Termination scheduling(double eps) { return {Kind::SchedulingDelta, eps, 0}; }
  static Termination fixed(int n) { return {Kind::FixedIterations, 0.0, n}; }
};

enum class IterationMode { FullConvergence, RTI };

struct IterationPolicy {
  SensitivityPolicy sensitivity;
  AnchorPolicy anchors;
  HessianPolicy hessian;
  Termination termination;
  int max_outer = 100;
  IterationMode mode = IterationMode::FullConvergence;
  std::optional<ZeroOrderPartition> zero_order;
  /// RTI: shift the solution by one stage for the next sample (else reuse it).
  bool shift = true;
  QpTolerances qp;

  /// Re-simulate the model after each step (iterative LPV with fixed anchors).
  bool resimulate() const {
    return sensitivity.kind == SensitivityPolicy::Kind::FtcQuadrature &&
           anchors.kind != AnchorPolicy::Kind::PreviousIterate;
  }

  void validate() const {
    require(max_outer >= 1, "IterationPolicy: max_outer must be >= 1");
    if (termination.kind == Termination::Kind::FixedIterations)
      require(termination.n >= 1, "IterationPolicy: FixedIterations needs n >= 1");
    else
      require(termination.eps > 0.0, "IterationPolicy: termination threshold must be positive");
  }

  static IterationPolicy sqp(Termination term = Termination::kkt(1e-8)) {
    IterationPolicy p;
    p.termination = term;
    return p;
  }

  static IterationPolicy lpv(QuadratureRule rule, AnchorPolicy anchors,
                             Termination term = Termination::scheduling(1e-6)) {
    IterationPolicy p;
    p.sensitivity = SensitivityPolicy::ftc(std::move(rule));
    p.anchors = std::move(anchors);
    p.termination = term;
    return p;
  }
};

/// Time-index data needed for anchor selection.
struct AnchorContext {
  int k = 0;
  Vec u_prev;                           // input applied at k - 1; empty means zeros
  const Trajectory* reference = nullptr;  // for ExternalSequence anchors
};

struct NlpResiduals {
  double stationarity = 0.0;
  double feasibility = 0.0;
  double complementarity = 0.0;
  double combined = 0.0;
};

struct TraceRow {
  int iter = 0;
  NlpResiduals kkt;
  double sched_delta = 0.0;
  double step_norm = 0.0;
  int qp_iters = 0;
  QpStatus qp_status = QpStatus::Solved;
  int halvings = 0;
  double t_prep_us = 0.0;
  double t_fb_us = 0.0;
  double cost = 0.0;
  double violation = 0.0;
};

using IterationTrace = std::vector<TraceRow>;

/**
 * Stacked gradient of the (halved-objective) Lagrangian with respect to
 * u_0, x_1, u_1, ..., x_N. The initial state is pinned, and its multiplier
 * absorbs the x_0 component, so that component is omitted.
 */
inline Vec nlp_lagrangian_gradient(const OcpProblem& ocp, const Trajectory& traj) {
  const int N = ocp.N, nx = ocp.nx(), nu = ocp.nu();
  require(traj.horizon() == N && static_cast<int>(traj.X.size()) == N + 1, "nlp_kkt_residual: horizon mismatch");
  require(static_cast<int>(traj.eq_mult.size()) == N + 1 && static_cast<int>(traj.ineq_mult.size()) == N + 1,
          "nlp_kkt_residual: multipliers missing");
  const Vec q = ocp.linear_term();
  Vec grad(N * (nx + nu));
  auto output_grad = [&](const Vec& x, int stage) -> Vec {
    if (!ocp.output) return Vec::Zero(nx);
    const auto [y, C] = value_and_jacobian(ocp.output->map, x, Vec(0), stage);
    return C.transpose() * (ocp.output->weight * y);
  };
  for (int i = 0; i < N; ++i) {
    const Vec& x = traj.X[i];
    const Vec& u = traj.U[i];
    const Mat J = jacobian(ocp.model.f, x, u, i);
    Vec gx = ocp.Q * x + output_grad(x, i) + J.leftCols(nx).transpose() * traj.eq_mult[i + 1] - traj.eq_mult[i];
    Vec gu = ocp.R * u + q + J.rightCols(nu).transpose() * traj.eq_mult[i + 1];
    if (ocp.nh() > 0) {
      const Mat Jh = jacobian(ocp.constraints, x, u, i);
      gx += Jh.leftCols(nx).transpose() * traj.ineq_mult[i];
      gu += Jh.rightCols(nu).transpose() * traj.ineq_mult[i];
    }
    // Layout: [u_0, x_1, u_1, ..., x_{N-1}, u_{N-1}, x_N].
    grad.segment(i * (nx + nu), nu) = gu;
    if (i > 0) grad.segment(i * (nx + nu) - nx, nx) = gx;
  }
  Vec gN = ocp.W * traj.X[N] + output_grad(traj.X[N], N) - traj.eq_mult[N];
  if (ocp.nh_terminal() > 0)
    gN += jacobian(ocp.terminal_constraints, traj.X[N], Vec(0), N).transpose() * traj.ineq_mult[N];
  grad.tail(nx) = gN;
  return grad;
}

/// Dynamics defects (including the initial-condition pin) in infinity norm.
inline double dynamics_defect(const OcpProblem& ocp, const std::vector<Vec>& X, const std::vector<Vec>& U) {
  double d = inf_norm(Vec(X[0] - ocp.x0));
  for (std::size_t i = 0; i < U.size(); ++i)
    d = std::max(d, inf_norm(Vec(ocp.model.f(X[i], U[i], static_cast<int>(i)) - X[i + 1])));
  return d;
}

inline NlpResiduals nlp_kkt_residual(const OcpProblem& ocp, const Trajectory& traj) {
  NlpResiduals r;
  r.stationarity = inf_norm(nlp_lagrangian_gradient(ocp, traj));
  const ConstraintValues cv = eval_constraints(ocp, traj.X, traj.U);
  r.feasibility = std::max(dynamics_defect(ocp, traj.X, traj.U), cv.max_violation);
  const int N = ocp.N, nh = ocp.nh();
  for (int i = 0; i <= N; ++i) {
    const Vec& mu = traj.ineq_mult[i];
    if (mu.size() == 0) continue;
    const Vec h = i < N ? Vec(cv.stacked.segment(i * nh, nh)) : Vec(cv.stacked.tail(mu.size()));
    r.feasibility = std::max(r.feasibility, std::max(0.0, -mu.minCoeff()));
    r.complementarity = std::max(r.complementarity, inf_norm(Vec(mu.cwiseProduct(h))));
  }
  r.combined = std::max({r.stationarity, r.feasibility, r.complementarity});
  return r;
}

/// Known z-steps of the zero-order scheme, one per state (dz_0 = 0).
struct ZeroOrderRollout {
  std::vector<Vec> dZ;
};

namespace detail {

inline Vec gather(const Vec& v, const std::vector<int>& idx) {
  Vec out(idx.size());
  for (std::size_t j = 0; j < idx.size(); ++j) out(j) = v(idx[j]);
  return out;
}

inline Mat gather(const Mat& A, const std::vector<int>& rows, const std::vector<int>& cols) {
  Mat out(rows.size(), cols.size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < cols.size(); ++c) out(r, c) = A(rows[r], cols[c]);
  return out;
}

inline Mat gather_cols(const Mat& A, const std::vector<int>& cols) {
  Mat out(A.rows(), cols.size());
  for (std::size_t c = 0; c < cols.size(); ++c) out.col(c) = A.col(cols[c]);
  return out;
}

inline std::vector<int> iota(int first, int n) {
  std::vector<int> v(n);
  for (int i = 0; i < n; ++i) v[i] = first + i;
  return v;
}

}  // namespace detail

/**
 * Computes the z-steps for the zero-order scheme. LinearRollout propagates
 * dz_{i+1} = A^zz_i dz_i + dWx^z_i; NonlinearRollout simulates
 * z_{i+1} = f^z(y_hat_i, z_i, u_hat_i) from z_0 = z_hat_0.
 */
inline ZeroOrderRollout zero_order_rollout(const QpData& qp, const ZeroOrderPartition& part, const OcpProblem& ocp,
                                           const Trajectory& traj) {
  const int N = qp.horizon();
  const int nz = static_cast<int>(part.z_idx.size());
  ZeroOrderRollout r;
  r.dZ.assign(N + 1, Vec::Zero(nz));
  if (nz == 0) return r;
  if (part.propagation == ZeroOrderPartition::Propagation::LinearRollout) {
    for (int i = 0; i < N; ++i) {
      const Mat Azz = detail::gather(qp.stages[i].A, part.z_idx, part.z_idx);
      r.dZ[i + 1] = Azz * r.dZ[i] + detail::gather(qp.stages[i].dWx, part.z_idx);
    }
  } else {
    Vec x = traj.X[0];
    for (int i = 0; i < N; ++i) {
      Vec xi = traj.X[i];
      for (int j = 0; j < nz; ++j) xi(part.z_idx[j]) = x(part.z_idx[j]);
      const Vec next = ocp.model.f(xi, traj.U[i], i);
      for (int j = 0; j < nz; ++j) x(part.z_idx[j]) = next(part.z_idx[j]);
      r.dZ[i + 1] = detail::gather(x, part.z_idx) - detail::gather(traj.X[i + 1], part.z_idx);
    }
  }
  return r;
}

/**
 * Zero-order reduction: drops the A^zy and B^z blocks, removes z from the
 * decision variables and folds the known z-steps into the remaining offsets
 * and cost gradients. The reduced QP is over (y, u).
 */
/// Reduced QP plus the original indices of the inequality rows it keeps.
/// Rows that only involve z become constants once dz is fixed and are left out.
struct ZeroOrderReduced {
  QpData qp;
  std::vector<std::vector<int>> rows;  // N+1 entries
};

namespace detail {

inline std::vector<int> decision_rows(const Mat& Hx, const Mat& Hu) {
  std::vector<int> keep;
  for (int r = 0; r < Hx.rows(); ++r) {
    const bool x_dep = Hx.cols() > 0 && Hx.row(r).cwiseAbs().maxCoeff() > 0.0;
    const bool u_dep = Hu.cols() > 0 && Hu.row(r).cwiseAbs().maxCoeff() > 0.0;
    if (x_dep || u_dep) keep.push_back(r);
  }
  return keep;
}

inline Mat take_rows(const Mat& A, const std::vector<int>& rows) {
  Mat out(rows.size(), A.cols());
  for (std::size_t j = 0; j < rows.size(); ++j) out.row(j) = A.row(rows[j]);
  return out;
}

}  // namespace detail

inline ZeroOrderReduced zero_order_reduce(const QpData& qp, const ZeroOrderPartition& part,
                                          const ZeroOrderRollout& roll) {
  ZeroOrderReduced out;
  const int N = qp.horizon();
  if (part.z_idx.empty()) {
    out.qp = qp;
    for (int i = 0; i < N; ++i) out.rows.push_back(detail::iota(0, static_cast<int>(qp.stages[i].dWh.size())));
    out.rows.push_back(detail::iota(0, static_cast<int>(qp.dWh_N.size())));
    return out;
  }
  part.validate(qp.nx);
  const int nx = qp.nx, nu = qp.nu;
  const auto& Y = part.y_idx;
  const auto& Z = part.z_idx;
  const int ny = static_cast<int>(Y.size());
  std::vector<int> yu = Y;  // indices of (y, u) inside [x; u]
  for (int j = 0; j < nu; ++j) yu.push_back(nx + j);
  const std::vector<int> u_cols = detail::iota(0, nu);

  QpData& r = out.qp;
  r.nx = ny;
  r.nu = nu;
  r.n_indefinite = qp.n_indefinite;
  r.dx0 = detail::gather(qp.dx0, Y);
  r.stages.resize(N);
  for (int i = 0; i < N; ++i) {
    const QpStage& s = qp.stages[i];
    const Vec& dz = roll.dZ[i];
    QpStage& t = r.stages[i];
    t.M = detail::gather(s.M, yu, yu);
    t.m = detail::gather(s.m, yu) + detail::gather(s.M, yu, Z) * dz;
    t.A = detail::gather(s.A, Y, Y);
    t.B = detail::gather(s.B, Y, u_cols);
    t.dWx = detail::gather(s.dWx, Y) + detail::gather(s.A, Y, Z) * dz;
    const Mat Hx = detail::gather_cols(s.Hx, Y);
    const Vec dWh = s.dWh + detail::gather_cols(s.Hx, Z) * dz;
    const std::vector<int> keep = detail::decision_rows(Hx, s.Hu);
    t.Hx = detail::take_rows(Hx, keep);
    t.Hu = detail::take_rows(s.Hu, keep);
    t.dWh = detail::gather(dWh, keep);
    out.rows.push_back(keep);
  }
  const Vec& dzN = roll.dZ[N];
  r.M_N = detail::gather(qp.M_N, Y, Y);
  r.m_N = detail::gather(qp.m_N, Y) + detail::gather(qp.M_N, Y, Z) * dzN;
  const Mat HxN = detail::gather_cols(qp.Hx_N, Y);
  const Vec dWhN = qp.dWh_N + detail::gather_cols(qp.Hx_N, Z) * dzN;
  const std::vector<int> keepN = detail::decision_rows(HxN, Mat(HxN.rows(), 0));
  r.Hx_N = detail::take_rows(HxN, keepN);
  r.dWh_N = detail::gather(dWhN, keepN);
  out.rows.push_back(keepN);
  return out;
}

/// Maps a reduced-QP solution back to full dimensions. z multipliers and the
/// multipliers of dropped rows are zero.
inline QpSolution zero_order_expand(const QpSolution& red, const ZeroOrderPartition& part, const ZeroOrderRollout& roll,
                                    const QpData& full_qp, const ZeroOrderReduced& reduced) {
  QpSolution full = red;
  const int nx = full_qp.nx;
  const int N = static_cast<int>(red.dU.size());
  for (int i = 0; i <= N; ++i) {
    Vec dx = Vec::Zero(nx), lam = Vec::Zero(nx);
    for (std::size_t j = 0; j < part.y_idx.size(); ++j) {
      dx(part.y_idx[j]) = red.dX[i](j);
      lam(part.y_idx[j]) = red.eq_mult[i](j);
    }
    for (std::size_t j = 0; j < part.z_idx.size(); ++j) dx(part.z_idx[j]) = roll.dZ[i](j);
    full.dX[i] = dx;
    full.eq_mult[i] = lam;
    const int nh = static_cast<int>(i < N ? full_qp.stages[i].dWh.size() : full_qp.dWh_N.size());
    Vec mu = Vec::Zero(nh);
    const auto& keep = reduced.rows[i];
    for (std::size_t j = 0; j < keep.size(); ++j) mu(keep[j]) = red.ineq_mult[i](j);
    full.ineq_mult[i] = mu;
  }
  return full;
}

struct StepResult {
  Trajectory traj;
  TraceRow row;
  QpSolution qp;  // step in full state coordinates
  bool accepted = true;
  std::string diagnostic;
};

namespace detail {

inline double elapsed_us(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count();
}

inline Trajectory apply_step(const OcpProblem& ocp, const Trajectory& traj, const QpSolution& step, double alpha,
                             bool resimulate) {
  const int N = ocp.N;
  Trajectory next = traj;
  for (int i = 0; i < N; ++i) next.U[i] = traj.U[i] + alpha * step.dU[i];
  if (resimulate) {
    next.X[0] = ocp.x0;
    for (int i = 0; i < N; ++i) next.X[i + 1] = ocp.model.f(next.X[i], next.U[i], i);
  } else {
    for (int i = 0; i <= N; ++i) next.X[i] = traj.X[i] + alpha * step.dX[i];
  }
  for (int i = 0; i <= N; ++i) {
    next.eq_mult[i] = traj.eq_mult[i] + alpha * (step.eq_mult[i] - traj.eq_mult[i]);
    next.ineq_mult[i] = traj.ineq_mult[i] + alpha * (step.ineq_mult[i] - traj.ineq_mult[i]);
  }
  next.refresh_scheduling();
  return next;
}

inline bool finite_step(const QpSolution& s) {
  auto ok = [](const std::vector<Vec>& vs) {
    for (const auto& v : vs)
      if (!v.allFinite()) return false;
    return !vs.empty();
  };
  return ok(s.dX) && ok(s.dU) && ok(s.eq_mult) && ok(s.ineq_mult);
}

inline bool finite_traj(const Trajectory& t) {
  for (const auto& x : t.X)
    if (!x.allFinite()) return false;
  for (const auto& u : t.U)
    if (!u.allFinite()) return false;
  return true;
}

}  // namespace detail

/**
 * One outer iteration: assemble the QP around `traj`, solve it, and update
 * the iterate. Fixed-anchor FTC policies re-simulate the model with the new
 * inputs; all other policies take the additive full step.
 */
inline StepResult outer_step(const OcpProblem& ocp, const Trajectory& traj, const IterationPolicy& policy,
                             const AnchorContext& ctx = {}) {
  const int N = ocp.N, nx = ocp.nx(), nu = ocp.nu();
  require(static_cast<int>(traj.X.size()) == N + 1 && traj.horizon() == N, "outer_step: trajectory horizon mismatch");
  require(traj.X[0] == ocp.x0, "outer_step: initial state not pinned to x0");
  StepResult out;
  out.row.iter = 1;

  const auto t0 = std::chrono::steady_clock::now();
  std::optional<AnchorSequence> anchors;
  if (policy.sensitivity.kind == SensitivityPolicy::Kind::FtcQuadrature) {
    const Vec u_prev = ctx.u_prev.size() == nu ? ctx.u_prev : Vec::Zero(nu);
    anchors = select_anchors(policy.anchors, ctx.k, ocp.x0, u_prev, traj, ctx.reference);
  }
  QpData qp = assemble_qp(ocp, traj, policy.sensitivity, anchors ? &*anchors : nullptr, policy.hessian);
  std::optional<ZeroOrderRollout> roll;
  std::optional<ZeroOrderReduced> reduced;  // after the swap, reduced->qp holds the full QP
  const bool zo = policy.zero_order && !policy.zero_order->z_idx.empty();
  if (zo) {
    roll = zero_order_rollout(qp, *policy.zero_order, ocp, traj);
    reduced = zero_order_reduce(qp, *policy.zero_order, *roll);
    std::swap(qp, reduced->qp);
  }
  out.row.t_prep_us = detail::elapsed_us(t0);

  const auto t1 = std::chrono::steady_clock::now();
  QpSolution sol = solve_qp(qp, nullptr, policy.qp);
  out.row.t_fb_us = detail::elapsed_us(t1);
  out.row.qp_iters = sol.iterations;
  out.row.qp_status = sol.status;
  if (zo && detail::finite_step(sol)) sol = zero_order_expand(sol, *policy.zero_order, *roll, reduced->qp, *reduced);

  const bool resim = policy.resimulate();
  const std::vector<Vec> P_old = traj.scheduling ? *traj.scheduling : traj.scheduling_sequence();
  if (sol.status == QpStatus::Solved) {
    out.traj = detail::apply_step(ocp, traj, sol, 1.0, resim);
  } else {
    // Fallback: shrink the best available step until it is finite and does
    // not increase the KKT residual.
    const double r0 = nlp_kkt_residual(ocp, traj).combined;
    bool ok = false;
    if (detail::finite_step(sol)) {
      for (int j = 1; j <= 5 && !ok; ++j) {
        const double alpha = std::ldexp(1.0, -j);
        try {
          Trajectory cand = detail::apply_step(ocp, traj, sol, alpha, resim);
          if (!detail::finite_traj(cand)) continue;
          const double r = nlp_kkt_residual(ocp, cand).combined;
          if (std::isfinite(r) && r <= r0) {
            out.traj = std::move(cand);
            out.row.halvings = j;
            ok = true;
          }
        } catch (const NumericError&) {
        }
      }
    }
    if (!ok) {
      out.accepted = false;
      out.traj = traj;
      out.diagnostic = std::string("QP ") + to_string(sol.status) + " after " + std::to_string(sol.iterations) +
                       " iterations; step halving failed";
      out.qp = std::move(sol);
      return out;
    }
  }

  const std::vector<Vec>& P_new = *out.traj.scheduling;
  double sd = 0.0;
  for (int i = 0; i < N; ++i) sd = std::max(sd, inf_norm(Vec(P_new[i] - P_old[i])));
  out.row.sched_delta = sd;
  out.row.step_norm = sol.step_norm();
  out.row.kkt = nlp_kkt_residual(ocp, out.traj);
  out.row.cost = eval_nlp_cost(ocp, out.traj.X, out.traj.U);
  out.row.violation = eval_constraints(ocp, out.traj.X, out.traj.U).max_violation;
  out.qp = std::move(sol);
  return out;
}

enum class SolveStatus { Converged, MaxOuter, Aborted };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Converged: return "converged";
    case SolveStatus::MaxOuter: return "max_outer";
    case SolveStatus::Aborted: return "aborted";
  }
  return "?";
}

struct SolveResult {
  Trajectory traj;
  IterationTrace trace;
  SolveStatus status = SolveStatus::MaxOuter;
  std::string diagnostic;
  QpSolution last_qp;

  int iterations() const { return static_cast<int>(trace.size()); }
};

/// Copy of `traj` with x_0 set to the problem's initial state.
inline Trajectory pin_initial_state(const OcpProblem& ocp, Trajectory traj) {
  require(!traj.X.empty(), "pin_initial_state: empty trajectory");
  traj.X[0] = ocp.x0;
  if (!traj.scheduling) traj.refresh_scheduling();
  return traj;
}

inline bool terminated(const Termination& term, const TraceRow& row, int iterations) {
  switch (term.kind) {
    case Termination::Kind::KktResidual: return row.kkt.combined <= term.eps;
    case Termination::Kind::SchedulingDelta: return row.sched_delta <= term.eps;
    case Termination::Kind::FixedIterations: return iterations >= term.n;
  }
  return false;
}

/// Outer loop until the policy's termination criterion holds.
inline SolveResult solve_ocp(const OcpProblem& ocp, const Trajectory& init, const IterationPolicy& policy,
                             const AnchorContext& ctx = {}) {
  ocp.validate();
  policy.validate();
  if (policy.zero_order) policy.zero_order->validate(ocp.nx());
  SolveResult res;
  Trajectory traj = pin_initial_state(ocp, init);
  traj.refresh_scheduling();
  const int limit = policy.termination.kind == Termination::Kind::FixedIterations
                        ? std::max(policy.termination.n, 1)
                        : policy.max_outer;
  for (int j = 1; j <= limit; ++j) {
    StepResult step;
    try {
      step = outer_step(ocp, traj, policy, ctx);
    } catch (const NumericError& e) {
      res.status = SolveStatus::Aborted;
      res.diagnostic = e.what();
      res.traj = traj;
      return res;
    }
    if (!step.accepted) {
      res.status = SolveStatus::Aborted;
      res.diagnostic = step.diagnostic;
      res.traj = traj;
      res.last_qp = std::move(step.qp);
      return res;
    }
    step.row.iter = j;
    res.trace.push_back(step.row);
    traj = std::move(step.traj);
    res.last_qp = std::move(step.qp);
    if (terminated(policy.termination, step.row, j)) {
      res.status = SolveStatus::Converged;
      res.traj = std::move(traj);
      return res;
    }
  }
  res.status = SolveStatus::MaxOuter;
  res.traj = std::move(traj);
  return res;
}

/// Shift by one stage, duplicating the last state, input and multipliers.
inline Trajectory shift_trajectory(const Trajectory& t) {
  Trajectory s = t;
  const int N = t.horizon();
  for (int i = 0; i < N; ++i) {
    s.X[i] = t.X[i + 1];
    s.eq_mult[i] = t.eq_mult[i + 1];
  }
  for (int i = 0; i + 1 < N; ++i) {
    s.U[i] = t.U[i + 1];
    s.ineq_mult[i] = t.ineq_mult[i + 1];
  }
  s.refresh_scheduling();
  return s;
}

struct RtiResult {
  Vec u_apply;
  Trajectory next;      // initialization for the next sample
  Trajectory solution;  // iterate after the single step (unshifted)
  TraceRow row;
  double r_before = 0.0;
  double r_after = 0.0;
  bool ok = true;
  std::string diagnostic;
};

/// Real-time iteration: exactly one outer step per sample.
inline RtiResult rti_step(const OcpProblem& ocp, const Trajectory& warm, const IterationPolicy& policy,
                          const AnchorContext& ctx = {}) {
  require(policy.mode == IterationMode::RTI, "rti_step: policy mode must be RTI");
  ocp.validate();
  RtiResult out;
  Trajectory traj = pin_initial_state(ocp, warm);
  traj.refresh_scheduling();
  out.r_before = nlp_kkt_residual(ocp, traj).combined;
  StepResult step;
  try {
    step = outer_step(ocp, traj, policy, ctx);
  } catch (const NumericError& e) {
    step.accepted = false;
    step.diagnostic = e.what();
    step.traj = traj;
  }
  out.ok = step.accepted;
  out.diagnostic = step.diagnostic;
  out.row = step.row;
  out.solution = step.accepted ? step.traj : traj;
  out.r_after = step.accepted ? step.row.kkt.combined : out.r_before;
  out.u_apply = out.solution.U[0];
  out.next = policy.shift ? shift_trajectory(out.solution) : out.solution;
  return out;
}

}  // namespace unimpc
