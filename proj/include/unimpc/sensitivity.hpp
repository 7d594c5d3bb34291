#pragma once

#include <optional>
#include <string>
#include <vector>

#include "unimpc/model.hpp"
#include "unimpc/quadrature.hpp"
#include "unimpc/trajectory.hpp"

namespace unimpc {

/// How stage matrices are formed: pointwise Jacobians, or Jacobians
/// integrated along the segment from the anchor to the iterate.
struct SensitivityPolicy {
  enum class Kind { Linearize, FtcQuadrature };
  Kind kind = Kind::Linearize;
  QuadratureRule rule = QuadratureRule::rectangular(20);

  static SensitivityPolicy linearize() { return {}; }
  static SensitivityPolicy ftc(QuadratureRule rule) { return {Kind::FtcQuadrature, std::move(rule)}; }
};

struct AnchorPolicy {
  enum class Kind { Zero, ConstantPoint, MeasuredStateLastInput, PreviousIterate, ExternalSequence };
  Kind kind = Kind::PreviousIterate;
  Vec x_const;              // ConstantPoint
  Vec u_const;              // ConstantPoint
  std::vector<Vec> X_ext;   // ExternalSequence (empty: supplied per call)
  std::vector<Vec> U_ext;

  static AnchorPolicy zero() { return {Kind::Zero, {}, {}, {}, {}}; }
  static AnchorPolicy previous_iterate() { return {}; }
  static AnchorPolicy measured_state_last_input() { return {Kind::MeasuredStateLastInput, {}, {}, {}, {}}; }
  static AnchorPolicy constant_point(Vec x, Vec u) { return {Kind::ConstantPoint, std::move(x), std::move(u), {}, {}}; }
  static AnchorPolicy external(std::vector<Vec> X, std::vector<Vec> U) {
    return {Kind::ExternalSequence, {}, {}, std::move(X), std::move(U)};
  }

  /// Anchors that never move with the iterate within one OCP solve.
  bool fixed() const { return kind != Kind::PreviousIterate; }
};

inline std::string to_string(AnchorPolicy::Kind k) {
  switch (k) {
    case AnchorPolicy::Kind::Zero: return "zero";
    case AnchorPolicy::Kind::ConstantPoint: return "constant_point";
    case AnchorPolicy::Kind::MeasuredStateLastInput: return "measured_state_last_input";
    case AnchorPolicy::Kind::PreviousIterate: return "previous_iterate";
    case AnchorPolicy::Kind::ExternalSequence: return "external_sequence";
  }
  return "?";
}

struct AnchorSequence {
  std::vector<Vec> X;  // N + 1 states
  std::vector<Vec> U;  // N inputs
};

/**
 * Stage-wise anchors for time index k. `u_prev` is the input applied at
 * k - 1 (callers pass zeros at k = 0). `reference` supplies the sequence for
 * ExternalSequence when the policy carries none.
 */
inline AnchorSequence select_anchors(const AnchorPolicy& policy, int /*k*/, const Vec& x_meas, const Vec& u_prev,
                                     const Trajectory& iterate, const Trajectory* reference = nullptr) {
  const int N = iterate.horizon();
  const int nx = static_cast<int>(iterate.X.front().size());
  const int nu = N > 0 ? static_cast<int>(iterate.U.front().size()) : 0;
  AnchorSequence a;
  switch (policy.kind) {
    case AnchorPolicy::Kind::Zero:
      a.X.assign(N + 1, Vec::Zero(nx));
      a.U.assign(N, Vec::Zero(nu));
      break;
    case AnchorPolicy::Kind::ConstantPoint:
      require(policy.x_const.size() == nx && policy.u_const.size() == nu, "ConstantPoint anchor: dimension mismatch");
      a.X.assign(N + 1, policy.x_const);
      a.U.assign(N, policy.u_const);
      break;
    case AnchorPolicy::Kind::MeasuredStateLastInput:
      require(x_meas.size() == nx && u_prev.size() == nu, "MeasuredStateLastInput anchor: dimension mismatch");
      a.X.assign(N + 1, x_meas);
      a.U.assign(N, u_prev);
      break;
    case AnchorPolicy::Kind::PreviousIterate:
      a.X = iterate.X;
      a.U = iterate.U;
      break;
    case AnchorPolicy::Kind::ExternalSequence:
      if (!policy.X_ext.empty()) {
        a.X = policy.X_ext;
        a.U = policy.U_ext;
      } else {
        if (reference == nullptr) throw ContractError("ExternalSequence anchors need a reference trajectory");
        a.X = reference->X;
        a.U = reference->U;
      }
      require(static_cast<int>(a.X.size()) == N + 1 && static_cast<int>(a.U.size()) == N,
              "ExternalSequence anchors: length does not match the horizon");
      break;
  }
  return a;
}

/**
 * Sensitivities of one stage. `H = [Hx Hu]` and `C` (output Jacobian w.r.t.
 * x) may have zero rows. Offsets `dWx`, `dWh`, `y` are policy independent.
 */
struct StageSensitivities {
  Mat A, B;
  Mat Hx, Hu;
  Mat C;
  Vec dWx;
  Vec dWh;
  Vec y;
};

struct TerminalSensitivities {
  Mat Hx;
  Mat C;
  Vec dWh;
  Vec y;
};

/// The functions a stage is made of. Constraints and output may be empty.
struct StageFunctions {
  const DynamicsModel* model = nullptr;
  const VectorFunction* constraints = nullptr;           // h(x, u)
  const VectorFunction* terminal_constraints = nullptr;  // h_N(x), nu = 0
  const VectorFunction* output = nullptr;                // c(x), nu = 0
};

namespace detail {

inline bool has(const VectorFunction* f) { return f != nullptr && !f->empty(); }

inline void stage_offsets(const StageFunctions& fn, const Vec& x, const Vec& u, const Vec& x_next, int stage,
                          StageSensitivities& s) {
  s.dWx = fn.model->f(x, u, stage) - x_next;
  s.dWh = has(fn.constraints) ? (*fn.constraints)(x, u, stage) : Vec(0);
  s.y = has(fn.output) ? (*fn.output)(x, Vec(0), stage) : Vec(0);
}

}  // namespace detail

/// Pointwise Jacobians at (x, u) plus residual offsets.
inline StageSensitivities linearize_stage(const StageFunctions& fn, const Vec& x, const Vec& u, const Vec& x_next,
                                          int stage = -1) {
  const int nx = fn.model->nx();
  const int nu = fn.model->nu();
  StageSensitivities s;
  const Mat J = jacobian(fn.model->f, x, u, stage);
  s.A = J.leftCols(nx);
  s.B = J.rightCols(nu);
  if (detail::has(fn.constraints)) {
    const Mat Jh = jacobian(*fn.constraints, x, u, stage);
    s.Hx = Jh.leftCols(nx);
    s.Hu = Jh.rightCols(nu);
  } else {
    s.Hx = Mat(0, nx);
    s.Hu = Mat(0, nu);
  }
  s.C = detail::has(fn.output) ? jacobian(*fn.output, x, Vec(0), stage) : Mat(0, nx);
  detail::stage_offsets(fn, x, u, x_next, stage, s);
  return s;
}

/**
 * Jacobians integrated over the segment anchor -> iterate with the given
 * rule. Node Jacobians are computed independently and reduced in node order,
 * so results do not depend on evaluation schedule.
 */
inline StageSensitivities ftc_stage(const StageFunctions& fn, const Vec& x, const Vec& u, const Vec& x_next,
                                    const Vec& x_anchor, const Vec& u_anchor, const QuadratureRule& rule,
                                    int stage = -1) {
  const int nx = fn.model->nx();
  const int nu = fn.model->nu();
  const int n_int = rule.size();
  require(n_int >= 1, "ftc_stage: empty quadrature rule");
  require(x_anchor.size() == nx && u_anchor.size() == nu, "ftc_stage: anchor dimension mismatch");
  const bool with_h = detail::has(fn.constraints);
  const bool with_c = detail::has(fn.output);

  struct NodeJacobians {
    Mat Jf, Jh, Jc;
  };
  std::vector<NodeJacobians> nodes(n_int);
  for (int j = 0; j < n_int; ++j) {
    const double lam = rule.nodes[j];
    const Vec xn = x_anchor + lam * (x - x_anchor);
    const Vec un = u_anchor + lam * (u - u_anchor);
    try {
      nodes[j].Jf = jacobian(fn.model->f, xn, un, stage);
      if (with_h) nodes[j].Jh = jacobian(*fn.constraints, xn, un, stage);
      if (with_c) nodes[j].Jc = jacobian(*fn.output, xn, Vec(0), stage);
    } catch (const NumericError& e) {
      throw NumericError("ftc_stage: non-finite Jacobian", stage, j);
    }
  }

  Mat Jf = Mat::Zero(nx, nx + nu);
  Mat Jh = with_h ? Mat::Zero(fn.constraints->rows(), nx + nu) : Mat(0, nx + nu);
  Mat Jc = with_c ? Mat::Zero(fn.output->rows(), nx) : Mat(0, nx);
  for (int j = 0; j < n_int; ++j) {
    const double w = rule.weights[j];
    Jf += w * nodes[j].Jf;
    if (with_h) Jh += w * nodes[j].Jh;
    if (with_c) Jc += w * nodes[j].Jc;
  }

  StageSensitivities s;
  s.A = Jf.leftCols(nx);
  s.B = Jf.rightCols(nu);
  s.Hx = Jh.leftCols(nx);
  s.Hu = Jh.rightCols(nu);
  s.C = Jc;
  detail::stage_offsets(fn, x, u, x_next, stage, s);
  return s;
}

/// Terminal-stage sensitivities; `x_anchor` is ignored for Linearize.
inline TerminalSensitivities terminal_sensitivities(const StageFunctions& fn, const Vec& x, const Vec& x_anchor,
                                                    const SensitivityPolicy& policy, int stage = -1) {
  const int nx = fn.model->nx();
  TerminalSensitivities t;
  const bool with_h = detail::has(fn.terminal_constraints);
  const bool with_c = detail::has(fn.output);
  auto integrated = [&](const VectorFunction& g) -> Mat {
    if (policy.kind == SensitivityPolicy::Kind::Linearize) return jacobian(g, x, Vec(0), stage);
    Mat J = Mat::Zero(g.rows(), nx);
    std::vector<Mat> node_jac(policy.rule.size());
    for (int j = 0; j < policy.rule.size(); ++j) {
      const Vec xn = x_anchor + policy.rule.nodes[j] * (x - x_anchor);
      try {
        node_jac[j] = jacobian(g, xn, Vec(0), stage);
      } catch (const NumericError&) {
        throw NumericError("terminal sensitivities: non-finite Jacobian", stage, j);
      }
    }
    for (int j = 0; j < policy.rule.size(); ++j) J += policy.rule.weights[j] * node_jac[j];
    return J;
  };
  t.Hx = with_h ? integrated(*fn.terminal_constraints) : Mat(0, nx);
  t.C = with_c ? integrated(*fn.output) : Mat(0, nx);
  t.dWh = with_h ? (*fn.terminal_constraints)(x, Vec(0), stage) : Vec(0);
  t.y = with_c ? (*fn.output)(x, Vec(0), stage) : Vec(0);
  return t;
}

/// Dispatch on the policy for one stage.
inline StageSensitivities stage_sensitivities(const StageFunctions& fn, const Vec& x, const Vec& u, const Vec& x_next,
                                              const Vec& x_anchor, const Vec& u_anchor,
                                              const SensitivityPolicy& policy, int stage = -1) {
  if (policy.kind == SensitivityPolicy::Kind::Linearize) return linearize_stage(fn, x, u, x_next, stage);
  return ftc_stage(fn, x, u, x_next, x_anchor, u_anchor, policy.rule, stage);
}

/**
 * Defect of the integrated-Jacobian factorization of g between anchor and
 * (x, u): ||Abar (x - xa) + Bbar (u - ua) + g(xa, ua) - g(x, u)||_inf.
 * Zero for exact quadrature.
 */
inline double ftc_embedding_residual(const VectorFunction& g, const Vec& x, const Vec& u, const Vec& x_anchor,
                                     const Vec& u_anchor, const QuadratureRule& rule) {
  const int nx = g.nx();
  const int nu = g.nu();
  Mat J = Mat::Zero(g.rows(), nx + nu);
  for (int j = 0; j < rule.size(); ++j) {
    const double lam = rule.nodes[j];
    J += rule.weights[j] * jacobian(g, x_anchor + lam * (x - x_anchor), u_anchor + lam * (u - u_anchor));
  }
  const Vec dz = concat(x - x_anchor, u - u_anchor);
  return inf_norm(Vec(J * dz + g(x_anchor, u_anchor) - g(x, u)));
}

inline double ftc_embedding_residual(const DynamicsModel& model, const Vec& x, const Vec& u, const Vec& x_anchor,
                                     const Vec& u_anchor, const QuadratureRule& rule) {
  return ftc_embedding_residual(model.f, x, u, x_anchor, u_anchor, rule);
}

}  // namespace unimpc
