#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Cholesky>

#include "unimpc/ocp.hpp"

namespace unimpc {

struct QpTolerances {
  double tol = 1e-8;
  int max_iter = 4000;
  /// Multiplier magnitude at which an infeasibility certificate is checked.
  double infeasibility_mu = 1e8;
  /// Certificate accepted when ||G'y + E'nu||_inf <= this with positive gap.
  double infeasibility_tol = 1e-7;
};

enum class QpStatus { Solved, MaxIter, Infeasible };

inline const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::Solved: return "solved";
    case QpStatus::MaxIter: return "max_iter";
    case QpStatus::Infeasible: return "infeasible";
  }
  return "?";
}

struct QpResiduals {
  double stationarity = 0.0;
  double primal = 0.0;
  double dual = 0.0;
  double complementarity = 0.0;

  double max() const { return std::max({stationarity, primal, dual, complementarity}); }
};

struct QpSolution {
  std::vector<Vec> dX;         // N + 1
  std::vector<Vec> dU;         // N
  std::vector<Vec> eq_mult;    // N + 1; [0] is the initial-condition multiplier
  std::vector<Vec> ineq_mult;  // N + 1; [N] is terminal
  QpStatus status = QpStatus::MaxIter;
  int iterations = 0;
  QpResiduals residuals;
  double certificate_residual = std::numeric_limits<double>::infinity();
  double certificate_gap = 0.0;

  double step_norm() const { return std::max(inf_norm(dX), inf_norm(dU)); }
};

/**
 * Infinity-norm KKT residuals of the QP at `sol`, for the Lagrangian
 *   cost + sum_i eq_mult[i+1]'(A dx_i + B du_i + dWx_i - dx_{i+1})
 *        + eq_mult[0]'(dx_0 - dx0) + sum_i ineq_mult[i]'(H_i z_i + dWh_i).
 */
inline QpResiduals kkt_residuals_qp(const QpData& qp, const QpSolution& sol) {
  const int N = qp.horizon(), nx = qp.nx, nu = qp.nu;
  require(static_cast<int>(sol.dX.size()) == N + 1 && static_cast<int>(sol.dU.size()) == N &&
              static_cast<int>(sol.eq_mult.size()) == N + 1 && static_cast<int>(sol.ineq_mult.size()) == N + 1,
          "kkt_residuals_qp: solution dimension mismatch");
  QpResiduals r;
  r.primal = inf_norm(Vec(sol.dX[0] - qp.dx0));
  for (int i = 0; i < N; ++i) {
    const QpStage& s = qp.stages[i];
    const Vec z = concat(sol.dX[i], sol.dU[i]);
    Vec g = s.M * z + s.m;
    g.head(nx) += s.A.transpose() * sol.eq_mult[i + 1] + s.Hx.transpose() * sol.ineq_mult[i];
    g.tail(nu) += s.B.transpose() * sol.eq_mult[i + 1] + s.Hu.transpose() * sol.ineq_mult[i];
    if (i == 0)
      g.head(nx) += sol.eq_mult[0];
    else
      g.head(nx) -= sol.eq_mult[i];
    r.stationarity = std::max(r.stationarity, inf_norm(g));
    r.primal = std::max(r.primal, inf_norm(Vec(s.A * sol.dX[i] + s.B * sol.dU[i] + s.dWx - sol.dX[i + 1])));
    if (s.dWh.size() > 0) {
      const Vec c = s.Hx * sol.dX[i] + s.Hu * sol.dU[i] + s.dWh;
      r.primal = std::max(r.primal, std::max(0.0, c.maxCoeff()));
      r.dual = std::max(r.dual, std::max(0.0, -sol.ineq_mult[i].minCoeff()));
      r.complementarity = std::max(r.complementarity, inf_norm(Vec(sol.ineq_mult[i].cwiseProduct(c))));
    }
  }
  Vec gN = qp.M_N * sol.dX[N] + qp.m_N + qp.Hx_N.transpose() * sol.ineq_mult[N] - sol.eq_mult[N];
  r.stationarity = std::max(r.stationarity, inf_norm(gN));
  if (qp.dWh_N.size() > 0) {
    const Vec c = qp.Hx_N * sol.dX[N] + qp.dWh_N;
    r.primal = std::max(r.primal, std::max(0.0, c.maxCoeff()));
    r.dual = std::max(r.dual, std::max(0.0, -sol.ineq_mult[N].minCoeff()));
    r.complementarity = std::max(r.complementarity, inf_norm(Vec(sol.ineq_mult[N].cwiseProduct(c))));
  }
  return r;
}

namespace detail {

/// Backward Riccati factorization of an equality-constrained stage QP.
class Riccati {
 public:
  bool factor(const QpData& qp, const std::vector<Mat>& M, const Mat& M_N) {
    const int N = qp.horizon(), nx = qp.nx, nu = qp.nu;
    P_.resize(N + 1);
    K_.resize(N);
    Fux_.resize(N);
    Fu_.resize(N);
    P_[N] = M_N;
    for (int i = N - 1; i >= 0; --i) {
      const QpStage& s = qp.stages[i];
      const Mat PA = P_[i + 1] * s.A;
      const Mat PB = P_[i + 1] * s.B;
      const Mat Fx = M[i].topLeftCorner(nx, nx) + s.A.transpose() * PA;
      Mat Fu = M[i].bottomRightCorner(nu, nu) + s.B.transpose() * PB;
      Fu = 0.5 * (Fu + Fu.transpose());
      Fux_[i] = M[i].bottomLeftCorner(nu, nx) + s.B.transpose() * PA;
      Fu_[i].compute(Fu);
      if (Fu_[i].info() != Eigen::Success) {
        // Round-off can cost definiteness when barrier weights are huge.
        const double reg = 1e-12 * std::max(1.0, Fu.cwiseAbs().maxCoeff());
        Fu_[i].compute(Fu + reg * Mat::Identity(nu, nu));
        if (Fu_[i].info() != Eigen::Success) return false;
      }
      K_[i] = -Fu_[i].solve(Fux_[i]);
      P_[i] = Fx + Fux_[i].transpose() * K_[i];
      P_[i] = 0.5 * (P_[i] + P_[i].transpose());
      if (!P_[i].allFinite()) return false;
    }
    return true;
  }

  /// Solves min sum 1/2 z'M z + q'z s.t. x_{i+1} = A_i x_i + B_i u_i + b_i,
  /// x_0 = x_init; returns z and the dynamics multipliers.
  void solve(const QpData& qp, const std::vector<Vec>& q, const Vec& q_N, const std::vector<Vec>& b,
             const Vec& x_init, std::vector<Vec>& X, std::vector<Vec>& U, std::vector<Vec>& lambda) const {
    const int N = qp.horizon(), nx = qp.nx;
    std::vector<Vec> p(N + 1), k(N);
    p[N] = q_N;
    for (int i = N - 1; i >= 0; --i) {
      const QpStage& s = qp.stages[i];
      const Vec h = P_[i + 1] * b[i] + p[i + 1];
      const Vec fx = q[i].head(nx) + s.A.transpose() * h;
      const Vec fu = q[i].tail(qp.nu) + s.B.transpose() * h;
      k[i] = -Fu_[i].solve(fu);
      p[i] = fx + Fux_[i].transpose() * k[i];
    }
    X.resize(N + 1);
    U.resize(N);
    lambda.resize(N + 1);
    X[0] = x_init;
    for (int i = 0; i < N; ++i) {
      const QpStage& s = qp.stages[i];
      U[i] = K_[i] * X[i] + k[i];
      X[i + 1] = s.A * X[i] + s.B * U[i] + b[i];
    }
    lambda[0] = -(P_[0] * X[0] + p[0]);
    for (int i = 1; i <= N; ++i) lambda[i] = P_[i] * X[i] + p[i];
  }

 private:
  std::vector<Mat> P_, K_, Fux_;
  std::vector<Eigen::LLT<Mat>> Fu_;
};

struct StageIneq {
  Mat G;  // [Hx Hu] (or Hx for the terminal stage)
  Vec g;
};

}  // namespace detail

/**
 * @brief Primal-dual interior-point solve of the stage-structured QP.
 *
 * Mehrotra predictor-corrector on slacks t = -(H z + dWh). Each Newton system
 * is an equality-constrained LQ problem in the step with Hessian
 * M + H' diag(mu / t) H, solved by a Riccati recursion, so the work per
 * iteration is linear in N.
 */
inline QpSolution solve_qp(const QpData& qp, const QpSolution* warm = nullptr, const QpTolerances& tols = {}) {
  qp.validate();
  require(tols.tol > 0.0, "solve_qp: tolerance must be positive");
  const int N = qp.horizon(), nx = qp.nx, nu = qp.nu;

  std::vector<detail::StageIneq> ineq(N + 1);
  for (int i = 0; i < N; ++i) {
    const QpStage& s = qp.stages[i];
    ineq[i].G.resize(s.dWh.size(), nx + nu);
    ineq[i].G << s.Hx, s.Hu;
    ineq[i].g = s.dWh;
  }
  ineq[N].G = qp.Hx_N;
  ineq[N].g = qp.dWh_N;
  const int m_tot = qp.n_ineq();

  QpSolution sol;
  sol.ineq_mult.resize(N + 1);
  for (int i = 0; i <= N; ++i) sol.ineq_mult[i] = Vec::Zero(ineq[i].g.size());

  auto stage_z = [&](const std::vector<Vec>& X, const std::vector<Vec>& U, int i) -> Vec {
    return i < N ? concat(X[i], U[i]) : X[N];
  };

  detail::Riccati riccati;
  std::vector<Mat> Mt(N);
  for (int i = 0; i < N; ++i) Mt[i] = qp.stages[i].M;
  std::vector<Vec> b(N);
  for (int i = 0; i < N; ++i) b[i] = qp.stages[i].dWx;

  if (m_tot == 0) {
    if (!riccati.factor(qp, Mt, qp.M_N)) {
      sol.status = QpStatus::MaxIter;
      return sol;
    }
    std::vector<Vec> q(N);
    for (int i = 0; i < N; ++i) q[i] = qp.stages[i].m;
    riccati.solve(qp, q, qp.m_N, b, qp.dx0, sol.dX, sol.dU, sol.eq_mult);
    sol.iterations = 1;
    sol.residuals = kkt_residuals_qp(qp, sol);
    sol.status = sol.residuals.max() <= tols.tol ? QpStatus::Solved : QpStatus::MaxIter;
    return sol;
  }

  // Initial point.
  std::vector<Vec> t(N + 1), mu(N + 1);
  const bool use_warm =
      warm != nullptr && static_cast<int>(warm->dX.size()) == N + 1 && static_cast<int>(warm->dU.size()) == N;
  if (use_warm) {
    sol.dX = warm->dX;
    sol.dU = warm->dU;
    sol.dX[0] = qp.dx0;
    sol.eq_mult = warm->eq_mult.size() == static_cast<std::size_t>(N + 1) ? warm->eq_mult
                                                                         : std::vector<Vec>(N + 1, Vec::Zero(nx));
  } else {
    sol.dX.assign(N + 1, Vec::Zero(nx));
    sol.dX[0] = qp.dx0;
    sol.dU.assign(N, Vec::Zero(nu));
    sol.eq_mult.assign(N + 1, Vec::Zero(nx));
  }
  for (int i = 0; i <= N; ++i) {
    const Vec c = ineq[i].G * stage_z(sol.dX, sol.dU, i) + ineq[i].g;
    if (use_warm) {
      t[i] = (-c).cwiseMax(1e-3);
      const bool has_mu = static_cast<int>(warm->ineq_mult.size()) == N + 1 && warm->ineq_mult[i].size() == c.size();
      mu[i] = has_mu ? Vec(warm->ineq_mult[i].cwiseMax(1e-3)) : Vec::Ones(c.size());
    } else {
      t[i] = (-c).cwiseMax(1.0);
      mu[i] = Vec::Ones(c.size());
    }
  }

  QpSolution best;
  double best_res = std::numeric_limits<double>::infinity();
  int polish = 0;
  std::vector<Vec> q(N), r_dyn(N), r_p(N + 1), sigma(N + 1);
  Vec qN;

  auto certificate = [&](QpSolution& s) {
    // Farkas test: nonnegative y, free nu with E'nu + G'y = 0 and positive gap.
    double scale = 0.0;
    for (int i = 0; i <= N; ++i) scale = std::max(scale, inf_norm(s.ineq_mult[i]));
    if (scale <= 0.0) return false;
    QpData lin = qp;
    for (auto& st : lin.stages) {
      st.M.setZero();
      st.m.setZero();
    }
    lin.M_N.setZero();
    lin.m_N.setZero();
    QpSolution y = s;
    for (auto& v : y.eq_mult) v /= scale;
    for (auto& v : y.ineq_mult) v /= scale;
    s.certificate_residual = kkt_residuals_qp(lin, y).stationarity;
    double gap = -y.eq_mult[0].dot(qp.dx0);
    for (int i = 0; i < N; ++i) gap += y.eq_mult[i + 1].dot(qp.stages[i].dWx);
    for (int i = 0; i <= N; ++i) gap += y.ineq_mult[i].dot(ineq[i].g);
    s.certificate_gap = gap;
    return s.certificate_residual <= tols.infeasibility_tol && gap > tols.infeasibility_tol;
  };

  struct Direction {
    std::vector<Vec> X, U, L, dt, dmu;
  };

  for (int iter = 0; iter <= tols.max_iter; ++iter) {
    sol.ineq_mult = mu;
    sol.iterations = iter;
    sol.residuals = kkt_residuals_qp(qp, sol);
    const double res = sol.residuals.max();
    if (std::isfinite(res) && res < best_res) {
      best_res = res;
      best = sol;
    }
    // Once within tolerance, keep iterating briefly: the method converges
    // superlinearly here and the extra digits tighten the primal solution.
    if (res <= 1e-3 * tols.tol || (best_res <= tols.tol && ++polish > 4)) {
      best.status = QpStatus::Solved;
      best.iterations = iter;
      return best;
    }
    double mu_max = 0.0;
    for (const auto& v : mu) mu_max = std::max(mu_max, inf_norm(v));
    if (mu_max > tols.infeasibility_mu && certificate(sol)) {
      sol.status = QpStatus::Infeasible;
      return sol;
    }
    if (iter == tols.max_iter || !std::isfinite(res)) break;

    // Residuals: stationarity r_d (folded into q below), dynamics, slack.
    for (int i = 0; i < N; ++i) {
      const QpStage& s = qp.stages[i];
      r_dyn[i] = s.A * sol.dX[i] + s.B * sol.dU[i] + s.dWx - sol.dX[i + 1];
      const Vec z = concat(sol.dX[i], sol.dU[i]);
      q[i] = s.M * z + s.m + ineq[i].G.transpose() * mu[i];
      q[i].head(nx) += s.A.transpose() * sol.eq_mult[i + 1];
      q[i].tail(nu) += s.B.transpose() * sol.eq_mult[i + 1];
      if (i == 0)
        q[i].head(nx) += sol.eq_mult[0];
      else
        q[i].head(nx) -= sol.eq_mult[i];
    }
    const Vec r_dN = qp.M_N * sol.dX[N] + qp.m_N + ineq[N].G.transpose() * mu[N] - sol.eq_mult[N];
    const Vec dx_init = qp.dx0 - sol.dX[0];
    for (int i = 0; i <= N; ++i) {
      r_p[i] = ineq[i].G * stage_z(sol.dX, sol.dU, i) + ineq[i].g + t[i];
      sigma[i] = mu[i].cwiseQuotient(t[i]);
    }
    const std::vector<Vec> r_d = q;

    // Condensed Hessian M + G' Sigma G.
    for (int i = 0; i < N; ++i)
      Mt[i] = qp.stages[i].M + ineq[i].G.transpose() * sigma[i].asDiagonal() * ineq[i].G;
    const Mat MtN = qp.M_N + ineq[N].G.transpose() * sigma[N].asDiagonal() * ineq[N].G;
    if (!riccati.factor(qp, Mt, MtN)) break;

    // Newton step for the complementarity residual r_c.
    auto direction = [&](const std::vector<Vec>& rc) {
      for (int i = 0; i <= N; ++i) {
        const Vec w = (mu[i].cwiseProduct(r_p[i]) - rc[i]).cwiseQuotient(t[i]);
        if (i < N)
          q[i] = r_d[i] + ineq[i].G.transpose() * w;
        else
          qN = r_dN + ineq[N].G.transpose() * w;
      }
      Direction d;
      riccati.solve(qp, q, qN, r_dyn, dx_init, d.X, d.U, d.L);
      d.dt.resize(N + 1);
      d.dmu.resize(N + 1);
      for (int i = 0; i <= N; ++i) {
        d.dt[i] = -r_p[i] - ineq[i].G * stage_z(d.X, d.U, i);
        d.dmu[i] = (-rc[i] - mu[i].cwiseProduct(d.dt[i])).cwiseQuotient(t[i]);
      }
      return d;
    };
    auto max_step = [&](const Direction& d) {
      double a = 1.0;
      for (int i = 0; i <= N; ++i)
        for (int j = 0; j < t[i].size(); ++j) {
          if (d.dt[i](j) < 0.0) a = std::min(a, -t[i](j) / d.dt[i](j));
          if (d.dmu[i](j) < 0.0) a = std::min(a, -mu[i](j) / d.dmu[i](j));
        }
      return a;
    };

    double gap = 0.0;
    for (int i = 0; i <= N; ++i) gap += mu[i].dot(t[i]);
    const double tau = gap / m_tot;

    std::vector<Vec> rc(N + 1);
    for (int i = 0; i <= N; ++i) rc[i] = mu[i].cwiseProduct(t[i]);
    const Direction aff = direction(rc);
    const double a_aff = max_step(aff);
    double gap_aff = 0.0;
    for (int i = 0; i <= N; ++i) gap_aff += (mu[i] + a_aff * aff.dmu[i]).dot(t[i] + a_aff * aff.dt[i]);
    const double sigma_c = std::pow(std::max(gap_aff, 0.0) / gap, 3);

    for (int i = 0; i <= N; ++i)
      rc[i] = mu[i].cwiseProduct(t[i]) + aff.dmu[i].cwiseProduct(aff.dt[i]) -
              Vec::Constant(t[i].size(), sigma_c * tau);
    const Direction d = direction(rc);
    const double a = std::min(1.0, 0.995 * max_step(d));

    for (int i = 0; i < N; ++i) sol.dU[i] += a * d.U[i];
    for (int i = 0; i <= N; ++i) {
      sol.dX[i] += a * d.X[i];
      sol.eq_mult[i] += a * d.L[i];
      t[i] += a * d.dt[i];
      mu[i] += a * d.dmu[i];
    }
  }

  best.iterations = sol.iterations;
  if (best_res <= tols.tol) {
    best.status = QpStatus::Solved;
    return best;
  }
  if (certificate(sol)) {
    sol.status = QpStatus::Infeasible;
    return sol;
  }
  best.status = QpStatus::MaxIter;
  best.certificate_residual = sol.certificate_residual;
  best.certificate_gap = sol.certificate_gap;
  return best;
}

}  // namespace unimpc
