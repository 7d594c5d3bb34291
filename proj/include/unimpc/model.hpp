#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>

#include "unimpc/types.hpp"

namespace unimpc {

template <typename V>
using scalar_of = typename std::decay_t<V>::Scalar;

/**
 * @brief Type-erased smooth map (x, u) -> R^m.
 *
 * Built from any generic callable `f(x, u)` that accepts `VecT<T>` for
 * T in {double, D1, D2} and returns `VecT<T>`. All three instantiations are
 * captured at construction so derivatives of any order up to two can be
 * taken later without knowing the concrete callable. Functions with no input
 * dependence use nu = 0.
 */
class VectorFunction {
 public:
  template <typename T>
  using Fn = std::function<VecT<T>(const VecT<T>&, const VecT<T>&)>;

  VectorFunction() = default;

  template <typename F>
  VectorFunction(int nx, int nu, int rows, F f)
      : nx_(nx),
        nu_(nu),
        rows_(rows),
        f0_([f](const VecT<double>& x, const VecT<double>& u) -> VecT<double> { return f(x, u); }),
        f1_([f](const VecT<D1>& x, const VecT<D1>& u) -> VecT<D1> { return f(x, u); }),
        f2_([f](const VecT<D2>& x, const VecT<D2>& u) -> VecT<D2> { return f(x, u); }) {
    require(nx >= 0 && nu >= 0 && rows >= 0, "VectorFunction: negative dimension");
  }

  int nx() const { return nx_; }
  int nu() const { return nu_; }
  int rows() const { return rows_; }
  bool empty() const { return !f0_; }

  template <typename T>
  VecT<T> eval(const VecT<T>& x, const VecT<T>& u) const {
    if constexpr (std::is_same_v<T, double>) {
      return f0_(x, u);
    } else if constexpr (std::is_same_v<T, D1>) {
      return f1_(x, u);
    } else {
      static_assert(std::is_same_v<T, D2>, "unsupported scalar type");
      return f2_(x, u);
    }
  }

  /// Checked evaluation: dimensions are contract-checked, output must be finite.
  Vec operator()(const Vec& x, const Vec& u, int stage = -1) const {
    require(!empty(), "VectorFunction: evaluating an empty function");
    require(x.size() == nx_, fmt::format("VectorFunction: x has size {}, expected {}", x.size(), nx_));
    require(u.size() == nu_, fmt::format("VectorFunction: u has size {}, expected {}", u.size(), nu_));
    Vec y = f0_(x, u);
    require(y.size() == rows_, "VectorFunction: output size mismatch");
    if (!y.allFinite()) throw NumericError("non-finite function value", stage);
    return y;
  }

 private:
  int nx_ = 0;
  int nu_ = 0;
  int rows_ = 0;
  Fn<double> f0_;
  Fn<D1> f1_;
  Fn<D2> f2_;
};

enum class TimeDomain { Continuous, Discrete };

/// Dynamics x+ = f(x, u) (discrete) or xdot = f_c(x, u) (continuous).
struct DynamicsModel {
  VectorFunction f;
  TimeDomain domain = TimeDomain::Discrete;
  std::string name;

  int nx() const { return f.nx(); }
  int nu() const { return f.nu(); }
  bool continuous() const { return domain == TimeDomain::Continuous; }
};

template <typename F>
DynamicsModel make_model(int nx, int nu, TimeDomain domain, std::string name, F f) {
  return DynamicsModel{VectorFunction(nx, nu, nx, std::move(f)), domain, std::move(name)};
}

inline Vec eval_dynamics(const DynamicsModel& model, const Vec& x, const Vec& u, int stage = -1) {
  return model.f(x, u, stage);
}

namespace detail {

template <typename T>
VecT<T> rk4(const VectorFunction& fc, const VecT<T>& x, const VecT<T>& u, double h, int substeps) {
  const double dt = h / substeps;
  VecT<T> xk = x;
  for (int s = 0; s < substeps; ++s) {
    const VecT<T> k1 = fc.eval<T>(xk, u);
    const VecT<T> k2 = fc.eval<T>(VecT<T>(xk + (0.5 * dt) * k1), u);
    const VecT<T> k3 = fc.eval<T>(VecT<T>(xk + (0.5 * dt) * k2), u);
    const VecT<T> k4 = fc.eval<T>(VecT<T>(xk + dt * k3), u);
    xk = xk + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return xk;
}

struct Rk4Map {
  VectorFunction fc;
  double h;
  int substeps;

  template <typename X, typename U>
  auto operator()(const X& x, const U& u) const {
    using T = scalar_of<X>;
    return rk4<T>(fc, x, u, h, substeps);
  }
};

}  // namespace detail

/// One classical RK4 step of length Ts (split into `substeps` equal pieces)
/// with zero-order-hold input.
inline Vec rk4_step(const DynamicsModel& model, const Vec& x, const Vec& u, double Ts, int substeps = 1) {
  require(model.continuous(), "rk4_step: model must be continuous");
  require(Ts > 0.0, "rk4_step: Ts must be positive");
  require(substeps >= 1, "rk4_step: substeps must be >= 1");
  require(x.size() == model.nx() && u.size() == model.nu(), "rk4_step: dimension mismatch");
  const double dt = Ts / substeps;
  Vec xk = x;
  for (int s = 0; s < substeps; ++s) {
    const Vec k1 = model.f.eval<double>(xk, u);
    const Vec k2 = model.f.eval<double>(xk + 0.5 * dt * k1, u);
    const Vec k3 = model.f.eval<double>(xk + 0.5 * dt * k2, u);
    const Vec k4 = model.f.eval<double>(xk + dt * k3, u);
    if (!(k1.allFinite() && k2.allFinite() && k3.allFinite() && k4.allFinite()))
      throw NumericError("rk4_step: non-finite intermediate stage");
    xk += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return xk;
}

/// Discrete map x+ = RK4(f_c, x, u, Ts). Derivatives propagate through the stages.
inline DynamicsModel discretize(const DynamicsModel& model, double Ts, int substeps = 1) {
  require(model.continuous(), "discretize: model must be continuous");
  require(Ts > 0.0 && substeps >= 1, "discretize: invalid step settings");
  return DynamicsModel{VectorFunction(model.nx(), model.nu(), model.nx(), detail::Rk4Map{model.f, Ts, substeps}),
                       TimeDomain::Discrete, model.name + "_rk4"};
}

/// Full Jacobian [df/dx df/du] of a vector function via forward-mode AD.
inline Mat jacobian(const VectorFunction& f, const Vec& x, const Vec& u, int stage = -1) {
  const int nx = f.nx();
  const int nu = f.nu();
  const int n = nx + nu;
  require(n <= kMaxDirections, "jacobian: too many directions for the dual type");
  require(x.size() == nx && u.size() == nu, "jacobian: dimension mismatch");
  VecT<D1> xd(nx), ud(nu);
  for (int i = 0; i < nx; ++i) xd(i) = D1::variable(x(i), i, n);
  for (int i = 0; i < nu; ++i) ud(i) = D1::variable(u(i), nx + i, n);
  const VecT<D1> y = f.eval<D1>(xd, ud);
  Mat J = Mat::Zero(y.size(), n);
  for (int r = 0; r < y.size(); ++r) {
    for (int c = 0; c < y(r).n; ++c) J(r, c) = y(r).d[c];
    if (!std::isfinite(y(r).v)) throw NumericError("non-finite function value", stage);
  }
  if (!J.allFinite()) throw NumericError("non-finite Jacobian", stage);
  return J;
}

/// Value and Jacobian from one dual pass.
inline std::pair<Vec, Mat> value_and_jacobian(const VectorFunction& f, const Vec& x, const Vec& u, int stage = -1) {
  const int nx = f.nx();
  const int nu = f.nu();
  const int n = nx + nu;
  require(n <= kMaxDirections, "jacobian: too many directions for the dual type");
  require(x.size() == nx && u.size() == nu, "jacobian: dimension mismatch");
  VecT<D1> xd(nx), ud(nu);
  for (int i = 0; i < nx; ++i) xd(i) = D1::variable(x(i), i, n);
  for (int i = 0; i < nu; ++i) ud(i) = D1::variable(u(i), nx + i, n);
  const VecT<D1> y = f.eval<D1>(xd, ud);
  Vec v(y.size());
  Mat J = Mat::Zero(y.size(), n);
  for (int r = 0; r < y.size(); ++r) {
    v(r) = y(r).v;
    for (int c = 0; c < y(r).n; ++c) J(r, c) = y(r).d[c];
  }
  if (!v.allFinite()) throw NumericError("non-finite function value", stage);
  if (!J.allFinite()) throw NumericError("non-finite Jacobian", stage);
  return {v, J};
}

struct ModelJacobians {
  Mat A;
  Mat B;
};

inline ModelJacobians jacobians(const DynamicsModel& model, const Vec& x, const Vec& u, int stage = -1) {
  const Mat J = jacobian(model.f, x, u, stage);
  return {J.leftCols(model.nx()), J.rightCols(model.nu())};
}

/// Hessian of the weighted sum w' f(x, u) over z = [x; u], via dual-over-dual.
inline Mat weighted_hessian(const VectorFunction& f, const Vec& x, const Vec& u, const Vec& w, int stage = -1) {
  const int nx = f.nx();
  const int nu = f.nu();
  const int n = nx + nu;
  require(n <= kMaxDirections, "weighted_hessian: too many directions for the dual type");
  require(w.size() == f.rows(), "weighted_hessian: weight size mismatch");
  Mat H = Mat::Zero(n, n);
  if (w.size() == 0 || w.cwiseAbs().maxCoeff() == 0.0) return H;
  auto seed = [n](double value, int k) {
    D2 z(D1::variable(value, k, n), n);
    z.d[k] = D1(1.0);
    return z;
  };
  VecT<D2> xd(nx), ud(nu);
  for (int i = 0; i < nx; ++i) xd(i) = seed(x(i), i);
  for (int i = 0; i < nu; ++i) ud(i) = seed(u(i), nx + i);
  const VecT<D2> y = f.eval<D2>(xd, ud);
  D2 s(0.0);
  for (int r = 0; r < y.size(); ++r) s = s + w(r) * y(r);
  for (int a = 0; a < s.n; ++a)
    for (int b = 0; b < s.d[a].n; ++b) H(a, b) = s.d[a].d[b];
  if (!H.allFinite()) throw NumericError("non-finite Hessian", stage);
  return 0.5 * (H + H.transpose());
}

// Test models used throughout the unit suites and documentation.

/// xdot = A x + B u.
inline DynamicsModel make_linear_continuous(const Mat& A, const Mat& B, std::string name = "linear") {
  return make_model(static_cast<int>(A.rows()), static_cast<int>(B.cols()), TimeDomain::Continuous, std::move(name),
                    [A, B](const auto& x, const auto& u) {
                      using T = scalar_of<decltype(x)>;
                      VecT<T> y(A.rows());
                      for (int i = 0; i < A.rows(); ++i) {
                        T acc(0.0);
                        for (int j = 0; j < A.cols(); ++j) acc = acc + A(i, j) * x(j);
                        for (int j = 0; j < B.cols(); ++j) acc = acc + B(i, j) * u(j);
                        y(i) = acc;
                      }
                      return y;
                    });
}

/// x+ = A x + B u.
inline DynamicsModel make_linear_discrete(const Mat& A, const Mat& B, std::string name = "linear") {
  DynamicsModel m = make_linear_continuous(A, B, std::move(name));
  m.domain = TimeDomain::Discrete;
  return m;
}

}  // namespace unimpc
