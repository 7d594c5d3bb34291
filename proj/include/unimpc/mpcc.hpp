#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "unimpc/models/single_track.hpp"
#include "unimpc/ocp.hpp"

namespace unimpc {

/**
 * @brief Arc-length parameterized centerline with a half-width.
 *
 * Samples (s_j, x_j, y_j, w_j) with strictly increasing s. Closed tracks
 * repeat the first point as the last one and wrap s modulo the length.
 */
class Track {
 public:
  enum class Interpolation { PiecewiseLinear, CubicSpline };

  Track() = default;

  Track(std::vector<double> s, std::vector<double> x, std::vector<double> y, std::vector<double> w, bool closed,
        Interpolation interp = Interpolation::PiecewiseLinear)
      : s_(std::move(s)), x_(std::move(x)), y_(std::move(y)), w_(std::move(w)), closed_(closed), interp_(interp) {
    const std::size_t n = s_.size();
    require(n >= 2, "Track: need at least two samples");
    require(x_.size() == n && y_.size() == n && w_.size() == n, "Track: column length mismatch");
    require(s_.front() == 0.0, "Track: arc length must start at 0");
    for (std::size_t j = 0; j + 1 < n; ++j)
      require(s_[j + 1] > s_[j], fmt::format("Track: arc length not strictly increasing at row {}", j + 1));
    for (std::size_t j = 0; j < n; ++j) {
      require(std::isfinite(x_[j]) && std::isfinite(y_[j]), "Track: non-finite coordinate");
      require(w_[j] > 0.0, fmt::format("Track: half-width must be positive (row {})", j));
    }
    if (closed_) {
      const double gap = std::hypot(x_.back() - x_.front(), y_.back() - y_.front());
      require(gap <= 1e-6, fmt::format("Track: closure gap {:.3g} exceeds 1e-6", gap));
    }
    if (interp_ == Interpolation::CubicSpline) fit_spline();
  }

  static Track load_csv(const std::string& path, bool closed = true,
                        Interpolation interp = Interpolation::PiecewiseLinear) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open track file '" + path + "'");
    std::string line;
    std::getline(in, line);
    auto trim = [](std::string v) {
      v.erase(0, v.find_first_not_of(" \t\r"));
      v.erase(v.find_last_not_of(" \t\r") + 1);
      return v;
    };
    if (trim(line) != "s,x,y,w") throw ContractError("track file '" + path + "': header must be 's,x,y,w'");
    std::vector<double> s, x, y, w;
    int row = 1;
    while (std::getline(in, line)) {
      ++row;
      if (trim(line).empty()) continue;
      std::stringstream ss(line);
      std::string cell;
      double v[4];
      for (int c = 0; c < 4; ++c) {
        if (!std::getline(ss, cell, ','))
          throw ContractError(fmt::format("track file '{}': row {} has fewer than 4 columns", path, row));
        try {
          v[c] = std::stod(cell);
        } catch (const std::exception&) {
          throw ContractError(fmt::format("track file '{}': row {} is not numeric", path, row));
        }
      }
      s.push_back(v[0]);
      x.push_back(v[1]);
      y.push_back(v[2]);
      w.push_back(v[3]);
    }
    return Track(std::move(s), std::move(x), std::move(y), std::move(w), closed, interp);
  }

  void save_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write track file '" + path + "'");
    out << "s,x,y,w\n";
    for (std::size_t j = 0; j < s_.size(); ++j)
      out << fmt::format("{:.17g},{:.17g},{:.17g},{:.17g}\n", s_[j], x_[j], y_[j], w_[j]);
  }

  double length() const { return s_.back(); }
  bool closed() const { return closed_; }
  Interpolation interpolation() const { return interp_; }
  std::size_t size() const { return s_.size(); }
  const std::vector<double>& s() const { return s_; }
  const std::vector<double>& x() const { return x_; }
  const std::vector<double>& y() const { return y_; }
  const std::vector<double>& w() const { return w_; }

  /// Reference point and unit tangent at progress theta (generic scalar).
  template <typename T>
  void reference(const T& theta, T& rx, T& ry, T& tx, T& ty) const {
    const auto [j, loc] = locate(theta);
    const double h = s_[j + 1] - s_[j];
    if (interp_ == Interpolation::PiecewiseLinear) {
      const double dx = x_[j + 1] - x_[j];
      const double dy = y_[j + 1] - y_[j];
      const T frac = loc / h;
      rx = x_[j] + frac * dx;
      ry = y_[j] + frac * dy;
      const double n = std::hypot(dx, dy);
      tx = T(dx / n);
      ty = T(dy / n);
      return;
    }
    T dx, dy;
    spline_eval(x_, mx_, j, loc, h, rx, dx);
    spline_eval(y_, my_, j, loc, h, ry, dy);
    using std::sqrt;
    const T n = sqrt(dx * dx + dy * dy);
    tx = dx / n;
    ty = dy / n;
  }

  template <typename T>
  T half_width(const T& theta) const {
    const auto [j, loc] = locate(theta);
    return w_[j] + (loc / (s_[j + 1] - s_[j])) * (w_[j + 1] - w_[j]);
  }

 private:
  // Segment index and offset inside it; the offset keeps theta's derivatives.
  template <typename T>
  std::pair<std::size_t, T> locate(const T& theta) const {
    const double L = length();
    double t = value_of(theta);
    double shift = 0.0;
    if (closed_) {
      shift = L * std::floor(t / L);
      t -= shift;
    } else if (t < 0.0 || t > L) {
      throw ContractError(fmt::format("Track: progress {} outside [0, {}] on an open track", t, L));
    }
    auto it = std::upper_bound(s_.begin(), s_.end(), t);
    std::size_t j = it == s_.begin() ? 0 : static_cast<std::size_t>(it - s_.begin()) - 1;
    if (j >= s_.size() - 1) j = s_.size() - 2;
    return {j, T(theta - (shift + s_[j]))};
  }

  template <typename T>
  static void spline_eval(const std::vector<double>& v, const std::vector<double>& m, std::size_t j, const T& loc,
                          double h, T& val, T& der) {
    // Cubic Hermite form with second derivatives m at the knots.
    const T a = (h - loc) / h;
    const T b = loc / h;
    val = a * v[j] + b * v[j + 1] + ((a * a * a - a) * m[j] + (b * b * b - b) * m[j + 1]) * (h * h / 6.0);
    der = (v[j + 1] - v[j]) / h - (3.0 * a * a - 1.0) * (h / 6.0) * m[j] + (3.0 * b * b - 1.0) * (h / 6.0) * m[j + 1];
  }

  void fit_spline() {
    mx_ = second_derivatives(x_);
    my_ = second_derivatives(y_);
  }

  // Natural end conditions for open tracks, periodic for closed ones.
  std::vector<double> second_derivatives(const std::vector<double>& v) const {
    const int n = static_cast<int>(s_.size());
    Mat A = Mat::Zero(n, n);
    Vec rhs = Vec::Zero(n);
    for (int j = 1; j + 1 < n; ++j) {
      const double h0 = s_[j] - s_[j - 1];
      const double h1 = s_[j + 1] - s_[j];
      A(j, j - 1) = h0 / 6.0;
      A(j, j) = (h0 + h1) / 3.0;
      A(j, j + 1) = h1 / 6.0;
      rhs(j) = (v[j + 1] - v[j]) / h1 - (v[j] - v[j - 1]) / h0;
    }
    if (closed_) {
      // m_0 = m_{n-1}; slope continuity across the seam.
      const double h0 = s_[n - 1] - s_[n - 2];
      const double h1 = s_[1] - s_[0];
      A(0, n - 2) = h0 / 6.0;
      A(0, 0) = (h0 + h1) / 3.0;
      A(0, 1) = h1 / 6.0;
      rhs(0) = (v[1] - v[0]) / h1 - (v[n - 1] - v[n - 2]) / h0;
      A(n - 1, 0) = 1.0;
      A(n - 1, n - 1) = -1.0;
    } else {
      A(0, 0) = 1.0;
      A(n - 1, n - 1) = 1.0;
    }
    const Vec m = A.partialPivLu().solve(rhs);
    return std::vector<double>(m.data(), m.data() + n);
  }

  std::vector<double> s_, x_, y_, w_;
  std::vector<double> mx_, my_;
  bool closed_ = true;
  Interpolation interp_ = Interpolation::PiecewiseLinear;
};

/**
 * Stadium oval: two straights joined by semicircles of radius `radius`,
 * driven counter-clockwise from (0, -radius). Samples are spaced about `ds`.
 */
inline Track make_stadium_track(double straight, double radius, double half_width, double ds = 0.01) {
  require(straight > 0.0 && radius > 0.0 && half_width > 0.0 && ds > 0.0, "make_stadium_track: invalid geometry");
  const double arc = std::numbers::pi * radius;
  const double L = 2.0 * straight + 2.0 * arc;
  const int n = static_cast<int>(std::ceil(L / ds));
  std::vector<double> s(n + 1), x(n + 1), y(n + 1), w(n + 1, half_width);
  auto point = [&](double t, double& px, double& py) {
    if (t < straight) {
      px = t;
      py = -radius;
      return;
    }
    t -= straight;
    if (t < arc) {
      const double a = -std::numbers::pi / 2 + t / radius;
      px = straight + radius * std::cos(a);
      py = radius * std::sin(a);
      return;
    }
    t -= arc;
    if (t < straight) {
      px = straight - t;
      py = radius;
      return;
    }
    t -= straight;
    const double a = std::numbers::pi / 2 + t / radius;
    px = radius * std::cos(a);
    py = radius * std::sin(a);
  };
  for (int j = 0; j <= n; ++j) {
    s[j] = L * j / n;
    point(j == n ? 0.0 : s[j], x[j], y[j]);
  }
  // Use chord lengths as arc length so the piecewise-linear path is unit speed.
  for (int j = 1; j <= n; ++j) s[j] = s[j - 1] + std::hypot(x[j] - x[j - 1], y[j] - y[j - 1]);
  return Track(s, x, y, w, true);
}

struct ProjectedPoint {
  Eigen::Vector2d point;
  Eigen::Vector2d tangent;
  Eigen::Vector2d normal;  // tangent rotated by +90 degrees (left)
};

inline ProjectedPoint project_progress(const Track& track, double theta) {
  double rx, ry, tx, ty;
  track.reference(theta, rx, ry, tx, ty);
  ProjectedPoint p;
  p.point << rx, ry;
  p.tangent << tx, ty;
  p.normal << -ty, tx;
  return p;
}

struct ContouringOutput {
  double e_l = 0.0;  // lag: along the tangent
  double e_c = 0.0;  // contouring: along the left normal
};

template <typename T>
void contouring_errors(const Track& track, const T& px, const T& py, const T& theta, T& e_l, T& e_c) {
  T rx, ry, tx, ty;
  track.reference(theta, rx, ry, tx, ty);
  const T dx = px - rx;
  const T dy = py - ry;
  e_l = tx * dx + ty * dy;
  e_c = -ty * dx + tx * dy;
}

inline ContouringOutput contouring_errors(const Track& track, const Eigen::Vector2d& p, double theta) {
  ContouringOutput out;
  contouring_errors(track, p.x(), p.y(), theta, out.e_l, out.e_c);
  return out;
}

struct MpccWeights {
  double q_lag = 1000.0;
  double q_contour = 5.0;
  double r_motor_rate = 1e-2;
  double r_steer_rate = 1e-2;
  double r_progress_rate = 1e-2;
  double progress_reward = 1.0;  // linear reward per unit of thetadot
  double slack_linear = 100.0;    // zeta
  double slack_quadratic = 10.0;
  double pd_eps = 1e-6;

  /// Quadratic weight on [e_l, e_c].
  Mat Q_tilde() const { return (Vec(2) << q_lag, q_contour).finished().asDiagonal(); }

  /**
   * Weight on [u; 1] with u = [Tdot, deltadot, thetadot, slack]: the input
   * block is diagonal, the last column carries the linear terms, and the
   * corner is chosen so the whole matrix is positive definite.
   */
  Mat R_tilde() const {
    Mat R = Mat::Zero(5, 5);
    R.diagonal().head(4) << r_motor_rate, r_steer_rate, r_progress_rate, slack_quadratic;
    const Vec q = linear_terms();
    R.block(0, 4, 4, 1) = q;
    R.block(4, 0, 1, 4) = q.transpose();
    R(4, 4) = q.dot(R.topLeftCorner(4, 4).diagonal().cwiseInverse().cwiseProduct(q)) + pd_eps;
    return R;
  }

  Vec linear_terms() const { return (Vec(4) << 0.0, 0.0, -0.5 * progress_reward, 0.5 * slack_linear).finished(); }

  void validate() const {
    require(q_lag >= 0.0 && q_contour >= 0.0, "MpccWeights: contouring weights must be nonnegative");
    require(r_motor_rate > 0.0 && r_steer_rate > 0.0 && r_progress_rate > 0.0 && slack_quadratic > 0.0,
            "MpccWeights: input weights must be positive");
    require(slack_linear > 0.0, "MpccWeights: slack penalty must be positive");
    require(pd_eps > 0.0, "MpccWeights: pd_eps must be positive");
  }
};

struct MpccLimits {
  double motor_min = -0.1, motor_max = 1.0;
  double steer_max = 0.35;
  double motor_rate_max = 10.0;
  double steer_rate_max = 10.0;
  double progress_rate_max = 1.5;
  double tightening = 0.0;  // d_t
};

/// Index layout of the augmented input [Tdot, deltadot, thetadot, slack].
inline constexpr int kMpccNu = 4;
inline constexpr int kMpccSlack = 3;

/**
 * Contouring-control OCP for the single-track car. The slack of the softened
 * track constraints is an extra input that does not enter the dynamics.
 * Stage rows: [e_c - (w - d_t) - s; -e_c - (w - d_t) - s; -s; boxes].
 */
inline OcpProblem build_mpcc_ocp(const SingleTrackModel& model, std::shared_ptr<const Track> track,
                                 const MpccWeights& weights, const MpccLimits& limits, int N, double Ts,
                                 const Vec& x_meas, int substeps = 3) {
  require(track != nullptr, "build_mpcc_ocp: missing track");
  weights.validate();
  require(N >= 1 && Ts > 0.0 && substeps >= 1, "build_mpcc_ocp: invalid horizon or sampling time");
  require(x_meas.size() == SingleTrackModel::kNx, "build_mpcc_ocp: state dimension mismatch");
  require(x_meas.allFinite(), "build_mpcc_ocp: non-finite measured state");
  if (!track->closed())
    require(x_meas(SingleTrackModel::kProgress) >= 0.0 && x_meas(SingleTrackModel::kProgress) <= track->length(),
            "build_mpcc_ocp: progress outside the track");
  require(limits.tightening >= 0.0, "build_mpcc_ocp: tightening must be nonnegative");
  constexpr int nx = SingleTrackModel::kNx;
  constexpr int nu = kMpccNu;

  const DynamicsModel base = discretize(model.continuous(), Ts, substeps);
  OcpProblem ocp;
  ocp.model = make_model(nx, nu, TimeDomain::Discrete, "mpcc_" + base.name, [f = base.f](const auto& x, const auto& u) {
    using T = scalar_of<decltype(x)>;
    const VecT<T> u3 = u.head(3);
    return f.template eval<T>(x, u3);
  });

  const double dt = limits.tightening;
  const MpccLimits lim = limits;
  ocp.constraints = VectorFunction(nx, nu, 13, [track, dt, lim](const auto& x, const auto& u) {
    using T = scalar_of<decltype(x)>;
    T e_l, e_c;
    contouring_errors(*track, x(SingleTrackModel::kPx), x(SingleTrackModel::kPy), x(SingleTrackModel::kProgress), e_l,
                      e_c);
    const T bound = track->half_width(x(SingleTrackModel::kProgress)) - dt;
    const T& s = u(kMpccSlack);
    VecT<T> h(13);
    h(0) = e_c - bound - s;
    h(1) = -e_c - bound - s;
    h(2) = -s;
    h(3) = x(SingleTrackModel::kMotor) - lim.motor_max;
    h(4) = lim.motor_min - x(SingleTrackModel::kMotor);
    h(5) = x(SingleTrackModel::kSteer) - lim.steer_max;
    h(6) = -lim.steer_max - x(SingleTrackModel::kSteer);
    h(7) = u(0) - lim.motor_rate_max;
    h(8) = -lim.motor_rate_max - u(0);
    h(9) = u(1) - lim.steer_rate_max;
    h(10) = -lim.steer_rate_max - u(1);
    h(11) = u(2) - lim.progress_rate_max;
    h(12) = -u(2);
    return h;
  });
  Vec x_lb = Vec::Constant(nx, -std::numeric_limits<double>::infinity());
  Vec x_ub = Vec::Constant(nx, std::numeric_limits<double>::infinity());
  x_lb(SingleTrackModel::kMotor) = limits.motor_min;
  x_ub(SingleTrackModel::kMotor) = limits.motor_max;
  x_lb(SingleTrackModel::kSteer) = -limits.steer_max;
  x_ub(SingleTrackModel::kSteer) = limits.steer_max;
  ocp.terminal_constraints = make_state_box(x_lb, x_ub);

  ocp.output = OutputCost{VectorFunction(nx, 0, 2,
                                         [track](const auto& x, const auto&) {
                                           using T = scalar_of<decltype(x)>;
                                           VecT<T> y(2);
                                           contouring_errors(*track, x(SingleTrackModel::kPx),
                                                             x(SingleTrackModel::kPy),
                                                             x(SingleTrackModel::kProgress), y(0), y(1));
                                           return y;
                                         }),
                          weights.Q_tilde()};
  const Mat Rt = weights.R_tilde();
  ocp.Q = Mat::Zero(nx, nx);
  ocp.W = Mat::Zero(nx, nx);
  ocp.R = Rt.topLeftCorner(nu, nu);
  ocp.input_linear = Rt.block(0, nu, nu, 1);
  ocp.stage_constant = Rt(nu, nu);
  ocp.N = N;
  ocp.x0 = x_meas;
  ocp.validate();
  return ocp;
}

/// Rollout with constant progress rate equal to the initial speed.
inline Trajectory mpcc_initial_guess(const OcpProblem& ocp) {
  Trajectory t = ocp.cold_start();
  const double v = std::max(ocp.x0(SingleTrackModel::kVx), 0.0);
  for (int i = 0; i < ocp.N; ++i) {
    t.U[i](2) = v;
    t.X[i + 1] = ocp.model.f(t.X[i], t.U[i], i);
  }
  t.refresh_scheduling();
  return t;
}

/// Signed distance of p past the nearer boundary at progress theta (<= 0 inside).
inline double boundary_excess(const Track& track, const Eigen::Vector2d& p, double theta) {
  const ContouringOutput e = contouring_errors(track, p, theta);
  return std::abs(e.e_c) - track.half_width(theta);
}

}  // namespace unimpc
