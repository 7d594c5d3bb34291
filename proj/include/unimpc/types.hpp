#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <fmt/format.h>

#include "unimpc/dual.hpp"

namespace unimpc {

template <typename T>
using VecT = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

using D1 = Dual<double>;
using D2 = Dual<Dual<double>>;

/// Thrown on violated preconditions (wrong dimensions, invalid settings).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite value produced while evaluating a model, with location.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, int stage = -1, int node = -1)
      : std::runtime_error(format(what, stage, node)), stage_(stage), node_(node) {}

  int stage() const { return stage_; }
  int node() const { return node_; }

 private:
  static std::string format(const std::string& what, int stage, int node) {
    std::string s = what;
    if (stage >= 0) s += fmt::format(" (stage {})", stage);
    if (node >= 0) s += fmt::format(" (quadrature node {})", node);
    return s;
  }

  int stage_;
  int node_;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

inline bool all_finite(const Vec& v) { return v.allFinite(); }

inline double inf_norm(const Vec& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

inline double inf_norm(const std::vector<Vec>& vs) {
  double r = 0.0;
  for (const auto& v : vs) r = std::max(r, inf_norm(v));
  return r;
}

inline Vec concat(const Vec& a, const Vec& b) {
  Vec r(a.size() + b.size());
  r << a, b;
  return r;
}

}  // namespace unimpc
