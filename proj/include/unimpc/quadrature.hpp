#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "unimpc/types.hpp"

namespace unimpc {

/// Quadrature on [0, 1]: nodes in the unit interval, weights summing to one.
struct QuadratureRule {
  enum class Kind { Rectangular, GaussLegendre };

  Kind kind = Kind::Rectangular;
  std::vector<double> nodes;
  std::vector<double> weights;

  int size() const { return static_cast<int>(nodes.size()); }

  /// Midpoint rectangles, node j at (j + 1/2) / n.
  static QuadratureRule rectangular(int n) {
    require(n >= 1, "QuadratureRule: n_int must be >= 1");
    QuadratureRule q;
    q.kind = Kind::Rectangular;
    q.nodes.resize(n);
    q.weights.assign(n, 1.0 / n);
    for (int j = 0; j < n; ++j) q.nodes[j] = (j + 0.5) / n;
    return q;
  }

  /// n-point Gauss-Legendre mapped to [0, 1]; exact for polynomials of degree 2n - 1.
  static QuadratureRule gauss_legendre(int n) {
    require(n >= 1, "QuadratureRule: n_int must be >= 1");
    QuadratureRule q;
    q.kind = Kind::GaussLegendre;
    q.nodes.resize(n);
    q.weights.resize(n);
    for (int i = 0; i < n; ++i) {
      // Newton on P_n starting from the Chebyshev-like guess.
      double t = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
      double dp = 0.0;
      for (int it = 0; it < 100; ++it) {
        double p0 = 1.0, p1 = t;
        for (int k = 2; k <= n; ++k) {
          const double pk = ((2.0 * k - 1.0) * t * p1 - (k - 1.0) * p0) / k;
          p0 = p1;
          p1 = pk;
        }
        if (n == 1) p0 = 1.0;
        dp = n * (t * p1 - p0) / (t * t - 1.0);
        const double dt = p1 / dp;
        t -= dt;
        if (std::abs(dt) < 1e-16) break;
      }
      // Recompute derivative at the converged root.
      double p0 = 1.0, p1 = t;
      for (int k = 2; k <= n; ++k) {
        const double pk = ((2.0 * k - 1.0) * t * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = pk;
      }
      if (n == 1) p0 = 1.0;
      dp = n * (t * p1 - p0) / (t * t - 1.0);
      const double w = 2.0 / ((1.0 - t * t) * dp * dp);
      // Map [-1, 1] -> [0, 1]; ascending node order.
      q.nodes[n - 1 - i] = 0.5 * (t + 1.0);
      q.weights[n - 1 - i] = 0.5 * w;
    }
    return q;
  }

  std::string label() const {
    return (kind == Kind::Rectangular ? "rectangular(" : "gauss_legendre(") + std::to_string(size()) + ")";
  }
};

}  // namespace unimpc
