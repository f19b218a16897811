#pragma once

#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "monodyn/errors.hpp"

namespace monodyn {

/// Gauss-Legendre rule on [-1, 1].
struct GaussRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// n-point Gauss-Legendre nodes/weights via Newton iteration on P_n.
inline GaussRule gauss_legendre(int n) {
  if (n < 1) throw InvalidArgument("gauss_legendre: n must be >= 1");
  GaussRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  const int half = (n + 1) / 2;
  for (int i = 0; i < half; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = 0.0;
      for (int k = 1; k <= n; ++k) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p2) / k;
      }
      dp = n * (z * p0 - p1) / (z * z - 1.0);
      const double dz = p0 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    // Recompute derivative at the converged root.
    double p0 = 1.0, p1 = 0.0;
    for (int k = 1; k <= n; ++k) {
      const double p2 = p1;
      p1 = p0;
      p0 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p2) / k;
    }
    dp = n * (z * p0 - p1) / (z * z - 1.0);
    const double w = 2.0 / ((1.0 - z * z) * dp * dp);
    rule.nodes[i] = -z;
    rule.nodes[n - 1 - i] = z;
    rule.weights[i] = w;
    rule.weights[n - 1 - i] = w;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  return rule;
}

/// Fixed rule mapped to [a, b]; f is called once per node.
template <class F>
double integrate_fixed(const GaussRule& rule, double a, double b, F&& f) {
  const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
  double sum = 0.0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) sum += rule.weights[i] * f(mid + half * rule.nodes[i]);
  return half * sum;
}

/// Adaptive bisection driven by a Gauss-Legendre pair (whole vs halves).
/// V is any vector-like type supporting +, -, scalar * and a norm functor.
template <class V, class F, class Norm>
V integrate_adaptive(const GaussRule& rule, double a, double b, F&& f, Norm&& norm, double rel_tol,
                     double abs_tol, int max_depth) {
  auto panel = [&](double lo, double hi) {
    const double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
    V sum = rule.weights[0] * f(mid + half * rule.nodes[0]);
    for (std::size_t i = 1; i < rule.nodes.size(); ++i) sum = sum + rule.weights[i] * f(mid + half * rule.nodes[i]);
    return V(half * sum);
  };
  struct Rec {
    static V run(decltype(panel)& p, double lo, double hi, const V& whole, Norm& nrm, double rtol, double atol,
                 int depth) {
      const double mid = 0.5 * (lo + hi);
      V left = p(lo, mid);
      V right = p(mid, hi);
      V both = left + right;
      const double err = nrm(V(both - whole));
      if (depth <= 0 || err <= std::max(atol, rtol * nrm(both))) return both;
      return V(run(p, lo, mid, left, nrm, rtol, atol / 2, depth - 1) +
               run(p, mid, hi, right, nrm, rtol, atol / 2, depth - 1));
    }
  };
  if (a == b) return V(0.0 * panel(a, a + 1.0));
  V whole = panel(a, b);
  return Rec::run(panel, a, b, whole, norm, rel_tol, abs_tol, max_depth);
}

}  // namespace monodyn
