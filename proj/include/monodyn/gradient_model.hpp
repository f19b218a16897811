#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <concepts>
#include <limits>
#include <vector>

#include "monodyn/basis.hpp"

namespace monodyn {

/// A scalar right-hand side x' = g(x) with first and second derivatives.
template <class G>
concept GradientField = requires(const G& g, double x) {
  { g.value(x) } -> std::convertible_to<double>;
  { g.slope(x) } -> std::convertible_to<double>;
  { g.curvature(x) } -> std::convertible_to<double>;
};

/// A gradient field linear in a parameter vector: g(x) = sum_r beta_r psi_r(x).
/// param_gradient(x, d, out) writes d^d/dx^d of dg/dbeta at x into out.
template <class G>
concept ParametricGradient = GradientField<G> && requires(const G& g, double x, Eigen::VectorXd& out) {
  { g.num_params() } -> std::convertible_to<int>;
  g.param_gradient(x, 0, out);
  { g.breakpoints() } -> std::convertible_to<std::vector<double>>;
};

/// g_beta = sum_k beta_k phi_k on [lo, hi], extended flat outside:
/// g_beta(x) = g_beta(hi) for x > hi and g_beta(lo) for x < lo.
class GradientModel {
 public:
  GradientModel(SplineBasis basis, Eigen::VectorXd beta) : basis_(std::move(basis)), beta_(std::move(beta)) {
    if (beta_.size() != basis_.size()) throw InvalidArgument("GradientModel: beta size must equal M");
    const int per_interval = 32;
    const auto bp = basis_.breakpoints();
    min_value_ = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < bp.size(); ++i)
      for (int s = 0; s <= per_interval; ++s)
        min_value_ = std::min(min_value_, value(bp[i] + (bp[i + 1] - bp[i]) * s / per_interval));
  }

  const SplineBasis& basis() const noexcept { return basis_; }
  const Eigen::VectorXd& beta() const noexcept { return beta_; }
  int num_params() const noexcept { return static_cast<int>(beta_.size()); }

  /// True when g_beta > 0 on a dense grid of the basis domain.
  bool positive() const noexcept { return min_value_ > 0.0; }
  double grid_minimum() const noexcept { return min_value_; }

  double value(double x) const { return contract(basis_.local(x, 0), 0); }

  double slope(double x) const {
    if (!basis_.contains(x)) return 0.0;
    return contract(basis_.local(x, 1), 1);
  }

  double curvature(double x) const {
    if (!basis_.contains(x)) return 0.0;
    return contract(basis_.local(x, 2), 2);
  }

  /// (g, g', g'') in one basis evaluation.
  std::array<double, 3> jet(double x) const {
    const bool inside = basis_.contains(x);
    const LocalBasis lb = basis_.local(x, inside ? 2 : 0);
    return {contract(lb, 0), inside ? contract(lb, 1) : 0.0, inside ? contract(lb, 2) : 0.0};
  }

  /// d^deriv/dx^deriv of dg_beta/dbeta at x. Under the flat extension,
  /// dg/dbeta outside the domain is phi(boundary) and its x-derivatives vanish.
  void param_gradient(double x, int deriv, Eigen::VectorXd& out) const {
    out.setZero(basis_.size());
    const bool inside = basis_.contains(x);
    if (deriv > 0 && !inside) return;
    const LocalBasis lb = basis_.local(x, deriv);
    for (int j = 0; j < lb.count; ++j) out[lb.first + j] = lb.values[deriv][j];
  }

  std::vector<double> breakpoints() const { return basis_.breakpoints(); }

  /// Minimum of g_beta over a grid of [a, b] fine enough to resolve the knots.
  double minimum_on(double a, double b) const {
    if (a > b) std::swap(a, b);
    const double step = basis_.spacing() / 16.0;
    const int n = std::max(2, static_cast<int>(std::ceil((b - a) / step)));
    double m = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= n; ++i) m = std::min(m, value(a + (b - a) * i / n));
    return m;
  }

 private:
  double contract(const LocalBasis& lb, int deriv) const {
    double s = 0.0;
    for (int j = 0; j < lb.count; ++j) s += beta_[lb.first + j] * lb.values[deriv][j];
    return s;
  }

  SplineBasis basis_;
  Eigen::VectorXd beta_;
  double min_value_;
};

/// Model whose coefficients are given on the raw (partition-of-unity) B-splines.
inline GradientModel model_from_raw_coefficients(SplineBasis basis, const Eigen::VectorXd& raw) {
  if (raw.size() != basis.size()) throw InvalidArgument("raw coefficient count must equal M");
  Eigen::VectorXd beta(raw.size());
  for (Eigen::Index k = 0; k < raw.size(); ++k) beta[k] = raw[k] / basis.norm_factors()[k];
  return GradientModel(std::move(basis), std::move(beta));
}

}  // namespace monodyn
