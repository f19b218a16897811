#pragma once

/// Normalized B-spline basis with equally spaced knots.
///
/// The knot vector is clamped: both boundary knots are repeated `order`
/// times, so the combined support of the basis is exactly [lo, hi]. Each raw
/// B-spline is rescaled to unit L2 norm on [lo, hi]. Evaluation uses the
/// Cox-de Boor recursion with derivatives (Piegl & Tiller, A2.3).

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include "monodyn/errors.hpp"
#include "monodyn/quadrature.hpp"

namespace monodyn {

inline constexpr int kMaxOrder = 10;
inline constexpr int kMaxDeriv = 2;

/// Nonzero basis values at one point: functions first .. first+count-1.
struct LocalBasis {
  int first = 0;
  int count = 0;
  std::array<std::array<double, kMaxOrder>, kMaxDeriv + 1> values{};
};

class SplineBasis {
 public:
  SplineBasis(double lo, double hi, int num_functions, int order) : lo_(lo), hi_(hi), size_(num_functions), order_(order) {
    if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi))
      throw InvalidArgument("SplineBasis: degenerate interval");
    if (order < 1 || order > kMaxOrder) throw InvalidArgument("SplineBasis: order out of range [1, 10]");
    if (num_functions < order) throw InvalidArgument("SplineBasis: need M >= order");
    const int intervals = size_ - order_ + 1;
    spacing_ = (hi_ - lo_) / intervals;
    knots_.reserve(size_ + order_);
    for (int i = 0; i < order_; ++i) knots_.push_back(lo_);
    for (int i = 1; i < intervals; ++i) knots_.push_back(lo_ + i * spacing_);
    for (int i = 0; i < order_; ++i) knots_.push_back(hi_);
    compute_norms();
  }

  double lo() const noexcept { return lo_; }
  double hi() const noexcept { return hi_; }
  int size() const noexcept { return size_; }
  int order() const noexcept { return order_; }
  double spacing() const noexcept { return spacing_; }
  const std::vector<double>& knots() const noexcept { return knots_; }
  const std::vector<double>& norm_factors() const noexcept { return norm_; }
  bool contains(double x) const noexcept { return x >= lo_ && x <= hi_; }

  /// Distinct knots lo = b_0 < b_1 < ... < b_K = hi.
  std::vector<double> breakpoints() const {
    std::vector<double> b;
    const int intervals = size_ - order_ + 1;
    for (int i = 0; i <= intervals; ++i) b.push_back(i == intervals ? hi_ : lo_ + i * spacing_);
    return b;
  }

  std::pair<double, double> support(int k) const { return {knots_[k], knots_[k + order_]}; }

  /// s_M: length of the shortest basis-function support.
  double smallest_support() const {
    double s = hi_ - lo_;
    for (int k = 0; k < size_; ++k) s = std::min(s, knots_[k + order_] - knots_[k]);
    return s;
  }

  /// Raw (partition-of-unity) values and derivatives up to max_deriv at x.
  /// x is clamped into [lo, hi].
  LocalBasis local_raw(double x, int max_deriv) const {
    LocalBasis out;
    const int p = order_ - 1;
    x = std::clamp(x, lo_, hi_);
    const int span = find_span(x);
    out.first = span - p;
    out.count = order_;
    // ndu[j][r]: basis functions (upper triangle) and knot differences (lower).
    std::array<std::array<double, kMaxOrder>, kMaxOrder> ndu{};
    std::array<double, kMaxOrder> left{}, right{};
    ndu[0][0] = 1.0;
    for (int j = 1; j <= p; ++j) {
      left[j] = x - knots_[span + 1 - j];
      right[j] = knots_[span + j] - x;
      double saved = 0.0;
      for (int r = 0; r < j; ++r) {
        ndu[j][r] = right[r + 1] + left[j - r];
        const double temp = ndu[r][j - 1] / ndu[j][r];
        ndu[r][j] = saved + right[r + 1] * temp;
        saved = left[j - r] * temp;
      }
      ndu[j][j] = saved;
    }
    for (int j = 0; j <= p; ++j) out.values[0][j] = ndu[j][p];
    const int nd = std::min(max_deriv, kMaxDeriv);
    for (int k = 1; k <= nd; ++k)
      for (int j = 0; j <= p; ++j) out.values[k][j] = 0.0;
    if (nd == 0 || p == 0) return out;

    std::array<std::array<double, kMaxOrder>, 2> a{};
    for (int r = 0; r <= p; ++r) {
      int s1 = 0, s2 = 1;
      a[0][0] = 1.0;
      for (int k = 1; k <= std::min(nd, p); ++k) {
        double d = 0.0;
        const int rk = r - k, pk = p - k;
        if (r >= k) {
          a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
          d = a[s2][0] * ndu[rk][pk];
        }
        const int j1 = rk >= -1 ? 1 : -rk;
        const int j2 = (r - 1 <= pk) ? k - 1 : p - r;
        for (int j = j1; j <= j2; ++j) {
          a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][rk + j];
          d += a[s2][j] * ndu[rk + j][pk];
        }
        if (r <= pk) {
          a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
          d += a[s2][k] * ndu[r][pk];
        }
        out.values[k][r] = d;
        std::swap(s1, s2);
      }
    }
    for (int k = 1; k <= std::min(nd, p); ++k) {
      double factor = 1.0;
      for (int i = 0; i < k; ++i) factor *= (p - i);
      for (int j = 0; j <= p; ++j) out.values[k][j] *= factor;
    }
    return out;
  }

  /// Normalized values and derivatives at x (x clamped into [lo, hi]).
  LocalBasis local(double x, int max_deriv) const {
    LocalBasis out = local_raw(x, max_deriv);
    const int nd = std::min(max_deriv, kMaxDeriv);
    for (int k = 0; k <= nd; ++k)
      for (int j = 0; j < out.count; ++j) out.values[k][j] *= norm_[out.first + j];
    return out;
  }

  Eigen::VectorXd eval_raw(double x) const {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(size_);
    if (!contains(x)) return v;
    const LocalBasis lb = local_raw(x, 0);
    for (int j = 0; j < lb.count; ++j) v[lb.first + j] = lb.values[0][j];
    return v;
  }

 private:
  int find_span(double x) const {
    const int p = order_ - 1;
    if (x >= hi_) return size_ - 1;
    if (x <= lo_) return p;
    // Equal spacing: direct index, then guard against rounding.
    int span = p + static_cast<int>(std::floor((x - lo_) / spacing_));
    span = std::clamp(span, p, size_ - 1);
    while (span > p && x < knots_[span]) --span;
    while (span < size_ - 1 && x >= knots_[span + 1]) ++span;
    return span;
  }

  void compute_norms() {
    norm_.assign(size_, 1.0);
    std::vector<double> sq(size_, 0.0);
    const GaussRule rule = gauss_legendre((2 * order_ + 1 + 1) / 2);
    const auto bp = breakpoints();
    for (std::size_t i = 0; i + 1 < bp.size(); ++i) {
      const double a = bp[i], b = bp[i + 1];
      const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
      for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
        const LocalBasis lb = local_raw(mid + half * rule.nodes[q], 0);
        for (int j = 0; j < lb.count; ++j) sq[lb.first + j] += half * rule.weights[q] * lb.values[0][j] * lb.values[0][j];
      }
    }
    for (int k = 0; k < size_; ++k) norm_[k] = 1.0 / std::sqrt(sq[k]);
  }

  double lo_, hi_;
  int size_, order_;
  double spacing_ = 0.0;
  std::vector<double> knots_;
  std::vector<double> norm_;
};

/// Validated construction: M >= order >= 3 and lo < hi.
inline SplineBasis make_basis(double lo, double hi, int num_functions, int order) {
  if (!(lo < hi)) throw InvalidArgument("make_basis: x_lo must be < x_hi");
  if (order < 3) throw InvalidArgument("make_basis: order must be >= 3");
  if (num_functions < order) throw InvalidArgument("make_basis: M must be >= order");
  return SplineBasis(lo, hi, num_functions, order);
}

/// (phi_1^(deriv)(x), ..., phi_M^(deriv)(x)); zero outside [lo, hi].
inline Eigen::VectorXd eval_basis(const SplineBasis& basis, double x, int deriv) {
  if (deriv < 0 || deriv > kMaxDeriv) throw InvalidArgument("eval_basis: deriv must be 0, 1 or 2");
  Eigen::VectorXd v = Eigen::VectorXd::Zero(basis.size());
  if (!basis.contains(x)) return v;
  const LocalBasis lb = basis.local(x, deriv);
  for (int j = 0; j < lb.count; ++j) v[lb.first + j] = lb.values[deriv][j];
  return v;
}

/// G_kl = integral of phi_k phi_l over [lo, hi], by Gauss-Legendre per knot interval.
inline Eigen::MatrixXd gram_matrix(const SplineBasis& basis) {
  const int m = basis.size();
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(m, m);
  const GaussRule rule = gauss_legendre((2 * basis.order() + 1 + 1) / 2);
  const auto bp = basis.breakpoints();
  for (std::size_t i = 0; i + 1 < bp.size(); ++i) {
    const double a = bp[i], b = bp[i + 1];
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
      const LocalBasis lb = basis.local(mid + half * rule.nodes[q], 0);
      const double w = half * rule.weights[q];
      for (int r = 0; r < lb.count; ++r)
        for (int c = 0; c < lb.count; ++c)
          g(lb.first + r, lb.first + c) += w * lb.values[0][r] * lb.values[0][c];
    }
  }
  return 0.5 * (g + g.transpose());
}

/// Extreme eigenvalues of the Gram matrix.
inline std::pair<double, double> gram_eigen_bounds(const SplineBasis& basis) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram_matrix(basis), Eigen::EigenvaluesOnly);
  return {es.eigenvalues().minCoeff(), es.eigenvalues().maxCoeff()};
}

}  // namespace monodyn
