#pragma once

/// Trajectories x' = g(x) and their sensitivities to the coefficients of g
/// and to the initial state.
///
/// Two independent routes are provided for the sensitivities:
///  - the linear variational ODEs integrated by RK4 alongside the state, and
///  - closed forms obtained from the integrating factor g(X(t)) / g(X(t0)),
///    which turn the time integrals into integrals over the state:
///      dX/dbeta_r (t) = g(X(t)) * int_{x0}^{X(t)} psi_r(u) / g(u)^2 du
///      dX/da      (t) = g(X(t)) / g(a).
/// The closed forms need g > 0 along the traversed range.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "monodyn/errors.hpp"
#include "monodyn/gradient_model.hpp"
#include "monodyn/quadrature.hpp"

namespace monodyn {

inline constexpr double kDefaultStep = 1e-3;
inline constexpr double kDefaultOverflowBound = 1e8;

namespace detail {

/// Uniform grid from t0 with step h; the last step is shortened to land on t1.
inline std::vector<double> step_grid(double t0, double t1, double h) {
  if (!(t0 < t1)) throw InvalidArgument("step grid: t_start must be < t_end");
  if (!(h > 0.0)) throw InvalidArgument("step grid: h must be > 0");
  const int steps = std::max(1, static_cast<int>(std::ceil((t1 - t0) / h - 1e-9)));
  std::vector<double> grid(steps + 1);
  for (int i = 0; i < steps; ++i) grid[i] = t0 + i * h;
  grid[steps] = t1;
  return grid;
}

/// Index i with grid[i] <= t <= grid[i+1].
inline std::size_t locate(const std::vector<double>& grid, double h, double t) {
  const std::size_t last = grid.size() - 2;
  auto i = static_cast<std::size_t>(std::clamp(std::floor((t - grid.front()) / h), 0.0, static_cast<double>(last)));
  while (i > 0 && t < grid[i]) --i;
  while (i < last && t > grid[i + 1]) ++i;
  return i;
}

inline double hermite(double t0, double t1, double y0, double y1, double d0, double d1, double t) {
  const double dt = t1 - t0;
  const double s = (t - t0) / dt;
  const double s2 = s * s, s3 = s2 * s;
  return (2 * s3 - 3 * s2 + 1) * y0 + (s3 - 2 * s2 + s) * dt * d0 + (-2 * s3 + 3 * s2) * y1 + (s3 - s2) * dt * d1;
}

inline void check_state(double x, double bound) {
  if (!std::isfinite(x) || std::abs(x) > bound) throw DivergenceError("trajectory exceeded the overflow bound");
}

/// States and derivatives of an autonomous system on a fixed grid.
struct AugmentedPath {
  std::vector<double> t_grid;
  double h = 0.0;
  Eigen::MatrixXd states;  // (grid size) x dim
  Eigen::MatrixXd derivs;

  Eigen::VectorXd at(double t) const {
    const std::size_t i = locate(t_grid, h, t);
    const double t0 = t_grid[i], t1 = t_grid[i + 1];
    Eigen::VectorXd y(states.cols());
    for (Eigen::Index c = 0; c < states.cols(); ++c)
      y[c] = hermite(t0, t1, states(i, c), states(i + 1, c), derivs(i, c), derivs(i + 1, c), t);
    return y;
  }
};

/// Classical RK4 on a fixed grid; component 0 is the state checked for overflow.
template <class Rhs>
AugmentedPath integrate_rk4(Rhs&& rhs, const Eigen::VectorXd& y0, std::vector<double> grid, double h,
                            double overflow_bound) {
  AugmentedPath path;
  const auto n = static_cast<Eigen::Index>(grid.size());
  const Eigen::Index dim = y0.size();
  path.states.resize(n, dim);
  path.derivs.resize(n, dim);
  Eigen::VectorXd y = y0, k1(dim), k2(dim), k3(dim), k4(dim), tmp(dim);
  rhs(y, k1);
  path.states.row(0) = y.transpose();
  path.derivs.row(0) = k1.transpose();
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    const double dt = grid[i + 1] - grid[i];
    tmp = y + 0.5 * dt * k1;
    rhs(tmp, k2);
    tmp = y + 0.5 * dt * k2;
    rhs(tmp, k3);
    tmp = y + dt * k3;
    rhs(tmp, k4);
    y += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    check_state(y[0], overflow_bound);
    rhs(y, k1);
    path.states.row(i + 1) = y.transpose();
    path.derivs.row(i + 1) = k1.transpose();
  }
  path.t_grid = std::move(grid);
  path.h = h;
  return path;
}

inline void check_queries(std::span<const double> t_query, double t0, double t1) {
  const double tol = 1e-12 * std::max(1.0, std::abs(t1 - t0));
  for (double t : t_query)
    if (t < t0 - tol || t > t1 + tol) throw InvalidArgument("query time outside the solved interval");
}

}  // namespace detail

/// RK4 solution of x' = g(x) with cubic Hermite dense output (slopes g(x_i)).
struct TrajectorySolution {
  std::vector<double> t_grid;
  std::vector<double> x_values;
  std::vector<double> slopes;
  double h = 0.0;
  double t_start = 0.0;
  double x_start = 0.0;
  /// Set when g(x) <= 0 was met at any RK stage.
  bool monotone_lost = false;
  double min_slope = std::numeric_limits<double>::infinity();

  double t_end() const { return t_grid.back(); }
  double x_end() const { return x_values.back(); }

  double at(double t) const {
    const std::size_t i = detail::locate(t_grid, h, t);
    return detail::hermite(t_grid[i], t_grid[i + 1], x_values[i], x_values[i + 1], slopes[i], slopes[i + 1], t);
  }

  std::vector<double> at(std::span<const double> ts) const {
    std::vector<double> out;
    out.reserve(ts.size());
    for (double t : ts) out.push_back(at(t));
    return out;
  }
};

template <GradientField G>
TrajectorySolution solve_trajectory(const G& model, double t_start, double t_end, double x_start, double h = kDefaultStep,
                                    double overflow_bound = kDefaultOverflowBound) {
  TrajectorySolution sol;
  sol.t_grid = detail::step_grid(t_start, t_end, h);
  sol.h = h;
  sol.t_start = t_start;
  sol.x_start = x_start;
  detail::check_state(x_start, overflow_bound);
  const std::size_t n = sol.t_grid.size();
  sol.x_values.resize(n);
  sol.slopes.resize(n);
  auto f = [&](double x) {
    const double v = model.value(x);
    sol.min_slope = std::min(sol.min_slope, v);
    return v;
  };
  double x = x_start;
  double k1 = f(x);
  sol.x_values[0] = x;
  sol.slopes[0] = k1;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double dt = sol.t_grid[i + 1] - sol.t_grid[i];
    const double k2 = f(x + 0.5 * dt * k1);
    const double k3 = f(x + 0.5 * dt * k2);
    const double k4 = f(x + dt * k3);
    x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    detail::check_state(x, overflow_bound);
    k1 = f(x);
    sol.x_values[i + 1] = x;
    sol.slopes[i + 1] = k1;
  }
  sol.monotone_lost = !(sol.min_slope > 0.0);
  return sol;
}

/// Jacobian dX/dbeta (rows = query times), dX/da, and optionally the Hessian
/// d2X/dbeta dbeta per query time.
struct SensitivityBundle {
  std::vector<double> t_query;
  Eigen::VectorXd trajectory;
  Eigen::MatrixXd jacobian;
  Eigen::VectorXd initial_sensitivity;
  std::vector<Eigen::MatrixXd> hessian;
};

/// Variational equations integrated alongside the state on the trajectory's grid.
template <ParametricGradient G>
SensitivityBundle sensitivities_ode(const G& model, const TrajectorySolution& traj, std::span<const double> t_query,
                                    double overflow_bound = kDefaultOverflowBound) {
  detail::check_queries(t_query, traj.t_start, traj.t_end());
  const int m = model.num_params();
  Eigen::VectorXd psi(m);
  auto rhs = [&](const Eigen::VectorXd& y, Eigen::VectorXd& dy) {
    const double x = y[0];
    const double g = model.value(x), gp = model.slope(x);
    model.param_gradient(x, 0, psi);
    dy[0] = g;
    dy.segment(1, m) = gp * y.segment(1, m) + psi;
    dy[m + 1] = gp * y[m + 1];
  };
  Eigen::VectorXd y0 = Eigen::VectorXd::Zero(m + 2);
  y0[0] = traj.x_start;
  y0[m + 1] = 1.0;
  const auto path = detail::integrate_rk4(rhs, y0, traj.t_grid, traj.h, overflow_bound);

  SensitivityBundle out;
  out.t_query.assign(t_query.begin(), t_query.end());
  const auto nq = static_cast<Eigen::Index>(t_query.size());
  out.trajectory.resize(nq);
  out.jacobian.resize(nq, m);
  out.initial_sensitivity.resize(nq);
  for (Eigen::Index j = 0; j < nq; ++j) {
    const Eigen::VectorXd y = path.at(t_query[j]);
    out.trajectory[j] = y[0];
    out.jacobian.row(j) = y.segment(1, m).transpose();
    out.initial_sensitivity[j] = y[m + 1];
  }
  return out;
}

namespace detail {

template <ParametricGradient G>
std::vector<double> state_panels(const G& model, double a, double b, int per_piece) {
  std::vector<double> cuts{a, b};
  for (double k : model.breakpoints())
    if (k > a && k < b) cuts.push_back(k);
  std::sort(cuts.begin(), cuts.end());
  std::vector<double> panels;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i)
    for (int s = 0; s < per_piece; ++s) panels.push_back(cuts[i] + (cuts[i + 1] - cuts[i]) * s / per_piece);
  panels.push_back(b);
  return panels;
}

template <ParametricGradient G>
double min_on_range(const G& model, double a, double b) {
  const auto panels = state_panels(model, std::min(a, b), std::max(a, b), 1);
  double m = std::numeric_limits<double>::infinity();
  const int per = std::max(16, 512 / static_cast<int>(panels.size()));
  for (std::size_t i = 0; i + 1 < panels.size(); ++i)
    for (int s = 0; s <= per; ++s) m = std::min(m, model.value(panels[i] + (panels[i + 1] - panels[i]) * s / per));
  return m;
}

inline double inf_norm(const Eigen::MatrixXd& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

}  // namespace detail

/// I(x) = int_{x0}^{x} psi(u) / g(u)^2 du by adaptive Gauss-Legendre over
/// panels split at the knots, with cumulative values cached at panel ends.
template <ParametricGradient G>
class StateIntegral {
 public:
  StateIntegral(const G& model, double x0, double x_max, int panels_per_piece = 4)
      : model_(&model), x0_(x0), rule_(gauss_legendre(8)) {
    if (x_max < x0) x_max = x0;
    if (x_max == x0) x_max = x0 + 1e-300;
    panels_ = detail::state_panels(model, x0, x_max, panels_per_piece);
    cumulative_.push_back(Eigen::VectorXd::Zero(model.num_params()));
    for (std::size_t i = 0; i + 1 < panels_.size(); ++i)
      cumulative_.push_back(cumulative_.back() + piece(panels_[i], panels_[i + 1]));
  }

  Eigen::VectorXd operator()(double x) const {
    x = std::clamp(x, panels_.front(), panels_.back());
    auto it = std::upper_bound(panels_.begin(), panels_.end(), x);
    std::size_t i = static_cast<std::size_t>(std::distance(panels_.begin(), it));
    i = i == 0 ? 0 : std::min(i - 1, panels_.size() - 2);
    return cumulative_[i] + piece(panels_[i], x);
  }

 private:
  Eigen::VectorXd piece(double a, double b) const {
    Eigen::VectorXd psi(model_->num_params());
    auto f = [&](double u) -> Eigen::VectorXd {
      model_->param_gradient(u, 0, psi);
      const double g = model_->value(u);
      return psi / (g * g);
    };
    if (b <= a) return Eigen::VectorXd::Zero(model_->num_params());
    return integrate_adaptive<Eigen::VectorXd>(rule_, a, b, f, detail::inf_norm, 1e-14, 1e-16, 30);
  }

  const G* model_;
  double x0_;
  GaussRule rule_;
  std::vector<double> panels_;
  std::vector<Eigen::VectorXd> cumulative_;
};

/// Closed-form sensitivities; throws NonPositiveGradient unless g > 0 on
/// [x_start, X(t_end)].
template <ParametricGradient G>
SensitivityBundle sensitivities_closed_form(const G& model, const TrajectorySolution& traj,
                                            std::span<const double> t_query) {
  detail::check_queries(t_query, traj.t_start, traj.t_end());
  const double x_lo = std::min(traj.x_start, traj.x_end());
  const double x_hi = std::max(traj.x_start, traj.x_end());
  if (!(detail::min_on_range(model, x_lo, x_hi) > 0.0))
    throw NonPositiveGradient("closed-form sensitivities need g > 0 on the traversed range");
  const StateIntegral<G> integral(model, traj.x_start, traj.x_end());
  const double g_start = model.value(traj.x_start);

  SensitivityBundle out;
  out.t_query.assign(t_query.begin(), t_query.end());
  const auto nq = static_cast<Eigen::Index>(t_query.size());
  out.trajectory.resize(nq);
  out.jacobian.resize(nq, model.num_params());
  out.initial_sensitivity.resize(nq);
  for (Eigen::Index j = 0; j < nq; ++j) {
    const double x = traj.at(t_query[j]);
    const double g = model.value(x);
    out.trajectory[j] = x;
    out.jacobian.row(j) = (g * integral(x)).transpose();
    out.initial_sensitivity[j] = g / g_start;
  }
  return out;
}

/// Second-order variational equations (RK4, zero initial conditions).
/// Returns `first` with the hessian populated.
template <ParametricGradient G>
SensitivityBundle hessian_sensitivities(const G& model, const TrajectorySolution& traj, SensitivityBundle first,
                                        std::span<const double> t_query,
                                        double overflow_bound = kDefaultOverflowBound) {
  detail::check_queries(t_query, traj.t_start, traj.t_end());
  const int m = model.num_params();
  const int tri = m * (m + 1) / 2;
  Eigen::VectorXd psi(m), dpsi(m);
  auto rhs = [&](const Eigen::VectorXd& y, Eigen::VectorXd& dy) {
    const double x = y[0];
    const double g = model.value(x), gp = model.slope(x), gpp = model.curvature(x);
    model.param_gradient(x, 0, psi);
    model.param_gradient(x, 1, dpsi);
    dy[0] = g;
    const auto s = y.segment(1, m);
    dy.segment(1, m) = gp * s + psi;
    int idx = m + 1;
    for (int r = 0; r < m; ++r)
      for (int c = r; c < m; ++c, ++idx)
        dy[idx] = gp * y[idx] + s[r] * dpsi[c] + s[c] * dpsi[r] + s[r] * s[c] * gpp;
  };
  Eigen::VectorXd y0 = Eigen::VectorXd::Zero(1 + m + tri);
  y0[0] = traj.x_start;
  const auto path = detail::integrate_rk4(rhs, y0, traj.t_grid, traj.h, overflow_bound);

  if (static_cast<std::size_t>(first.jacobian.rows()) != t_query.size())
    throw InvalidArgument("hessian_sensitivities: first-order bundle does not match the query times");
  first.hessian.assign(t_query.size(), Eigen::MatrixXd::Zero(m, m));
  for (std::size_t j = 0; j < t_query.size(); ++j) {
    const Eigen::VectorXd y = path.at(t_query[j]);
    int idx = m + 1;
    for (int r = 0; r < m; ++r)
      for (int c = r; c < m; ++c, ++idx) first.hessian[j](r, c) = first.hessian[j](c, r) = y[idx];
  }
  return first;
}

/// Hessian by quadrature. With S(x) = g(x) I(x) the first sensitivity along
/// the path and ds = dx / g,
///   d2X/dbeta_r dbeta_c (t) = g(X(t)) int_{x0}^{X(t)}
///       [S_r psi_c' + S_c psi_r' + S_r S_c g''](u) / g(u)^2 du.
template <ParametricGradient G>
std::vector<Eigen::MatrixXd> hessian_closed_form(const G& model, const TrajectorySolution& traj,
                                                 std::span<const double> t_query) {
  detail::check_queries(t_query, traj.t_start, traj.t_end());
  const double x_lo = std::min(traj.x_start, traj.x_end());
  const double x_hi = std::max(traj.x_start, traj.x_end());
  if (!(detail::min_on_range(model, x_lo, x_hi) > 0.0))
    throw NonPositiveGradient("closed-form Hessian needs g > 0 on the traversed range");
  const int m = model.num_params();
  const StateIntegral<G> integral(model, traj.x_start, traj.x_end(), 16);
  const GaussRule rule = gauss_legendre(8);
  Eigen::VectorXd dpsi(m);
  auto integrand = [&](double u) -> Eigen::MatrixXd {
    const double g = model.value(u);
    const double gpp = model.curvature(u);
    model.param_gradient(u, 1, dpsi);
    const Eigen::VectorXd s = g * integral(u);
    Eigen::MatrixXd f = s * dpsi.transpose() + dpsi * s.transpose() + gpp * s * s.transpose();
    return f / (g * g);
  };
  const auto panels = detail::state_panels(model, traj.x_start, std::max(traj.x_end(), traj.x_start + 1e-300), 4);
  std::vector<Eigen::MatrixXd> cumulative{Eigen::MatrixXd::Zero(m, m)};
  for (std::size_t i = 0; i + 1 < panels.size(); ++i)
    cumulative.push_back(cumulative.back() + integrate_adaptive<Eigen::MatrixXd>(rule, panels[i], panels[i + 1], integrand,
                                                                                 detail::inf_norm, 1e-13, 1e-15, 25));
  std::vector<Eigen::MatrixXd> out;
  out.reserve(t_query.size());
  for (double t : t_query) {
    const double x = std::clamp(traj.at(t), panels.front(), panels.back());
    auto it = std::upper_bound(panels.begin(), panels.end(), x);
    std::size_t i = static_cast<std::size_t>(std::distance(panels.begin(), it));
    i = i == 0 ? 0 : std::min(i - 1, panels.size() - 2);
    Eigen::MatrixXd v = cumulative[i];
    if (x > panels[i])
      v += integrate_adaptive<Eigen::MatrixXd>(rule, panels[i], x, integrand, detail::inf_norm, 1e-13, 1e-15, 25);
    out.push_back(model.value(x) * v);
  }
  return out;
}

}  // namespace monodyn
