#pragma once

/// Local polynomial kernel regression of a single noisy trajectory.
///
/// Used twice: to estimate the state at the ends of the trimmed window
/// [delta, 1 - delta], and as the presmoothing stage (level and derivative)
/// of the two-stage initializer.

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "monodyn/errors.hpp"

namespace monodyn {

/// Observations (t_j, Y_j) sorted by time; ties allowed.
struct Dataset {
  std::vector<double> times;
  std::vector<double> values;
  std::string subject_id;

  std::size_t size() const noexcept { return times.size(); }

  /// Stable-sorts by time and checks that times lie in [0, 1].
  static Dataset from_unsorted(std::vector<double> t, std::vector<double> y, std::string subject = {}) {
    if (t.size() != y.size()) throw InvalidArgument("Dataset: times and values differ in length");
    std::vector<std::size_t> idx(t.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return t[a] < t[b]; });
    Dataset d;
    d.subject_id = std::move(subject);
    for (std::size_t i : idx) {
      if (!(t[i] >= 0.0 && t[i] <= 1.0)) throw InvalidArgument("Dataset: times must lie in [0, 1]");
      if (!std::isfinite(y[i])) throw InvalidArgument("Dataset: non-finite value");
      d.times.push_back(t[i]);
      d.values.push_back(y[i]);
    }
    return d;
  }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset d;
    d.subject_id = subject_id;
    for (std::size_t i : idx) {
      d.times.push_back(times[i]);
      d.values.push_back(values[i]);
    }
    return d;
  }
};

/// Disjoint halves: even positions estimate the endpoints, odd positions
/// feed the main fit.
struct SubsampleSplit {
  std::vector<std::size_t> endpoint_indices;
  std::vector<std::size_t> fit_indices;
  Dataset endpoint_data;
  Dataset fit_data;
};

inline SubsampleSplit split_even_odd(const Dataset& data) {
  SubsampleSplit s;
  for (std::size_t i = 0; i < data.size(); ++i) (i % 2 == 0 ? s.endpoint_indices : s.fit_indices).push_back(i);
  s.endpoint_data = data.subset(s.endpoint_indices);
  s.fit_data = data.subset(s.fit_indices);
  return s;
}

/// Smallest delta with at least 5% of the times in [0, delta] and in
/// [1 - delta, 1], placed midway between adjacent order statistics.
inline double default_delta(const Dataset& data, double fraction = 0.05) {
  const std::size_t n = data.size();
  if (n < 10) throw InsufficientData("default_delta: need at least 10 observations");
  const auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n)));
  const auto& t = data.times;
  const double lower = 0.5 * (t[k - 1] + t[k]);
  const double upper = 1.0 - 0.5 * (t[n - k] + t[n - k - 1]);
  const double delta = std::max(lower, upper);
  if (!(delta > 0.0 && delta < 0.5)) throw InvalidArgument("default_delta: times too concentrated to trim");
  return delta;
}

enum class Kernel { gaussian, epanechnikov };

inline const char* to_string(Kernel k) { return k == Kernel::gaussian ? "gaussian" : "epanechnikov"; }

namespace detail {

inline double kernel_weight(Kernel k, double s) {
  if (k == Kernel::gaussian) return std::exp(-0.5 * s * s);
  return std::abs(s) < 1.0 ? 0.75 * (1.0 - s * s) : 0.0;
}

/// Gaussian weights below exp(-32) relative are dropped.
inline double kernel_reach(Kernel k) { return k == Kernel::gaussian ? 8.0 : 1.0; }

struct LocalSolution {
  Eigen::VectorXd coef;  // in the scaled variable s = (t_j - t) / h
  double hat_at_center = 0.0;  // e0' (U'WU)^-1 e0, multiply by w_j for S_jj
};

/// Weighted polynomial fit centered at t; nullopt when the design is rank deficient.
inline std::optional<LocalSolution> local_solve(const Dataset& data, double t, int degree, double bw, Kernel kernel) {
  const double reach = kernel_reach(kernel) * bw;
  const auto lo = std::lower_bound(data.times.begin(), data.times.end(), t - reach) - data.times.begin();
  const auto hi = std::upper_bound(data.times.begin(), data.times.end(), t + reach) - data.times.begin();
  const int p1 = degree + 1;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p1, p1);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(p1);
  Eigen::VectorXd u(p1);
  int support = 0;
  double last_t = std::numeric_limits<double>::quiet_NaN();
  for (auto j = lo; j < hi; ++j) {
    const double s = (data.times[j] - t) / bw;
    const double w = kernel_weight(kernel, s);
    if (!(w > 0.0)) continue;
    if (data.times[j] != last_t) ++support;
    last_t = data.times[j];
    u[0] = 1.0;
    for (int k = 1; k < p1; ++k) u[k] = u[k - 1] * s;
    a.noalias() += w * u * u.transpose();
    b.noalias() += w * data.values[j] * u;
  }
  if (support < p1) return std::nullopt;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  qr.setThreshold(1e-12);
  if (qr.rank() < p1) return std::nullopt;
  LocalSolution out;
  out.coef = qr.solve(b);
  Eigen::VectorXd e0 = Eigen::VectorXd::Zero(p1);
  e0[0] = 1.0;
  out.hat_at_center = qr.solve(e0)[0];
  return out;
}

}  // namespace detail

struct LocalPolyResult {
  Eigen::VectorXd level;
  Eigen::VectorXd derivative;
};

/// Level and first derivative from a degree-`degree` local fit at each query.
/// The derivative is the linear coefficient of the local polynomial.
inline LocalPolyResult local_poly(const Dataset& data, int degree, double bandwidth, Kernel kernel,
                                  std::span<const double> t_query) {
  if (!(bandwidth > 0.0)) throw InvalidArgument("local_poly: bandwidth must be > 0");
  if (degree < 1) throw InvalidArgument("local_poly: degree must be >= 1");
  LocalPolyResult r;
  r.level.resize(static_cast<Eigen::Index>(t_query.size()));
  r.derivative.resize(static_cast<Eigen::Index>(t_query.size()));
  std::vector<std::size_t> failed;
  for (std::size_t i = 0; i < t_query.size(); ++i) {
    const auto sol = detail::local_solve(data, t_query[i], degree, bandwidth, kernel);
    if (!sol) {
      failed.push_back(i);
      continue;
    }
    r.level[i] = sol->coef[0];
    r.derivative[i] = sol->coef[1] / bandwidth;
  }
  if (!failed.empty())
    throw RankDeficientError("local_poly: singular local design at " + std::to_string(failed.size()) + " query point(s)",
                             std::move(failed));
  return r;
}

/// A configured smoother bound to its data.
class LocalPolyFit {
 public:
  LocalPolyFit(Dataset data, int degree, double bandwidth, Kernel kernel)
      : data_(std::move(data)), degree_(degree), bandwidth_(bandwidth), kernel_(kernel) {}
  int degree() const noexcept { return degree_; }
  double bandwidth() const noexcept { return bandwidth_; }
  Kernel kernel() const noexcept { return kernel_; }
  LocalPolyResult operator()(std::span<const double> t_query) const {
    return local_poly(data_, degree_, bandwidth_, kernel_, t_query);
  }

 private:
  Dataset data_;
  int degree_;
  double bandwidth_;
  Kernel kernel_;
};

/// Leave-one-out squared prediction error of the level fit; nullopt when
/// some point cannot be fitted. Uses y_j - yhat_{-j} = (y_j - yhat_j) / (1 - S_jj).
inline std::optional<double> loo_score(const Dataset& data, int degree, double bw, Kernel kernel) {
  double score = 0.0;
  for (std::size_t j = 0; j < data.size(); ++j) {
    const auto sol = detail::local_solve(data, data.times[j], degree, bw, kernel);
    if (!sol) return std::nullopt;
    const double s_jj = detail::kernel_weight(kernel, 0.0) * sol->hat_at_center;
    if (!(s_jj < 1.0 - 1e-8)) return std::nullopt;
    const double r = (data.values[j] - sol->coef[0]) / (1.0 - s_jj);
    score += r * r;
  }
  return score;
}

/// Grid bandwidth minimizing the leave-one-out error; ties go to the larger bandwidth.
inline double cv_bandwidth(const Dataset& data, int degree, Kernel kernel, std::span<const double> grid) {
  if (grid.empty()) throw InvalidArgument("cv_bandwidth: empty grid");
  for (double h : grid)
    if (!(h > 0.0)) throw InvalidArgument("cv_bandwidth: bandwidths must be > 0");
  double sum_sq = 0.0;
  for (double y : data.values) sum_sq += y * y;
  std::optional<double> best_score;
  double best_bw = 0.0;
  for (double h : grid) {
    const auto s = loo_score(data, degree, h, kernel);
    if (!s) continue;
    const double tie_tol = 1e-9 * std::min(*s, best_score.value_or(*s)) + 1e-18 * sum_sq;
    if (!best_score || *s < *best_score - tie_tol) {
      best_score = s;
      best_bw = h;
    } else if (std::abs(*s - *best_score) <= tie_tol && h > best_bw) {
      best_bw = h;
    }
  }
  if (!best_score) throw RankDeficientError("cv_bandwidth: every grid bandwidth gives a singular local design", {});
  return best_bw;
}

/// n_values log-spaced bandwidths on [lo, hi].
inline std::vector<double> log_grid(double lo, double hi, int n_values) {
  std::vector<double> g(n_values);
  for (int i = 0; i < n_values; ++i)
    g[i] = n_values == 1 ? lo : std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * i / (n_values - 1));
  return g;
}

struct EndpointEstimate {
  double x0 = 0.0;  ///< state estimate at t = delta
  double x1 = 0.0;  ///< state estimate at t = 1 - delta
  double delta = 0.0;
  double bandwidth = 0.0;
  std::vector<std::size_t> indices;  ///< positions in the full dataset that were used
};

/// State at delta and 1 - delta from a degree-p local polynomial on the
/// even-indexed subsample, bandwidth c * n^(-1/(2p+3)) with c in {0.5, 1, 2}
/// picked by leave-one-out CV among those with 2(p+1) points near both ends.
inline EndpointEstimate estimate_endpoints(const Dataset& data, double delta, int p = 3,
                                           Kernel kernel = Kernel::gaussian) {
  if (!(delta > 0.0 && delta < 0.5)) throw InvalidArgument("estimate_endpoints: delta must lie in (0, 1/2)");
  if (p < 1) throw InvalidArgument("estimate_endpoints: degree must be >= 1");
  const auto split = split_even_odd(data);
  const Dataset& sub = split.endpoint_data;
  std::size_t distinct = sub.size() ? 1 : 0;
  for (std::size_t i = 1; i < sub.size(); ++i) distinct += sub.times[i] != sub.times[i - 1];
  if (distinct < static_cast<std::size_t>(2 * (p + 1)))
    throw InsufficientData("estimate_endpoints: too few distinct observation times");
  const double base = std::pow(static_cast<double>(sub.size()), -1.0 / (2.0 * p + 3.0));
  auto near = [&](double c, double bw) {
    return std::count_if(sub.times.begin(), sub.times.end(), [&](double t) { return std::abs(t - c) <= bw; });
  };
  // Only bandwidths that see 2(p+1) points around both ends compete.
  std::vector<double> grid;
  for (double c : {0.5, 1.0, 2.0})
    if (near(delta, c * base) >= 2 * (p + 1) && near(1.0 - delta, c * base) >= 2 * (p + 1)) grid.push_back(c * base);
  if (grid.empty())
    throw InsufficientData("estimate_endpoints: fewer than 2(p+1) points within one bandwidth of an endpoint");
  double bw = 0.0;
  try {
    bw = cv_bandwidth(sub, p, kernel, grid);
  } catch (const RankDeficientError&) {
    throw InsufficientData("estimate_endpoints: no bandwidth gives a well-posed local fit");
  }
  const std::vector<double> at{delta, 1.0 - delta};
  const auto fit = local_poly(sub, p, bw, kernel, at);
  return {fit.level[0], fit.level[1], delta, bw, split.endpoint_indices};
}

struct PresmoothConfig {
  Kernel kernel = Kernel::gaussian;
  std::vector<double> bandwidth_grid = log_grid(0.02, 0.5, 20);
};

struct Presmoothed {
  Eigen::VectorXd level;       ///< local linear
  Eigen::VectorXd derivative;  ///< local quadratic
  double level_bandwidth = 0.0;
  double derivative_bandwidth = 0.0;
};

/// First stage of the two-stage estimator: local linear level and local
/// quadratic derivative, each with its own CV bandwidth.
inline Presmoothed presmooth(const Dataset& data, std::span<const double> t_query, const PresmoothConfig& cfg = {}) {
  Presmoothed out;
  out.level_bandwidth = cv_bandwidth(data, 1, cfg.kernel, cfg.bandwidth_grid);
  out.derivative_bandwidth = cv_bandwidth(data, 2, cfg.kernel, cfg.bandwidth_grid);
  out.level = local_poly(data, 1, out.level_bandwidth, cfg.kernel, t_query).level;
  out.derivative = local_poly(data, 2, out.derivative_bandwidth, cfg.kernel, t_query).derivative;
  return out;
}

}  // namespace monodyn
