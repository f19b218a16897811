#pragma once

/// Nonlinear least-squares estimation of the gradient function g from one
/// noisy monotone trajectory.
///
/// The trajectory model X(t; beta, a) solves x' = g_beta(x) on
/// [delta, 1 - delta] from x(delta) = a, where a is a smoothed estimate of
/// the state at delta. Only observations with delta <= t_j <= 1 - delta enter
/// the loss. Coefficients are fitted by Levenberg-Marquardt started from the
/// two-stage (presmooth-then-regress) estimate; the number of basis
/// functions is chosen by a linearized leave-one-out score.

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "monodyn/basis.hpp"
#include "monodyn/errors.hpp"
#include "monodyn/gradient_model.hpp"
#include "monodyn/ode.hpp"
#include "monodyn/smooth.hpp"

namespace monodyn {

struct LmOptions {
  double lambda_init = 1e-3;
  double lambda_up = 10.0;
  double lambda_down = 0.1;
  int max_iter = 200;
  double grad_tol = 1e-8;
  double step_tol = 1e-10;
  double lambda_max = 1e12;
};

struct FitConfig {
  /// Trimming; when unset, the smallest delta leaving 5% of the times in each tail.
  std::optional<double> delta;
  std::vector<int> candidate_Ms{3, 4, 5};
  int order = 4;
  LmOptions lm;
  double h = kDefaultStep;
  std::uint64_t rng_seed = 0;
  int endpoint_degree = 3;
  PresmoothConfig presmooth;
};

/// Margin eta_M = min{M^{-3/2} log n, s_M / log n}.
inline double margin(int m, std::size_t n, double smallest_support) {
  const double logn = std::log(static_cast<double>(n));
  return std::min(std::pow(static_cast<double>(m), -1.5) * logn, smallest_support / logn);
}

/// Observations inside the trimmed window, with the fixed start of the model trajectory.
struct TrimmedProblem {
  std::vector<double> times;
  Eigen::VectorXd values;
  double delta = 0.0;
  double x_start = 0.0;
  double h = kDefaultStep;
  std::size_t total = 0;  ///< observations before trimming

  std::size_t n_eff() const noexcept { return times.size(); }
};

inline bool in_window(double t, double delta) { return t >= delta && t <= 1.0 - delta; }

inline TrimmedProblem make_problem(const Dataset& data, double delta, double x_start, double h = kDefaultStep) {
  if (!(delta > 0.0 && delta < 0.5)) throw InvalidArgument("delta must lie in (0, 1/2)");
  TrimmedProblem p;
  p.delta = delta;
  p.x_start = x_start;
  p.h = h;
  p.total = data.size();
  std::vector<double> y;
  for (std::size_t j = 0; j < data.size(); ++j)
    if (in_window(data.times[j], delta)) {
      p.times.push_back(data.times[j]);
      y.push_back(data.values[j]);
    }
  p.values = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  return p;
}

/// Residuals r_j = Y_j - X(t_j) and their Jacobian dr/dbeta = -dX/dbeta.
struct Evaluation {
  bool feasible = false;
  double loss = std::numeric_limits<double>::infinity();
  Eigen::VectorXd residuals;
  Eigen::MatrixXd jacobian;
};

/// A coefficient vector is infeasible when the path diverges, leaves the
/// basis domain, or meets g <= 0 on the traversed range.
inline Evaluation evaluate(const GradientModel& model, const TrimmedProblem& problem, bool with_jacobian) {
  Evaluation ev;
  std::optional<TrajectorySolution> traj;
  try {
    traj = solve_trajectory(model, problem.delta, 1.0 - problem.delta, problem.x_start, problem.h);
  } catch (const DivergenceError&) {
    return ev;
  }
  if (traj->monotone_lost) return ev;
  const auto& basis = model.basis();
  if (!basis.contains(problem.x_start) || !basis.contains(traj->x_end())) return ev;
  if (!(model.minimum_on(problem.x_start, traj->x_end()) > 0.0)) return ev;
  const auto n = static_cast<Eigen::Index>(problem.n_eff());
  ev.residuals.resize(n);
  if (with_jacobian) {
    const auto sens = sensitivities_ode(model, *traj, problem.times);
    ev.residuals = problem.values - sens.trajectory;
    ev.jacobian = -sens.jacobian;
  } else {
    for (Eigen::Index j = 0; j < n; ++j) ev.residuals[j] = problem.values[j] - traj->at(problem.times[j]);
  }
  ev.loss = ev.residuals.squaredNorm();
  ev.feasible = std::isfinite(ev.loss);
  if (!ev.feasible) ev.loss = std::numeric_limits<double>::infinity();
  return ev;
}

/// Trimmed loss; +infinity for infeasible coefficients.
inline double loss(const Eigen::VectorXd& beta, const Dataset& data, double delta, double x_hat0,
                   const SplineBasis& basis, double h = kDefaultStep) {
  return evaluate(GradientModel(basis, beta), make_problem(data, delta, x_hat0, h), false).loss;
}

struct ResidualsAndJacobian {
  Eigen::VectorXd residuals;
  Eigen::MatrixXd jacobian;  ///< rows for trimmed-in observations only
};

inline ResidualsAndJacobian residuals_and_jacobian(const Eigen::VectorXd& beta, const Dataset& data, double delta,
                                                   double x_hat0, const SplineBasis& basis,
                                                   double h = kDefaultStep) {
  auto ev = evaluate(GradientModel(basis, beta), make_problem(data, delta, x_hat0, h), true);
  if (!ev.feasible) throw NonPositiveGradient("residuals_and_jacobian: infeasible coefficients");
  return {std::move(ev.residuals), std::move(ev.jacobian)};
}

enum class LmStatus { converged, max_iterations, no_descent };

inline const char* to_string(LmStatus s) {
  switch (s) {
    case LmStatus::converged: return "converged";
    case LmStatus::max_iterations: return "max_iterations";
    case LmStatus::no_descent: return "no_descent";
  }
  return "unknown";
}

struct ConvergenceReport {
  int iterations = 0;
  double final_lambda = 0.0;
  double grad_norm = 0.0;
  LmStatus status = LmStatus::max_iterations;
  std::vector<double> accepted_losses;  ///< loss after each accepted step, starting with the initial loss
};

struct LmResult {
  Eigen::VectorXd beta;
  double loss = 0.0;
  ConvergenceReport report;
};

/// Levenberg-Marquardt with Marquardt scaling: (J'J + lambda diag(J'J)) step = -J'r.
/// Rejected or infeasible trials raise lambda; accepted ones lower it.
/// Stops when ||J'r||_inf <= grad_tol (1 + loss), when an accepted step is
/// shorter than step_tol (||beta|| + step_tol), at max_iter, or when lambda
/// exceeds lambda_max (no_descent, best-so-far beta returned).
inline LmResult lm_fit(const Eigen::VectorXd& init_beta, const TrimmedProblem& problem, const SplineBasis& basis,
                       const LmOptions& opt = {}) {
  Eigen::VectorXd beta = init_beta;
  Evaluation cur = evaluate(GradientModel(basis, beta), problem, true);
  if (!cur.feasible) throw InfeasibleStart("lm_fit: initial coefficients give an infeasible trajectory");
  LmResult out;
  auto& rep = out.report;
  rep.accepted_losses.push_back(cur.loss);
  double lambda = opt.lambda_init;
  Eigen::VectorXd grad = cur.jacobian.transpose() * cur.residuals;
  bool done = false;
  for (int iter = 1; iter <= opt.max_iter && !done; ++iter) {
    rep.iterations = iter;
    if (grad.lpNorm<Eigen::Infinity>() <= opt.grad_tol * (1.0 + cur.loss)) {
      rep.status = LmStatus::converged;
      rep.iterations = iter - 1;
      break;
    }
    const Eigen::MatrixXd jtj = cur.jacobian.transpose() * cur.jacobian;
    Eigen::VectorXd scale = jtj.diagonal();
    const double floor = 1e-12 * std::max(scale.maxCoeff(), 1e-300);
    scale = scale.cwiseMax(floor);
    while (true) {
      Eigen::MatrixXd a = jtj;
      a.diagonal() += lambda * scale;
      const Eigen::VectorXd step = a.ldlt().solve(-grad);
      const Eigen::VectorXd trial_beta = beta + step;
      Evaluation trial = step.allFinite() ? evaluate(GradientModel(basis, trial_beta), problem, true) : Evaluation{};
      if (trial.feasible && trial.loss < cur.loss) {
        beta = trial_beta;
        cur = std::move(trial);
        grad = cur.jacobian.transpose() * cur.residuals;
        rep.accepted_losses.push_back(cur.loss);
        lambda = std::max(lambda * opt.lambda_down, 1e-15);
        if (step.norm() <= opt.step_tol * (beta.norm() + opt.step_tol)) {
          rep.status = LmStatus::converged;
          done = true;
        }
        break;
      }
      lambda *= opt.lambda_up;
      if (lambda > opt.lambda_max) {
        rep.status = LmStatus::no_descent;
        done = true;
        break;
      }
    }
    if (!done && iter == opt.max_iter) rep.status = LmStatus::max_iterations;
  }
  if (opt.max_iter <= 0) rep.status = LmStatus::max_iterations;
  if (!done && rep.status != LmStatus::converged &&
      grad.lpNorm<Eigen::Infinity>() <= opt.grad_tol * (1.0 + cur.loss))
    rep.status = LmStatus::converged;
  rep.final_lambda = lambda;
  rep.grad_norm = grad.lpNorm<Eigen::Infinity>();
  out.beta = beta;
  out.loss = cur.loss;
  return out;
}

struct TwoStageResult {
  Eigen::VectorXd beta;
  bool jitter_applied = false;
  double level_bandwidth = 0.0;
  double derivative_bandwidth = 0.0;
};

/// OLS regression of the presmoothed derivative on phi(presmoothed level) over
/// trimmed-in times. Ridge jitter 1e-10 I is added only when the normal matrix
/// is numerically singular.
inline TwoStageResult two_stage_fit(const Dataset& data, const SplineBasis& basis, double delta,
                                    const PresmoothConfig& cfg = {}) {
  std::vector<double> tq;
  for (double t : data.times)
    if (in_window(t, delta)) tq.push_back(t);
  const int m = basis.size();
  if (tq.size() < static_cast<std::size_t>(m)) throw SingularDesign("two_stage_fit: fewer trimmed-in points than coefficients");
  const Presmoothed ps = presmooth(data, tq, cfg);
  Eigen::MatrixXd phi(static_cast<Eigen::Index>(tq.size()), m);
  std::vector<double> covered;
  for (Eigen::Index j = 0; j < phi.rows(); ++j) {
    phi.row(j) = eval_basis(basis, ps.level[j], 0).transpose();
    if (basis.contains(ps.level[j])) covered.push_back(ps.level[j]);
  }
  std::sort(covered.begin(), covered.end());
  covered.erase(std::unique(covered.begin(), covered.end()), covered.end());
  if (covered.size() < static_cast<std::size_t>(m))
    throw SingularDesign("two_stage_fit: fewer than M distinct smoothed states inside the basis support");
  for (int k = 0; k < m; ++k)
    if (phi.col(k).squaredNorm() == 0.0)
      throw SingularDesign("two_stage_fit: basis function " + std::to_string(k) + " has no smoothed state in its support");
  TwoStageResult out;
  out.level_bandwidth = ps.level_bandwidth;
  out.derivative_bandwidth = ps.derivative_bandwidth;
  Eigen::MatrixXd normal = phi.transpose() * phi;
  const Eigen::VectorXd rhs = phi.transpose() * ps.derivative;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(normal, Eigen::EigenvaluesOnly);
  const double lmin = es.eigenvalues().minCoeff(), lmax = es.eigenvalues().maxCoeff();
  if (!(lmin > 1e-13 * lmax)) {
    normal.diagonal().array() += 1e-10;
    out.jitter_applied = true;
  }
  out.beta = normal.ldlt().solve(rhs);
  return out;
}

struct CandidateReport {
  int M = 0;
  int order = 0;
  double margin = 0.0;
  double cv_score = std::numeric_limits<double>::infinity();
  double loss = std::numeric_limits<double>::infinity();
  std::string init_method;
  std::string status;
  std::string error;  ///< empty on success
};

struct FitResult {
  GradientModel model;
  int chosen_M = 0;
  double loss_value = 0.0;
  double cv_score = 0.0;
  Eigen::MatrixXd covariance;
  double sigma2_hat = 0.0;
  double x_hat0 = 0.0;
  double x_hat1 = 0.0;
  double delta = 0.0;
  double margin = 0.0;
  double h = kDefaultStep;
  std::size_t n_eff = 0;
  ConvergenceReport convergence;
  std::string init_method;
  Eigen::VectorXd two_stage_beta;  ///< initializer on the chosen basis (empty if it failed)
  std::vector<CandidateReport> candidates;
};

/// Split, trimming and endpoint estimates shared by every candidate basis.
struct PreparedData {
  double delta = 0.0;
  EndpointEstimate endpoints;
  SubsampleSplit split;
  TrimmedProblem problem;
  std::size_t n_total = 0;
};

inline PreparedData prepare(const Dataset& data, const FitConfig& cfg) {
  if (data.size() < 10) throw InsufficientData("need at least 10 observations");
  PreparedData p;
  p.n_total = data.size();
  p.delta = cfg.delta ? *cfg.delta : default_delta(data);
  p.endpoints = estimate_endpoints(data, p.delta, cfg.endpoint_degree, cfg.presmooth.kernel);
  if (!(p.endpoints.x1 > p.endpoints.x0))
    throw InvalidArgument("estimated end state does not exceed the start state; trajectory not increasing");
  p.split = split_even_odd(data);
  p.problem = make_problem(p.split.fit_data, p.delta, p.endpoints.x0, cfg.h);
  return p;
}

/// Basis for M functions on [x0 - eta_M, x1 + eta_M]. M below the order is invalid.
inline SplineBasis candidate_basis(const PreparedData& prep, int m, int order, double* eta_out = nullptr) {
  const int k = order;
  const auto& e = prep.endpoints;
  const SplineBasis bare = make_basis(e.x0, e.x1, m, k);
  const double eta = margin(m, prep.n_total, bare.smallest_support());
  if (!(eta > 0.0 && eta < bare.spacing()))
    throw InvalidArgument("margin eta_M must lie in (0, knot spacing) for M = " + std::to_string(m));
  if (eta_out) *eta_out = eta;
  return make_basis(e.x0 - eta, e.x1 + eta, m, k);
}

/// Constant-g coefficients: raw B-splines sum to one.
inline Eigen::VectorXd constant_coefficients(const SplineBasis& basis, double level) {
  Eigen::VectorXd beta(basis.size());
  for (int k = 0; k < basis.size(); ++k) beta[k] = level / basis.norm_factors()[k];
  return beta;
}

/// Linearized leave-one-out score sum_j (r_j / (1 - H_jj))^2, H = J (J'J)^-1 J'.
inline double approximate_loo(const Eigen::VectorXd& residuals, const Eigen::MatrixXd& jacobian) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(jacobian);
  const Eigen::Index rank = qr.rank();
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(jacobian.rows(), rank);
  double score = 0.0;
  for (Eigen::Index j = 0; j < residuals.size(); ++j) {
    const double hjj = q.row(j).squaredNorm();
    if (!(hjj < 1.0 - 1e-12)) return std::numeric_limits<double>::infinity();
    const double r = residuals[j] / (1.0 - hjj);
    score += r * r;
  }
  return score;
}

struct InitialGuess {
  Eigen::VectorXd beta;
  std::string method;
  Eigen::VectorXd two_stage_beta;
};

/// Two-stage estimate when it is feasible, otherwise the constant model at
/// the median presmoothed derivative, otherwise the constant secant slope.
inline InitialGuess initial_guess(const PreparedData& prep, const SplineBasis& basis, const FitConfig& cfg) {
  InitialGuess g;
  try {
    g.two_stage_beta = two_stage_fit(prep.split.fit_data, basis, prep.delta, cfg.presmooth).beta;
    if (evaluate(GradientModel(basis, g.two_stage_beta), prep.problem, false).feasible) {
      g.beta = g.two_stage_beta;
      g.method = "two-stage";
      return g;
    }
  } catch (const Error&) {
  }
  double level = (prep.endpoints.x1 - prep.endpoints.x0) / (1.0 - 2.0 * prep.delta);
  try {
    const auto ps = presmooth(prep.split.fit_data, prep.problem.times, cfg.presmooth);
    std::vector<double> d(ps.derivative.data(), ps.derivative.data() + ps.derivative.size());
    if (!d.empty()) {
      std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
      if (d[d.size() / 2] > 0.0) level = d[d.size() / 2];
    }
  } catch (const Error&) {
  }
  g.beta = constant_coefficients(basis, level);
  g.method = "constant";
  if (evaluate(GradientModel(basis, g.beta), prep.problem, false).feasible) return g;
  // Secant slope reaches x1 exactly at 1 - delta.
  g.beta = constant_coefficients(basis, (prep.endpoints.x1 - prep.endpoints.x0) / (1.0 - 2.0 * prep.delta));
  g.method = "secant";
  return g;
}

/// sigma2 = RSS / (n_eff - M); D = sigma2 (J'J)^-1.
inline std::pair<Eigen::MatrixXd, double> coefficient_covariance(const Eigen::VectorXd& residuals,
                                                                 const Eigen::MatrixXd& jacobian) {
  const Eigen::Index n = jacobian.rows(), m = jacobian.cols();
  if (n <= m) throw InsufficientData("covariance: need more trimmed-in observations than coefficients");
  const double sigma2 = residuals.squaredNorm() / static_cast<double>(n - m);
  const Eigen::MatrixXd jtj = jacobian.transpose() * jacobian;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jtj);
  const double lmin = es.eigenvalues().minCoeff(), lmax = es.eigenvalues().maxCoeff();
  if (!(lmin > 1e-14 * lmax)) throw SingularNormalMatrix("covariance: J'J is singular", lmax / std::max(lmin, 0.0));
  const Eigen::MatrixXd inv = es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  Eigen::MatrixXd d = sigma2 * inv;
  return {0.5 * (d + d.transpose()), sigma2};
}

/// Fit every candidate M and keep the one with the smallest approximate
/// leave-one-out score (ties go to the smaller M).
inline FitResult select_M(const Dataset& data, const FitConfig& cfg) {
  if (cfg.candidate_Ms.empty()) throw InvalidArgument("select_M: no candidate M");
  const PreparedData prep = prepare(data, cfg);
  std::vector<CandidateReport> reports;
  std::optional<FitResult> best;
  for (int m : cfg.candidate_Ms) {
    CandidateReport rep;
    rep.M = m;
    try {
      double eta = 0.0;
      SplineBasis basis = candidate_basis(prep, m, cfg.order, &eta);
      rep.order = basis.order();
      rep.margin = eta;
      InitialGuess init = initial_guess(prep, basis, cfg);
      rep.init_method = init.method;
      LmResult lm = lm_fit(init.beta, prep.problem, basis, cfg.lm);
      rep.status = to_string(lm.report.status);
      rep.loss = lm.loss;
      GradientModel model(basis, lm.beta);
      const Evaluation ev = evaluate(model, prep.problem, true);
      rep.cv_score = approximate_loo(ev.residuals, ev.jacobian);
      if (!best || rep.cv_score < best->cv_score) {
        FitResult fr{std::move(model)};
        fr.chosen_M = m;
        fr.loss_value = lm.loss;
        fr.cv_score = rep.cv_score;
        fr.x_hat0 = prep.endpoints.x0;
        fr.x_hat1 = prep.endpoints.x1;
        fr.delta = prep.delta;
        fr.margin = eta;
        fr.h = cfg.h;
        fr.n_eff = prep.problem.n_eff();
        fr.convergence = lm.report;
        fr.init_method = init.method;
        fr.two_stage_beta = init.two_stage_beta;
        try {
          std::tie(fr.covariance, fr.sigma2_hat) = coefficient_covariance(ev.residuals, ev.jacobian);
        } catch (const Error&) {
          fr.sigma2_hat = ev.residuals.squaredNorm() / std::max<double>(1.0, static_cast<double>(fr.n_eff) - m);
          fr.covariance = Eigen::MatrixXd::Constant(m, m, std::numeric_limits<double>::quiet_NaN());
        }
        best = std::move(fr);
      }
    } catch (const Error& e) {
      rep.error = e.what();
    }
    reports.push_back(std::move(rep));
  }
  if (!best) {
    std::string why;
    for (const auto& r : reports) why += " M=" + std::to_string(r.M) + ": " + r.error + ";";
    throw AllCandidatesFailed("select_M: every candidate failed:" + why);
  }
  best->candidates = std::move(reports);
  return std::move(*best);
}

/// Coefficient covariance recomputed from the data at the fitted coefficients.
inline Eigen::MatrixXd covariance(const FitResult& fit, const Dataset& data) {
  const auto split = split_even_odd(data);
  const auto problem = make_problem(split.fit_data, fit.delta, fit.x_hat0, fit.h);
  const Evaluation ev = evaluate(fit.model, problem, true);
  if (!ev.feasible) throw NonPositiveGradient("covariance: fitted coefficients are infeasible for this data");
  return coefficient_covariance(ev.residuals, ev.jacobian).first;
}

/// SE(x) = sqrt(phi(x)' D phi(x)); zero outside the basis domain.
inline Eigen::VectorXd pointwise_se(const FitResult& fit, std::span<const double> x_grid) {
  Eigen::VectorXd se(static_cast<Eigen::Index>(x_grid.size()));
  for (std::size_t i = 0; i < x_grid.size(); ++i) {
    const Eigen::VectorXd phi = eval_basis(fit.model.basis(), x_grid[i], 0);
    se[static_cast<Eigen::Index>(i)] = std::sqrt(std::max(0.0, phi.dot(fit.covariance * phi)));
  }
  return se;
}

struct ConditioningReport {
  double lambda_min = 0.0;
  double lambda_max = 0.0;
  int M = 0;
};

/// Extreme eigenvalues of (1/n) J'J, n counting the observations before trimming.
inline ConditioningReport conditioning_diagnostic(const GradientModel& model, const TrimmedProblem& problem) {
  const Evaluation ev = evaluate(model, problem, true);
  if (!ev.feasible) throw NonPositiveGradient("conditioning_diagnostic: infeasible coefficients");
  const Eigen::MatrixXd g = ev.jacobian.transpose() * ev.jacobian / static_cast<double>(problem.total);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g, Eigen::EigenvaluesOnly);
  return {es.eigenvalues().minCoeff(), es.eigenvalues().maxCoeff(), model.num_params()};
}

inline ConditioningReport conditioning_diagnostic(const FitResult& fit, const Dataset& data) {
  const auto split = split_even_odd(data);
  return conditioning_diagnostic(fit.model, make_problem(split.fit_data, fit.delta, fit.x_hat0, fit.h));
}

/// Two-stage estimate on the basis select_M would build for a fixed M.
struct TwoStageFit {
  GradientModel model;
  double x_hat0 = 0.0;
  double x_hat1 = 0.0;
  double delta = 0.0;
  double margin = 0.0;
  bool jitter_applied = false;
};

inline TwoStageFit two_stage_only(const Dataset& data, const FitConfig& cfg, int m) {
  const PreparedData prep = prepare(data, cfg);
  double eta = 0.0;
  SplineBasis basis = candidate_basis(prep, m, cfg.order, &eta);
  const auto ts = two_stage_fit(prep.split.fit_data, basis, prep.delta, cfg.presmooth);
  return {GradientModel(std::move(basis), ts.beta), prep.endpoints.x0, prep.endpoints.x1, prep.delta, eta,
          ts.jitter_applied};
}

}  // namespace monodyn
