#pragma once

/// Seeded simulation studies: synthetic monotone trajectories with Gaussian
/// noise, paired one-step vs two-stage comparison, and an empirical
/// convergence-rate sweep.

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_int_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "monodyn/estimator.hpp"
#include "monodyn/quadrature.hpp"

namespace monodyn {

/// Cubic polynomial on [0.1, 1.1] with Bernstein coefficients (0.1, 1.2, 1.6, 0.4).
inline GradientModel default_true_model() {
  Eigen::Vector4d raw(0.1, 1.2, 1.6, 0.4);
  return model_from_raw_coefficients(make_basis(0.1, 1.1, 4, 4), raw);
}

struct SimSpec {
  GradientModel true_model = default_true_model();
  double x0 = 0.25;
  int n_min = 60;
  int n_max = 100;
  double sigma = 0.01;
  int replicates = 100;
  std::uint64_t rng_seed = 1;
  double truth_step = 1e-4;

  void validate() const {
    if (n_min < 1 || n_min > n_max) throw InvalidArgument("SimSpec: need 1 <= n_min <= n_max");
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw InvalidArgument("SimSpec: sigma must be finite and >= 0");
    if (replicates < 0) throw InvalidArgument("SimSpec: replicates must be >= 0");
    if (!true_model.positive()) throw InvalidArgument("SimSpec: true gradient must be positive on its domain");
  }
};

/// Independent engine per (seed, stream); stream order never matters.
inline boost::random::mt19937_64 stream_engine(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x6d6f6e6fu};
  return boost::random::mt19937_64(seq);
}

inline TrajectorySolution true_trajectory(const SimSpec& spec) {
  return solve_trajectory(spec.true_model, 0.0, 1.0, spec.x0, spec.truth_step);
}

inline Dataset generate_dataset(const SimSpec& spec, const TrajectorySolution& truth, std::uint64_t index) {
  auto eng = stream_engine(spec.rng_seed, index);
  const int n = boost::random::uniform_int_distribution<int>(spec.n_min, spec.n_max)(eng);
  boost::random::uniform_real_distribution<double> unif(0.0, 1.0);
  boost::random::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> t(n), y(n);
  for (double& v : t) v = unif(eng);
  std::sort(t.begin(), t.end());
  for (int j = 0; j < n; ++j) y[j] = truth.at(t[j]) + spec.sigma * noise(eng);
  return Dataset::from_unsorted(std::move(t), std::move(y), "sim-" + std::to_string(index));
}

inline Dataset generate_dataset(const SimSpec& spec, std::uint64_t index) {
  spec.validate();
  return generate_dataset(spec, true_trajectory(spec), index);
}

/// Breakpoints of both functions inside [a, b], plus a and b.
inline std::vector<double> merged_pieces(const GradientModel& f, const GradientModel& g, double a, double b) {
  std::vector<double> cuts{a, b};
  for (const auto* m : {&f, &g}) {
    for (double x : m->breakpoints())
      if (x > a && x < b) cuts.push_back(x);
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  return cuts;
}

/// Integrated squared difference over [a, b]; exact for piecewise polynomials
/// up to degree 7 between merged breakpoints.
inline double ise(const GradientModel& est, const GradientModel& truth, double a, double b) {
  if (!(b > a)) return 0.0;
  static const GaussRule rule = gauss_legendre(8);
  const auto cuts = merged_pieces(est, truth, a, b);
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i)
    total += integrate_fixed(rule, cuts[i], cuts[i + 1], [&](double x) {
      const double d = est.value(x) - truth.value(x);
      return d * d;
    });
  return total;
}

struct ReplicateReport {
  std::uint64_t index = 0;
  std::uint64_t seed = 0;
  int n = 0;
  int chosen_M = 0;
  double ise_onestep = std::numeric_limits<double>::quiet_NaN();
  double ise_twostage = std::numeric_limits<double>::quiet_NaN();
  double ise_onestep_true_range = std::numeric_limits<double>::quiet_NaN();
  double ise_twostage_true_range = std::numeric_limits<double>::quiet_NaN();
  double x0_error = std::numeric_limits<double>::quiet_NaN();
  double x1_error = std::numeric_limits<double>::quiet_NaN();
  std::string status;  ///< LM status, or "failed"
  std::string error;
  bool ok = false;
};

struct Quartiles {
  double q1 = std::numeric_limits<double>::quiet_NaN();
  double median = std::numeric_limits<double>::quiet_NaN();
  double q3 = std::numeric_limits<double>::quiet_NaN();
};

/// Linear-interpolation quantiles of the finite entries.
inline Quartiles quartiles(std::vector<double> v) {
  v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return !std::isfinite(x); }), v.end());
  Quartiles q;
  if (v.empty()) return q;
  std::sort(v.begin(), v.end());
  auto at = [&](double p) {
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto i = static_cast<std::size_t>(std::floor(pos));
    const double f = pos - static_cast<double>(i);
    return i + 1 < v.size() ? v[i] * (1 - f) + v[i + 1] * f : v[i];
  };
  q.q1 = at(0.25);
  q.median = at(0.5);
  q.q3 = at(0.75);
  return q;
}

struct StudySummary {
  int replicates = 0;
  int failures = 0;
  Quartiles ise_onestep;
  Quartiles ise_twostage;
  std::map<int, int> m_histogram;
  int onestep_better = 0;  ///< replicates with ise_onestep < ise_twostage
};

struct StudyResult {
  std::vector<ReplicateReport> reports;
  StudySummary summary;
};

/// One simulated replicate: generate, select M, refit-free two-stage on the chosen basis, score both.
inline ReplicateReport run_replicate(const SimSpec& spec, const FitConfig& cfg, const TrajectorySolution& truth,
                                     std::uint64_t index) {
  ReplicateReport r;
  r.index = index;
  r.seed = spec.rng_seed;
  try {
    const Dataset data = generate_dataset(spec, truth, index);
    r.n = static_cast<int>(data.size());
    const FitResult fit = select_M(data, cfg);
    r.chosen_M = fit.chosen_M;
    r.status = to_string(fit.convergence.status);
    const double tx0 = truth.at(fit.delta), tx1 = truth.at(1.0 - fit.delta);
    r.x0_error = fit.x_hat0 - tx0;
    r.x1_error = fit.x_hat1 - tx1;
    r.ise_onestep = ise(fit.model, spec.true_model, fit.x_hat0, fit.x_hat1);
    r.ise_onestep_true_range = ise(fit.model, spec.true_model, tx0, tx1);
    if (fit.two_stage_beta.size() == fit.model.num_params()) {
      const GradientModel ts(fit.model.basis(), fit.two_stage_beta);
      r.ise_twostage = ise(ts, spec.true_model, fit.x_hat0, fit.x_hat1);
      r.ise_twostage_true_range = ise(ts, spec.true_model, tx0, tx1);
    }
    r.ok = true;
  } catch (const Error& e) {
    r.status = "failed";
    r.error = e.what();
  }
  return r;
}

/// Runs fn(i) for i in [0, count) on up to `threads` workers; results land by index.
template <class T, class F>
std::vector<T> parallel_map(std::size_t count, unsigned threads, F&& fn) {
  std::vector<T> out(count);
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(count, 1)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) out[i] = fn(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < threads; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) out[i] = fn(i);
    });
  for (auto& th : pool) th.join();
  return out;
}

inline StudySummary summarize(const std::vector<ReplicateReport>& reports) {
  StudySummary s;
  s.replicates = static_cast<int>(reports.size());
  std::vector<double> one, two;
  for (const auto& r : reports) {
    if (!r.ok) {
      ++s.failures;
      continue;
    }
    ++s.m_histogram[r.chosen_M];
    one.push_back(r.ise_onestep);
    two.push_back(r.ise_twostage);
    if (r.ise_onestep < r.ise_twostage) ++s.onestep_better;
  }
  s.ise_onestep = quartiles(one);
  s.ise_twostage = quartiles(two);
  return s;
}

/// threads = 0 uses every hardware thread.
inline StudyResult run_study(const SimSpec& spec, const FitConfig& cfg, unsigned threads = 0) {
  spec.validate();
  const auto truth = true_trajectory(spec);
  StudyResult res;
  res.reports = parallel_map<ReplicateReport>(static_cast<std::size_t>(spec.replicates), threads,
                                              [&](std::size_t i) { return run_replicate(spec, cfg, truth, i); });
  res.summary = summarize(res.reports);
  return res;
}

struct RatePoint {
  int n = 0;
  int M = 0;
  double mean_ise = std::numeric_limits<double>::quiet_NaN();
  int successes = 0;
  int replicates = 0;
};

struct RateResult {
  double slope = std::numeric_limits<double>::quiet_NaN();
  double slope_se = std::numeric_limits<double>::quiet_NaN();
  std::vector<RatePoint> points;
  std::vector<ReplicateReport> reports;
};

/// M = ceil(c n^{1/(2p+3)}).
inline int rate_rule_M(int n, double c, int p) {
  return static_cast<int>(std::ceil(c * std::pow(static_cast<double>(n), 1.0 / (2.0 * p + 3.0))));
}

struct LineFit {
  double intercept = 0.0;
  double slope = 0.0;
  double slope_se = 0.0;
};

inline LineFit ols_line(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t k = x.size();
  if (k < 3 || y.size() != k) throw InvalidArgument("ols_line: need at least 3 points");
  Eigen::MatrixXd a(static_cast<Eigen::Index>(k), 2);
  Eigen::VectorXd b(static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < k; ++i) {
    a(static_cast<Eigen::Index>(i), 0) = 1.0;
    a(static_cast<Eigen::Index>(i), 1) = x[i];
    b[static_cast<Eigen::Index>(i)] = y[i];
  }
  const Eigen::Vector2d coef = a.colPivHouseholderQr().solve(b);
  const double s2 = (b - a * coef).squaredNorm() / static_cast<double>(k - 2);
  const Eigen::Matrix2d cov = s2 * (a.transpose() * a).inverse();
  return {coef[0], coef[1], std::sqrt(cov(1, 1))};
}

/// Slope of log mean one-step ISE against log n. Replicate streams for the
/// i-th n value are offset by i * 2^32 so that each n sees fresh data.
inline RateResult rate_sweep(const SimSpec& spec, const FitConfig& base_cfg, const std::vector<int>& n_list,
                             double c = 2.0, int p = 3, int replicates_per_n = 30, unsigned threads = 0,
                             std::optional<int> fixed_M = std::nullopt) {
  if (n_list.size() < 4) throw InvalidArgument("rate_sweep: need at least 4 sample sizes");
  for (std::size_t i = 1; i < n_list.size(); ++i)
    if (n_list[i] <= n_list[i - 1]) throw InvalidArgument("rate_sweep: sample sizes must be increasing");
  if (replicates_per_n < 1) throw InvalidArgument("rate_sweep: replicates per n must be >= 1");
  RateResult out;
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < n_list.size(); ++i) {
    SimSpec s = spec;
    s.n_min = s.n_max = n_list[i];
    s.validate();
    FitConfig cfg = base_cfg;
    const int m = fixed_M ? *fixed_M : rate_rule_M(n_list[i], c, p);
    cfg.candidate_Ms = {m};
    const auto truth = true_trajectory(s);
    const std::uint64_t offset = static_cast<std::uint64_t>(i) << 32;
    auto reps = parallel_map<ReplicateReport>(static_cast<std::size_t>(replicates_per_n), threads,
                                              [&](std::size_t r) { return run_replicate(s, cfg, truth, offset + r); });
    RatePoint pt;
    pt.n = n_list[i];
    pt.M = m;
    pt.replicates = replicates_per_n;
    double sum = 0.0;
    for (const auto& r : reps)
      if (r.ok && std::isfinite(r.ise_onestep)) {
        ++pt.successes;
        sum += r.ise_onestep;
      }
    if (pt.successes < 0.7 * replicates_per_n)
      throw AllCandidatesFailed("rate_sweep: fewer than 70% of replicates succeeded at n = " + std::to_string(pt.n));
    pt.mean_ise = sum / pt.successes;
    out.points.push_back(pt);
    lx.push_back(std::log(static_cast<double>(pt.n)));
    ly.push_back(std::log(std::max(pt.mean_ise, std::numeric_limits<double>::min())));
    out.reports.insert(out.reports.end(), reps.begin(), reps.end());
  }
  const auto line = ols_line(lx, ly);
  out.slope = line.slope;
  out.slope_se = line.slope_se;
  return out;
}

}  // namespace monodyn
