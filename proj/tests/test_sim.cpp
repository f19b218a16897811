#include <gtest/gtest.h>

#include "monodyn/sim.hpp"
#include "oracles.hpp"

namespace monodyn {
namespace {

TEST(TrueModel, PositiveAndStartsAtQuarter) {
  const SimSpec spec;
  EXPECT_TRUE(spec.true_model.positive());
  EXPECT_NEAR(spec.true_model.value(0.1), 0.1, 1e-14);
  EXPECT_NEAR(spec.true_model.value(1.1), 0.4, 1e-14);
  const auto truth = true_trajectory(spec);
  EXPECT_EQ(truth.x_start, 0.25);
}

TEST(Generate, SameSeedAndIndexGiveIdenticalData) {
  SimSpec spec;
  spec.rng_seed = 42;
  const auto a = generate_dataset(spec, 3), b = generate_dataset(spec, 3), c = generate_dataset(spec, 4);
  EXPECT_EQ(a.times, b.times);
  EXPECT_EQ(a.values, b.values);
  EXPECT_NE(a.times, c.times);
  spec.rng_seed = 43;
  EXPECT_NE(generate_dataset(spec, 3).times, a.times);
}

TEST(Generate, NoiselessValuesFollowTheTrajectory) {
  SimSpec spec;
  spec.sigma = 0.0;
  const auto d = generate_dataset(spec, 0);
  for (std::size_t j = 0; j < d.size(); j += 7) {
    const double ref = oracle::rk4_endpoint([&](double x) { return spec.true_model.value(x); }, 0.25, 0.0,
                                            d.times[j], 20000);
    EXPECT_NEAR(d.values[j], ref, 1e-9);
  }
}

TEST(Generate, DefaultSpecStaysInStateEnvelope) {
  const SimSpec spec;
  for (std::uint64_t i = 0; i < 10; ++i) {
    const auto d = generate_dataset(spec, i);
    EXPECT_GE(d.size(), 60u);
    EXPECT_LE(d.size(), 100u);
    EXPECT_TRUE(std::is_sorted(d.times.begin(), d.times.end()));
    for (double y : d.values) {
      EXPECT_GT(y, 0.2);
      EXPECT_LT(y, 1.2);
    }
  }
}

TEST(Generate, SampleSizesCoverTheRange) {
  SimSpec spec;
  spec.n_min = 3;
  spec.n_max = 5;
  spec.sigma = 0.0;
  std::map<std::size_t, int> seen;
  for (std::uint64_t i = 0; i < 60; ++i) ++seen[generate_dataset(spec, i).size()];
  EXPECT_EQ(seen.size(), 3u);
  spec.n_min = 6;
  EXPECT_THROW(generate_dataset(spec, 0), InvalidArgument);
}

TEST(SimProperties, IseQuadratureMatchesFineTrapezoid) {
  const SimSpec spec;
  const auto other = model_from_raw_coefficients(make_basis(0.2, 1.2, 7, 4),
                                                  (Eigen::VectorXd(7) << 0.2, 0.5, 1.1, 1.4, 1.3, 0.9, 0.5).finished());
  for (auto [a, b] : {std::pair{0.28, 1.08}, std::pair{0.25, 1.15}, std::pair{0.5, 0.51}}) {
    const double gl = ise(other, spec.true_model, a, b);
    const double tr = oracle::trapezoid(
        [&](double x) {
          const double d = other.value(x) - spec.true_model.value(x);
          return d * d;
        },
        a, b, 10000);
    EXPECT_NEAR(gl, tr, 1e-6 * tr);
  }
}

TEST(SimProperties, StudyIsIndependentOfThreadCount) {
  SimSpec spec;
  spec.replicates = 6;
  spec.rng_seed = 7;
  const auto a = run_study(spec, FitConfig{}, 1), b = run_study(spec, FitConfig{}, 3);
  ASSERT_EQ(a.reports.size(), b.reports.size());
  for (std::size_t i = 0; i < a.reports.size(); ++i) {
    EXPECT_EQ(a.reports[i].n, b.reports[i].n);
    EXPECT_EQ(a.reports[i].chosen_M, b.reports[i].chosen_M);
    EXPECT_EQ(a.reports[i].ise_onestep, b.reports[i].ise_onestep);
    EXPECT_EQ(a.reports[i].ise_twostage, b.reports[i].ise_twostage);
  }
  EXPECT_EQ(a.summary.ise_onestep.median, b.summary.ise_onestep.median);
}

TEST(SimProperties, PairedEstimatorsShareDataAndBasis) {
  SimSpec spec;
  const auto truth = true_trajectory(spec);
  const auto d = generate_dataset(spec, truth, 2);
  const auto fit = select_M(d, FitConfig{});
  const auto r = run_replicate(spec, FitConfig{}, truth, 2);
  EXPECT_EQ(r.n, static_cast<int>(d.size()));
  EXPECT_EQ(r.chosen_M, fit.chosen_M);
  EXPECT_EQ(r.ise_twostage, ise(GradientModel(fit.model.basis(), fit.two_stage_beta), spec.true_model, fit.x_hat0, fit.x_hat1));
}

TEST(Study, SummaryCountsFailuresAndHistogram) {
  std::vector<ReplicateReport> reps(4);
  for (int i = 0; i < 4; ++i) {
    reps[i].ok = i != 2;
    reps[i].chosen_M = i == 0 ? 4 : 5;
    reps[i].ise_onestep = 1.0 + i;
    reps[i].ise_twostage = 2.5;
  }
  const auto s = summarize(reps);
  EXPECT_EQ(s.failures, 1);
  EXPECT_EQ(s.m_histogram.at(4), 1);
  EXPECT_EQ(s.m_histogram.at(5), 2);
  EXPECT_EQ(s.onestep_better, 2);
  EXPECT_DOUBLE_EQ(s.ise_onestep.median, 2.0);
  EXPECT_DOUBLE_EQ(s.ise_onestep.q1, 1.5);
  EXPECT_DOUBLE_EQ(s.ise_onestep.q3, 3.0);
}

TEST(Study, NoiselessSingleReplicateRecoversGradient) {
  SimSpec spec;
  spec.sigma = 0.0;
  spec.n_min = spec.n_max = 100;
  spec.replicates = 1;
  const auto res = run_study(spec, FitConfig{});
  ASSERT_TRUE(res.reports[0].ok);
  EXPECT_LT(res.reports[0].ise_onestep, 1e-6);
}

TEST(RateSweep, PreconditionsOnSampleSizes) {
  const SimSpec spec;
  EXPECT_THROW(rate_sweep(spec, FitConfig{}, {200}), InvalidArgument);
  EXPECT_THROW(rate_sweep(spec, FitConfig{}, {200, 400, 300, 800}), InvalidArgument);
  EXPECT_EQ(rate_rule_M(200, 2.0, 3), 4);
  EXPECT_EQ(rate_rule_M(3200, 2.0, 3), 5);
}

TEST(RateSweep, OlsLineIsExactOnCollinearPoints) {
  const auto l = ols_line({0, 1, 2, 3}, {1, -1, -3, -5});
  EXPECT_NEAR(l.slope, -2.0, 1e-14);
  EXPECT_NEAR(l.intercept, 1.0, 1e-14);
  EXPECT_NEAR(l.slope_se, 0.0, 1e-12);
}

TEST(RateSweep, NoiselessFixedMHasFlatSlope) {
  SimSpec spec;
  spec.sigma = 0.0;
  const auto r = rate_sweep(spec, FitConfig{}, {200, 400, 800, 1600, 3200}, 2.0, 3, 5, 0, 5);
  EXPECT_NEAR(r.slope, 0.0, 0.1) << "slope " << r.slope << " +- " << r.slope_se;
}

}  // namespace
}  // namespace monodyn
