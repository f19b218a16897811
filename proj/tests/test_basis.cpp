#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <random>

#include "monodyn/basis.hpp"
#include "oracles.hpp"

namespace monodyn {
namespace {

TEST(Basis, SingleIntervalCubicOnSimulationDomain) {
  const auto b = make_basis(0.1, 1.1, 4, 4);
  EXPECT_EQ(b.size(), 4);
  EXPECT_DOUBLE_EQ(b.spacing(), 1.0);
  EXPECT_EQ(b.breakpoints().size(), 2u);
  // Raw functions are the cubic Bernstein polynomials on [0.1, 1.1].
  const double u = 0.3;
  const auto raw = b.eval_raw(0.1 + u);
  EXPECT_NEAR(raw[0], std::pow(1 - u, 3), 1e-14);
  EXPECT_NEAR(raw[1], 3 * u * (1 - u) * (1 - u), 1e-14);
  EXPECT_NEAR(raw[2], 3 * u * u * (1 - u), 1e-14);
  EXPECT_NEAR(raw[3], u * u * u, 1e-14);
}

TEST(Basis, KnotSpacingAndSmallestSupport) {
  const auto b = make_basis(0.0, 1.0, 8, 4);
  EXPECT_NEAR(b.spacing(), 0.2, 1e-15);
  for (std::size_t i = 1; i < b.knots().size(); ++i) EXPECT_LE(b.knots()[i - 1], b.knots()[i]);
  // Interior functions span 4 knot intervals; clamped boundary ones fewer.
  EXPECT_NEAR(b.support(3).second - b.support(3).first, 0.8, 1e-14);
  EXPECT_NEAR(b.support(4).second - b.support(4).first, 0.8, 1e-14);
  EXPECT_NEAR(b.support(0).second - b.support(0).first, 0.2, 1e-14);
  EXPECT_NEAR(b.smallest_support(), 0.2, 1e-14);
  // Supports confirmed numerically: phi_k vanishes just outside, not just inside.
  for (int k = 0; k < b.size(); ++k) {
    const auto [a, c] = b.support(k);
    if (a > b.lo()) EXPECT_EQ(eval_basis(b, a - 1e-9, 0)[k], 0.0);
    if (c < b.hi()) EXPECT_EQ(eval_basis(b, c + 1e-9, 0)[k], 0.0);
    EXPECT_GT(eval_basis(b, 0.5 * (a + c), 0)[k], 0.0);
  }
}

TEST(Basis, RejectsInvalidArguments) {
  EXPECT_THROW(make_basis(1.0, 1.0, 5, 4), InvalidArgument);
  EXPECT_THROW(make_basis(1.0, 0.0, 5, 4), InvalidArgument);
  EXPECT_THROW(make_basis(0.0, 1.0, 3, 4), InvalidArgument);
  EXPECT_THROW(make_basis(0.0, 1.0, 5, 2), InvalidArgument);
  const auto b = make_basis(0.0, 1.0, 5, 4);
  EXPECT_THROW(eval_basis(b, 0.5, 3), InvalidArgument);
  EXPECT_THROW(eval_basis(b, 0.5, -1), InvalidArgument);
}

TEST(Basis, ZeroOutsideDomain) {
  const auto b = make_basis(0.0, 1.0, 6, 4);
  for (int d = 0; d <= 2; ++d) {
    EXPECT_TRUE(eval_basis(b, -0.01, d).isZero(0.0));
    EXPECT_TRUE(eval_basis(b, 1.01, d).isZero(0.0));
  }
}

TEST(Basis, MatchesRecursiveCoxDeBoorTimesNormFactors) {
  for (int m : {4, 5, 9}) {
    const auto b = make_basis(0.0, 1.0, m, 4);
    for (double x : {0.0, 0.13, 0.5, 0.77, 1.0}) {
      const auto v = eval_basis(b, x, 0);
      for (int k = 0; k < m; ++k)
        EXPECT_NEAR(v[k], oracle::cox_de_boor(b.knots(), k, 4, x) * b.norm_factors()[k], 1e-12) << m << " " << x;
    }
  }
}

TEST(Basis, UnitNormByIndependentQuadrature) {
  const auto b = make_basis(0.0, 1.0, 4, 4);
  for (int k = 0; k < 4; ++k) {
    const double nf = b.norm_factors()[k];
    const double sq = oracle::simpson(
        [&](double x) {
          const double v = oracle::cox_de_boor(b.knots(), k, 4, x) * nf;
          return v * v;
        },
        0.0, 1.0, 2000);
    EXPECT_NEAR(sq, 1.0, 1e-10);
  }
}

TEST(Basis, FirstDerivativeMatchesFiniteDifference) {
  const auto b = make_basis(0.0, 1.0, 4, 4);
  const auto d1 = eval_basis(b, 0.5, 1);
  for (int k = 0; k < 4; ++k) {
    const double fd = oracle::central_difference([&](double x) { return eval_basis(b, x, 0)[k]; }, 0.5, 1e-6);
    EXPECT_NEAR(d1[k], fd, 1e-5);
  }
}

TEST(BasisProperties, PartitionOfUnityOfRawFunctions) {
  std::mt19937_64 rng(11);
  for (int m = 4; m <= 40; ++m) {
    const auto b = make_basis(-0.3, 2.2, m, 4);
    std::uniform_real_distribution<double> u(b.lo(), b.hi());
    for (int i = 0; i < 50; ++i) EXPECT_NEAR(b.eval_raw(u(rng)).sum(), 1.0, 1e-12);
    EXPECT_NEAR(b.eval_raw(b.lo()).sum(), 1.0, 1e-12);
    EXPECT_NEAR(b.eval_raw(b.hi()).sum(), 1.0, 1e-12);
  }
}

TEST(BasisProperties, UnitNormAndGramBounds) {
  double worst_min = 1e9, worst_max = 0.0;
  for (int m = 4; m <= 40; ++m) {
    const auto b = make_basis(0.0, 1.0, m, 4);
    const Eigen::MatrixXd g = gram_matrix(b);
    EXPECT_LT((g - g.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    for (int k = 0; k < m; ++k) EXPECT_NEAR(g(k, k), 1.0, 1e-8);
    for (int k = 0; k < m; ++k)
      for (int l = 0; l < m; ++l)
        if (std::abs(k - l) >= 4) EXPECT_EQ(g(k, l), 0.0);
    if (m >= 6) {
      const auto [lo, hi] = gram_eigen_bounds(b);
      worst_min = std::min(worst_min, lo);
      worst_max = std::max(worst_max, hi);
    }
  }
  EXPECT_GE(worst_min, 0.01);
  EXPECT_LE(worst_max, 5.0);
}

TEST(BasisProperties, GramEigenvaluesAtSixFunctions) {
  // Independent scipy run: eigenvalues 0.083 ... 2.21 for M = 6, cubic.
  const auto [lo, hi] = gram_eigen_bounds(make_basis(0.0, 1.0, 6, 4));
  EXPECT_GT(lo, 0.05);
  EXPECT_LT(hi, 3.0);
}

TEST(BasisProperties, DerivativeConsistencyAtRandomPoints) {
  std::mt19937_64 rng(5);
  for (int m : {6, 12, 24}) {
    const auto b = make_basis(0.0, 1.0, m, 4);
    std::uniform_real_distribution<double> u(0.01, 0.99);
    for (int i = 0; i < 100; ++i) {
      const double x = u(rng);
      for (int j = 1; j <= 2; ++j) {
        const auto d = eval_basis(b, x, j);
        const double h = 1e-6;
        const Eigen::VectorXd fd = (eval_basis(b, x + h, j - 1) - eval_basis(b, x - h, j - 1)) / (2 * h);
        const double tol = 1e-4 * std::pow(m, j + 0.5);
        EXPECT_LT((d - fd).cwiseAbs().maxCoeff(), tol) << "m=" << m << " x=" << x << " j=" << j;
      }
    }
  }
}

TEST(BasisProperties, SupportLocality) {
  std::mt19937_64 rng(9);
  const auto b = make_basis(0.0, 1.0, 12, 4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const double x = u(rng);
    const auto v = eval_basis(b, x, 0);
    for (int k = 0; k < b.size(); ++k) {
      const auto [a, c] = b.support(k);
      if (x < a || x > c) EXPECT_EQ(v[k], 0.0);
    }
  }
}

TEST(Basis, ConstantOrderOneBasis) {
  const SplineBasis b(0.0, 4.0, 1, 1);
  EXPECT_NEAR(eval_basis(b, 1.3, 0)[0], 0.5, 1e-14);
  EXPECT_EQ(eval_basis(b, 1.3, 1)[0], 0.0);
}

}  // namespace
}  // namespace monodyn
