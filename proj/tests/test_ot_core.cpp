#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "optout/common.hpp"
#include "optout/ot_core.hpp"

namespace optout::ot {
namespace {

Matrix matrix(std::size_t r, std::size_t c, std::vector<double> values) {
  Matrix m(r, c);
  m.data = std::move(values);
  return m;
}

Matrix abs_pow_cost(const std::vector<double>& xs, const std::vector<double>& ys, double p) {
  Matrix c(xs.size(), ys.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (std::size_t j = 0; j < ys.size(); ++j) {
      c(i, j) = std::pow(std::abs(xs[i] - ys[j]), p);
    }
  }
  return c;
}

void expect_marginals(const TransportPlan& plan, const std::vector<double>& alpha,
                      const std::vector<double>& beta) {
  for (std::size_t i = 0; i < plan.plan.rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < plan.plan.cols; ++j) {
      EXPECT_GE(plan.plan(i, j), 0.0);
      s += plan.plan(i, j);
    }
    EXPECT_NEAR(s, alpha[i], 1e-7);
  }
  for (std::size_t j = 0; j < plan.plan.cols; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < plan.plan.rows; ++i) {
      s += plan.plan(i, j);
    }
    EXPECT_NEAR(s, beta[j], 1e-7);
  }
}

std::vector<double> random_simplex(Rng& rng, std::size_t n) {
  std::vector<double> w(n);
  for (auto& x : w) {
    x = 0.05 + rng.uniform();
  }
  const double s = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& x : w) {
    x /= s;
  }
  return w;
}

TEST(ExactOt, ZeroCostMatchingExists) {
  const std::vector<double> a{0.5, 0.5};
  const auto plan = exact_ot(a, a, matrix(2, 2, {0, 1, 1, 0}));
  EXPECT_DOUBLE_EQ(plan.total_cost, 0.0);
  EXPECT_DOUBLE_EQ(plan.plan(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(plan.plan(1, 1), 0.5);
}

TEST(ExactOt, SinglePoint) {
  const std::vector<double> a{1.0};
  EXPECT_DOUBLE_EQ(exact_ot(a, a, matrix(1, 1, {3.25})).total_cost, 3.25);
}

TEST(ExactOt, TwoByTwoBothVerticesOptimal) {
  // Both vertices of the 2x2 Birkhoff polytope cost 1.5.
  const std::vector<double> a{0.5, 0.5};
  const Matrix c = matrix(2, 2, {0, 2, 1, 3});
  const double diagonal = 0.5 * c(0, 0) + 0.5 * c(1, 1);
  const double anti = 0.5 * c(0, 1) + 0.5 * c(1, 0);
  ASSERT_DOUBLE_EQ(diagonal, 1.5);
  ASSERT_DOUBLE_EQ(anti, 1.5);
  EXPECT_NEAR(exact_ot(a, a, c).total_cost, 1.5, 1e-12);
  EXPECT_NEAR(exact_ot_enumerate(a, a, c).total_cost, 1.5, 1e-12);
}

TEST(ExactOt, InfeasibleMarginalsRejected) {
  const std::vector<double> a{0.5, 0.5};
  const std::vector<double> b{0.5, 0.6};
  EXPECT_THROW(exact_ot(a, b, matrix(2, 2, {0, 1, 1, 0})), Error);
}

TEST(ExactOt, NegativeWeightsRejected) {
  const std::vector<double> a{1.5, -0.5};
  const std::vector<double> b{0.5, 0.5};
  EXPECT_THROW(exact_ot(a, b, matrix(2, 2, {0, 1, 1, 0})), Error);
}

TEST(ExactOt, ShapeMismatchRejected) {
  const std::vector<double> a{0.5, 0.5};
  EXPECT_THROW(exact_ot(a, a, matrix(1, 2, {0, 1})), ShapeError);
}

TEST(ExactOt, SimplexMatchesVertexEnumeration) {
  Rng rng(11);
  for (int trial = 0; trial < 150; ++trial) {
    const std::size_t m = 1 + rng.below(4);
    const std::size_t n = 1 + rng.below(4);
    const auto alpha = random_simplex(rng, m);
    auto beta = random_simplex(rng, n);
    Matrix c(m, n);
    for (auto& x : c.data) {
      x = rng.below(4) == 0 ? 0.0 : std::floor(10.0 * rng.uniform());
    }
    const auto simplex = exact_ot(alpha, beta, c);
    const auto brute = exact_ot_enumerate(alpha, beta, c);
    EXPECT_NEAR(simplex.total_cost, brute.total_cost, 1e-9) << "trial " << trial;
    expect_marginals(simplex, alpha, beta);
  }
}

TEST(ExactOt, DegenerateUniformMarginalsLargerProblem) {
  // Uniform 8x8 with integer costs: many degenerate pivots.
  Rng rng(5);
  const std::vector<double> a(8, 1.0 / 8.0);
  Matrix c(8, 8);
  for (auto& x : c.data) {
    x = static_cast<double>(rng.below(5));
  }
  const auto plan = exact_ot(a, a, c);
  expect_marginals(plan, a, a);
  // The assignment LP has an integral optimum; brute force over permutations.
  std::vector<std::size_t> perm(8);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  double best = 1e300;
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < 8; ++i) {
      s += c(i, perm[i]) / 8.0;
    }
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  EXPECT_NEAR(plan.total_cost, best, 1e-9);
}

TEST(Wasserstein1d, IdenticalIsZero) {
  const std::vector<double> xs{0.3, -1.0, 2.0};
  EXPECT_DOUBLE_EQ(wasserstein_1d(xs, xs, 2.0), 0.0);
}

TEST(Wasserstein1d, TranslationByOne) {
  EXPECT_DOUBLE_EQ(wasserstein_1d(std::vector<double>{0, 1}, std::vector<double>{1, 2}, 1.0), 1.0);
}

TEST(Wasserstein1d, OracleOnCrossedPairs) {
  const std::vector<double> xs{0, 2};
  const std::vector<double> ys{1, 1};
  const std::vector<double> w{0.5, 0.5};
  const double oracle = std::pow(exact_ot(w, w, abs_pow_cost(xs, ys, 2.0)).total_cost, 0.5);
  EXPECT_NEAR(oracle, 1.0, 1e-12);
  EXPECT_NEAR(wasserstein_1d(xs, ys, 2.0), 1.0, 1e-12);
}

TEST(Wasserstein1d, Errors) {
  EXPECT_THROW(wasserstein_1d(std::vector<double>{}, std::vector<double>{}, 1.0), Error);
  EXPECT_THROW(wasserstein_1d(std::vector<double>{1}, std::vector<double>{1, 2}, 1.0), Error);
}

TEST(Wasserstein1d, MatchesExactOtOnSmallClouds) {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(6);
    const double p = 1.0 + 2.0 * rng.uniform();
    std::vector<double> xs(n);
    std::vector<double> ys(n);
    for (std::size_t i = 0; i < n; ++i) {
      xs[i] = 4.0 * rng.uniform() - 2.0;
      ys[i] = 4.0 * rng.uniform() - 2.0;
    }
    const std::vector<double> w(n, 1.0 / static_cast<double>(n));
    const double oracle = exact_ot(w, w, abs_pow_cost(xs, ys, p)).total_cost;
    EXPECT_NEAR(std::pow(wasserstein_1d(xs, ys, p), p), oracle, 1e-9);
  }
}

TEST(Wasserstein1d, MetricAxioms) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(6);
    std::vector<double> xs(n), ys(n);
    for (std::size_t i = 0; i < n; ++i) {
      xs[i] = rng.normal();
      ys[i] = rng.normal();
    }
    const double d = wasserstein_1d(xs, ys, 2.0);
    EXPECT_GE(d, 0.0);
    EXPECT_DOUBLE_EQ(d, wasserstein_1d(ys, xs, 2.0));
  }
}

TEST(SlicedWasserstein, IdenticalCloudsAreZero) {
  Rng rng(1);
  Matrix a(5, 3);
  for (auto& x : a.data) {
    x = rng.normal();
  }
  for (std::uint64_t seed : {0ULL, 1ULL, 99ULL}) {
    SWDConfig cfg;
    cfg.seed = seed;
    EXPECT_DOUBLE_EQ(sliced_wasserstein(a, a, cfg), 0.0);
  }
}

TEST(SlicedWasserstein, OneDimensionReducesToClosedForm) {
  const Matrix a = matrix(4, 1, {0.1, 2.0, -1.0, 0.5});
  const Matrix b = matrix(4, 1, {1.0, 1.5, 0.0, -0.3});
  for (double p : {1.0, 2.0, 3.0}) {
    SWDConfig cfg;
    cfg.p = p;
    cfg.num_projections = 7;
    EXPECT_NEAR(sliced_wasserstein(a, b, cfg), wasserstein_1d(a.data, b.data, p), 1e-12);
  }
}

TEST(SlicedWasserstein, TranslationMatchesSphereAverage) {
  // E[(u.t)^2] = |t|^2 / d for u uniform on the sphere, so SW_2 = |t| / sqrt(d).
  Rng rng(8);
  Matrix a(6, 4);
  for (auto& x : a.data) {
    x = rng.normal();
  }
  Matrix b = a;
  const std::vector<double> t{1.0, -1.0, 1.0, 1.0};  // |t| = 2
  for (std::size_t i = 0; i < b.rows; ++i) {
    for (std::size_t k = 0; k < 4; ++k) {
      b(i, k) += t[k];
    }
  }
  SWDConfig cfg;
  cfg.p = 2.0;
  cfg.num_projections = 100000;
  cfg.seed = 17;
  EXPECT_NEAR(sliced_wasserstein(a, b, cfg), 1.0, 0.01);
}

TEST(SlicedWasserstein, Errors) {
  SWDConfig cfg;
  EXPECT_THROW(sliced_wasserstein(Matrix(3, 0), Matrix(3, 0), cfg), Error);
  EXPECT_THROW(sliced_wasserstein(Matrix(3, 2), Matrix(2, 2), cfg), ShapeError);
  cfg.p = 0.5;
  EXPECT_THROW(sliced_wasserstein(Matrix(3, 2), Matrix(3, 2), cfg), ConfigError);
}

TEST(SlicedWasserstein, SymmetricAndNonNegative) {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix a(5, 3), b(5, 3);
    for (auto& x : a.data) x = rng.normal();
    for (auto& x : b.data) x = rng.normal();
    SWDConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(trial);
    const double ab = sliced_wasserstein(a, b, cfg);
    EXPECT_GE(ab, 0.0);
    EXPECT_NEAR(ab, sliced_wasserstein(b, a, cfg), 1e-12);
  }
}

TEST(SlicedWasserstein, StandardErrorHalvesWhenProjectionsQuadruple) {
  Rng rng(21);
  Matrix a(8, 5), b(8, 5);
  for (auto& x : a.data) x = rng.normal();
  for (auto& x : b.data) x = 0.5 * rng.normal() + 0.3;
  auto spread = [&](std::size_t projections) {
    std::vector<double> values;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      SWDConfig cfg;
      cfg.num_projections = projections;
      cfg.seed = 1000 + seed;
      values.push_back(sliced_wasserstein(a, b, cfg));
    }
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / 20.0;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return std::sqrt(ss / 19.0);
  };
  const double ratio = spread(64) / spread(256);
  EXPECT_GT(ratio, 2.0 * 0.7);
  EXPECT_LT(ratio, 2.0 * 1.3);
}

ParamSet single(const std::string& name, Matrix m) {
  ParamSet p;
  p.add(name, m.rows, m.cols) = std::move(m);
  return p;
}

TEST(ParamSwd, EqualSnapshotsGiveZeroAndZeroGradient) {
  ParamSet p = single("w", matrix(3, 2, {1, 2, 3, 4, 5, 6}));
  const auto r = param_swd(p, p, SWDConfig{});
  EXPECT_DOUBLE_EQ(r.value, 0.0);
  for (double g : r.gradient[0].value.data) {
    EXPECT_DOUBLE_EQ(g, 0.0);
  }
}

TEST(ParamSwd, ScalarMatrixIsAbsoluteDifference) {
  SWDConfig cfg;
  cfg.p = 1.0;
  const auto r = param_swd(single("w", matrix(1, 1, {0.75})), single("w", matrix(1, 1, {-0.5})), cfg);
  EXPECT_NEAR(r.value, 1.25, 1e-12);
  EXPECT_NEAR(r.gradient[0].value.data[0], 1.0, 1e-12);
}

TEST(ParamSwd, TranslatedRowsInTwoDimensions) {
  Matrix init = matrix(4, 2, {0.1, 0.2, -0.4, 1.0, 0.7, -0.3, 0.0, 0.5});
  Matrix cur = init;
  for (std::size_t i = 0; i < 4; ++i) {
    cur(i, 0) += 0.6;
    cur(i, 1) += 0.8;  // |t| = 1
  }
  SWDConfig cfg;
  cfg.num_projections = 20000;
  cfg.seed = 5;
  const auto r = param_swd(single("w", cur), single("w", init), cfg, false);
  EXPECT_NEAR(r.value, 1.0 / std::sqrt(2.0), 0.01);
}

TEST(ParamSwd, ShapeMismatchRejected) {
  EXPECT_THROW(param_swd(single("w", Matrix(2, 2)), single("w", Matrix(2, 3)), SWDConfig{}),
               ShapeError);
  EXPECT_THROW(param_swd(single("w", Matrix(2, 2)), single("v", Matrix(2, 2)), SWDConfig{}),
               ShapeError);
}

TEST(ParamSwd, SubgradientMatchesFiniteDifferences) {
  Rng rng(31);
  ParamSet theta0;
  theta0.add("a", 5, 3);
  theta0.add("b", 4, 6);
  for (auto& e : theta0) {
    for (auto& x : e.value.data) x = rng.normal();
  }
  ParamSet theta = theta0;
  for (auto& e : theta) {
    for (auto& x : e.value.data) x += 0.3 * rng.normal();
  }
  for (auto axis : {CloudAxis::rows, CloudAxis::columns}) {
    for (double p : {1.0, 2.0, 3.0}) {
      SWDConfig cfg;
      cfg.p = p;
      cfg.num_projections = 16;
      cfg.seed = 9;
      cfg.axis = axis;
      const auto r = param_swd(theta, theta0, cfg);
      const double h = 1e-6;
      for (std::size_t k = 0; k < theta.size(); ++k) {
        for (std::size_t i = 0; i < theta[k].value.size(); ++i) {
          ParamSet up = theta;
          ParamSet down = theta;
          up[k].value.data[i] += h;
          down[k].value.data[i] -= h;
          const double fd = (param_swd(up, theta0, cfg, false).value -
                             param_swd(down, theta0, cfg, false).value) /
                            (2 * h);
          const double an = r.gradient[k].value.data[i];
          EXPECT_LT(std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6}), 1e-3)
              << "param " << k << " index " << i << " p " << p;
        }
      }
    }
  }
}

TEST(ParamSwd, SumAggregationScalesByMatrixCount) {
  Rng rng(3);
  ParamSet theta0;
  theta0.add("a", 3, 2);
  theta0.add("b", 3, 2);
  for (auto& e : theta0) {
    for (auto& x : e.value.data) x = rng.normal();
  }
  ParamSet theta = theta0;
  theta[0].value.data[0] += 1.0;
  theta[1].value.data[3] -= 0.5;
  SWDConfig mean_cfg;
  SWDConfig sum_cfg;
  sum_cfg.aggregation = Aggregation::sum;
  EXPECT_NEAR(param_swd(theta, theta0, sum_cfg, false).value,
              2.0 * param_swd(theta, theta0, mean_cfg, false).value, 1e-12);
}

TEST(BaselineDistance, ZeroOnIdentical) {
  ParamSet p = single("w", matrix(1, 3, {1, -2, 3}));
  for (auto m : {DistanceMetric::manhattan, DistanceMetric::euclidean, DistanceMetric::chebyshev,
                 DistanceMetric::cosine}) {
    EXPECT_NEAR(baseline_distance(p, p, m), 0.0, 1e-15) << to_string(m);
  }
}

TEST(BaselineDistance, ThreeFourFive) {
  ParamSet a = single("w", matrix(1, 2, {0, 0}));
  ParamSet b = single("w", matrix(1, 2, {3, 4}));
  EXPECT_DOUBLE_EQ(baseline_distance(a, b, DistanceMetric::manhattan), 7.0);
  EXPECT_DOUBLE_EQ(baseline_distance(a, b, DistanceMetric::euclidean), 5.0);
  EXPECT_DOUBLE_EQ(baseline_distance(a, b, DistanceMetric::chebyshev), 4.0);
}

TEST(BaselineDistance, OrthogonalCosine) {
  ParamSet a = single("w", matrix(1, 2, {1, 0}));
  ParamSet b = single("w", matrix(1, 2, {0, 1}));
  EXPECT_DOUBLE_EQ(baseline_distance(a, b, DistanceMetric::cosine), 1.0);
}

TEST(BaselineDistance, CosineZeroNormRejected) {
  ParamSet a = single("w", matrix(1, 2, {0, 0}));
  ParamSet b = single("w", matrix(1, 2, {0, 1}));
  EXPECT_THROW(baseline_distance(a, b, DistanceMetric::cosine), Error);
}

TEST(BaselineDistance, GradientsMatchFiniteDifferences) {
  Rng rng(77);
  ParamSet theta0;
  theta0.add("a", 2, 3);
  theta0.add("b", 1, 4);
  for (auto& e : theta0) {
    for (auto& x : e.value.data) x = rng.normal();
  }
  ParamSet theta = theta0;
  for (auto& e : theta) {
    for (auto& x : e.value.data) x += 0.5 * rng.normal();
  }
  for (auto m : {DistanceMetric::manhattan, DistanceMetric::euclidean, DistanceMetric::chebyshev,
                 DistanceMetric::cosine}) {
    const auto r = baseline_distance_with_gradient(theta, theta0, m);
    for (std::size_t k = 0; k < theta.size(); ++k) {
      for (std::size_t i = 0; i < theta[k].value.size(); ++i) {
        const double h = 1e-6;
        ParamSet up = theta;
        ParamSet down = theta;
        up[k].value.data[i] += h;
        down[k].value.data[i] -= h;
        const double fd =
            (baseline_distance(up, theta0, m) - baseline_distance(down, theta0, m)) / (2 * h);
        EXPECT_NEAR(r.gradient[k].value.data[i], fd, 1e-6) << to_string(m);
      }
    }
  }
}

TEST(BaselineDistance, ParseNames) {
  EXPECT_EQ(parse_distance_metric("chebyshev"), DistanceMetric::chebyshev);
  EXPECT_THROW(parse_distance_metric("hamming"), ConfigError);
}

}  // namespace
}  // namespace optout::ot
