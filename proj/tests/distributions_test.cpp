#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <cmath>
#include <functional>
#include <numbers>
#include <random>

#include "dmp/distributions.hpp"

namespace dmp {
namespace {

// Polya-urn route to the DM pmf: multinomial coefficient times rising
// factorial products. Shares no code with the log-gamma implementation.
double polya_urn_pmf(const std::vector<std::int64_t>& y, const std::vector<double>& alpha) {
  std::int64_t n = 0;
  double phi = 0.0;
  for (std::size_t c = 0; c < y.size(); ++c) {
    n += y[c];
    phi += alpha[c];
  }
  double p = 1.0;
  for (std::int64_t k = 1; k <= n; ++k) p *= static_cast<double>(k);
  for (std::size_t c = 0; c < y.size(); ++c)
    for (std::int64_t k = 1; k <= y[c]; ++k) p /= static_cast<double>(k);
  for (std::size_t c = 0; c < y.size(); ++c)
    for (std::int64_t k = 0; k < y[c]; ++k) p *= alpha[c] + static_cast<double>(k);
  for (std::int64_t k = 0; k < n; ++k) p /= phi + static_cast<double>(k);
  return p;
}

// Every composition of n into C nonnegative parts.
void compositions(std::int64_t n, std::size_t C, std::vector<std::int64_t>& cur,
                  const std::function<void(const std::vector<std::int64_t>&)>& f) {
  if (cur.size() + 1 == C) {
    cur.push_back(n);
    f(cur);
    cur.pop_back();
    return;
  }
  for (std::int64_t k = 0; k <= n; ++k) {
    cur.push_back(k);
    compositions(n - k, C, cur, f);
    cur.pop_back();
  }
}

DMParams random_params(std::mt19937_64& rng, std::size_t C) {
  std::uniform_real_distribution<double> u(0.05, 3.0);
  std::vector<double> eta(C);
  for (auto& e : eta) e = std::normal_distribution<double>(0.0, 1.0)(rng);
  return {std::exp(std::log(0.1) + u(rng) * 2.5), softmax(eta)};
}

TEST(LogGamma, KnownValues) {
  EXPECT_NEAR(log_gamma(1.0), 0.0, 1e-14);
  EXPECT_NEAR(log_gamma(2.0), 0.0, 1e-14);
  EXPECT_NEAR(log_gamma(0.5), 0.5 * std::log(std::numbers::pi), 1e-14);
  EXPECT_THROW(log_gamma(0.0), Error);
  EXPECT_THROW(log_gamma(-1.0), Error);
}

TEST(LogGamma, MatchesReferenceAcrossRange) {
  for (double x = 1e-3; x < 1e8; x *= 1.37) {
    const double ref = boost::math::lgamma(x);
    // Absolute 1e-12 where the magnitude allows it, relative 1e-14 beyond.
    const double tol = std::max(1e-12, 1e-14 * std::abs(ref));
    EXPECT_NEAR(log_gamma(x), ref, tol) << "x=" << x;
  }
}

TEST(Digamma, KnownValuesAndReference) {
  EXPECT_NEAR(digamma(1.0), -0.57721566490153286061, 1e-14);
  EXPECT_NEAR(digamma(0.5), -0.57721566490153286061 - 2.0 * std::numbers::ln2, 1e-13);
  for (double x = 1e-3; x < 1e8; x *= 1.41) {
    const double ref = boost::math::digamma(x);
    EXPECT_NEAR(digamma(x), ref, std::max(1e-12, 1e-14 * std::abs(ref))) << "x=" << x;
  }
  EXPECT_THROW(digamma(0.0), Error);
}

TEST(PoissonLogPmf, Values) {
  EXPECT_DOUBLE_EQ(poisson_log_pmf(0, 1.0), -1.0);
  EXPECT_DOUBLE_EQ(poisson_log_pmf(1, 1.0), -1.0);
  EXPECT_NEAR(poisson_log_pmf(3, 2.5), -1.54288727360558980526, 1e-14);
  EXPECT_THROW(poisson_log_pmf(1, 0.0), Error);
}

TEST(DirichletMultinomial, EmptyCellHasProbabilityOne) {
  const std::vector<std::int64_t> y{0, 0, 0};
  EXPECT_EQ(dirichlet_multinomial_log_pmf(y, {2.0, {0.2, 0.3, 0.5}}), 0.0);
}

TEST(DirichletMultinomial, UniformOverThreeOutcomes) {
  const std::vector<std::int64_t> y{1, 1};
  EXPECT_NEAR(dirichlet_multinomial_log_pmf(y, {2.0, {0.5, 0.5}}), std::log(1.0 / 3.0), 1e-14);
}

TEST(DirichletMultinomial, EnumerationOracleCase) {
  // alpha = (1,1,1), n = 2: six compositions; value checked against the urn route.
  const std::vector<std::int64_t> y{2, 0, 0};
  const double third = 1.0 / 3.0;
  const DMParams p{3.0, {third, third, 1.0 - 2.0 * third}};
  const double lp = dirichlet_multinomial_log_pmf(y, p);
  EXPECT_NEAR(std::exp(lp), polya_urn_pmf(y, {1.0, 1.0, 1.0}), 1e-14);
  EXPECT_NEAR(std::exp(lp), 1.0 / 6.0, 1e-14);
  double total = 0.0;
  std::vector<std::int64_t> cur;
  compositions(2, 3, cur, [&](const auto& c) { total += std::exp(dirichlet_multinomial_log_pmf(c, p)); });
  EXPECT_NEAR(total, 1.0, 1e-14);
}

TEST(DirichletMultinomial, NormalizesOverAllCompositions) {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 50; ++rep) {
    for (std::size_t C = 2; C <= 3; ++C) {
      const auto p = random_params(rng, C);
      std::vector<double> alpha(C);
      for (std::size_t c = 0; c < C; ++c) alpha[c] = p.phi * p.gamma[c];
      for (std::int64_t n = 0; n <= 6; ++n) {
        double total = 0.0;
        std::vector<std::int64_t> cur;
        compositions(n, C, cur, [&](const auto& y) {
          const double v = std::exp(dirichlet_multinomial_log_pmf(y, p));
          EXPECT_NEAR(v, polya_urn_pmf(y, alpha), 1e-12 * std::max(1.0, v));
          total += v;
        });
        EXPECT_NEAR(total, 1.0, 1e-10);
      }
    }
  }
}

TEST(DirichletMultinomial, ConvergesToMultinomial) {
  const std::vector<double> gamma{0.2, 0.5, 0.3};
  for (const std::vector<std::int64_t>& y : {std::vector<std::int64_t>{1, 2, 0},
                                            std::vector<std::int64_t>{3, 3, 4},
                                            std::vector<std::int64_t>{0, 6, 1}}) {
    EXPECT_NEAR(dirichlet_multinomial_log_pmf(y, {1e8, gamma}), multinomial_log_pmf(y, gamma), 1e-4);
  }
}

TEST(DirichletMultinomial, RejectsInvalidParams) {
  const std::vector<std::int64_t> y{1, 1};
  EXPECT_THROW(dirichlet_multinomial_log_pmf(y, {0.0, {0.5, 0.5}}), Error);
  EXPECT_THROW(dirichlet_multinomial_log_pmf(y, {1.0, {0.6, 0.5}}), Error);
  EXPECT_THROW(dirichlet_multinomial_log_pmf(y, {1.0, {1.0, 0.0}}), Error);
}

TEST(DirichletMultinomialSample, Support) {
  Rng rng(3);
  const DMParams p{2.0, {0.3, 0.7}};
  EXPECT_EQ(dirichlet_multinomial_sample(0, p, rng), (std::vector<std::int64_t>{0, 0}));
  for (int i = 0; i < 100; ++i) {
    const auto y = dirichlet_multinomial_sample(1, p, rng);
    EXPECT_EQ(y[0] + y[1], 1);
  }
}

TEST(DirichletMultinomialSample, ChiSquareAgainstPmf) {
  Rng rng(20240601);
  const DMParams p{2.0, {0.5, 0.5}};
  const int draws = 100000;
  const std::int64_t n = 50;
  std::vector<double> counts(n + 1, 0.0);
  for (int i = 0; i < draws; ++i) {
    const auto y = dirichlet_multinomial_sample(n, p, rng);
    ASSERT_EQ(y[0] + y[1], n);
    counts[static_cast<std::size_t>(y[0])] += 1.0;
  }
  double chi2 = 0.0;
  for (std::int64_t k = 0; k <= n; ++k) {
    const std::vector<std::int64_t> y{k, n - k};
    const double expected = draws * std::exp(dirichlet_multinomial_log_pmf(y, p));
    chi2 += std::pow(counts[static_cast<std::size_t>(k)] - expected, 2) / expected;
  }
  const boost::math::chi_squared dist(static_cast<double>(n));
  EXPECT_LT(chi2, boost::math::quantile(dist, 0.99));
}

TEST(DirichletMultinomialSample, OverdispersedRelativeToMultinomial) {
  Rng rng(5);
  const DMParams p{20.0, {0.2, 0.3, 0.5}};
  const std::int64_t n = 40;
  const int draws = 100000;
  std::vector<double> sum(3, 0.0), sumsq(3, 0.0);
  for (int i = 0; i < draws; ++i) {
    const auto y = dirichlet_multinomial_sample(n, p, rng);
    for (std::size_t c = 0; c < 3; ++c) {
      sum[c] += static_cast<double>(y[c]);
      sumsq[c] += static_cast<double>(y[c] * y[c]);
    }
  }
  for (std::size_t c = 0; c < 3; ++c) {
    const double mean = sum[c] / draws;
    const double var = sumsq[c] / draws - mean * mean;
    const double multinomial_var = n * p.gamma[c] * (1.0 - p.gamma[c]);
    EXPECT_GE(var, multinomial_var * 0.98);  // one-sided
    // The DM variance is multinomial_var * (n + phi) / (1 + phi).
    EXPECT_NEAR(var, multinomial_var * (n + p.phi) / (1.0 + p.phi), 0.05 * var);
  }
}

TEST(Softmax, Cases) {
  const std::vector<double> zero{0.0, 0.0, 0.0};
  for (double g : softmax(zero)) EXPECT_NEAR(g, 1.0 / 3.0, 1e-15);
  const std::vector<double> eta{std::log(1.0), std::log(2.0), std::log(7.0)};
  const auto g = softmax(eta);
  EXPECT_NEAR(g[0], 0.1, 1e-15);
  EXPECT_NEAR(g[1], 0.2, 1e-15);
  EXPECT_NEAR(g[2], 0.7, 1e-15);
}

TEST(Softmax, ShiftInvariance) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> z(0.0, 3.0);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> x(5), y(5);
    const double k = z(rng) * 10.0;
    for (std::size_t i = 0; i < 5; ++i) {
      x[i] = z(rng);
      y[i] = x[i] + k;
    }
    const auto gx = softmax(x), gy = softmax(y);
    double s = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_NEAR(gx[i], gy[i], 1e-12);
      s += gx[i];
    }
    EXPECT_NEAR(s, 1.0, 1e-14);
    EXPECT_EQ(std::max_element(gx.begin(), gx.end()) - gx.begin(),
              std::max_element(gy.begin(), gy.end()) - gy.begin());
  }
}

// Unconstrained DM log pmf in (phi, gamma) for finite differencing; gamma is
// not renormalized so partials are taken along each coordinate.
double dm_raw(const std::vector<std::int64_t>& y, double phi, const std::vector<double>& gamma) {
  std::int64_t n = 0;
  double s = 0.0;
  for (std::size_t c = 0; c < y.size(); ++c) {
    n += y[c];
    s += std::lgamma(y[c] + phi * gamma[c]) - std::lgamma(phi * gamma[c]) - std::lgamma(y[c] + 1.0);
  }
  return s + std::lgamma(phi) + std::lgamma(n + 1.0) - std::lgamma(n + phi);
}

TEST(GradDm, ZeroCountsGiveZeroGradient) {
  const std::vector<std::int64_t> y{0, 0, 0};
  const auto g = grad_dm_log_pmf(y, {3.0, {0.2, 0.3, 0.5}});
  EXPECT_EQ(g.d_phi, 0.0);
  for (double v : g.d_gamma) EXPECT_EQ(v, 0.0);
}

TEST(GradDm, MatchesFiniteDifferences) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<std::int64_t> cnt(0, 40);
  const double h = 1e-5;
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t C = 2 + static_cast<std::size_t>(rep % 3);
    auto p = random_params(rng, C);
    p.phi += 1.0;
    std::vector<std::int64_t> y(C);
    for (auto& v : y) v = cnt(rng);
    const auto g = grad_dm_log_pmf(y, p);
    const double fd_phi = (dm_raw(y, p.phi + h, p.gamma) - dm_raw(y, p.phi - h, p.gamma)) / (2 * h);
    EXPECT_NEAR(g.d_phi, fd_phi, std::max(1e-6 * std::abs(fd_phi), 1e-8));
    for (std::size_t c = 0; c < C; ++c) {
      auto up = p.gamma, dn = p.gamma;
      const double hc = h * p.gamma[c];
      up[c] += hc;
      dn[c] -= hc;
      const double fd = (dm_raw(y, p.phi, up) - dm_raw(y, p.phi, dn)) / (2 * hc);
      EXPECT_NEAR(g.d_gamma[c], fd, std::max(1e-6 * std::abs(fd), 1e-8)) << "rep " << rep;
    }
  }
}

TEST(GradDm, SymmetricCaseIsFlatOnSimplexTangent) {
  const std::vector<std::int64_t> y{4, 4};
  const auto g = grad_dm_log_pmf(y, {3.0, {0.5, 0.5}});
  // Projected onto the tangent direction (1, -1): components are opposite.
  const double mean = 0.5 * (g.d_gamma[0] + g.d_gamma[1]);
  EXPECT_NEAR(g.d_gamma[0] - mean, -(g.d_gamma[1] - mean), 1e-14);
  EXPECT_NEAR(g.d_gamma[0] - mean, 0.0, 1e-14);
}

}  // namespace
}  // namespace dmp
