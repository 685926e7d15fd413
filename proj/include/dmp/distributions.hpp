#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "dmp/error.hpp"

namespace dmp {

/// Default random engine. Every sampler is a template over
/// std::uniform_random_bit_generator, so any engine can be injected.
using Rng = std::mt19937_64;

/// Independent engine for stream `index` of a run seeded with `seed`.
inline Rng make_stream(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

// ---------------------------------------------------------------------------
// Special functions

namespace detail {

inline constexpr double kHalfLog2Pi = 0.91893853320467274178032973640562;

// Stirling series for log Gamma, valid for x >= 15.
inline double log_gamma_stirling(double x) {
  const double r = 1.0 / x;
  const double r2 = r * r;
  const double series =
      r * (1.0 / 12.0 +
           r2 * (-1.0 / 360.0 +
                 r2 * (1.0 / 1260.0 +
                       r2 * (-1.0 / 1680.0 +
                             r2 * (1.0 / 1188.0 + r2 * (-691.0 / 360360.0 + r2 / 156.0))))));
  return (x - 0.5) * std::log(x) - x + kHalfLog2Pi + series;
}

// Asymptotic expansion of the digamma function, valid for x >= 10.
inline double digamma_asymptotic(double x) {
  const double r2 = 1.0 / (x * x);
  const double series =
      r2 * (1.0 / 12.0 -
            r2 * (1.0 / 120.0 -
                  r2 * (1.0 / 252.0 -
                        r2 * (1.0 / 240.0 -
                              r2 * (1.0 / 132.0 - r2 * (691.0 / 32760.0 - r2 / 12.0))))));
  return std::log(x) - 0.5 / x - series;
}

}  // namespace detail

/// log Gamma(x) for x > 0: upward recurrence into the Stirling regime.
/// Pure and reentrant (unlike std::lgamma, which writes signgam).
inline double log_gamma(double x) {
  if (!(x > 0.0)) fail(ErrorKind::DomainError, "log_gamma requires x > 0");
  if (std::isinf(x)) return x;
  if (x >= 15.0) return detail::log_gamma_stirling(x);
  double prod = 1.0;
  while (x < 15.0) {
    prod *= x;
    x += 1.0;
  }
  return detail::log_gamma_stirling(x) - std::log(prod);
}

/// Digamma psi(x) = d/dx log Gamma(x), for x > 0.
inline double digamma(double x) {
  if (!(x > 0.0)) fail(ErrorKind::DomainError, "digamma requires x > 0");
  double acc = 0.0;
  while (x < 10.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  return acc + detail::digamma_asymptotic(x);
}

/// log Gamma(a + n) - log Gamma(a), exact summation for small integer n.
inline double log_rising(double a, std::int64_t n) {
  if (n == 0) return 0.0;
  if (n <= 16) {
    double s = 0.0;
    for (std::int64_t k = 0; k < n; ++k) s += std::log(a + static_cast<double>(k));
    return s;
  }
  return log_gamma(a + static_cast<double>(n)) - log_gamma(a);
}

/// psi(a + n) - psi(a), exact summation for small integer n.
inline double digamma_rising(double a, std::int64_t n) {
  if (n == 0) return 0.0;
  if (n <= 16) {
    double s = 0.0;
    for (std::int64_t k = 0; k < n; ++k) s += 1.0 / (a + static_cast<double>(k));
    return s;
  }
  return digamma(a + static_cast<double>(n)) - digamma(a);
}

/// log(n!) with a small exact table.
inline double log_factorial(std::int64_t n) {
  static const auto table = [] {
    std::array<double, 64> t{};
    for (std::size_t i = 1; i < t.size(); ++i) t[i] = t[i - 1] + std::log(static_cast<double>(i));
    return t;
  }();
  if (n < 0) fail(ErrorKind::DomainError, "log_factorial of a negative integer");
  if (n < static_cast<std::int64_t>(table.size())) return table[static_cast<std::size_t>(n)];
  return log_gamma(static_cast<double>(n) + 1.0);
}

// ---------------------------------------------------------------------------
// Scalar densities

inline double normal_lpdf(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return -detail::kHalfLog2Pi - std::log(sigma) - 0.5 * z * z;
}

/// Half-normal N+(0, sigma^2) on x >= 0.
inline double half_normal_lpdf(double x, double sigma) {
  return std::numbers::ln2 + normal_lpdf(x, 0.0, sigma);
}

inline double lognormal_lpdf(double x, double mu, double sigma) {
  return normal_lpdf(std::log(x), mu, sigma) - std::log(x);
}

/// y log(rate) - rate - log(y!).
inline double poisson_log_pmf(std::int64_t y, double rate) {
  if (!(rate > 0.0)) fail(ErrorKind::InvalidRate, "Poisson rate must be positive");
  if (y < 0) fail(ErrorKind::InvalidParams, "Poisson count must be nonnegative");
  return static_cast<double>(y) * std::log(rate) - rate - log_factorial(y);
}

// ---------------------------------------------------------------------------
// Dirichlet-multinomial

/// Concentration phi and mean composition gamma of a DM cell; alpha = phi * gamma.
struct DMParams {
  double phi = 1.0;
  std::vector<double> gamma;

  void validate() const {
    if (!(phi > 0.0) || !std::isfinite(phi)) fail(ErrorKind::InvalidParams, "phi must be > 0");
    if (gamma.size() < 1) fail(ErrorKind::InvalidParams, "empty composition");
    double s = 0.0;
    for (double g : gamma) {
      if (!(g > 0.0)) fail(ErrorKind::InvalidParams, "composition entries must be > 0");
      s += g;
    }
    if (std::abs(s - 1.0) > 1e-12) fail(ErrorKind::InvalidParams, "composition must sum to one");
  }
};

/// Numerically stable softmax.
inline std::vector<double> softmax(std::span<const double> eta) {
  std::vector<double> out(eta.size());
  if (eta.empty()) return out;
  const double mx = *std::max_element(eta.begin(), eta.end());
  double s = 0.0;
  for (std::size_t i = 0; i < eta.size(); ++i) {
    out[i] = std::exp(eta[i] - mx);
    s += out[i];
  }
  for (double& v : out) v /= s;
  return out;
}

/// In-place variant for hot loops; `out` must have eta.size() entries.
inline void softmax_into(std::span<const double> eta, std::span<double> out) {
  const double mx = *std::max_element(eta.begin(), eta.end());
  double s = 0.0;
  for (std::size_t i = 0; i < eta.size(); ++i) {
    out[i] = std::exp(eta[i] - mx);
    s += out[i];
  }
  for (double& v : out) v /= s;
}

namespace detail {

// Unchecked DM log pmf over concentrations alpha (phi = sum alpha).
inline double dm_log_pmf_alpha(std::span<const std::int64_t> counts, std::span<const double> alpha,
                               double phi) {
  std::int64_t n = 0;
  double s = 0.0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    n += counts[c];
    s += log_rising(alpha[c], counts[c]) - log_factorial(counts[c]);
  }
  if (n == 0) return 0.0;
  return s + log_factorial(n) - log_rising(phi, n);
}

}  // namespace detail

/// log DM(counts | phi * gamma, n), entirely in log-gamma space.
inline double dirichlet_multinomial_log_pmf(std::span<const std::int64_t> counts,
                                            const DMParams& params) {
  params.validate();
  if (counts.size() != params.gamma.size())
    fail(ErrorKind::InvalidParams, "counts and composition differ in length");
  for (auto y : counts)
    if (y < 0) fail(ErrorKind::InvalidParams, "negative count");
  std::vector<double> alpha(params.gamma.size());
  for (std::size_t c = 0; c < alpha.size(); ++c) alpha[c] = params.phi * params.gamma[c];
  return detail::dm_log_pmf_alpha(counts, alpha, params.phi);
}

/// Multinomial log pmf, used as the phi -> infinity reference.
inline double multinomial_log_pmf(std::span<const std::int64_t> counts,
                                  std::span<const double> p) {
  std::int64_t n = 0;
  double s = 0.0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    n += counts[c];
    if (counts[c] > 0) s += static_cast<double>(counts[c]) * std::log(p[c]);
    s -= log_factorial(counts[c]);
  }
  return s + log_factorial(n);
}

struct DMGradient {
  double d_phi = 0.0;
  std::vector<double> d_gamma;
};

/// Partial derivatives of the DM log pmf with phi and each gamma_c treated as
/// independent coordinates:
///   d/dphi     = psi(phi) - psi(n+phi) + sum_c gamma_c [psi(y_c+phi gamma_c) - psi(phi gamma_c)]
///   d/dgamma_c = phi [psi(y_c+phi gamma_c) - psi(phi gamma_c)]
inline DMGradient grad_dm_log_pmf(std::span<const std::int64_t> counts, const DMParams& params) {
  params.validate();
  if (counts.size() != params.gamma.size())
    fail(ErrorKind::InvalidParams, "counts and composition differ in length");
  DMGradient g;
  g.d_gamma.assign(counts.size(), 0.0);
  std::int64_t n = 0;
  for (auto y : counts) n += y;
  if (n == 0) return g;
  g.d_phi = -digamma_rising(params.phi, n);
  for (std::size_t c = 0; c < counts.size(); ++c) {
    const double dpsi = digamma_rising(params.phi * params.gamma[c], counts[c]);
    g.d_phi += params.gamma[c] * dpsi;
    g.d_gamma[c] = params.phi * dpsi;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Samplers

template <std::uniform_random_bit_generator R>
double standard_normal(R& rng) {
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

template <std::uniform_random_bit_generator R>
double uniform01(R& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

template <std::uniform_random_bit_generator R>
std::int64_t poisson_sample(double mean, R& rng) {
  if (!(mean > 0.0)) return 0;
  return std::poisson_distribution<std::int64_t>(mean)(rng);
}

template <std::uniform_random_bit_generator R>
std::vector<double> dirichlet_sample(std::span<const double> alpha, R& rng) {
  std::vector<double> p(alpha.size());
  double s = 0.0;
  for (std::size_t c = 0; c < alpha.size(); ++c) {
    p[c] = std::gamma_distribution<double>(alpha[c], 1.0)(rng);
    s += p[c];
  }
  if (s > 0.0) {
    for (double& v : p) v /= s;
    return p;
  }
  // Every gamma variate underflowed (tiny alphas): the Dirichlet mass sits on
  // a vertex chosen with probability alpha_c / sum(alpha).
  std::discrete_distribution<std::size_t> pick(alpha.begin(), alpha.end());
  std::fill(p.begin(), p.end(), 0.0);
  p[pick(rng)] = 1.0;
  return p;
}

template <std::uniform_random_bit_generator R>
std::vector<std::int64_t> multinomial_sample(std::int64_t n, std::span<const double> p, R& rng) {
  std::vector<std::int64_t> out(p.size(), 0);
  double remaining_mass = 1.0;
  std::int64_t remaining = n;
  for (std::size_t c = 0; c + 1 < p.size() && remaining > 0; ++c) {
    const double q = remaining_mass > 0.0 ? std::clamp(p[c] / remaining_mass, 0.0, 1.0) : 0.0;
    out[c] = std::binomial_distribution<std::int64_t>(remaining, q)(rng);
    remaining -= out[c];
    remaining_mass -= p[c];
  }
  if (!p.empty()) out.back() += remaining;
  return out;
}

/// Two-stage draw: p ~ Dirichlet(phi * gamma), then Multinomial(n, p).
template <std::uniform_random_bit_generator R>
std::vector<std::int64_t> dirichlet_multinomial_sample(std::int64_t n, const DMParams& params,
                                                       R& rng) {
  params.validate();
  if (n == 0) return std::vector<std::int64_t>(params.gamma.size(), 0);
  std::vector<double> alpha(params.gamma.size());
  for (std::size_t c = 0; c < alpha.size(); ++c) alpha[c] = params.phi * params.gamma[c];
  const auto p = dirichlet_sample(alpha, rng);
  return multinomial_sample(n, p, rng);
}

}  // namespace dmp
