#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dmp/distributions.hpp"
#include "dmp/error.hpp"
#include "dmp/fit.hpp"
#include "dmp/models.hpp"
#include "dmp/sampler.hpp"

namespace dmp {

struct ForecastConfig {
  std::size_t horizon = 1;  // 0 gives the in-sample fitted surface
  bool include_counts = false;
  std::vector<double> future_exposure;  // A x H, row-major [a][h]
  std::size_t thin = 1;                 // use every thin-th posterior draw
  std::uint64_t seed = 1;

  void validate(std::size_t ages) const {
    if (thin == 0) fail(ErrorKind::ConfigMismatch, "thin must be positive");
    if (include_counts && future_exposure.empty())
      fail(ErrorKind::MissingExposure, "predictive counts need future exposure");
    if (!future_exposure.empty() && future_exposure.size() != ages * horizon)
      fail(ErrorKind::ConfigMismatch, "future exposure must be A x H");
  }
};

// ---------------------------------------------------------------------------
// Period-effect extrapolation

/// x_t = 2 x_{t-1} - x_{t-2} + sigma * z_t for the given standard-normal shocks.
inline std::vector<double> extrapolate_rw2(double x_prev, double x_last, double sigma,
                                           std::span<const double> shocks) {
  std::vector<double> out(shocks.size());
  double a = x_prev, b = x_last;
  for (std::size_t h = 0; h < shocks.size(); ++h) {
    const double next = 2.0 * b - a + sigma * shocks[h];
    out[h] = next;
    a = b;
    b = next;
  }
  return out;
}

inline std::vector<double> extrapolate_rw2(double x_prev, double x_last, double sigma,
                                           std::size_t H, Rng& rng) {
  std::vector<double> z(H);
  for (auto& v : z) v = standard_normal(rng);
  return extrapolate_rw2(x_prev, x_last, sigma, z);
}

/// x_t = x_{t-1} + sigma * z_t.
inline std::vector<double> extrapolate_rw1(double x_last, double sigma,
                                           std::span<const double> shocks) {
  std::vector<double> out(shocks.size());
  double x = x_last;
  for (std::size_t h = 0; h < shocks.size(); ++h) {
    x += sigma * shocks[h];
    out[h] = x;
  }
  return out;
}

inline std::vector<double> extrapolate_rw1(double x_last, double sigma, std::size_t H, Rng& rng) {
  std::vector<double> z(H);
  for (auto& v : z) v = standard_normal(rng);
  return extrapolate_rw1(x_last, sigma, z);
}

// ---------------------------------------------------------------------------
// Surfaces

/// Per-draw forecast arrays. Cell (d, a, h) holds log m_at; cause arrays add
/// a trailing c index. Horizon index h maps to year first_year + h.
struct ForecastSurface {
  std::size_t draws = 0, ages = 0, horizon = 0, causes = 0;
  int first_year = 0;
  std::vector<double> log_m;    // [d][a][h]
  std::vector<double> gamma;    // [d][a][h][c]
  std::vector<double> m_cause;  // [d][a][h][c] = m * gamma
  std::vector<double> phi;      // [d]
  std::vector<std::int64_t> total_counts;  // [d][a][h], when simulated
  std::vector<std::int64_t> cause_counts;  // [d][a][h][c]

  std::size_t cell(std::size_t d, std::size_t a, std::size_t h) const {
    return (d * ages + a) * horizon + h;
  }
  double m(std::size_t d, std::size_t a, std::size_t h) const { return std::exp(log_m[cell(d, a, h)]); }
  double m_atc(std::size_t d, std::size_t a, std::size_t h, std::size_t c) const {
    return m_cause[cell(d, a, h) * causes + c];
  }
  bool has_counts() const { return !total_counts.empty(); }
};

namespace detail {

inline void fill_cell(ForecastSurface& s, std::size_t d, std::size_t a, std::size_t h, double log_m,
                      std::vector<double>& eta) {
  const std::size_t i = s.cell(d, a, h);
  s.log_m[i] = log_m;
  std::span<double> g(s.gamma.data() + i * s.causes, s.causes);
  softmax_into(eta, g);
  const double m = std::exp(log_m);
  for (std::size_t c = 0; c < s.causes; ++c) s.m_cause[i * s.causes + c] = m * g[c];
}

inline ForecastSurface empty_surface(std::size_t draws, const Dims& dims, std::size_t H, int first_year) {
  ForecastSurface s;
  s.draws = draws;
  s.ages = dims.ages;
  s.horizon = H;
  s.causes = dims.causes;
  s.first_year = first_year;
  s.log_m.resize(draws * dims.ages * H);
  s.gamma.resize(s.log_m.size() * dims.causes);
  s.m_cause.resize(s.gamma.size());
  s.phi.resize(draws);
  return s;
}

}  // namespace detail

/// Simulates Y_at ~ Poisson(E m_at) and the cause split ~ DM(phi gamma, Y_at)
/// for every draw and cell; stream k drives draw k.
inline void predictive_counts(ForecastSurface& s, std::span<const double> exposure,
                              std::uint64_t seed) {
  if (exposure.empty()) fail(ErrorKind::MissingExposure, "predictive counts need exposure");
  if (exposure.size() != s.ages * s.horizon)
    fail(ErrorKind::ConfigMismatch, "exposure must be A x H");
  s.total_counts.assign(s.log_m.size(), 0);
  s.cause_counts.assign(s.gamma.size(), 0);
  for (std::size_t d = 0; d < s.draws; ++d) {
    Rng rng = make_stream(seed ^ 0x9e3779b97f4a7c15ULL, d);
    DMParams dm{s.phi[d], std::vector<double>(s.causes)};
    for (std::size_t a = 0; a < s.ages; ++a)
      for (std::size_t h = 0; h < s.horizon; ++h) {
        const std::size_t i = s.cell(d, a, h);
        const auto n = poisson_sample(exposure[a * s.horizon + h] * std::exp(s.log_m[i]), rng);
        s.total_counts[i] = n;
        std::copy_n(s.gamma.begin() + static_cast<std::ptrdiff_t>(i * s.causes), s.causes,
                    dm.gamma.begin());
        const auto split = dirichlet_multinomial_sample(n, dm, rng);
        std::copy(split.begin(), split.end(),
                  s.cause_counts.begin() + static_cast<std::ptrdiff_t>(i * s.causes));
      }
  }
}

/// In-sample surface over the training years, one entry per kept draw.
inline ForecastSurface fitted_surface(const DmpFit& fit, std::size_t thin = 1) {
  if (fit.draws.total() == 0) fail(ErrorKind::EmptyDraws, "fit has no draws");
  const Dims dims = fit.model->dims();
  const std::size_t n = (fit.draws.total() + thin - 1) / thin;
  auto s = detail::empty_surface(n, dims, dims.years, fit.first_year);
  std::vector<double> log_m, gamma;
  for (std::size_t d = 0; d < n; ++d) {
    const std::size_t k = d * thin;
    const Params p = fit.params(k / fit.draws.kept, k % fit.draws.kept);
    fit.model->rates(p, log_m, gamma);
    s.phi[d] = std::visit([](const auto& q) { return q.phi; }, p);
    for (std::size_t a = 0; a < dims.ages; ++a)
      for (std::size_t t = 0; t < dims.years; ++t) {
        const std::size_t i = s.cell(d, a, t);
        s.log_m[i] = log_m[a * dims.years + t];
        for (std::size_t c = 0; c < dims.causes; ++c) {
          const double g = gamma[(a * dims.years + t) * dims.causes + c];
          s.gamma[i * dims.causes + c] = g;
          s.m_cause[i * dims.causes + c] = std::exp(s.log_m[i]) * g;
        }
      }
  }
  return s;
}

/// Extrapolates period effects per posterior draw (pi and lambda by RW2 for
/// AP, kappa by RW1 for LC) and assembles m, gamma and m * gamma. Age and
/// cause effects stay at their posterior values.
inline ForecastSurface forecast_surface(const DmpFit& fit, const ForecastConfig& cfg) {
  const Dims dims = fit.model->dims();
  cfg.validate(dims.ages);
  if (cfg.horizon == 0) return fitted_surface(fit, cfg.thin);
  if (fit.draws.total() == 0) fail(ErrorKind::EmptyDraws, "fit has no draws");
  const std::size_t H = cfg.horizon, A = dims.ages, T = dims.years, C = dims.causes;
  const std::size_t n = (fit.draws.total() + cfg.thin - 1) / cfg.thin;
  auto s = detail::empty_surface(n, dims, H, fit.first_year + static_cast<int>(T));
  std::vector<double> eta(C);
  for (std::size_t d = 0; d < n; ++d) {
    const std::size_t k = d * cfg.thin;
    const Params params = fit.params(k / fit.draws.kept, k % fit.draws.kept);
    Rng rng = make_stream(cfg.seed, d);
    if (const auto* p = std::get_if<APParams>(&params)) {
      const auto pi = extrapolate_rw2(p->pi[T - 2], p->pi[T - 1], p->sigma_pi, H, rng);
      std::vector<std::vector<double>> lam(C);
      for (std::size_t c = 0; c < C; ++c)
        lam[c] = extrapolate_rw2(p->lambda(T - 2, c), p->lambda(T - 1, c), p->sigma_lambda, H, rng);
      s.phi[d] = p->phi;
      for (std::size_t a = 0; a < A; ++a)
        for (std::size_t h = 0; h < H; ++h) {
          for (std::size_t c = 0; c < C; ++c) eta[c] = p->phi0[c] + p->zeta(a, c) + lam[c][h];
          detail::fill_cell(s, d, a, h, p->nu0 + p->delta[a] + pi[h], eta);
        }
    } else {
      const auto& q = std::get<LCParams>(params);
      const auto kappa = extrapolate_rw1(q.kappa[T - 1], q.sigma_kappa, H, rng);
      s.phi[d] = q.phi;
      for (std::size_t a = 0; a < A; ++a)
        for (std::size_t h = 0; h < H; ++h) {
          for (std::size_t c = 0; c < C; ++c) eta[c] = q.phi0[c] + q.zeta(a, c) + q.theta[c] * kappa[h];
          detail::fill_cell(s, d, a, h, q.nu0 + q.delta[a] + q.beta[a] * kappa[h], eta);
        }
    }
  }
  if (cfg.include_counts) predictive_counts(s, cfg.future_exposure, cfg.seed);
  return s;
}

// ---------------------------------------------------------------------------
// Summaries

/// Point forecasts and equal-tailed bands on the log-rate scale.
struct ForecastSummary {
  std::size_t ages = 0, horizon = 0, causes = 0;
  int first_year = 0;
  std::vector<double> quantiles;
  std::vector<double> median_cause;  // [a][h][c], posterior median of log m_atc
  std::vector<double> mean_cause;    // [a][h][c], posterior mean of log m_atc
  std::vector<double> median_total;  // [a][h], median over draws of log sum_c m_atc
  std::vector<double> mean_total;
  std::vector<double> band_cause;    // [a][h][c][q]
  std::vector<double> band_total;    // [a][h][q]

  double point_cause(std::size_t a, std::size_t h, std::size_t c) const {
    return median_cause[(a * horizon + h) * causes + c];
  }
  double point_total(std::size_t a, std::size_t h) const { return median_total[a * horizon + h]; }
};

inline ForecastSummary summarize(const ForecastSurface& s,
                                 const std::vector<double>& quantiles = {0.025, 0.5, 0.975}) {
  if (s.draws == 0) fail(ErrorKind::EmptyDraws, "cannot summarize an empty surface");
  ForecastSummary out;
  out.ages = s.ages;
  out.horizon = s.horizon;
  out.causes = s.causes;
  out.first_year = s.first_year;
  out.quantiles = quantiles;
  const std::size_t cells = s.ages * s.horizon, Q = quantiles.size();
  out.median_cause.resize(cells * s.causes);
  out.mean_cause.resize(cells * s.causes);
  out.median_total.resize(cells);
  out.mean_total.resize(cells);
  out.band_cause.resize(cells * s.causes * Q);
  out.band_total.resize(cells * Q);
  std::vector<double> v(s.draws);
  auto fill = [&](double& median, double& mean, double* band) {
    median = quantile(v, 0.5);
    double sum = 0.0;
    for (double x : v) sum += x;
    mean = sum / static_cast<double>(v.size());
    for (std::size_t q = 0; q < Q; ++q) band[q] = quantile(v, quantiles[q]);
  };
  for (std::size_t i = 0; i < cells; ++i) {
    for (std::size_t d = 0; d < s.draws; ++d) {
      double total = 0.0;
      for (std::size_t c = 0; c < s.causes; ++c) total += s.m_cause[(d * cells + i) * s.causes + c];
      v[d] = std::log(total);
    }
    fill(out.median_total[i], out.mean_total[i], &out.band_total[i * Q]);
    for (std::size_t c = 0; c < s.causes; ++c) {
      for (std::size_t d = 0; d < s.draws; ++d) v[d] = std::log(s.m_cause[(d * cells + i) * s.causes + c]);
      const std::size_t j = i * s.causes + c;
      fill(out.median_cause[j], out.mean_cause[j], &out.band_cause[j * Q]);
    }
  }
  return out;
}

}  // namespace dmp
