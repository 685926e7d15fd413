#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "dmp/data_model.hpp"
#include "dmp/distributions.hpp"
#include "dmp/models.hpp"

namespace dmp {

struct SynthSpec {
  std::size_t ages = 5;
  std::size_t years = 12;
  std::size_t causes = 3;
  int first_year = 2000;
  double exposure_level = 1e5;
  std::vector<double> exposure;  // optional A x T override, row-major [a][t]
  std::optional<Params> truth;   // defaults to default_truth(...)
  ModelKind flavor = ModelKind::AP;
  std::uint64_t seed = 1;
  Sex sex = Sex::Female;

  void validate() const {
    if (ages < 3 || years < 3) fail(ErrorKind::InvalidParams, "synthetic grid needs A, T >= 3");
    if (causes < 2) fail(ErrorKind::InvalidParams, "synthetic grid needs C >= 2");
    if (exposure.empty()) {
      if (!(exposure_level > 0.0)) fail(ErrorKind::InvalidParams, "exposure must be positive");
    } else if (exposure.size() != ages * years) {
      fail(ErrorKind::InvalidParams, "exposure override has wrong size");
    }
  }
};

namespace detail {

// Centered profile over n points: linear slope plus a curvature term.
inline Eigen::VectorXd centered_profile(std::size_t n, double slope, double curvature) {
  Eigen::VectorXd x(n);
  const double mid = 0.5 * static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double z = static_cast<double>(i) - mid;
    x[i] = slope * z + curvature * z * z;
  }
  x.array() -= x.mean();
  return x;
}

// Cause loadings that sum to zero, spread over [-1, 1].
inline Eigen::VectorXd cause_loadings(std::size_t C, double shift) {
  Eigen::VectorXd w(C);
  for (std::size_t c = 0; c < C; ++c) {
    const double base = C == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(c) / (C - 1.0);
    w[c] = std::sin(2.0 * base + shift);
  }
  w.array() -= w.mean();
  return w;
}

}  // namespace detail

/// Smooth, constraint-satisfying parameter point: Gompertz-like age profile,
/// linear period decline, distinct cause profiles. Age-by-cause and
/// period-by-cause effects are centered over causes as well, so the values
/// sit on the directions the likelihood identifies.
inline Params default_truth(std::size_t A, std::size_t T, std::size_t C, ModelKind flavor) {
  if (A < 3 || T < 3 || C < 2) fail(ErrorKind::InvalidParams, "default_truth needs A,T>=3, C>=2");
  const double age_span = 6.0;  // log-rate range across ages
  const Eigen::VectorXd delta =
      detail::centered_profile(A, age_span / static_cast<double>(A - 1),
                               0.6 / static_cast<double>((A - 1) * (A - 1)));
  const Eigen::VectorXd phi0 = 0.8 * detail::cause_loadings(C, 0.3);
  const Eigen::VectorXd age_lin = detail::centered_profile(A, 1.0 / static_cast<double>(A - 1), 0.0);
  const Eigen::VectorXd age_quad = detail::centered_profile(A, 0.0, 1.0 / ((A - 1.0) * (A - 1.0)));
  const Eigen::VectorXd w1 = detail::cause_loadings(C, 1.1);
  const Eigen::VectorXd w2 = detail::cause_loadings(C, -0.7);
  Eigen::MatrixXd zeta = 0.9 * age_lin * w1.transpose() + 0.8 * age_quad * w2.transpose();

  if (flavor == ModelKind::AP) {
    APParams p = APParams::zeros({A, T, C});
    p.nu0 = -6.0;
    p.delta = delta;
    p.pi = detail::centered_profile(T, -0.02, 0.0);
    p.phi0 = phi0;
    p.zeta = zeta;
    const Eigen::VectorXd time_lin = detail::centered_profile(T, 0.015, 0.0);
    p.lambda = time_lin * detail::cause_loadings(C, 0.5).transpose();
    p.sigma_delta = 0.1;
    p.sigma_pi = 0.01;
    p.sigma_zeta = 0.1;
    p.sigma_lambda = 0.01;
    p.phi = 500.0;
    return p;
  }
  LCParams p = LCParams::zeros({A, T, C});
  p.nu0 = -6.0;
  p.delta = delta;
  p.beta = Eigen::VectorXd::Constant(A, 1.0 / static_cast<double>(A));
  p.kappa = detail::centered_profile(T, -0.02 * static_cast<double>(A), 0.0);
  p.phi0 = phi0;
  p.zeta = zeta;
  p.theta = 0.3 * detail::cause_loadings(C, 0.5);
  p.sigma_delta = 0.1;
  p.sigma_kappa = 0.05;
  p.sigma_zeta = 0.1;
  p.phi = 500.0;
  return p;
}

/// Draws Y_at ~ Poisson(E m_at), then the cause split ~ DM(phi gamma_at, Y_at).
inline std::pair<MortalityDataset, Params> simulate(const SynthSpec& synth) {
  synth.validate();
  const auto A = synth.ages, T = synth.years, C = synth.causes;
  const Params truth = synth.truth ? *synth.truth : default_truth(A, T, C, synth.flavor);
  const ModelKind kind = std::holds_alternative<APParams>(truth) ? ModelKind::AP : ModelKind::LC;
  const Dims d = std::visit([](const auto& p) { return p.dims(); }, truth);
  if (!(d == Dims{A, T, C})) fail(ErrorKind::InvalidParams, "truth dimensions differ from the requested grid");

  std::vector<double> exposure = synth.exposure;
  if (exposure.empty()) exposure.assign(A * T, synth.exposure_level);
  for (double e : exposure)
    if (!(e >= 0.0)) fail(ErrorKind::InvalidParams, "exposure must be nonnegative");

  const double phi = std::visit([](const auto& p) { return p.phi; }, truth);
  Rng rng = make_stream(synth.seed, 0);
  std::vector<std::int64_t> deaths(A * T * C, 0);
  std::vector<double> eta(C);
  DMParams dm{phi, std::vector<double>(C)};
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t t = 0; t < T; ++t) {
      double log_m = 0.0;
      if (kind == ModelKind::AP) {
        const auto& p = std::get<APParams>(truth);
        log_m = ap_log_total_rate(p, a, t);
        for (std::size_t c = 0; c < C; ++c) eta[c] = ap_eta(p, a, t, c);
      } else {
        const auto& p = std::get<LCParams>(truth);
        log_m = lc_log_total_rate(p, a, t);
        for (std::size_t c = 0; c < C; ++c) eta[c] = lc_eta(p, a, t, c);
      }
      softmax_into(eta, dm.gamma);
      const std::int64_t n = poisson_sample(exposure[a * T + t] * std::exp(log_m), rng);
      const auto split = dirichlet_multinomial_sample(n, dm, rng);
      std::copy(split.begin(), split.end(), deaths.begin() + static_cast<std::ptrdiff_t>((a * T + t) * C));
    }

  std::vector<std::string> causes;
  for (std::size_t c = 0; c < C; ++c) causes.push_back("cause" + std::to_string(c + 1));
  MortalityDataset data(AgeGrid::five_year(A), YearGrid(synth.first_year, T), CauseSet(causes),
                        std::move(exposure), std::move(deaths), synth.sex, "synthetic");
  return {std::move(data), truth};
}

}  // namespace dmp
