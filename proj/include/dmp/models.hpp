#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "dmp/data_model.hpp"
#include "dmp/distributions.hpp"
#include "dmp/error.hpp"

namespace dmp {

enum class ModelKind { AP, LC };

inline std::string to_string(ModelKind k) { return k == ModelKind::AP ? "dmp-ap" : "dmp-lc"; }

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "dmp-ap" || s == "ap" || s == "AP") return ModelKind::AP;
  if (s == "dmp-lc" || s == "lc-dm" || s == "LC") return ModelKind::LC;
  fail(ErrorKind::ConfigError, "unknown DMP model '" + s + "'");
}

/// Prior scales. Location blocks use N(0, sd^2); `sigma_*_scale` are the
/// half-normal scales of the smoothing standard deviations; phi ~ logNormal.
struct HyperPriors {
  double nu0_sd = 5.0;
  double delta12_sd = 5.0;   // delta_1, delta_2
  double period12_sd = 1.0;  // pi_1, pi_2 (AP) or kappa_1 (LC)
  double phi0_sd = 5.0;
  double zeta12_sd = 5.0;    // zeta_{1,c}, zeta_{2,c}
  double lambda12_sd = 1.0;  // AP only
  double theta_sd = 0.5;     // LC only
  double beta_scale = 1.0;   // LC only, half-normal on each beta_a
  double sigma_delta_scale = 1.0;
  double sigma_period_scale = 0.3;  // sigma_pi (AP) or sigma_kappa (LC)
  double sigma_zeta_scale = 1.0;
  double sigma_lambda_scale = 0.3;  // AP only
  double phi_mu = std::log(500.0);
  double phi_sigma = 1.0;

  static HyperPriors age_period() { return HyperPriors{}; }

  static HyperPriors lee_carter() {
    HyperPriors hp;
    hp.nu0_sd = 10.0;
    hp.delta12_sd = 5.0;
    hp.period12_sd = 1.0;
    hp.phi0_sd = 1.0;
    hp.zeta12_sd = 1.0;
    hp.theta_sd = 0.5;
    hp.beta_scale = 1.0;
    hp.sigma_delta_scale = 0.5;
    hp.sigma_period_scale = 0.5;
    hp.sigma_zeta_scale = 0.4;
    return hp;
  }

  static HyperPriors defaults(ModelKind k) {
    return k == ModelKind::AP ? age_period() : lee_carter();
  }

  void validate() const {
    for (double s : {nu0_sd, delta12_sd, period12_sd, phi0_sd, zeta12_sd, lambda12_sd, theta_sd,
                     beta_scale, sigma_delta_scale, sigma_period_scale, sigma_zeta_scale,
                     sigma_lambda_scale, phi_sigma})
      if (!(s > 0.0)) fail(ErrorKind::InvalidParams, "prior scales must be positive");
    if (!std::isfinite(phi_mu)) fail(ErrorKind::InvalidParams, "phi_mu must be finite");
  }
};

struct Dims {
  std::size_t ages = 0;
  std::size_t years = 0;
  std::size_t causes = 0;
  bool operator==(const Dims&) const = default;
};

/// Age-period parameters. zeta is A x C, lambda is T x C.
struct APParams {
  double nu0 = 0.0;
  Eigen::VectorXd delta, pi, phi0;
  Eigen::MatrixXd zeta, lambda;
  double sigma_delta = 1.0, sigma_pi = 1.0, sigma_zeta = 1.0, sigma_lambda = 1.0;
  double phi = 1.0;

  static APParams zeros(Dims d) {
    APParams p;
    p.delta = Eigen::VectorXd::Zero(d.ages);
    p.pi = Eigen::VectorXd::Zero(d.years);
    p.phi0 = Eigen::VectorXd::Zero(d.causes);
    p.zeta = Eigen::MatrixXd::Zero(d.ages, d.causes);
    p.lambda = Eigen::MatrixXd::Zero(d.years, d.causes);
    return p;
  }
  Dims dims() const {
    return {static_cast<std::size_t>(delta.size()), static_cast<std::size_t>(pi.size()),
            static_cast<std::size_t>(phi0.size())};
  }
};

/// Lee-Carter parameters. zeta is A x C.
struct LCParams {
  double nu0 = 0.0;
  Eigen::VectorXd delta, beta, kappa, phi0, theta;
  Eigen::MatrixXd zeta;
  double sigma_delta = 1.0, sigma_kappa = 1.0, sigma_zeta = 1.0;
  double phi = 1.0;

  static LCParams zeros(Dims d) {
    LCParams p;
    p.delta = Eigen::VectorXd::Zero(d.ages);
    p.beta = Eigen::VectorXd::Constant(d.ages, 1.0 / static_cast<double>(d.ages));
    p.kappa = Eigen::VectorXd::Zero(d.years);
    p.phi0 = Eigen::VectorXd::Zero(d.causes);
    p.theta = Eigen::VectorXd::Zero(d.causes);
    p.zeta = Eigen::MatrixXd::Zero(d.ages, d.causes);
    return p;
  }
  Dims dims() const {
    return {static_cast<std::size_t>(delta.size()), static_cast<std::size_t>(kappa.size()),
            static_cast<std::size_t>(phi0.size())};
  }
};

using Params = std::variant<APParams, LCParams>;

namespace detail {
inline void check_index(std::size_t i, Eigen::Index n, const char* what) {
  if (i >= static_cast<std::size_t>(n))
    fail(ErrorKind::IndexOutOfRange, std::string(what) + " index " + std::to_string(i) +
                                         " out of range " + std::to_string(n));
}
}  // namespace detail

inline double ap_log_total_rate(const APParams& p, std::size_t a, std::size_t t) {
  detail::check_index(a, p.delta.size(), "age");
  detail::check_index(t, p.pi.size(), "year");
  return p.nu0 + p.delta[a] + p.pi[t];
}

inline double ap_eta(const APParams& p, std::size_t a, std::size_t t, std::size_t c) {
  detail::check_index(a, p.zeta.rows(), "age");
  detail::check_index(t, p.lambda.rows(), "year");
  detail::check_index(c, p.phi0.size(), "cause");
  return p.phi0[c] + p.zeta(a, c) + p.lambda(t, c);
}

inline double lc_log_total_rate(const LCParams& p, std::size_t a, std::size_t t) {
  detail::check_index(a, p.delta.size(), "age");
  detail::check_index(t, p.kappa.size(), "year");
  return p.nu0 + p.delta[a] + p.beta[a] * p.kappa[t];
}

inline double lc_eta(const LCParams& p, std::size_t a, std::size_t t, std::size_t c) {
  detail::check_index(a, p.zeta.rows(), "age");
  detail::check_index(t, p.kappa.size(), "year");
  detail::check_index(c, p.phi0.size(), "cause");
  return p.phi0[c] + p.zeta(a, c) + p.theta[c] * p.kappa[t];
}

// ---------------------------------------------------------------------------
// Random-walk smoothing priors

/// sum_{i>=3} log N(x_i - 2 x_{i-1} + x_{i-2} | 0, sigma^2). The first two
/// points are left to the caller's diffuse priors.
inline double rw2_log_prior(std::span<const double> x, double sigma) {
  if (x.size() < 3) fail(ErrorKind::TooShort, "RW2 prior needs at least three points");
  if (!(sigma > 0.0)) fail(ErrorKind::InvalidParams, "RW2 sigma must be positive");
  double lp = 0.0;
  for (std::size_t i = 2; i < x.size(); ++i)
    lp += normal_lpdf(x[i] - 2.0 * x[i - 1] + x[i - 2], 0.0, sigma);
  return lp;
}

/// sum_{i>=2} log N(x_i - x_{i-1} | 0, sigma^2).
inline double rw1_log_prior(std::span<const double> x, double sigma) {
  if (x.size() < 2) fail(ErrorKind::TooShort, "RW1 prior needs at least two points");
  if (!(sigma > 0.0)) fail(ErrorKind::InvalidParams, "RW1 sigma must be positive");
  double lp = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) lp += normal_lpdf(x[i] - x[i - 1], 0.0, sigma);
  return lp;
}

namespace detail {

// RW2 log density plus accumulation of its gradient into gx and gsigma.
inline double rw2_with_grad(std::span<const double> x, double sigma, std::span<double> gx,
                            double& gsigma) {
  double lp = 0.0;
  const double inv_var = 1.0 / (sigma * sigma);
  for (std::size_t i = 2; i < x.size(); ++i) {
    const double d = x[i] - 2.0 * x[i - 1] + x[i - 2];
    lp += normal_lpdf(d, 0.0, sigma);
    const double r = -d * inv_var;
    gx[i] += r;
    gx[i - 1] -= 2.0 * r;
    gx[i - 2] += r;
    gsigma += d * d * inv_var / sigma - 1.0 / sigma;
  }
  return lp;
}

inline double rw1_with_grad(std::span<const double> x, double sigma, std::span<double> gx,
                            double& gsigma) {
  double lp = 0.0;
  const double inv_var = 1.0 / (sigma * sigma);
  for (std::size_t i = 1; i < x.size(); ++i) {
    const double d = x[i] - x[i - 1];
    lp += normal_lpdf(d, 0.0, sigma);
    const double r = -d * inv_var;
    gx[i] += r;
    gx[i - 1] -= r;
    gsigma += d * d * inv_var / sigma - 1.0 / sigma;
  }
  return lp;
}

inline double normal_with_grad(double x, double sd, double& gx) {
  gx += -x / (sd * sd);
  return normal_lpdf(x, 0.0, sd);
}

inline double half_normal_with_grad(double x, double scale, double& gx) {
  gx += -x / (scale * scale);
  return half_normal_lpdf(x, scale);
}

inline std::span<const double> col(const Eigen::MatrixXd& m, Eigen::Index c) {
  return {m.col(c).data(), static_cast<std::size_t>(m.rows())};
}
inline std::span<double> col(Eigen::MatrixXd& m, Eigen::Index c) {
  return {m.col(c).data(), static_cast<std::size_t>(m.rows())};
}
inline std::span<const double> vec(const Eigen::VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}
inline std::span<double> vec(Eigen::VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Constraint transforms

/// Sum-to-zero block: N-1 free coordinates, last element = -(sum of the others).
inline Eigen::VectorXd sum_to_zero(std::span<const double> free) {
  Eigen::VectorXd x(free.size() + 1);
  double s = 0.0;
  for (std::size_t i = 0; i < free.size(); ++i) {
    x[static_cast<Eigen::Index>(i)] = free[i];
    s += free[i];
  }
  x[static_cast<Eigen::Index>(free.size())] = -s;
  return x;
}

/// Simplex block: beta = softmax(v_1, ..., v_{N-1}, 0).
inline Eigen::VectorXd simplex_from_free(std::span<const double> free) {
  std::vector<double> eta(free.begin(), free.end());
  eta.push_back(0.0);
  const auto b = softmax(eta);
  return Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
}

/// Named block of the unconstrained coordinate vector.
struct LayoutBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

class Layout {
 public:
  void add(std::string name, std::size_t size) {
    blocks_.push_back({std::move(name), dim_, size});
    dim_ += size;
  }
  std::size_t dim() const { return dim_; }
  const std::vector<LayoutBlock>& blocks() const { return blocks_; }
  const LayoutBlock& block(const std::string& name) const {
    for (const auto& b : blocks_)
      if (b.name == name) return b;
    fail(ErrorKind::LayoutMismatch, "no layout block named " + name);
  }

 private:
  std::vector<LayoutBlock> blocks_;
  std::size_t dim_ = 0;
};

// ---------------------------------------------------------------------------
// Joint posterior

/// DMP log posterior over unconstrained coordinates for either flavor.
///
/// Unconstrained layout (AP): nu0 | delta (A-1) | pi (T-1) | phi0 (C-1) |
/// zeta ((A-1) C, cause-major) | lambda ((T-1) C, cause-major) |
/// log sigma_delta, log sigma_pi, log sigma_zeta, log sigma_lambda | log phi.
///
/// Unconstrained layout (LC): nu0 | delta (A-1) | beta (A-1, softmax with the
/// last logit pinned at 0) | kappa (T-1) | phi0 (C-1) | zeta ((A-1) C) |
/// theta (C) | log sigma_delta, log sigma_kappa, log sigma_zeta | log phi.
///
/// Sum-to-zero blocks store their first N-1 entries; the last is minus their
/// sum. The log density includes every normalizing constant and the
/// log-Jacobian of the exp and simplex transforms.
class DmpModel {
 public:
  DmpModel(ModelKind kind, const MortalityDataset& data, HyperPriors hp,
           bool include_likelihood = true)
      : kind_(kind),
        dims_{data.num_ages(), data.num_years(), data.num_causes()},
        hp_(hp),
        include_likelihood_(include_likelihood) {
    hp_.validate();
    if (dims_.ages < 3) fail(ErrorKind::TooShort, "model needs at least three age groups");
    if (dims_.years < 3) fail(ErrorKind::TooShort, "model needs at least three years");
    if (dims_.causes < 2) fail(ErrorKind::InvalidParams, "model needs at least two causes");
    const auto A = dims_.ages, T = dims_.years, C = dims_.causes;
    exposure_ = data.exposure_data();
    deaths_ = data.deaths_data();
    totals_ = total_deaths(data);
    if (include_likelihood_)
      for (double e : exposure_)
        if (!(e > 0.0)) fail(ErrorKind::ZeroExposure, "every fitted cell needs exposure > 0");
    double sy = 0.0, se = 0.0;
    for (std::size_t i = 0; i < A * T; ++i) {
      sy += static_cast<double>(totals_[i]);
      se += exposure_[i];
    }
    crude_log_rate_ = std::log(std::max(sy, 0.5) / std::max(se, 1e-300));

    layout_.add("nu0", 1);
    layout_.add("delta", A - 1);
    if (kind_ == ModelKind::AP) {
      layout_.add("pi", T - 1);
      layout_.add("phi0", C - 1);
      layout_.add("zeta", (A - 1) * C);
      layout_.add("lambda", (T - 1) * C);
      layout_.add("log_sigma_delta", 1);
      layout_.add("log_sigma_pi", 1);
      layout_.add("log_sigma_zeta", 1);
      layout_.add("log_sigma_lambda", 1);
    } else {
      layout_.add("beta", A - 1);
      layout_.add("kappa", T - 1);
      layout_.add("phi0", C - 1);
      layout_.add("zeta", (A - 1) * C);
      layout_.add("theta", C);
      layout_.add("log_sigma_delta", 1);
      layout_.add("log_sigma_kappa", 1);
      layout_.add("log_sigma_zeta", 1);
    }
    layout_.add("log_phi", 1);
  }

  ModelKind kind() const { return kind_; }
  Dims dims() const { return dims_; }
  std::size_t dim() const { return layout_.dim(); }
  const Layout& layout() const { return layout_; }
  const HyperPriors& hyper_priors() const { return hp_; }

  // -- transforms ----------------------------------------------------------

  Params constrain(std::span<const double> u) const {
    check_size(u);
    if (kind_ == ModelKind::AP) return constrain_ap(u);
    return constrain_lc(u);
  }

  APParams constrain_ap(std::span<const double> u) const {
    check_size(u);
    if (kind_ != ModelKind::AP) fail(ErrorKind::LayoutMismatch, "model is not AP");
    const auto A = dims_.ages, T = dims_.years, C = dims_.causes;
    APParams p;
    p.nu0 = u[0];
    p.delta = sum_to_zero(seg(u, "delta"));
    p.pi = sum_to_zero(seg(u, "pi"));
    p.phi0 = sum_to_zero(seg(u, "phi0"));
    p.zeta.resize(A, C);
    p.lambda.resize(T, C);
    const auto z = seg(u, "zeta");
    const auto l = seg(u, "lambda");
    for (std::size_t c = 0; c < C; ++c) {
      p.zeta.col(c) = sum_to_zero(z.subspan(c * (A - 1), A - 1));
      p.lambda.col(c) = sum_to_zero(l.subspan(c * (T - 1), T - 1));
    }
    p.sigma_delta = std::exp(scalar(u, "log_sigma_delta"));
    p.sigma_pi = std::exp(scalar(u, "log_sigma_pi"));
    p.sigma_zeta = std::exp(scalar(u, "log_sigma_zeta"));
    p.sigma_lambda = std::exp(scalar(u, "log_sigma_lambda"));
    p.phi = std::exp(scalar(u, "log_phi"));
    return p;
  }

  LCParams constrain_lc(std::span<const double> u) const {
    check_size(u);
    if (kind_ != ModelKind::LC) fail(ErrorKind::LayoutMismatch, "model is not LC");
    const auto A = dims_.ages, C = dims_.causes;
    LCParams p;
    p.nu0 = u[0];
    p.delta = sum_to_zero(seg(u, "delta"));
    p.beta = simplex_from_free(seg(u, "beta"));
    p.kappa = sum_to_zero(seg(u, "kappa"));
    p.phi0 = sum_to_zero(seg(u, "phi0"));
    p.zeta.resize(A, C);
    const auto z = seg(u, "zeta");
    for (std::size_t c = 0; c < C; ++c) p.zeta.col(c) = sum_to_zero(z.subspan(c * (A - 1), A - 1));
    const auto th = seg(u, "theta");
    p.theta = Eigen::Map<const Eigen::VectorXd>(th.data(), static_cast<Eigen::Index>(C));
    p.sigma_delta = std::exp(scalar(u, "log_sigma_delta"));
    p.sigma_kappa = std::exp(scalar(u, "log_sigma_kappa"));
    p.sigma_zeta = std::exp(scalar(u, "log_sigma_zeta"));
    p.phi = std::exp(scalar(u, "log_phi"));
    return p;
  }

  std::vector<double> unconstrain(const Params& params) const {
    return std::visit([this](const auto& p) { return unconstrain_impl(p); }, params);
  }

  /// Names of the constrained parameters, matching constrained_values().
  std::vector<std::string> constrained_names() const {
    const auto A = dims_.ages, T = dims_.years, C = dims_.causes;
    std::vector<std::string> n{"nu0"};
    auto idx = [](const std::string& base, std::size_t i) {
      return base + "[" + std::to_string(i + 1) + "]";
    };
    auto idx2 = [](const std::string& base, std::size_t i, std::size_t j) {
      return base + "[" + std::to_string(i + 1) + "," + std::to_string(j + 1) + "]";
    };
    for (std::size_t a = 0; a < A; ++a) n.push_back(idx("delta", a));
    if (kind_ == ModelKind::AP) {
      for (std::size_t t = 0; t < T; ++t) n.push_back(idx("pi", t));
    } else {
      for (std::size_t a = 0; a < A; ++a) n.push_back(idx("beta", a));
      for (std::size_t t = 0; t < T; ++t) n.push_back(idx("kappa", t));
    }
    for (std::size_t c = 0; c < C; ++c) n.push_back(idx("phi0", c));
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t a = 0; a < A; ++a) n.push_back(idx2("zeta", a, c));
    if (kind_ == ModelKind::AP) {
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < T; ++t) n.push_back(idx2("lambda", t, c));
      for (const char* s : {"sigma_delta", "sigma_pi", "sigma_zeta", "sigma_lambda"})
        n.emplace_back(s);
    } else {
      for (std::size_t c = 0; c < C; ++c) n.push_back(idx("theta", c));
      for (const char* s : {"sigma_delta", "sigma_kappa", "sigma_zeta"}) n.emplace_back(s);
    }
    n.emplace_back("phi");
    return n;
  }

  /// Flattened constrained parameters in constrained_names() order.
  std::vector<double> constrained_values(const Params& params) const {
    std::vector<double> v;
    auto push = [&v](const auto& x) {
      for (Eigen::Index i = 0; i < x.size(); ++i) v.push_back(x(i));
    };
    if (const auto* p = std::get_if<APParams>(&params)) {
      v.push_back(p->nu0);
      push(p->delta);
      push(p->pi);
      push(p->phi0);
      push(p->zeta.reshaped());
      push(p->lambda.reshaped());
      for (double s : {p->sigma_delta, p->sigma_pi, p->sigma_zeta, p->sigma_lambda}) v.push_back(s);
      v.push_back(p->phi);
    } else {
      const auto& q = std::get<LCParams>(params);
      v.push_back(q.nu0);
      push(q.delta);
      push(q.beta);
      push(q.kappa);
      push(q.phi0);
      push(q.zeta.reshaped());
      push(q.theta);
      for (double s : {q.sigma_delta, q.sigma_kappa, q.sigma_zeta}) v.push_back(s);
      v.push_back(q.phi);
    }
    return v;
  }

  std::vector<double> constrained_values(std::span<const double> u) const {
    return constrained_values(constrain(u));
  }

  /// Inverse of constrained_values().
  Params params_from_constrained(std::span<const double> v) const {
    const auto A = dims_.ages, T = dims_.years, C = dims_.causes;
    const auto n_expected = constrained_names().size();
    if (v.size() != n_expected)
      fail(ErrorKind::LayoutMismatch, "expected " + std::to_string(n_expected) +
                                          " constrained values, got " + std::to_string(v.size()));
    std::size_t k = 0;
    auto take = [&](std::size_t n) {
      Eigen::VectorXd x =
          Eigen::Map<const Eigen::VectorXd>(v.data() + k, static_cast<Eigen::Index>(n));
      k += n;
      return x;
    };
    auto take_mat = [&](std::size_t rows, std::size_t cols) {
      Eigen::MatrixXd m = Eigen::Map<const Eigen::MatrixXd>(
          v.data() + k, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
      k += rows * cols;
      return m;
    };
    if (kind_ == ModelKind::AP) {
      APParams p;
      p.nu0 = v[k++];
      p.delta = take(A);
      p.pi = take(T);
      p.phi0 = take(C);
      p.zeta = take_mat(A, C);
      p.lambda = take_mat(T, C);
      p.sigma_delta = v[k++];
      p.sigma_pi = v[k++];
      p.sigma_zeta = v[k++];
      p.sigma_lambda = v[k++];
      p.phi = v[k++];
      return p;
    }
    LCParams p;
    p.nu0 = v[k++];
    p.delta = take(A);
    p.beta = take(A);
    p.kappa = take(T);
    p.phi0 = take(C);
    p.zeta = take_mat(A, C);
    p.theta = take(C);
    p.sigma_delta = v[k++];
    p.sigma_kappa = v[k++];
    p.sigma_zeta = v[k++];
    p.phi = v[k++];
    return p;
  }

  /// Center point for initialization: location blocks at zero (beta uniform),
  /// nu0 at the crude log death rate, smoothing sds at their prior scales and
  /// phi at exp(phi_mu).
  std::vector<double> init_center() const {
    std::vector<double> u(dim(), 0.0);
    u[0] = crude_log_rate_;
    if (kind_ == ModelKind::AP) {
      set_scalar(u, "log_sigma_delta", std::log(hp_.sigma_delta_scale));
      set_scalar(u, "log_sigma_pi", std::log(hp_.sigma_period_scale));
      set_scalar(u, "log_sigma_zeta", std::log(hp_.sigma_zeta_scale));
      set_scalar(u, "log_sigma_lambda", std::log(hp_.sigma_lambda_scale));
    } else {
      set_scalar(u, "log_sigma_delta", std::log(hp_.sigma_delta_scale));
      set_scalar(u, "log_sigma_kappa", std::log(hp_.sigma_period_scale));
      set_scalar(u, "log_sigma_zeta", std::log(hp_.sigma_zeta_scale));
    }
    set_scalar(u, "log_phi", hp_.phi_mu);
    return u;
  }

  // -- density ---------------------------------------------------------------

  /// Log posterior at u; fills `grad` (size dim()) when it is non-empty.
  /// Never throws on numerical trouble: returns a non-finite value instead so
  /// samplers can treat it as a divergence.
  double log_density(std::span<const double> u, std::span<double> grad = {}) const {
    check_size(u);
    if (!grad.empty() && grad.size() != dim())
      fail(ErrorKind::LayoutMismatch, "gradient buffer has wrong size");
    return kind_ == ModelKind::AP ? ap_density(u, grad) : lc_density(u, grad);
  }

  /// Fitted total rates m (A x T) and compositions gamma (A x T x C,
  /// row-major [a][t][c]) for a constrained parameter point.
  void rates(const Params& params, std::vector<double>& log_m, std::vector<double>& gamma) const {
    const auto A = dims_.ages, T = dims_.years, C = dims_.causes;
    log_m.assign(A * T, 0.0);
    gamma.assign(A * T * C, 0.0);
    std::vector<double> eta(C);
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t c = 0; c < C; ++c) {
          if (const auto* p = std::get_if<APParams>(&params)) {
            eta[c] = ap_eta(*p, a, t, c);
          } else {
            eta[c] = lc_eta(std::get<LCParams>(params), a, t, c);
          }
        }
        if (const auto* p = std::get_if<APParams>(&params)) {
          log_m[a * T + t] = ap_log_total_rate(*p, a, t);
        } else {
          log_m[a * T + t] = lc_log_total_rate(std::get<LCParams>(params), a, t);
        }
        softmax_into(eta, std::span<double>(gamma.data() + (a * T + t) * C, C));
      }
  }

 private:
  void check_size(std::span<const double> u) const {
    if (u.size() != dim())
      fail(ErrorKind::LayoutMismatch, "unconstrained vector has size " + std::to_string(u.size()) +
                                          ", layout expects " + std::to_string(dim()));
  }
  std::span<const double> seg(std::span<const double> u, const std::string& name) const {
    const auto& b = layout_.block(name);
    return u.subspan(b.offset, b.size);
  }
  std::span<double> seg(std::span<double> u, const std::string& name) const {
    const auto& b = layout_.block(name);
    return u.subspan(b.offset, b.size);
  }
  double scalar(std::span<const double> u, const std::string& name) const {
    return u[layout_.block(name).offset];
  }
  void set_scalar(std::span<double> u, const std::string& name, double v) const {
    u[layout_.block(name).offset] = v;
  }

  static void check_sum_zero(const Eigen::VectorXd& x, const char* what) {
    const double tol = 1e-8 * std::max(1.0, x.cwiseAbs().sum());
    if (std::abs(x.sum()) > tol)
      fail(ErrorKind::InvalidParams, std::string(what) + " violates its sum-to-zero constraint");
  }
  static void put_free(std::span<double> dst, const Eigen::VectorXd& x) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = x[static_cast<Eigen::Index>(i)];
  }
  void check_dims(Dims d) const {
    if (!(d == dims_)) fail(ErrorKind::LayoutMismatch, "parameter dimensions do not match model");
  }

  std::vector<double> unconstrain_impl(const APParams& p) const {
    if (kind_ != ModelKind::AP) fail(ErrorKind::LayoutMismatch, "AP parameters for an LC model");
    check_dims(p.dims());
    const auto A = dims_.ages, T = dims_.years, C = dims_.causes;
    std::vector<double> u(dim());
    std::span<double> us(u);
    u[0] = p.nu0;
    check_sum_zero(p.delta, "delta");
    check_sum_zero(p.pi, "pi");
    check_sum_zero(p.phi0, "phi0");
    put_free(seg(us, "delta"), p.delta);
    put_free(seg(us, "pi"), p.pi);
    put_free(seg(us, "phi0"), p.phi0);
    for (std::size_t c = 0; c < C; ++c) {
      check_sum_zero(p.zeta.col(c), "zeta");
      check_sum_zero(p.lambda.col(c), "lambda");
      put_free(seg(us, "zeta").subspan(c * (A - 1), A - 1), p.zeta.col(c));
      put_free(seg(us, "lambda").subspan(c * (T - 1), T - 1), p.lambda.col(c));
    }
    for (double s : {p.sigma_delta, p.sigma_pi, p.sigma_zeta, p.sigma_lambda, p.phi})
      if (!(s > 0.0)) fail(ErrorKind::InvalidParams, "scale parameters must be positive");
    set_scalar(us, "log_sigma_delta", std::log(p.sigma_delta));
    set_scalar(us, "log_sigma_pi", std::log(p.sigma_pi));
    set_scalar(us, "log_sigma_zeta", std::log(p.sigma_zeta));
    set_scalar(us, "log_sigma_lambda", std::log(p.sigma_lambda));
    set_scalar(us, "log_phi", std::log(p.phi));
    return u;
  }

  std::vector<double> unconstrain_impl(const LCParams& p) const {
    if (kind_ != ModelKind::LC) fail(ErrorKind::LayoutMismatch, "LC parameters for an AP model");
    check_dims(p.dims());
    const auto A = dims_.ages, C = dims_.causes;
    std::vector<double> u(dim());
    std::span<double> us(u);
    u[0] = p.nu0;
    check_sum_zero(p.delta, "delta");
    check_sum_zero(p.kappa, "kappa");
    check_sum_zero(p.phi0, "phi0");
    put_free(seg(us, "delta"), p.delta);
    put_free(seg(us, "kappa"), p.kappa);
    put_free(seg(us, "phi0"), p.phi0);
    if ((p.beta.array() <= 0.0).any() || std::abs(p.beta.sum() - 1.0) > 1e-8)
      fail(ErrorKind::InvalidParams, "beta must be positive and sum to one");
    auto bfree = seg(us, "beta");
    const double log_last = std::log(p.beta[static_cast<Eigen::Index>(A - 1)]);
    for (std::size_t a = 0; a + 1 < A; ++a)
      bfree[a] = std::log(p.beta[static_cast<Eigen::Index>(a)]) - log_last;
    for (std::size_t c = 0; c < C; ++c) {
      check_sum_zero(p.zeta.col(c), "zeta");
      put_free(seg(us, "zeta").subspan(c * (A - 1), A - 1), p.zeta.col(c));
    }
    auto th = seg(us, "theta");
    for (std::size_t c = 0; c < C; ++c) th[c] = p.theta[static_cast<Eigen::Index>(c)];
    for (double s : {p.sigma_delta, p.sigma_kappa, p.sigma_zeta, p.phi})
      if (!(s > 0.0)) fail(ErrorKind::InvalidParams, "scale parameters must be positive");
    set_scalar(us, "log_sigma_delta", std::log(p.sigma_delta));
    set_scalar(us, "log_sigma_kappa", std::log(p.sigma_kappa));
    set_scalar(us, "log_sigma_zeta", std::log(p.sigma_zeta));
    set_scalar(us, "log_phi", std::log(p.phi));
    return u;
  }

  // Poisson + DM likelihood of one cell. Accumulates d/d(log m), d/d(eta_c)
  // and d/d(phi). Returns the cell log-likelihood.
  double cell_loglik(std::size_t a, std::size_t t, double log_m, std::span<const double> eta,
                     double phi, bool want_grad, double& g_log_m, std::span<double> g_eta,
                     double& g_phi, std::span<double> gamma, std::span<double> galpha) const {
    const auto T = dims_.years, C = dims_.causes;
    const double e = exposure_[a * T + t];
    const std::int64_t n = totals_[a * T + t];
    const double mu = e * std::exp(log_m);
    double lp = static_cast<double>(n) * (std::log(e) + log_m) - mu - log_factorial(n);
    if (want_grad) g_log_m = static_cast<double>(n) - mu;
    if (n == 0) {
      if (want_grad) std::fill(g_eta.begin(), g_eta.end(), 0.0);
      return lp;
    }
    const std::int64_t* y = deaths_.data() + (a * T + t) * C;
    softmax_into(eta, gamma);
    constexpr double kNegInf = -std::numeric_limits<double>::infinity();
    if (!(phi > 0.0) || !std::isfinite(phi) || !std::isfinite(lp)) return kNegInf;
    for (std::size_t c = 0; c < C; ++c)
      if (y[c] > 0 && !(phi * gamma[c] > 0.0)) return kNegInf;
    double s = log_factorial(n) - log_rising(phi, n);
    for (std::size_t c = 0; c < C; ++c)
      s += log_rising(phi * gamma[c], y[c]) - log_factorial(y[c]);
    lp += s;
    if (want_grad) {
      const double common = digamma_rising(phi, n);
      // galpha_c = d/d(alpha_c) with phi = sum(alpha); mean_g is then d/dphi.
      double mean_g = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        galpha[c] = digamma_rising(phi * gamma[c], y[c]) - common;
        mean_g += gamma[c] * galpha[c];
      }
      for (std::size_t c = 0; c < C; ++c) g_eta[c] = phi * gamma[c] * (galpha[c] - mean_g);
      g_phi += mean_g;
    }
    return lp;
  }

  double ap_density(std::span<const double> u, std::span<double> grad) const {
    const auto A = dims_.ages, T = dims_.years, C = dims_.causes;
    const bool want = !grad.empty();
    const APParams p = constrain_ap(u);
    APParams g = APParams::zeros(dims_);
    g.sigma_delta = g.sigma_pi = g.sigma_zeta = g.sigma_lambda = g.phi = 0.0;
    double lp = 0.0;

    if (include_likelihood_) {
      std::vector<double> eta(C), geta(C), gamma(C), galpha(C);
      for (std::size_t a = 0; a < A; ++a)
        for (std::size_t t = 0; t < T; ++t) {
          for (std::size_t c = 0; c < C; ++c) eta[c] = p.phi0[c] + p.zeta(a, c) + p.lambda(t, c);
          double glm = 0.0;
          lp += cell_loglik(a, t, p.nu0 + p.delta[a] + p.pi[t], eta, p.phi, want, glm, geta, g.phi,
                            gamma, galpha);
          if (!want) continue;
          g.nu0 += glm;
          g.delta[a] += glm;
          g.pi[t] += glm;
          for (std::size_t c = 0; c < C; ++c) {
            g.phi0[c] += geta[c];
            g.zeta(a, c) += geta[c];
            g.lambda(t, c) += geta[c];
          }
        }
    }

    using detail::col;
    using detail::vec;
    lp += detail::normal_with_grad(p.nu0, hp_.nu0_sd, g.nu0);
    lp += detail::normal_with_grad(p.delta[0], hp_.delta12_sd, g.delta[0]);
    lp += detail::normal_with_grad(p.delta[1], hp_.delta12_sd, g.delta[1]);
    lp += detail::rw2_with_grad(vec(p.delta), p.sigma_delta, vec(g.delta), g.sigma_delta);
    lp += detail::normal_with_grad(p.pi[0], hp_.period12_sd, g.pi[0]);
    lp += detail::normal_with_grad(p.pi[1], hp_.period12_sd, g.pi[1]);
    lp += detail::rw2_with_grad(vec(p.pi), p.sigma_pi, vec(g.pi), g.sigma_pi);
    for (std::size_t c = 0; c < C; ++c) {
      lp += detail::normal_with_grad(p.phi0[c], hp_.phi0_sd, g.phi0[c]);
      lp += detail::normal_with_grad(p.zeta(0, c), hp_.zeta12_sd, g.zeta(0, c));
      lp += detail::normal_with_grad(p.zeta(1, c), hp_.zeta12_sd, g.zeta(1, c));
      lp += detail::rw2_with_grad(col(p.zeta, c), p.sigma_zeta, col(g.zeta, c), g.sigma_zeta);
      lp += detail::normal_with_grad(p.lambda(0, c), hp_.lambda12_sd, g.lambda(0, c));
      lp += detail::normal_with_grad(p.lambda(1, c), hp_.lambda12_sd, g.lambda(1, c));
      lp += detail::rw2_with_grad(col(p.lambda, c), p.sigma_lambda, col(g.lambda, c),
                                  g.sigma_lambda);
    }
    lp += detail::half_normal_with_grad(p.sigma_delta, hp_.sigma_delta_scale, g.sigma_delta);
    lp += detail::half_normal_with_grad(p.sigma_pi, hp_.sigma_period_scale, g.sigma_pi);
    lp += detail::half_normal_with_grad(p.sigma_zeta, hp_.sigma_zeta_scale, g.sigma_zeta);
    lp += detail::half_normal_with_grad(p.sigma_lambda, hp_.sigma_lambda_scale, g.sigma_lambda);
    // phi ~ logNormal plus the log-Jacobian of phi = exp(u) is N(u | mu, s).
    const double log_phi = std::log(p.phi);
    lp += normal_lpdf(log_phi, hp_.phi_mu, hp_.phi_sigma);
    // log-Jacobians of the four exp transforms.
    lp += std::log(p.sigma_delta) + std::log(p.sigma_pi) + std::log(p.sigma_zeta) +
          std::log(p.sigma_lambda);

    if (want) {
      std::fill(grad.begin(), grad.end(), 0.0);
      grad[0] = g.nu0;
      chain_sum_zero(g.delta, seg(grad, "delta"));
      chain_sum_zero(g.pi, seg(grad, "pi"));
      chain_sum_zero(g.phi0, seg(grad, "phi0"));
      for (std::size_t c = 0; c < C; ++c) {
        chain_sum_zero(g.zeta.col(c), seg(grad, "zeta").subspan(c * (A - 1), A - 1));
        chain_sum_zero(g.lambda.col(c), seg(grad, "lambda").subspan(c * (T - 1), T - 1));
      }
      set_scalar(grad, "log_sigma_delta", g.sigma_delta * p.sigma_delta + 1.0);
      set_scalar(grad, "log_sigma_pi", g.sigma_pi * p.sigma_pi + 1.0);
      set_scalar(grad, "log_sigma_zeta", g.sigma_zeta * p.sigma_zeta + 1.0);
      set_scalar(grad, "log_sigma_lambda", g.sigma_lambda * p.sigma_lambda + 1.0);
      set_scalar(grad, "log_phi",
                 g.phi * p.phi - (log_phi - hp_.phi_mu) / (hp_.phi_sigma * hp_.phi_sigma));
    }
    return lp;
  }

  double lc_density(std::span<const double> u, std::span<double> grad) const {
    const auto A = dims_.ages, T = dims_.years, C = dims_.causes;
    const bool want = !grad.empty();
    const LCParams p = constrain_lc(u);
    LCParams g = LCParams::zeros(dims_);
    g.beta.setZero();
    g.sigma_delta = g.sigma_kappa = g.sigma_zeta = g.phi = 0.0;
    double lp = 0.0;

    if (include_likelihood_) {
      std::vector<double> eta(C), geta(C), gamma(C), galpha(C);
      for (std::size_t a = 0; a < A; ++a)
        for (std::size_t t = 0; t < T; ++t) {
          for (std::size_t c = 0; c < C; ++c)
            eta[c] = p.phi0[c] + p.zeta(a, c) + p.theta[c] * p.kappa[t];
          double glm = 0.0;
          lp += cell_loglik(a, t, p.nu0 + p.delta[a] + p.beta[a] * p.kappa[t], eta, p.phi, want,
                            glm, geta, g.phi, gamma, galpha);
          if (!want) continue;
          g.nu0 += glm;
          g.delta[a] += glm;
          g.beta[a] += glm * p.kappa[t];
          g.kappa[t] += glm * p.beta[a];
          for (std::size_t c = 0; c < C; ++c) {
            g.phi0[c] += geta[c];
            g.zeta(a, c) += geta[c];
            g.theta[c] += geta[c] * p.kappa[t];
            g.kappa[t] += geta[c] * p.theta[c];
          }
        }
    }

    using detail::col;
    using detail::vec;
    lp += detail::normal_with_grad(p.nu0, hp_.nu0_sd, g.nu0);
    lp += detail::normal_with_grad(p.delta[0], hp_.delta12_sd, g.delta[0]);
    lp += detail::normal_with_grad(p.delta[1], hp_.delta12_sd, g.delta[1]);
    lp += detail::rw2_with_grad(vec(p.delta), p.sigma_delta, vec(g.delta), g.sigma_delta);
    for (std::size_t a = 0; a < A; ++a) {
      lp += detail::half_normal_with_grad(p.beta[a], hp_.beta_scale, g.beta[a]);
      // log-Jacobian of the simplex transform: sum_a log beta_a.
      lp += std::log(p.beta[a]);
      g.beta[a] += 1.0 / p.beta[a];
    }
    lp += detail::normal_with_grad(p.kappa[0], hp_.period12_sd, g.kappa[0]);
    lp += detail::rw1_with_grad(vec(p.kappa), p.sigma_kappa, vec(g.kappa), g.sigma_kappa);
    for (std::size_t c = 0; c < C; ++c) {
      lp += detail::normal_with_grad(p.phi0[c], hp_.phi0_sd, g.phi0[c]);
      lp += detail::normal_with_grad(p.zeta(0, c), hp_.zeta12_sd, g.zeta(0, c));
      lp += detail::normal_with_grad(p.zeta(1, c), hp_.zeta12_sd, g.zeta(1, c));
      lp += detail::rw2_with_grad(col(p.zeta, c), p.sigma_zeta, col(g.zeta, c), g.sigma_zeta);
      lp += detail::normal_with_grad(p.theta[c], hp_.theta_sd, g.theta[c]);
    }
    lp += detail::half_normal_with_grad(p.sigma_delta, hp_.sigma_delta_scale, g.sigma_delta);
    lp += detail::half_normal_with_grad(p.sigma_kappa, hp_.sigma_period_scale, g.sigma_kappa);
    lp += detail::half_normal_with_grad(p.sigma_zeta, hp_.sigma_zeta_scale, g.sigma_zeta);
    const double log_phi = std::log(p.phi);
    lp += normal_lpdf(log_phi, hp_.phi_mu, hp_.phi_sigma);
    lp += std::log(p.sigma_delta) + std::log(p.sigma_kappa) + std::log(p.sigma_zeta);

    if (want) {
      std::fill(grad.begin(), grad.end(), 0.0);
      grad[0] = g.nu0;
      chain_sum_zero(g.delta, seg(grad, "delta"));
      chain_sum_zero(g.kappa, seg(grad, "kappa"));
      chain_sum_zero(g.phi0, seg(grad, "phi0"));
      // d beta_i / d v_j = beta_i (1{i=j} - beta_j) for the free logits j < A.
      const double weighted = g.beta.dot(p.beta);
      auto gb = seg(grad, "beta");
      for (std::size_t j = 0; j + 1 < A; ++j) gb[j] = p.beta[j] * (g.beta[j] - weighted);
      for (std::size_t c = 0; c < C; ++c)
        chain_sum_zero(g.zeta.col(c), seg(grad, "zeta").subspan(c * (A - 1), A - 1));
      auto gt = seg(grad, "theta");
      for (std::size_t c = 0; c < C; ++c) gt[c] = g.theta[c];
      set_scalar(grad, "log_sigma_delta", g.sigma_delta * p.sigma_delta + 1.0);
      set_scalar(grad, "log_sigma_kappa", g.sigma_kappa * p.sigma_kappa + 1.0);
      set_scalar(grad, "log_sigma_zeta", g.sigma_zeta * p.sigma_zeta + 1.0);
      set_scalar(grad, "log_phi",
                 g.phi * p.phi - (log_phi - hp_.phi_mu) / (hp_.phi_sigma * hp_.phi_sigma));
    }
    (void)T;
    return lp;
  }

  // Gradient through x_i = u_i (i < N-1), x_N = -sum u.
  template <class V>
  static void chain_sum_zero(const V& gx, std::span<double> gu) {
    const auto n = gu.size();
    const double last = gx[static_cast<Eigen::Index>(n)];
    for (std::size_t i = 0; i < n; ++i) gu[i] = gx[static_cast<Eigen::Index>(i)] - last;
  }

  ModelKind kind_;
  Dims dims_;
  HyperPriors hp_;
  bool include_likelihood_;
  Layout layout_;
  std::vector<double> exposure_;
  std::vector<std::int64_t> deaths_;
  std::vector<std::int64_t> totals_;
  double crude_log_rate_ = 0.0;
};

/// Log posterior of `kind` at u; throws NonFinite when the value is NaN/inf.
inline double joint_log_posterior(ModelKind kind, std::span<const double> u,
                                  const MortalityDataset& data, const HyperPriors& hp) {
  const DmpModel model(kind, data, hp);
  const double lp = model.log_density(u);
  if (!std::isfinite(lp)) fail(ErrorKind::NonFinite, "log posterior is not finite");
  return lp;
}

/// Analytic gradient of joint_log_posterior with respect to u.
inline std::vector<double> joint_log_posterior_gradient(ModelKind kind, std::span<const double> u,
                                                        const MortalityDataset& data,
                                                        const HyperPriors& hp) {
  const DmpModel model(kind, data, hp);
  std::vector<double> g(model.dim());
  const double lp = model.log_density(u, g);
  if (!std::isfinite(lp)) fail(ErrorKind::NonFinite, "log posterior is not finite");
  for (double v : g)
    if (!std::isfinite(v)) fail(ErrorKind::NonFinite, "gradient is not finite");
  return g;
}

}  // namespace dmp
