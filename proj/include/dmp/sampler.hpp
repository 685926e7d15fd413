#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>
#include <boost/math/distributions/normal.hpp>

#include "dmp/distributions.hpp"
#include "dmp/error.hpp"

namespace dmp {

/// Log density and gradient. Must be reentrant: chains call it concurrently.
/// Writes the gradient into the second argument and returns log p; a
/// non-finite return marks the point as outside the support.
using LogDensityFn = std::function<double(std::span<const double>, std::span<double>)>;

struct SamplerConfig {
  std::size_t chains = 3;
  std::size_t iters = 3000;
  std::size_t warmup = 1500;
  double target_accept = 0.8;
  std::size_t max_treedepth = 10;
  std::uint64_t seed = 1;
  double init_radius = 2.0;
  std::size_t adapt_init_buffer = 75;
  std::size_t adapt_term_buffer = 0;  // 0: max(50, warmup / 5)
  std::size_t adapt_base_window = 25;
  bool parallel = true;

  void validate() const {
    if (chains == 0) fail(ErrorKind::ConfigError, "chains must be positive");
    if (iters == 0 || warmup == 0) fail(ErrorKind::ConfigError, "iters and warmup must be positive");
    if (warmup >= iters) fail(ErrorKind::ConfigError, "warmup must be smaller than iters");
    if (!(target_accept > 0.0 && target_accept < 1.0))
      fail(ErrorKind::ConfigError, "target_accept must lie in (0, 1)");
    if (max_treedepth == 0) fail(ErrorKind::ConfigError, "max_treedepth must be positive");
    if (!(init_radius >= 0.0)) fail(ErrorKind::ConfigError, "init_radius must be nonnegative");
  }
};

/// Kept draws in unconstrained space, laid out [chain][iter][dim].
struct PosteriorDraws {
  std::size_t chains = 0;
  std::size_t kept = 0;
  std::size_t dim = 0;
  std::vector<double> draws;
  std::vector<std::uint8_t> divergent;  // [chain][iter]
  std::vector<int> treedepth;           // [chain][iter]
  std::vector<double> accept_stat;      // [chain][iter]
  std::vector<double> step_size;        // adapted step size per chain
  std::vector<std::vector<double>> inv_metric;  // per chain

  double at(std::size_t chain, std::size_t iter, std::size_t d) const {
    return draws[(chain * kept + iter) * dim + d];
  }
  std::span<const double> draw(std::size_t chain, std::size_t iter) const {
    return {draws.data() + (chain * kept + iter) * dim, dim};
  }
  std::size_t total() const { return chains * kept; }

  /// Values of coordinate d, one vector per chain.
  std::vector<std::vector<double>> coordinate(std::size_t d) const {
    std::vector<std::vector<double>> out(chains, std::vector<double>(kept));
    for (std::size_t c = 0; c < chains; ++c)
      for (std::size_t i = 0; i < kept; ++i) out[c][i] = at(c, i, d);
    return out;
  }
  std::size_t divergences() const {
    return static_cast<std::size_t>(std::count(divergent.begin(), divergent.end(), 1));
  }
  double mean_accept() const {
    if (accept_stat.empty()) return 0.0;
    return std::accumulate(accept_stat.begin(), accept_stat.end(), 0.0) /
           static_cast<double>(accept_stat.size());
  }
};

// ---------------------------------------------------------------------------
// Hamiltonian pieces

struct PhasePoint {
  std::vector<double> q, p, grad;
  double logp = 0.0;
};

inline double kinetic_energy(std::span<const double> p, std::span<const double> inv_metric) {
  double k = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) k += p[i] * p[i] * inv_metric[i];
  return 0.5 * k;
}

inline double hamiltonian(const PhasePoint& z, std::span<const double> inv_metric) {
  return -z.logp + kinetic_energy(z.p, inv_metric);
}

/// One leapfrog step of size eps (negative eps integrates backwards).
inline void leapfrog(const LogDensityFn& f, PhasePoint& z, std::span<const double> inv_metric,
                     double eps) {
  const std::size_t n = z.q.size();
  for (std::size_t i = 0; i < n; ++i) z.p[i] += 0.5 * eps * z.grad[i];
  for (std::size_t i = 0; i < n; ++i) z.q[i] += eps * inv_metric[i] * z.p[i];
  z.logp = f(z.q, z.grad);
  for (std::size_t i = 0; i < n; ++i) z.p[i] += 0.5 * eps * z.grad[i];
}

// ---------------------------------------------------------------------------
// Adaptation

class DualAveraging {
 public:
  explicit DualAveraging(double delta = 0.8, double gamma = 0.05, double kappa = 0.75,
                         double t0 = 10.0)
      : delta_(delta), gamma_(gamma), kappa_(kappa), t0_(t0) {}

  void restart(double eps) {
    mu_ = std::log(10.0 * eps);
    counter_ = 0;
    s_bar_ = 0.0;
    x_bar_ = 0.0;
  }

  /// Feeds one acceptance statistic; returns the next step size.
  double update(double accept_stat) {
    ++counter_;
    accept_stat = std::min(1.0, accept_stat);
    const double n = static_cast<double>(counter_);
    const double eta = 1.0 / (n + t0_);
    s_bar_ = (1.0 - eta) * s_bar_ + eta * (delta_ - accept_stat);
    const double x = mu_ - s_bar_ * std::sqrt(n) / gamma_;
    const double x_eta = std::pow(n, -kappa_);
    x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
    return std::exp(x);
  }

  double final_step_size() const { return std::exp(x_bar_); }

 private:
  double delta_, gamma_, kappa_, t0_;
  double mu_ = 0.0, s_bar_ = 0.0, x_bar_ = 0.0;
  std::size_t counter_ = 0;
};

/// Fast / slow (doubling) / fast warmup windows for the diagonal metric.
class WindowedVariance {
 public:
  WindowedVariance(std::size_t dim, std::size_t warmup, std::size_t init_buffer = 75,
                   std::size_t term_buffer = 50, std::size_t base_window = 25)
      : dim_(dim), warmup_(warmup) {
    init_buffer_ = init_buffer;
    term_buffer_ = term_buffer;
    base_window_ = base_window;
    if (warmup < 20) {
      active_ = false;
    } else if (init_buffer_ + base_window_ + term_buffer_ > warmup) {
      init_buffer_ = static_cast<std::size_t>(0.15 * static_cast<double>(warmup));
      term_buffer_ = static_cast<std::size_t>(0.1 * static_cast<double>(warmup));
      base_window_ = warmup - (init_buffer_ + term_buffer_);
    }
    window_size_ = base_window_;
    next_window_ = init_buffer_ + window_size_ - 1;
    restart_estimator();
  }

  /// Records q; returns true when a window closes and `var` was updated.
  bool learn(std::span<const double> q, std::vector<double>& var) {
    if (!active_) return false;
    if (in_window()) add(q);
    if (counter_ == next_window_ && counter_ != warmup_) {
      compute_next_window();
      const double n = static_cast<double>(n_);
      for (std::size_t i = 0; i < dim_; ++i) {
        const double v = n > 1 ? m2_[i] / (n - 1.0) : 1.0;
        var[i] = (n / (n + 5.0)) * v + 1e-3 * (5.0 / (n + 5.0));
      }
      restart_estimator();
      ++counter_;
      return true;
    }
    ++counter_;
    return false;
  }

 private:
  bool in_window() const {
    return counter_ >= init_buffer_ && counter_ < warmup_ - term_buffer_ && counter_ != warmup_;
  }
  void compute_next_window() {
    if (next_window_ == warmup_ - term_buffer_ - 1) return;
    window_size_ *= 2;
    next_window_ = counter_ + window_size_;
    if (next_window_ != warmup_ - term_buffer_ - 1) {
      const std::size_t boundary = next_window_ + 2 * window_size_;
      if (boundary >= warmup_ - term_buffer_) next_window_ = warmup_ - term_buffer_ - 1;
    }
  }
  void restart_estimator() {
    n_ = 0;
    mean_.assign(dim_, 0.0);
    m2_.assign(dim_, 0.0);
  }
  void add(std::span<const double> q) {
    ++n_;
    for (std::size_t i = 0; i < dim_; ++i) {
      const double d = q[i] - mean_[i];
      mean_[i] += d / static_cast<double>(n_);
      m2_[i] += d * (q[i] - mean_[i]);
    }
  }

  std::size_t dim_, warmup_;
  std::size_t init_buffer_, term_buffer_, base_window_;
  std::size_t window_size_ = 0, next_window_ = 0, counter_ = 0;
  bool active_ = true;
  std::size_t n_ = 0;
  std::vector<double> mean_, m2_;
};

// ---------------------------------------------------------------------------
// NUTS

struct Transition {
  double accept_stat = 0.0;
  int depth = 0;
  bool divergent = false;
  std::size_t n_leapfrog = 0;
};

namespace detail {

inline double log_sum_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

class Nuts {
 public:
  static constexpr double kMaxDeltaH = 1000.0;

  Nuts(const LogDensityFn& f, std::size_t dim, std::size_t max_depth, Rng& rng)
      : f_(f), dim_(dim), max_depth_(max_depth), rng_(rng), inv_metric_(dim, 1.0) {}

  double eps = 1.0;
  std::vector<double>& inv_metric() { return inv_metric_; }

  void sample_momentum(PhasePoint& z) {
    for (std::size_t i = 0; i < dim_; ++i)
      z.p[i] = standard_normal(rng_) / std::sqrt(inv_metric_[i]);
  }

  std::vector<double> p_sharp(const std::vector<double>& p) const {
    std::vector<double> out(dim_);
    for (std::size_t i = 0; i < dim_; ++i) out[i] = inv_metric_[i] * p[i];
    return out;
  }

  double energy(const PhasePoint& z) const {
    const double h = hamiltonian(z, inv_metric_);
    return std::isnan(h) ? std::numeric_limits<double>::infinity() : h;
  }

  /// Step-size heuristic: double or halve until the one-step acceptance
  /// crosses 0.8.
  void init_stepsize(const PhasePoint& start) {
    PhasePoint z = start;
    sample_momentum(z);
    double h0 = energy(z);
    leapfrog(f_, z, inv_metric_, eps);
    double delta = h0 - energy(z);
    const int direction = delta > std::log(0.8) ? 1 : -1;
    for (;;) {
      z = start;
      sample_momentum(z);
      h0 = energy(z);
      leapfrog(f_, z, inv_metric_, eps);
      delta = h0 - energy(z);
      if (direction == 1 && !(delta > std::log(0.8))) break;
      if (direction == -1 && !(delta < std::log(0.8))) break;
      eps = direction == 1 ? 2.0 * eps : 0.5 * eps;
      if (eps > 1e7) fail(ErrorKind::InitializationFailure, "step size diverged to infinity");
      if (eps == 0.0) fail(ErrorKind::InitializationFailure, "step size collapsed to zero");
    }
  }

  Transition transition(PhasePoint& z) {
    sample_momentum(z);
    const double h0 = energy(z);
    divergent_ = false;

    PhasePoint z_fwd = z, z_bck = z, z_sample = z, z_propose = z;
    std::vector<double> p_fwd_fwd = z.p, p_fwd_bck = z.p, p_bck_fwd = z.p, p_bck_bck = z.p;
    const auto ps = p_sharp(z.p);
    std::vector<double> ps_fwd_fwd = ps, ps_fwd_bck = ps, ps_bck_fwd = ps, ps_bck_bck = ps;
    std::vector<double> rho = z.p;
    double log_sum_weight = 0.0;
    std::size_t n_leapfrog = 0;
    double sum_metro = 0.0;
    int depth = 0;

    while (static_cast<std::size_t>(depth) < max_depth_) {
      std::vector<double> rho_fwd(dim_, 0.0), rho_bck(dim_, 0.0);
      bool valid = false;
      double lsw_subtree = -std::numeric_limits<double>::infinity();
      if (uniform01(rng_) > 0.5) {
        z_ = z_fwd;
        rho_bck = rho;
        p_bck_fwd = p_fwd_bck;
        ps_bck_fwd = ps_fwd_bck;
        valid = build_tree(depth, z_propose, ps_fwd_bck, ps_fwd_fwd, rho_fwd, p_fwd_bck, p_fwd_fwd,
                           h0, 1.0, n_leapfrog, lsw_subtree, sum_metro);
        z_fwd = z_;
      } else {
        z_ = z_bck;
        rho_fwd = rho;
        p_fwd_bck = p_bck_fwd;
        ps_fwd_bck = ps_bck_fwd;
        valid = build_tree(depth, z_propose, ps_bck_fwd, ps_bck_bck, rho_bck, p_bck_fwd, p_bck_bck,
                           h0, -1.0, n_leapfrog, lsw_subtree, sum_metro);
        z_bck = z_;
      }
      if (!valid) break;
      ++depth;

      if (lsw_subtree > log_sum_weight) {
        z_sample = z_propose;
      } else if (uniform01(rng_) < std::exp(lsw_subtree - log_sum_weight)) {
        z_sample = z_propose;
      }
      log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);

      for (std::size_t i = 0; i < dim_; ++i) rho[i] = rho_bck[i] + rho_fwd[i];
      bool persist = criterion(ps_bck_bck, ps_fwd_fwd, rho);
      std::vector<double> ext(dim_);
      for (std::size_t i = 0; i < dim_; ++i) ext[i] = rho_bck[i] + p_fwd_bck[i];
      persist = persist && criterion(ps_bck_bck, ps_fwd_bck, ext);
      for (std::size_t i = 0; i < dim_; ++i) ext[i] = rho_fwd[i] + p_bck_fwd[i];
      persist = persist && criterion(ps_bck_fwd, ps_fwd_fwd, ext);
      if (!persist) break;
    }

    z = z_sample;
    Transition t;
    t.n_leapfrog = n_leapfrog;
    t.accept_stat = n_leapfrog > 0 ? sum_metro / static_cast<double>(n_leapfrog) : 0.0;
    t.depth = depth;
    t.divergent = divergent_;
    return t;
  }

 private:
  static bool criterion(const std::vector<double>& ps_minus, const std::vector<double>& ps_plus,
                        const std::vector<double>& rho) {
    return dot(ps_plus, rho) > 0.0 && dot(ps_minus, rho) > 0.0;
  }

  bool build_tree(int depth, PhasePoint& z_propose, std::vector<double>& ps_beg,
                  std::vector<double>& ps_end, std::vector<double>& rho, std::vector<double>& p_beg,
                  std::vector<double>& p_end, double h0, double sign, std::size_t& n_leapfrog,
                  double& log_sum_weight, double& sum_metro) {
    if (depth == 0) {
      leapfrog(f_, z_, inv_metric_, sign * eps);
      ++n_leapfrog;
      const double h = energy(z_);
      if (h - h0 > kMaxDeltaH) divergent_ = true;
      log_sum_weight = log_sum_exp(log_sum_weight, h0 - h);
      sum_metro += h0 - h > 0.0 ? 1.0 : std::exp(h0 - h);
      z_propose = z_;
      ps_beg = p_sharp(z_.p);
      ps_end = ps_beg;
      for (std::size_t i = 0; i < dim_; ++i) rho[i] += z_.p[i];
      p_beg = z_.p;
      p_end = p_beg;
      return !divergent_;
    }

    double lsw_init = -std::numeric_limits<double>::infinity();
    std::vector<double> p_init_end(dim_, 0.0), ps_init_end(dim_, 0.0), rho_init(dim_, 0.0);
    if (!build_tree(depth - 1, z_propose, ps_beg, ps_init_end, rho_init, p_beg, p_init_end, h0,
                    sign, n_leapfrog, lsw_init, sum_metro))
      return false;

    PhasePoint z_propose_final = z_;
    double lsw_final = -std::numeric_limits<double>::infinity();
    std::vector<double> p_final_beg(dim_, 0.0), ps_final_beg(dim_, 0.0), rho_final(dim_, 0.0);
    if (!build_tree(depth - 1, z_propose_final, ps_final_beg, ps_end, rho_final, p_final_beg, p_end,
                    h0, sign, n_leapfrog, lsw_final, sum_metro))
      return false;

    const double lsw_subtree = log_sum_exp(lsw_init, lsw_final);
    log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);
    if (lsw_final > lsw_subtree) {
      z_propose = z_propose_final;
    } else if (uniform01(rng_) < std::exp(lsw_final - lsw_subtree)) {
      z_propose = z_propose_final;
    }

    std::vector<double> rho_subtree(dim_);
    for (std::size_t i = 0; i < dim_; ++i) {
      rho_subtree[i] = rho_init[i] + rho_final[i];
      rho[i] += rho_subtree[i];
    }
    bool persist = criterion(ps_beg, ps_end, rho_subtree);
    std::vector<double> ext(dim_);
    for (std::size_t i = 0; i < dim_; ++i) ext[i] = rho_init[i] + p_final_beg[i];
    persist = persist && criterion(ps_beg, ps_final_beg, ext);
    for (std::size_t i = 0; i < dim_; ++i) ext[i] = rho_final[i] + p_init_end[i];
    persist = persist && criterion(ps_init_end, ps_end, ext);
    return persist;
  }

  const LogDensityFn& f_;
  std::size_t dim_, max_depth_;
  Rng& rng_;
  std::vector<double> inv_metric_;
  PhasePoint z_;
  bool divergent_ = false;
};

struct ChainOutput {
  std::vector<double> draws;
  std::vector<std::uint8_t> divergent;
  std::vector<int> depth;
  std::vector<double> accept;
  double eps = 0.0;
  std::vector<double> inv_metric;
};

inline PhasePoint find_start(const LogDensityFn& f, std::span<const double> init, double radius,
                             Rng& rng) {
  const std::size_t dim = init.size();
  PhasePoint z;
  z.q.resize(dim);
  z.p.assign(dim, 0.0);
  z.grad.assign(dim, 0.0);
  for (int attempt = 0; attempt < 100; ++attempt) {
    for (std::size_t i = 0; i < dim; ++i) z.q[i] = init[i] + radius * (2.0 * uniform01(rng) - 1.0);
    z.logp = f(z.q, z.grad);
    if (std::isfinite(z.logp) &&
        std::all_of(z.grad.begin(), z.grad.end(), [](double g) { return std::isfinite(g); }))
      return z;
  }
  fail(ErrorKind::InitializationFailure,
       "no finite log density found in 100 jittered initialization attempts");
}

inline ChainOutput run_chain(const LogDensityFn& f, std::span<const double> init,
                             const SamplerConfig& cfg, std::size_t chain) {
  const std::size_t dim = init.size();
  Rng rng = make_stream(cfg.seed, chain);
  PhasePoint z = find_start(f, init, cfg.init_radius, rng);

  Nuts nuts(f, dim, cfg.max_treedepth, rng);
  nuts.init_stepsize(z);
  DualAveraging da(cfg.target_accept);
  da.restart(nuts.eps);
  const std::size_t term =
      cfg.adapt_term_buffer > 0 ? cfg.adapt_term_buffer : std::max<std::size_t>(50, cfg.warmup / 5);
  WindowedVariance wv(dim, cfg.warmup, cfg.adapt_init_buffer, term,
                        cfg.adapt_base_window);

  ChainOutput out;
  const std::size_t kept = cfg.iters - cfg.warmup;
  out.draws.reserve(kept * dim);
  for (std::size_t it = 0; it < cfg.iters; ++it) {
    const Transition t = nuts.transition(z);
    if (it < cfg.warmup) {
      nuts.eps = da.update(t.accept_stat);
      if (wv.learn(z.q, nuts.inv_metric())) {
        nuts.init_stepsize(z);
        da.restart(nuts.eps);
      }
      if (it + 1 == cfg.warmup) nuts.eps = da.final_step_size();
      continue;
    }
    out.draws.insert(out.draws.end(), z.q.begin(), z.q.end());
    out.divergent.push_back(t.divergent ? 1 : 0);
    out.depth.push_back(t.depth);
    out.accept.push_back(t.accept_stat);
  }
  out.eps = nuts.eps;
  out.inv_metric = nuts.inv_metric();
  return out;
}

}  // namespace detail

/// Multi-chain NUTS. Chain k draws from its own stream make_stream(seed, k);
/// results are merged by chain index, so output does not depend on threading.
inline PosteriorDraws nuts_sample(const LogDensityFn& logp_and_grad, std::size_t dim,
                                  const SamplerConfig& config, std::span<const double> init) {
  config.validate();
  if (init.size() != dim) fail(ErrorKind::LayoutMismatch, "init has wrong dimension");
  std::vector<detail::ChainOutput> outs(config.chains);
  std::vector<std::exception_ptr> errors(config.chains);
  auto work = [&](std::size_t c) {
    try {
      outs[c] = detail::run_chain(logp_and_grad, init, config, c);
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };
  if (config.parallel && config.chains > 1) {
    std::vector<std::thread> threads;
    for (std::size_t c = 0; c < config.chains; ++c) threads.emplace_back(work, c);
    for (auto& t : threads) t.join();
  } else {
    for (std::size_t c = 0; c < config.chains; ++c) work(c);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  PosteriorDraws d;
  d.chains = config.chains;
  d.kept = config.iters - config.warmup;
  d.dim = dim;
  for (auto& o : outs) {
    d.draws.insert(d.draws.end(), o.draws.begin(), o.draws.end());
    d.divergent.insert(d.divergent.end(), o.divergent.begin(), o.divergent.end());
    d.treedepth.insert(d.treedepth.end(), o.depth.begin(), o.depth.end());
    d.accept_stat.insert(d.accept_stat.end(), o.accept.begin(), o.accept.end());
    d.step_size.push_back(o.eps);
    d.inv_metric.push_back(std::move(o.inv_metric));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Diagnostics

struct RhatResult {
  double value = 1.0;
  bool constant = false;  // zero variance everywhere; value is the 1.0 fallback
};

namespace detail {

inline void check_chains(const std::vector<std::vector<double>>& chains, std::size_t min_chains,
                         std::size_t min_draws) {
  if (chains.size() < min_chains)
    fail(ErrorKind::TooFewDraws, "need at least " + std::to_string(min_chains) + " chains");
  const std::size_t n = chains.front().size();
  for (const auto& c : chains)
    if (c.size() != n) fail(ErrorKind::InvalidParams, "chains have different lengths");
  if (n < min_draws)
    fail(ErrorKind::TooFewDraws, "need at least " + std::to_string(min_draws) + " draws per chain");
}

inline std::vector<std::vector<double>> split_halves(const std::vector<std::vector<double>>& chains) {
  std::vector<std::vector<double>> out;
  for (const auto& c : chains) {
    const std::size_t half = c.size() / 2;
    out.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
    out.emplace_back(c.end() - static_cast<std::ptrdiff_t>(half), c.end());
  }
  return out;
}

inline std::vector<std::vector<double>> rank_normalize(const std::vector<std::vector<double>>& chains) {
  std::vector<std::pair<double, std::size_t>> pooled;
  for (std::size_t c = 0; c < chains.size(); ++c)
    for (std::size_t i = 0; i < chains[c].size(); ++i)
      pooled.emplace_back(chains[c][i], c * chains[c].size() + i);
  std::sort(pooled.begin(), pooled.end());
  const double S = static_cast<double>(pooled.size());
  std::vector<double> z(pooled.size());
  const boost::math::normal_distribution<double> normal;
  for (std::size_t i = 0; i < pooled.size();) {
    std::size_t j = i;
    while (j < pooled.size() && pooled[j].first == pooled[i].first) ++j;
    const double rank = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1..j
    const double v = boost::math::quantile(normal, (rank - 0.375) / (S + 0.25));
    for (std::size_t k = i; k < j; ++k) z[pooled[k].second] = v;
    i = j;
  }
  std::vector<std::vector<double>> out(chains.size());
  for (std::size_t c = 0; c < chains.size(); ++c) {
    const std::size_t n = chains[c].size();
    out[c].assign(z.begin() + static_cast<std::ptrdiff_t>(c * n),
                  z.begin() + static_cast<std::ptrdiff_t>((c + 1) * n));
  }
  return out;
}

inline double basic_rhat(const std::vector<std::vector<double>>& chains) {
  const double m = static_cast<double>(chains.size());
  const double n = static_cast<double>(chains.front().size());
  std::vector<double> means, vars;
  for (const auto& c : chains) {
    const double mu = std::accumulate(c.begin(), c.end(), 0.0) / n;
    double v = 0.0;
    for (double x : c) v += (x - mu) * (x - mu);
    means.push_back(mu);
    vars.push_back(v / (n - 1.0));
  }
  const double W = std::accumulate(vars.begin(), vars.end(), 0.0) / m;
  const double grand = std::accumulate(means.begin(), means.end(), 0.0) / m;
  double B = 0.0;
  for (double mu : means) B += (mu - grand) * (mu - grand);
  B *= n / (m - 1.0);
  const double var_plus = (n - 1.0) / n * W + B / n;
  return std::sqrt(var_plus / W);
}

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

/// Rank-normalized split-R-hat: max of the bulk and folded (tail) versions,
/// and of the plain split-R-hat, which keeps large separations visible once
/// ranks saturate.
inline RhatResult split_rhat(const std::vector<std::vector<double>>& chains) {
  detail::check_chains(chains, 2, 4);
  const auto split = detail::split_halves(chains);
  bool all_const = true;
  const double first = chains.front().front();
  for (const auto& c : chains)
    for (double x : c) {
      if (!std::isfinite(x)) return {std::numeric_limits<double>::quiet_NaN(), false};
      all_const = all_const && x == first;
    }
  if (all_const) return {1.0, true};

  const double bulk = detail::basic_rhat(detail::rank_normalize(split));
  std::vector<double> pooled;
  for (const auto& c : split) pooled.insert(pooled.end(), c.begin(), c.end());
  const double med = detail::median_of(pooled);
  auto folded = split;
  for (auto& c : folded)
    for (auto& x : c) x = std::abs(x - med);
  const double tail = detail::basic_rhat(detail::rank_normalize(folded));
  const double plain = detail::basic_rhat(split);
  return {std::max({bulk, tail, plain}), false};
}

namespace detail {

// Biased autocovariance for lags 0..n-1 via zero-padded FFT.
inline std::vector<double> autocovariance(const std::vector<double>& x) {
  const std::size_t n = x.size();
  const double mu = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  std::size_t m = 1;
  while (m < 2 * n) m <<= 1;
  std::vector<double> padded(m, 0.0);
  for (std::size_t i = 0; i < n; ++i) padded[i] = x[i] - mu;
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> freq;
  fft.fwd(freq, padded);
  for (auto& f : freq) f = std::norm(f);
  std::vector<double> ac;
  fft.inv(ac, freq);
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = ac[k] / static_cast<double>(n);
  return out;
}

}  // namespace detail

/// Multi-chain ESS with Geyer's initial-monotone sequence truncation.
/// Returns 0 for a constant sample.
inline double effective_sample_size(const std::vector<std::vector<double>>& chains) {
  detail::check_chains(chains, 1, 4);
  const std::size_t m = chains.size();
  const std::size_t n = chains.front().size();
  const double first = chains.front().front();
  bool all_const = true;
  for (const auto& c : chains)
    for (double x : c) {
      if (!std::isfinite(x)) return std::numeric_limits<double>::quiet_NaN();
      all_const = all_const && x == first;
    }
  if (all_const) return 0.0;

  std::vector<std::vector<double>> acov(m);
  std::vector<double> means(m);
  for (std::size_t c = 0; c < m; ++c) {
    acov[c] = detail::autocovariance(chains[c]);
    means[c] = std::accumulate(chains[c].begin(), chains[c].end(), 0.0) / static_cast<double>(n);
  }
  const double dn = static_cast<double>(n);
  double mean_var = 0.0;
  for (std::size_t c = 0; c < m; ++c) mean_var += acov[c][0] * dn / (dn - 1.0);
  mean_var /= static_cast<double>(m);
  double var_plus = mean_var * (dn - 1.0) / dn;
  if (m > 1) {
    const double g = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(m);
    double v = 0.0;
    for (double mu : means) v += (mu - g) * (mu - g);
    var_plus += v / (static_cast<double>(m) - 1.0);
  }
  auto mean_acov = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t c = 0; c < m; ++c) s += acov[c][lag];
    return s / static_cast<double>(m);
  };

  std::vector<double> rho(n, 0.0);
  rho[0] = 1.0;
  double rho_even = 1.0;
  double rho_odd = 1.0 - (mean_var - mean_acov(1)) / var_plus;
  rho[1] = rho_odd;
  std::size_t t = 1;
  while (t + 5 < n && rho_even + rho_odd > 0.0) {
    rho_even = 1.0 - (mean_var - mean_acov(t + 1)) / var_plus;
    rho_odd = 1.0 - (mean_var - mean_acov(t + 2)) / var_plus;
    if (rho_even + rho_odd >= 0.0) {
      rho[t + 1] = rho_even;
      rho[t + 2] = rho_odd;
    }
    t += 2;
  }
  const std::size_t max_t = t;
  if (rho_even > 0.0 && max_t + 1 < n) rho[max_t + 1] = rho_even;

  for (std::size_t k = 1; k + 3 <= max_t; k += 2) {
    if (rho[k + 1] + rho[k + 2] > rho[k - 1] + rho[k]) {
      rho[k + 1] = 0.5 * (rho[k - 1] + rho[k]);
      rho[k + 2] = rho[k + 1];
    }
  }
  const double total = static_cast<double>(m) * dn;
  double tau = -1.0;
  for (std::size_t k = 0; k <= max_t && k < n; ++k) tau += 2.0 * rho[k];
  if (max_t + 1 < n) tau += rho[max_t + 1];
  tau = std::max(tau, 1.0 / std::log10(total));
  return total / tau;
}

/// Type-7 (linear interpolation) sample quantile.
inline double quantile(std::vector<double> v, double p) {
  if (v.empty()) fail(ErrorKind::EmptyDraws, "quantile of an empty sample");
  if (!(p >= 0.0 && p <= 1.0)) fail(ErrorKind::DomainError, "quantile level must lie in [0, 1]");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Posterior summary row: Mean, SD, 5%, 50%, 95%, n_eff, R-hat.
struct ParamSummary {
  std::string name;
  double mean = 0.0, sd = 0.0, q5 = 0.0, q50 = 0.0, q95 = 0.0, n_eff = 0.0, rhat = 1.0;
  bool rhat_constant = false;
};

inline ParamSummary summarize_param(const std::string& name,
                                    const std::vector<std::vector<double>>& chains) {
  ParamSummary s;
  s.name = name;
  std::vector<double> pooled;
  for (const auto& c : chains) pooled.insert(pooled.end(), c.begin(), c.end());
  if (pooled.empty()) fail(ErrorKind::EmptyDraws, "no draws for " + name);
  const double n = static_cast<double>(pooled.size());
  s.mean = std::accumulate(pooled.begin(), pooled.end(), 0.0) / n;
  double v = 0.0;
  for (double x : pooled) v += (x - s.mean) * (x - s.mean);
  s.sd = n > 1 ? std::sqrt(v / (n - 1.0)) : 0.0;
  s.q5 = quantile(pooled, 0.05);
  s.q50 = quantile(pooled, 0.5);
  s.q95 = quantile(pooled, 0.95);
  if (chains.front().size() >= 4) {
    s.n_eff = effective_sample_size(chains);
    if (chains.size() >= 2) {
      const auto r = split_rhat(chains);
      s.rhat = r.value;
      s.rhat_constant = r.constant;
    } else {
      s.rhat = std::numeric_limits<double>::quiet_NaN();
    }
  } else {
    s.n_eff = std::numeric_limits<double>::quiet_NaN();
    s.rhat = std::numeric_limits<double>::quiet_NaN();
  }
  return s;
}

struct Diagnostics {
  std::vector<ParamSummary> params;
  std::size_t divergences = 0;
  double mean_accept = 0.0;

  double max_rhat() const {
    double r = 1.0;
    for (const auto& p : params)
      if (!std::isnan(p.rhat)) r = std::max(r, p.rhat);
    return r;
  }
};

/// Diagnostics over the unconstrained coordinates.
inline Diagnostics diagnose(const PosteriorDraws& d, const std::vector<std::string>& names = {}) {
  Diagnostics out;
  for (std::size_t k = 0; k < d.dim; ++k)
    out.params.push_back(
        summarize_param(k < names.size() ? names[k] : "u[" + std::to_string(k + 1) + "]",
                        d.coordinate(k)));
  out.divergences = d.divergences();
  out.mean_accept = d.mean_accept();
  return out;
}

}  // namespace dmp
