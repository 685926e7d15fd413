#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "dmp/data_model.hpp"
#include "dmp/distributions.hpp"
#include "dmp/error.hpp"

namespace dmp {

/// Point (or single-path) log-rate surface from a benchmark model.
/// Cause cells are [a][h][c]; the total is log sum_c m_atc.
struct RateSurface {
  std::size_t ages = 0, horizon = 0, causes = 0;
  int first_year = 0;
  std::vector<double> log_m_cause;

  double cause(std::size_t a, std::size_t h, std::size_t c) const {
    return log_m_cause[(a * horizon + h) * causes + c];
  }
  double total(std::size_t a, std::size_t h) const {
    double s = 0.0;
    for (std::size_t c = 0; c < causes; ++c) s += std::exp(cause(a, h, c));
    return std::log(s);
  }
};

// ---------------------------------------------------------------------------
// Random walk with drift

struct RandomWalkDrift {
  double drift = 0.0;
  double variance = 0.0;  // of the first differences
};

inline RandomWalkDrift fit_rwd(std::span<const double> x) {
  if (x.size() < 2) fail(ErrorKind::TooShort, "random walk with drift needs two points");
  const std::size_t n = x.size() - 1;
  RandomWalkDrift r;
  r.drift = (x.back() - x.front()) / static_cast<double>(n);
  if (n > 1) {
    double ss = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i) {
      const double d = x[i] - x[i - 1] - r.drift;
      ss += d * d;
    }
    r.variance = ss / static_cast<double>(n - 1);
  }
  return r;
}

/// Mean path (stochastic = false) or one simulated path from the last value.
inline std::vector<double> rwd_path(double last, const RandomWalkDrift& m, std::size_t H,
                                    bool stochastic, Rng* rng) {
  if (stochastic && rng == nullptr) fail(ErrorKind::InvalidParams, "stochastic path needs an RNG");
  std::vector<double> out(H);
  double x = last;
  const double sd = std::sqrt(m.variance);
  for (std::size_t h = 0; h < H; ++h) {
    x += m.drift + (stochastic ? sd * standard_normal(*rng) : 0.0);
    out[h] = x;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Lee-Carter

struct LCComponent {
  Eigen::VectorXd alpha;  // A
  Eigen::VectorXd beta;   // A, sums to 1
  Eigen::VectorXd kappa;  // T, sums to 0
  RandomWalkDrift rwd;
  bool degenerate = false;  // no time variation; kappa = 0, beta uniform
};

/// alpha = row means; (beta, kappa) from the leading singular triplet of the
/// centered A x T matrix, normalized to sum(beta) = 1. Throws
/// DegenerateMatrix when the centered matrix vanishes.
inline LCComponent lc_fit_matrix(const Eigen::MatrixXd& log_m) {
  if (log_m.rows() < 1 || log_m.cols() < 2) fail(ErrorKind::TooShort, "LC needs at least two years");
  if (!log_m.allFinite()) fail(ErrorKind::NonFinite, "LC input has non-finite log rates");
  LCComponent f;
  f.alpha = log_m.rowwise().mean();
  const Eigen::MatrixXd Z = log_m.colwise() - f.alpha;
  const double scale = std::max(1.0, log_m.cwiseAbs().maxCoeff());
  if (Z.cwiseAbs().maxCoeff() <= 1e-12 * scale)
    fail(ErrorKind::DegenerateMatrix, "centered log-rate matrix is zero");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Z, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd u = svd.matrixU().col(0);
  const Eigen::VectorXd v = svd.matrixV().col(0);
  const double s = svd.singularValues()[0];
  const double su = u.sum();
  if (std::abs(su) < 1e-12) fail(ErrorKind::DegenerateMatrix, "leading age loading sums to zero");
  f.beta = u / su;
  f.kappa = s * su * v;
  f.kappa.array() -= f.kappa.mean();
  f.rwd = fit_rwd(std::span<const double>(f.kappa.data(), static_cast<std::size_t>(f.kappa.size())));
  return f;
}

inline LCComponent lc_fit_or_flat(const Eigen::MatrixXd& log_m) {
  try {
    return lc_fit_matrix(log_m);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::DegenerateMatrix) throw;
    LCComponent f;
    f.alpha = log_m.rowwise().mean();
    f.beta = Eigen::VectorXd::Constant(log_m.rows(), 1.0 / static_cast<double>(log_m.rows()));
    f.kappa = Eigen::VectorXd::Zero(log_m.cols());
    f.degenerate = true;
    return f;
  }
}

struct LCFit {
  std::size_t ages = 0, years = 0;
  int first_year = 0;
  std::vector<LCComponent> causes;
};

inline Eigen::MatrixXd cause_log_rates(const MortalityDataset& data, std::size_t c,
                                       double floor) {
  const auto A = data.num_ages(), T = data.num_years(), C = data.num_causes();
  const auto lr = observed_log_rates(data, floor);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(A), static_cast<Eigen::Index>(T));
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t t = 0; t < T; ++t)
      m(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(t)) = lr[(a * T + t) * C + c];
  return m;
}

inline Eigen::MatrixXd total_log_rates(const MortalityDataset& data, double floor) {
  const auto A = data.num_ages(), T = data.num_years();
  const auto lr = observed_total_log_rates(data, floor);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(A), static_cast<Eigen::Index>(T));
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t t = 0; t < T; ++t)
      m(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(t)) = lr[a * T + t];
  return m;
}

/// Separate LC fit per cause on floored log rates.
inline LCFit lc_fit_per_cause(const MortalityDataset& train, double floor = kDefaultCountFloor) {
  LCFit f;
  f.ages = train.num_ages();
  f.years = train.num_years();
  f.first_year = train.years().first();
  for (std::size_t c = 0; c < train.num_causes(); ++c)
    f.causes.push_back(lc_fit_or_flat(cause_log_rates(train, c, floor)));
  return f;
}

/// Single LC fit on all-cause rates (the supplementary total route).
inline LCComponent lc_fit_total(const MortalityDataset& train, double floor = kDefaultCountFloor) {
  return lc_fit_or_flat(total_log_rates(train, floor));
}

/// A x H log rates: kappa continued by RWD from kappa_T. H = 0 returns the
/// in-sample reconstruction alpha + beta kappa_t.
inline Eigen::MatrixXd lc_forecast(const LCComponent& f, std::size_t H, bool stochastic = false,
                                   Rng* rng = nullptr) {
  if (H == 0) return (f.beta * f.kappa.transpose()).colwise() + f.alpha;
  const auto T = static_cast<std::size_t>(f.kappa.size());
  const auto path = rwd_path(f.kappa[static_cast<Eigen::Index>(T - 1)], f.rwd, H, stochastic, rng);
  const Eigen::Map<const Eigen::RowVectorXd> k(path.data(), static_cast<Eigen::Index>(H));
  return (f.beta * k).colwise() + f.alpha;
}

inline RateSurface lc_forecast(const LCFit& f, std::size_t H, bool stochastic = false,
                               Rng* rng = nullptr) {
  RateSurface s;
  s.ages = f.ages;
  s.horizon = H == 0 ? f.years : H;
  s.causes = f.causes.size();
  s.first_year = H == 0 ? f.first_year : f.first_year + static_cast<int>(f.years);
  s.log_m_cause.resize(s.ages * s.horizon * s.causes);
  for (std::size_t c = 0; c < s.causes; ++c) {
    const Eigen::MatrixXd m = lc_forecast(f.causes[c], H, stochastic, rng);
    for (std::size_t a = 0; a < s.ages; ++a)
      for (std::size_t h = 0; h < s.horizon; ++h)
        s.log_m_cause[(a * s.horizon + h) * s.causes + c] =
            m(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(h));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Life tables and CLR

struct LifeTableDeaths {
  std::size_t ages = 0, years = 0, causes = 0;
  double radix = 1e5;
  std::vector<double> d_tx;   // [a][t]
  std::vector<double> d_txc;  // [a][t][c]
};

/// Period life-table deaths for one year's all-cause rates: a_x = n/2,
/// q = n m / (1 + n m / 2) capped at 1, last group closed with q = 1.
inline std::vector<double> lifetable_column(std::span<const double> m, std::span<const int> widths,
                                            double radix) {
  std::vector<double> d(m.size());
  double l = radix;
  for (std::size_t x = 0; x < m.size(); ++x) {
    const bool last = x + 1 == m.size();
    double q = 1.0;
    if (!last) {
      const double n = static_cast<double>(widths[x]);
      q = std::min(1.0, n * m[x] / (1.0 + 0.5 * n * m[x]));
    }
    d[x] = l * q;
    l -= d[x];
  }
  return d;
}

inline std::vector<int> age_widths(const AgeGrid& ages) {
  std::vector<int> w;
  for (std::size_t a = 0; a < ages.size(); ++a) w.push_back(age_width(ages[a]));
  for (std::size_t a = 0; a + 1 < w.size(); ++a)
    if (w[a] <= 0) fail(ErrorKind::InvalidParams, "only the last age group may be open");
  return w;
}

inline LifeTableDeaths lifetable_deaths(const MortalityDataset& data, double radix = 1e5) {
  const auto A = data.num_ages(), T = data.num_years(), C = data.num_causes();
  const auto widths = age_widths(data.ages());
  const auto totals = total_deaths(data);
  LifeTableDeaths out;
  out.ages = A;
  out.years = T;
  out.causes = C;
  out.radix = radix;
  out.d_tx.resize(A * T);
  out.d_txc.resize(A * T * C);
  std::vector<double> m(A);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t a = 0; a < A; ++a) {
      if (totals[a * T + t] == 0)
        fail(ErrorKind::ZeroDeaths, "no deaths at age " + data.ages()[a] + ", year " +
                                        std::to_string(data.years().year(t)));
      if (!(data.exposure(a, t) > 0.0)) fail(ErrorKind::ZeroExposure, "zero exposure in life table");
      m[a] = static_cast<double>(totals[a * T + t]) / data.exposure(a, t);
    }
    const auto d = lifetable_column(m, widths, radix);
    for (std::size_t a = 0; a < A; ++a) {
      out.d_tx[a * T + t] = d[a];
      const double D = static_cast<double>(totals[a * T + t]);
      for (std::size_t c = 0; c < C; ++c)
        out.d_txc[(a * T + t) * C + c] = d[a] * static_cast<double>(data.deaths(a, t, c)) / D;
    }
  }
  return out;
}

inline std::vector<double> clr(std::span<const double> x) {
  if (x.empty()) fail(ErrorKind::NonPositiveInput, "clr of an empty composition");
  std::vector<double> out(x.size());
  double mean_log = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !std::isfinite(x[i]))
      fail(ErrorKind::NonPositiveInput, "clr needs strictly positive parts");
    out[i] = std::log(x[i]);
    mean_log += out[i];
  }
  mean_log /= static_cast<double>(x.size());
  for (auto& v : out) v -= mean_log;
  return out;
}

/// Inverse CLR followed by closure to `radix`.
inline std::vector<double> clr_inverse(std::span<const double> v, double radix) {
  if (v.empty()) return {};
  const double mx = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    s += out[i];
  }
  for (auto& x : out) x *= radix / s;
  return out;
}

// ---------------------------------------------------------------------------
// CoDa

struct CoDaFit {
  std::size_t ages = 0, years = 0, causes = 0, components = 0;
  int first_year = 0;
  double radix = 1e5;
  std::vector<int> widths;
  Eigen::VectorXd alpha;   // M = A * C, part index j = a * C + c
  Eigen::MatrixXd beta;    // M x P
  Eigen::MatrixXd scores;  // T x P
  std::vector<RandomWalkDrift> score_models;
  double open_log_ratio = 0.0;  // mean log(m_open / m_prev) in training data
  std::size_t zero_cells = 0;   // cells that received the epsilon substitute
};

/// SVD of the CLR matrix (T x M) of the yearly age-by-cause death
/// distributions, after removing the time-mean alpha.
inline CoDaFit coda_fit_clr(const Eigen::MatrixXd& clr_matrix, std::size_t P) {
  CoDaFit f;
  f.years = static_cast<std::size_t>(clr_matrix.rows());
  f.components = P;
  f.alpha = clr_matrix.colwise().mean().transpose();
  const Eigen::MatrixXd Z = clr_matrix.rowwise() - f.alpha.transpose();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Z, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd s = svd.singularValues();
  const double tol = static_cast<double>(std::max(Z.rows(), Z.cols())) *
                     std::numeric_limits<double>::epsilon() * std::max(1.0, s.size() ? s[0] : 0.0);
  std::size_t rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s[i] > tol) ++rank;
  if (P > rank)
    fail(ErrorKind::RankDeficient, "requested " + std::to_string(P) + " components, rank is " +
                                       std::to_string(rank));
  const auto p = static_cast<Eigen::Index>(P);
  f.beta = svd.matrixV().leftCols(p);
  f.scores = svd.matrixU().leftCols(p) * s.head(p).asDiagonal();
  for (Eigen::Index k = 0; k < p; ++k) {
    const Eigen::VectorXd col = f.scores.col(k);
    f.score_models.push_back(
        fit_rwd(std::span<const double>(col.data(), static_cast<std::size_t>(col.size()))));
  }
  return f;
}

inline CoDaFit coda_fit(const MortalityDataset& train, double radix = 1e5, std::size_t P = 1) {
  const auto A = train.num_ages(), T = train.num_years(), C = train.num_causes();
  const auto lt = lifetable_deaths(train, radix);
  const std::size_t M = A * C;
  Eigen::MatrixXd X(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(M));
  std::size_t zero_cells = 0;
  std::vector<double> row(M);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t c = 0; c < C; ++c) {
        double v = lt.d_txc[(a * T + t) * C + c];
        if (!(v > 0.0)) {
          v = 1e-6 * lt.d_tx[a * T + t];
          ++zero_cells;
        }
        row[a * C + c] = v;
      }
    const auto z = clr(row);
    for (std::size_t j = 0; j < M; ++j)
      X(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j)) = z[j];
  }
  CoDaFit f = coda_fit_clr(X, P);
  f.ages = A;
  f.causes = C;
  f.first_year = train.years().first();
  f.radix = radix;
  f.widths = age_widths(train.ages());
  f.zero_cells = zero_cells;
  const auto tot = observed_total_log_rates(train);
  double r = 0.0;
  for (std::size_t t = 0; t < T; ++t) r += tot[(A - 1) * T + t] - tot[(A - 2) * T + t];
  f.open_log_ratio = r / static_cast<double>(T);
  return f;
}

/// Composition (length M, closed to radix) for a score vector.
inline std::vector<double> coda_composition(const CoDaFit& f, const Eigen::VectorXd& k) {
  Eigen::VectorXd v = f.alpha;
  if (f.components > 0) v += f.beta * k;
  return clr_inverse(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())), f.radix);
}

/// Life-table identity run backwards: l_x from the closed death
/// distribution, q = d / l, m = q / (n (1 - q / 2)); the open group takes
/// log m_prev + open_log_ratio. Cause rates are m_x * d_xc / d_x.
inline std::vector<double> coda_log_rates(const CoDaFit& f, std::span<const double> comp) {
  const auto A = f.ages, C = f.causes;
  std::vector<double> out(A * C);
  double l = f.radix;
  double prev_log_m = 0.0;
  for (std::size_t a = 0; a < A; ++a) {
    double d = 0.0;
    for (std::size_t c = 0; c < C; ++c) d += comp[a * C + c];
    double log_m;
    if (a + 1 < A) {
      const double q = std::min(d / l, 1.0);
      const double n = static_cast<double>(f.widths[a]);
      log_m = std::log(q / (n * (1.0 - 0.5 * q)));
    } else {
      log_m = prev_log_m + f.open_log_ratio;
    }
    for (std::size_t c = 0; c < C; ++c) out[a * C + c] = log_m + std::log(comp[a * C + c] / d);
    prev_log_m = log_m;
    l -= d;
  }
  return out;
}

/// Year-by-year compositions (each closed to radix) and the implied cause
/// log rates. H = 0 gives the in-sample fitted years.
struct CoDaForecast {
  std::vector<std::vector<double>> compositions;  // per year, length A * C
  RateSurface rates;
};

inline CoDaForecast coda_forecast(const CoDaFit& f, std::size_t H, bool stochastic = false,
                                  Rng* rng = nullptr) {
  CoDaForecast out;
  const std::size_t n = H == 0 ? f.years : H;
  const auto P = static_cast<Eigen::Index>(f.components);
  std::vector<std::vector<double>> paths(f.components);
  if (H > 0)
    for (std::size_t p = 0; p < f.components; ++p)
      paths[p] = rwd_path(f.scores(static_cast<Eigen::Index>(f.years - 1), static_cast<Eigen::Index>(p)),
                          f.score_models[p], H, stochastic, rng);
  RateSurface& s = out.rates;
  s.ages = f.ages;
  s.horizon = n;
  s.causes = f.causes;
  s.first_year = H == 0 ? f.first_year : f.first_year + static_cast<int>(f.years);
  s.log_m_cause.resize(f.ages * n * f.causes);
  for (std::size_t h = 0; h < n; ++h) {
    Eigen::VectorXd k(P);
    for (Eigen::Index p = 0; p < P; ++p)
      k[p] = H == 0 ? f.scores(static_cast<Eigen::Index>(h), p) : paths[static_cast<std::size_t>(p)][h];
    auto comp = coda_composition(f, k);
    const auto lm = coda_log_rates(f, comp);
    for (std::size_t a = 0; a < f.ages; ++a)
      for (std::size_t c = 0; c < f.causes; ++c)
        s.log_m_cause[(a * n + h) * f.causes + c] = lm[a * f.causes + c];
    out.compositions.push_back(std::move(comp));
  }
  return out;
}

}  // namespace dmp
