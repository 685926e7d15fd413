#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dmp/benchmarks.hpp"
#include "dmp/data_model.hpp"
#include "dmp/error.hpp"
#include "dmp/fit.hpp"
#include "dmp/forecast.hpp"
#include "dmp/sampler.hpp"

namespace dmp {

struct ErrorMetrics {
  double mae = 0.0;
  double rmse = 0.0;
};

/// MAE and RMSE of observed - predicted over the listed indices.
inline ErrorMetrics mae_rmse(std::span<const double> observed, std::span<const double> predicted,
                             std::span<const std::size_t> index) {
  if (observed.size() != predicted.size())
    fail(ErrorKind::ConfigMismatch, "observed and predicted arrays differ in size");
  if (index.empty()) fail(ErrorKind::EmptyIndexSet, "no cells to evaluate");
  double sa = 0.0, ss = 0.0;
  for (std::size_t i : index) {
    if (i >= observed.size()) fail(ErrorKind::IndexOutOfRange, "evaluation index out of range");
    const double r = observed[i] - predicted[i];
    sa += std::abs(r);
    ss += r * r;
  }
  const double n = static_cast<double>(index.size());
  return {sa / n, std::sqrt(ss / n)};
}

inline ErrorMetrics mae_rmse(std::span<const double> observed, std::span<const double> predicted) {
  std::vector<std::size_t> all(observed.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return mae_rmse(observed, predicted, all);
}

/// Point log rates for one phase: causes [a][t][c] and totals [a][t].
struct Prediction {
  std::size_t ages = 0, years = 0, causes = 0;
  std::vector<double> log_m_cause;
  std::vector<double> log_m_total;
};

/// Benchmark route: total is log of the summed cause rates.
inline Prediction to_prediction(const RateSurface& s) {
  Prediction p{s.ages, s.horizon, s.causes, s.log_m_cause, std::vector<double>(s.ages * s.horizon)};
  for (std::size_t a = 0; a < s.ages; ++a)
    for (std::size_t h = 0; h < s.horizon; ++h) p.log_m_total[a * s.horizon + h] = s.total(a, h);
  return p;
}

/// DMP route: posterior medians of log m_atc and of log m_at.
inline Prediction to_prediction(const ForecastSummary& s) {
  return {s.ages, s.horizon, s.causes, s.median_cause, s.median_total};
}

enum class Phase { Train, OOS };

inline std::string to_string(Phase p) { return p == Phase::Train ? "train" : "oos"; }

struct ReportRow {
  std::string model;
  Sex sex = Sex::Female;
  Phase phase = Phase::Train;
  std::string cause;  // "total", "total_allcause", "mean", or a cause name
  ErrorMetrics metrics;
};

struct ModelFailure {
  std::string model;
  ErrorKind kind = ErrorKind::InvalidParams;
  std::string message;
};

struct EvalReport {
  std::vector<ReportRow> rows;
  std::vector<ModelFailure> failures;
  std::map<std::string, std::string> metadata;

  const ReportRow* find(const std::string& model, Sex sex, Phase phase, const std::string& cause) const {
    for (const auto& r : rows)
      if (r.model == model && r.sex == sex && r.phase == phase && r.cause == cause) return &r;
    return nullptr;
  }

  void merge(const EvalReport& other) {
    rows.insert(rows.end(), other.rows.begin(), other.rows.end());
    failures.insert(failures.end(), other.failures.begin(), other.failures.end());
    for (const auto& [k, v] : other.metadata) metadata[k] = v;
  }
};

/// Total, per-cause and mean-across-cause rows for one model and phase.
inline std::vector<ReportRow> score_prediction(const std::string& model, const MortalityDataset& observed,
                                               Phase phase, const Prediction& pred,
                                               double floor = kDefaultCountFloor) {
  const auto A = observed.num_ages(), T = observed.num_years(), C = observed.num_causes();
  if (pred.ages != A || pred.years != T || pred.causes != C)
    fail(ErrorKind::ConfigMismatch, model + " prediction does not match the evaluation grid");
  const auto obs_cause = observed_log_rates(observed, floor);
  const auto obs_total = observed_total_log_rates(observed, floor);
  std::vector<ReportRow> out;
  out.push_back({model, observed.sex(), phase, "total", mae_rmse(obs_total, pred.log_m_total)});
  ErrorMetrics mean;
  std::vector<std::size_t> idx(A * T);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < A * T; ++i) idx[i] = i * C + c;
    const auto m = mae_rmse(obs_cause, pred.log_m_cause, idx);
    out.push_back({model, observed.sex(), phase, observed.causes()[c], m});
    mean.mae += m.mae / static_cast<double>(C);
    mean.rmse += m.rmse / static_cast<double>(C);
  }
  out.push_back({model, observed.sex(), phase, "mean", mean});
  return out;
}

struct EvalConfig {
  std::vector<std::string> models{"dmp-ap", "dmp-lc", "lc", "coda"};
  std::size_t holdout_years = 15;
  SamplerConfig sampler;
  std::optional<HyperPriors> ap_priors, lc_priors;
  std::size_t coda_components = 1;
  double radix = 1e5;
  double floor = kDefaultCountFloor;
  std::uint64_t forecast_seed = 1;
  std::size_t thin = 1;
};

/// Train and holdout predictions from one model.
struct ModelPredictions {
  Prediction train, oos;
};

inline ModelPredictions predict_dmp(ModelKind kind, const MortalityDataset& train, std::size_t H,
                                    const EvalConfig& cfg, DmpFit* fit_out = nullptr) {
  const auto& pri = kind == ModelKind::AP ? cfg.ap_priors : cfg.lc_priors;
  DmpFit fit = fit_dmp(kind, train, pri ? *pri : HyperPriors::defaults(kind), cfg.sampler);
  ForecastConfig fc;
  fc.horizon = H;
  fc.thin = cfg.thin;
  fc.seed = cfg.forecast_seed;
  ModelPredictions out{to_prediction(summarize(fitted_surface(fit, cfg.thin))),
                       to_prediction(summarize(forecast_surface(fit, fc)))};
  if (fit_out) *fit_out = std::move(fit);
  return out;
}

/// Max relative gap between summed per-cause LC and all-cause LC rates.
inline double lc_coherence_gap(const LCFit& per_cause, const LCComponent& total, std::size_t H) {
  const auto s = lc_forecast(per_cause, H);
  const Eigen::MatrixXd t = lc_forecast(total, H);
  double gap = 0.0;
  for (std::size_t a = 0; a < s.ages; ++a)
    for (std::size_t h = 0; h < s.horizon; ++h)
      gap = std::max(gap, std::abs(std::expm1(s.total(a, h) - t(static_cast<Eigen::Index>(a),
                                                                 static_cast<Eigen::Index>(h)))));
  return gap;
}

/// Fits every configured model on the training years, forecasts the holdout
/// and scores both phases. A failing model is recorded and skipped.
inline EvalReport evaluate_all(const MortalityDataset& data, const EvalConfig& cfg) {
  const auto [train, test] = split_train_holdout(data, cfg.holdout_years);
  const std::size_t H = cfg.holdout_years;
  const std::string sex = to_string(data.sex());
  EvalReport report;
  report.metadata["train_years"] = std::to_string(train.years().first()) + "-" + std::to_string(train.years().last());
  report.metadata["oos_years"] = std::to_string(test.years().first()) + "-" + std::to_string(test.years().last());
  report.metadata["floor"] = "max(deaths, " + std::to_string(cfg.floor) + ") / exposure";
  report.metadata["point_dmp"] = "posterior median of log rate";
  report.metadata["point_benchmarks"] = "deterministic mean path";
  report.metadata["benchmark_total"] = "log of summed cause rates; total_allcause is a single LC fit";

  for (const auto& name : cfg.models) {
    try {
      ModelPredictions p;
      if (name == "dmp-ap" || name == "dmp-lc") {
        p = predict_dmp(parse_model_kind(name), train, H, cfg);
      } else if (name == "lc") {
        const auto f = lc_fit_per_cause(train, cfg.floor);
        p = {to_prediction(lc_forecast(f, 0)), to_prediction(lc_forecast(f, H))};
        const auto total = lc_fit_total(train, cfg.floor);
        const auto obs_tr = observed_total_log_rates(train, cfg.floor);
        const auto obs_te = observed_total_log_rates(test, cfg.floor);
        const Eigen::MatrixXd tr = lc_forecast(total, 0), te = lc_forecast(total, H);
        const auto flat = [](const Eigen::MatrixXd& m) {
          std::vector<double> v;
          for (Eigen::Index a = 0; a < m.rows(); ++a)
            for (Eigen::Index t = 0; t < m.cols(); ++t) v.push_back(m(a, t));
          return v;
        };
        report.rows.push_back({name, data.sex(), Phase::Train, "total_allcause", mae_rmse(obs_tr, flat(tr))});
        report.rows.push_back({name, data.sex(), Phase::OOS, "total_allcause", mae_rmse(obs_te, flat(te))});
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6e", lc_coherence_gap(f, total, H));
        report.metadata["lc_coherence_gap_" + sex] = buf;
      } else if (name == "coda") {
        const auto f = coda_fit(train, cfg.radix, cfg.coda_components);
        p = {to_prediction(coda_forecast(f, 0).rates), to_prediction(coda_forecast(f, H).rates)};
        report.metadata["coda_zero_cells_" + sex] = std::to_string(f.zero_cells);
      } else {
        fail(ErrorKind::ConfigError, "unknown model '" + name + "'");
      }
      for (auto& r : score_prediction(name, train, Phase::Train, p.train, cfg.floor)) report.rows.push_back(r);
      for (auto& r : score_prediction(name, test, Phase::OOS, p.oos, cfg.floor)) report.rows.push_back(r);
    } catch (const Error& e) {
      report.failures.push_back({name, e.kind(), e.what()});
    }
  }
  return report;
}

}  // namespace dmp
