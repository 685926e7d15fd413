#pragma once

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "dmp/dmp.hpp"

namespace dmp::cli {

enum ExitCode { kOk = 0, kError = 1, kRhatWarning = 2 };

inline constexpr double kRhatThreshold = 1.05;

struct Context {
  RunConfig config;
  int verbosity = 1;  // 0 quiet, 1 normal, 2 chatty
  std::ostream* out = &std::cout;
  std::ostream* log = &std::cerr;

  void note(const std::string& s) const {
    if (verbosity >= 2) *log << s << '\n';
  }
};

inline std::string path_in(const RunConfig& c, const std::string& leaf) {
  return (std::filesystem::path(c.out_dir) / leaf).string();
}

inline std::string fit_dir(const RunConfig& c, ModelKind kind, Sex sex) {
  return path_in(c, "fit_" + to_string(kind) + "_" + to_string(sex));
}

/// Training slice used by fit and forecast: up to train_last when set.
inline MortalityDataset training_data(const RunConfig& c, Sex sex) {
  const auto data = c.load(sex);
  if (!c.train_last) return data;
  const int last = *c.train_last;
  if (last < data.years().first() + 2 || last > data.years().last())
    fail(ErrorKind::InvalidSplit, "train_last outside the data years");
  return data.year_slice(0, static_cast<std::size_t>(last - data.years().first() + 1));
}

inline SamplerConfig sampler_config(const RunConfig& c) {
  SamplerConfig s = c.sampler;
  s.seed = c.seed;
  s.validate();
  return s;
}

inline int cmd_simulate(const Context& ctx) {
  const auto& c = ctx.config;
  SynthSpec synth;
  synth.ages = c.sim_ages;
  synth.years = c.sim_years;
  synth.causes = c.sim_causes;
  synth.first_year = c.sim_first_year;
  synth.exposure_level = c.sim_exposure;
  synth.flavor = parse_model_kind(c.sim_flavor);
  synth.seed = c.seed;
  synth.sex = c.sexes.front();
  const auto [data, truth] = simulate(synth);
  write_dataset(data, path_in(c, "deaths.csv"), path_in(c, "exposure.csv"));
  const DmpModel model(synth.flavor, data, HyperPriors::defaults(synth.flavor));
  write_params(path_in(c, "truth.csv"), model.constrained_names(), model.constrained_values(truth), synth.flavor);
  *ctx.out << "simulated " << to_string(synth.flavor) << " data: " << data.num_ages() << " ages x "
           << data.num_years() << " years x " << data.num_causes() << " causes -> " << c.out_dir << '\n';
  return kOk;
}

inline int cmd_fit(const Context& ctx) {
  const auto& c = ctx.config;
  const ModelKind kind = parse_model_kind(c.model);
  const auto sampler = sampler_config(c);
  int code = kOk;
  for (Sex sex : c.sexes) {
    const auto data = training_data(c, sex);
    ctx.note("fitting " + to_string(kind) + " (" + to_string(sex) + ")");
    const auto fit = fit_dmp(kind, data, c.priors(kind), sampler);
    const auto diag = diagnose(fit);
    const auto dir = fit_dir(c, kind, sex);
    write_draws(dir + "/draws.csv", draw_table(fit));
    write_diagnostics(dir + "/diagnostics.csv", diag);
    write_sampler_stats(dir + "/sampler_stats.csv", fit.draws);
    char line[160];
    std::snprintf(line, sizeof line, "%s %s: %zu draws, max Rhat %.4f, %zu divergent, mean accept %.3f\n",
                  to_string(kind).c_str(), to_string(sex).c_str(), fit.draws.total(), diag.max_rhat(),
                  diag.divergences, diag.mean_accept);
    *ctx.out << line;
    if (diag.max_rhat() >= kRhatThreshold) {
      *ctx.log << "warning: max Rhat " << diag.max_rhat() << " >= " << kRhatThreshold << '\n';
      code = kRhatWarning;
    }
  }
  return code;
}

inline int cmd_forecast(const Context& ctx) {
  const auto& c = ctx.config;
  const ModelKind kind = parse_model_kind(c.model);
  for (Sex sex : c.sexes) {
    const auto data = training_data(c, sex);
    const auto dir = fit_dir(c, kind, sex);
    DmpFit fit;
    if (std::filesystem::exists(dir + "/draws.csv")) {
      ctx.note("reading " + dir + "/draws.csv");
      fit = fit_from_draws(read_draws(dir + "/draws.csv"), data, c.priors(kind));
    } else {
      ctx.note("no stored draws, fitting " + to_string(kind));
      fit = fit_dmp(kind, data, c.priors(kind), sampler_config(c));
    }
    ForecastConfig fc = c.forecast;
    fc.seed = c.seed;
    const auto summary = summarize(forecast_surface(fit, fc), c.quantiles);
    write_forecast(dir + "/forecast_cause.csv", dir + "/forecast_total.csv", summary, data.ages(), data.causes());
    *ctx.out << to_string(kind) << ' ' << to_string(sex) << ": forecast " << summary.first_year << '-'
             << summary.first_year + static_cast<int>(summary.horizon) - 1 << " written to " << dir << '\n';
  }
  return kOk;
}

inline std::string format_report(const EvalReport& r) {
  std::string s;
  char buf[200];
  std::snprintf(buf, sizeof buf, "%-8s %-7s %-6s %-16s %10s %10s\n", "model", "sex", "phase", "cause", "MAE", "RMSE");
  s += buf;
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%-8s %-7s %-6s %-16s %10.5f %10.5f\n", row.model.c_str(),
                  to_string(row.sex).c_str(), to_string(row.phase).c_str(), row.cause.c_str(), row.metrics.mae,
                  row.metrics.rmse);
    s += buf;
  }
  for (const auto& f : r.failures) s += "failed: " + f.model + " (" + std::string(to_string(f.kind)) + ")\n";
  return s;
}

inline int cmd_evaluate(const Context& ctx) {
  const auto& c = ctx.config;
  EvalConfig ec;
  ec.models = c.models;
  ec.holdout_years = c.holdout_years;
  ec.sampler = sampler_config(c);
  ec.ap_priors = c.priors(ModelKind::AP);
  ec.lc_priors = c.priors(ModelKind::LC);
  ec.coda_components = c.coda_components;
  ec.radix = c.radix;
  ec.forecast_seed = c.seed;
  ec.thin = c.forecast.thin;
  EvalReport report;
  for (Sex sex : c.sexes) {
    ctx.note("evaluating " + to_string(sex));
    report.merge(evaluate_all(c.load(sex), ec));
  }
  write_report(path_in(c, "report.csv"), path_in(c, "report.json"), report);
  *ctx.out << format_report(report);
  return report.failures.empty() ? kOk : kError;
}

inline int cmd_diagnose(const Context& ctx, const std::vector<std::string>& draws_files) {
  if (draws_files.empty()) fail(ErrorKind::ConfigError, "diagnose needs at least one draws file");
  for (const auto& f : draws_files) {
    const auto d = diagnose(read_draws(f));
    if (draws_files.size() > 1) *ctx.out << f << '\n';
    *ctx.out << format_diagnostics(d);
    const auto target = std::filesystem::path(f).parent_path() / "diagnose.csv";
    write_diagnostics(target.string(), d);
  }
  return kOk;
}

/// One machine-parseable line: error: kind=<Kind> message="..."
inline std::string error_line(std::string_view kind, const std::string& message) {
  std::string m;
  for (char ch : message) {
    if (ch == '"' || ch == '\\') m += '\\';
    m += ch == '\n' ? ' ' : ch;
  }
  return "error: kind=" + std::string(kind) + " message=\"" + m + "\"";
}

}  // namespace dmp::cli
