// dmp: simulate, fit, forecast, evaluate and diagnose cause-specific
// mortality models from the command line.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "commands.hpp"

namespace {

using dmp::cli::Context;

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out, model, deaths, exposure, sex, mapping;
  std::optional<std::size_t> chains, iters, warmup, horizon, holdout;
  int verbose = 0;
  bool quiet = false;
};

void add_shared(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config, "INI run configuration");
  app->add_option("--seed", o.seed, "master seed");
  app->add_option("--out", o.out, "output directory (default $DMP_OUT_DIR or ./dmp_out)");
  app->add_option("--model", o.model, "dmp-ap, dmp-lc, lc, coda or all");
  app->add_option("--deaths", o.deaths, "deaths CSV");
  app->add_option("--exposure", o.exposure, "exposure CSV");
  app->add_option("--sex", o.sex, "female, male or both");
  app->add_option("--mapping", o.mapping, "cause mapping: auto, six, none or a CSV path");
  app->add_option("--chains", o.chains);
  app->add_option("--iters", o.iters, "iterations per chain including warmup");
  app->add_option("--warmup", o.warmup);
  app->add_option("--horizon", o.horizon, "forecast years");
  app->add_option("--holdout-years", o.holdout);
  app->add_flag("-v,--verbose", o.verbose, "more progress output");
  app->add_flag("-q,--quiet", o.quiet, "errors only");
}

Context build_context(const Overrides& o, const std::string& command) {
  Context ctx;
  if (!o.config.empty()) {
    ctx.config = dmp::load_config(o.config);
  } else {
    ctx.config.out_dir = dmp::RunConfig::default_out_dir();
  }
  auto& c = ctx.config;
  if (o.seed) c.seed = *o.seed;
  if (o.out) c.out_dir = *o.out;
  if (o.deaths) c.deaths_csv = *o.deaths;
  if (o.exposure) c.exposure_csv = *o.exposure;
  if (o.mapping) c.mapping = *o.mapping;
  if (o.sex) {
    c.sexes.clear();
    if (*o.sex == "both") {
      c.sexes = {dmp::Sex::Female, dmp::Sex::Male};
    } else {
      c.sexes.push_back(dmp::parse_sex(*o.sex));
    }
  }
  if (o.model) {
    const std::string& m = *o.model;
    if (command == "evaluate") {
      c.models = m == "all" ? std::vector<std::string>{"dmp-ap", "dmp-lc", "lc", "coda"}
                            : std::vector<std::string>{m};
    } else if (command == "simulate") {
      c.sim_flavor = m;
    } else {
      c.model = m;
    }
  }
  if (o.chains) c.sampler.chains = *o.chains;
  if (o.iters) c.sampler.iters = *o.iters;
  if (o.warmup) c.sampler.warmup = *o.warmup;
  if (o.horizon) c.forecast.horizon = *o.horizon;
  if (o.holdout) c.holdout_years = *o.holdout;
  ctx.verbosity = o.quiet ? 0 : 1 + o.verbose;
  return ctx;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dirichlet-multinomial-Poisson cause-of-death mortality models"};
  app.require_subcommand(1);
  Overrides o;
  std::vector<std::string> draws_files;
  std::vector<CLI::App*> subs{
      app.add_subcommand("simulate", "write a synthetic dataset and its true parameters"),
      app.add_subcommand("fit", "run NUTS and write draws and diagnostics"),
      app.add_subcommand("forecast", "forecast from stored draws (fits first when none exist)"),
      app.add_subcommand("evaluate", "rolling-holdout MAE/RMSE report for the configured models"),
      app.add_subcommand("diagnose", "posterior summary table for draws files"),
  };
  for (auto* s : subs) add_shared(s, o);
  subs[4]->add_option("draws", draws_files, "draws CSV files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << dmp::cli::error_line("ConfigError", e.what()) << '\n';
    return dmp::cli::kError;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const Context ctx = build_context(o, command);
    if (command == "simulate") return dmp::cli::cmd_simulate(ctx);
    if (command == "fit") return dmp::cli::cmd_fit(ctx);
    if (command == "forecast") return dmp::cli::cmd_forecast(ctx);
    if (command == "evaluate") return dmp::cli::cmd_evaluate(ctx);
    return dmp::cli::cmd_diagnose(ctx, draws_files);
  } catch (const dmp::Error& e) {
    std::string msg = e.what();
    const std::string prefix = std::string(dmp::to_string(e.kind())) + ": ";
    if (msg.rfind(prefix, 0) == 0) msg = msg.substr(prefix.size());
    std::cerr << dmp::cli::error_line(dmp::to_string(e.kind()), msg) << '\n';
  } catch (const std::exception& e) {
    std::cerr << dmp::cli::error_line("IoError", e.what()) << '\n';
  }
  return dmp::cli::kError;
}
