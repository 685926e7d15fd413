#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dmp/dataio.hpp"
#include "dmp/synthgen.hpp"

namespace dmp {
namespace {

CsvTable table(const std::string& text, const std::string& name = "mem.csv") {
  std::istringstream in(text);
  return read_csv(in, name);
}

template <class F>
Error caught(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e;
  }
  ADD_FAILURE() << "expected dmp::Error";
  return Error(ErrorKind::IoError, "none");
}

std::string tmp_dir(const std::string& leaf) {
  const auto p = std::filesystem::temp_directory_path() / ("dmp_dataio_" + leaf);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

const char* kExposure =
    "sex,year,age_group,exposure\n"
    "female,2000,0-4,100\nfemale,2001,0-4,110\nfemale,2002,0-4,120\n"
    "female,2000,5+,200\nfemale,2001,5+,210\nfemale,2002,5+,220\n"
    "male,2000,0-4,999\n";

TEST(LoadDataset, MinimalFixtureExact) {
  std::string deaths = "sex,year,age_group,cause,deaths\n";
  int v = 1;
  for (int y = 2000; y <= 2002; ++y)
    for (const char* a : {"5+", "0-4"})
      for (const char* c : {"b", "a"}) deaths += std::string("female,") + std::to_string(y) + "," + a + "," + c + "," + std::to_string(v++) + "\n";
  deaths += "male,2000,0-4,a,7\n";
  const auto d = load_dataset(table(deaths), table(kExposure), Sex::Female);
  ASSERT_EQ(d.num_ages(), 2u);
  ASSERT_EQ(d.num_years(), 3u);
  ASSERT_EQ(d.num_causes(), 2u);
  EXPECT_EQ(d.ages()[0], "0-4");
  EXPECT_EQ(d.causes()[0], "b");
  EXPECT_EQ(d.years().first(), 2000);
  // 2001 rows: 5+ b=5 a=6, 0-4 b=7 a=8.
  EXPECT_EQ(d.deaths(0, 1, 0), 7);
  EXPECT_EQ(d.deaths(0, 1, 1), 8);
  EXPECT_EQ(d.deaths(1, 1, 0), 5);
  EXPECT_EQ(d.deaths(1, 2, 1), 10);
  EXPECT_EQ(d.exposure(1, 2), 220.0);
  EXPECT_EQ(d.exposure(0, 0), 100.0);
}

TEST(LoadDataset, HoleNamesTheCell) {
  std::string deaths = "sex,year,age_group,cause,deaths\n";
  for (int y = 2000; y <= 2002; ++y)
    for (const char* a : {"0-4", "5+"})
      for (const char* c : {"a", "b"})
        if (!(y == 2001 && std::string(a) == "5+" && std::string(c) == "b"))
          deaths += std::string("female,") + std::to_string(y) + "," + a + "," + c + ",3\n";
  const auto e = caught([&] { load_dataset(table(deaths), table(kExposure), Sex::Female); });
  EXPECT_EQ(e.kind(), ErrorKind::MissingCell);
  EXPECT_NE(std::string(e.what()).find("age 5+, year 2001, cause b"), std::string::npos) << e.what();
}

TEST(LoadDataset, NineLabelsCollapseToSixGroups) {
  const std::vector<std::pair<std::string, int>> labels{
      {"Infectious", 1},
      {"Neoplasms", 2},
      {"Heart diseases", 3},
      {"Cerebrovascular diseases", 4},
      {"Other and unspecified disorders of the circulatory system", 5},
      {"Acute respiratory diseases", 6},
      {"Other respiratory diseases", 7},
      {"External causes", 8},
      {"All other causes", 9}};
  std::string deaths = "sex,year,age_group,cause,deaths\n";
  for (int y = 2000; y <= 2002; ++y)
    for (const char* a : {"0-4", "5+"})
      for (const auto& [l, n] : labels) deaths += std::string("female,") + std::to_string(y) + "," + a + ",\"" + l + "\"," + std::to_string(n * (y - 1999)) + "\n";
  const auto d = load_dataset(table(deaths), table(kExposure), Sex::Female, CauseMapping::six_groups());
  ASSERT_EQ(d.num_causes(), 6u);
  EXPECT_EQ(d.causes().names(), (std::vector<std::string>{"Infectious", "Neoplasms", "CVD", "Respiratory", "External", "Other"}));
  EXPECT_EQ(d.deaths(1, 2, 2), 3 * (3 + 4 + 5));
  EXPECT_EQ(d.deaths(0, 0, 3), 6 + 7);
  EXPECT_EQ(d.deaths(0, 1, 5), 18);
}

TEST(LoadDataset, UnknownCauseAndParseErrors) {
  const std::string deaths = "sex,year,age_group,cause,deaths\nfemale,2000,0-4,Mystery,3\n";
  EXPECT_EQ(caught([&] { load_dataset(table(deaths), table(kExposure), Sex::Female, CauseMapping::six_groups()); }).kind(),
            ErrorKind::UnknownCause);
  const auto bad = caught([] { table("a,b\n1,2\n3\n", "f.csv"); });
  EXPECT_EQ(bad.kind(), ErrorKind::ParseError);
  EXPECT_NE(std::string(bad.what()).find("f.csv:3"), std::string::npos);
  const std::string nonnum = "sex,year,age_group,cause,deaths\nfemale,2000,0-4,a,x\n";
  EXPECT_EQ(caught([&] { load_dataset(table(nonnum), table(kExposure), Sex::Female); }).kind(), ErrorKind::ParseError);
  EXPECT_EQ(caught([] { table("x\n1\n").column("y"); }).kind(), ErrorKind::ParseError);
}

TEST(DatasetFiles, WriteThenLoadRoundTrip) {
  SynthSpec s;
  s.seed = 4;
  const auto data = simulate(s).first;
  const auto dir = tmp_dir("roundtrip");
  write_dataset(data, dir + "/deaths.csv", dir + "/exposure.csv");
  const auto back = load_dataset(dir + "/deaths.csv", dir + "/exposure.csv", Sex::Female, std::nullopt, "synthetic");
  EXPECT_EQ(back, data);
}

TEST(DrawFiles, RoundTripBitExact) {
  DrawTable t;
  t.kind = ModelKind::LC;
  t.first_year = 1990;
  t.chains = 2;
  t.kept = 3;
  t.names = {"nu0", "phi"};
  Rng rng = make_stream(2, 0);
  for (int i = 0; i < 12; ++i) t.values.push_back(std::exp(3.0 * standard_normal(rng)) * (i % 2 ? 1 : -1));
  const auto dir = tmp_dir("draws");
  write_draws(dir + "/draws.csv", t);
  const auto back = read_draws(dir + "/draws.csv");
  EXPECT_EQ(back.kind, t.kind);
  EXPECT_EQ(back.first_year, 1990);
  EXPECT_EQ(back.chains, 2u);
  EXPECT_EQ(back.kept, 3u);
  EXPECT_EQ(back.names, t.names);
  EXPECT_EQ(back.values, t.values);
}

TEST(DrawFiles, FitFromDrawsRestoresConstrainedValues) {
  SynthSpec s;
  s.flavor = ModelKind::AP;
  s.ages = 4;
  s.years = 5;
  const auto [data, truth] = simulate(s);
  const DmpModel model(ModelKind::AP, data, HyperPriors::age_period());
  DrawTable t;
  t.kind = ModelKind::AP;
  t.chains = 1;
  t.kept = 1;
  t.names = model.constrained_names();
  t.values = model.constrained_values(truth);
  const auto fit = fit_from_draws(t, data, HyperPriors::age_period());
  const auto again = fit.model->constrained_values(fit.draws.draw(0, 0));
  for (std::size_t i = 0; i < again.size(); ++i) EXPECT_NEAR(again[i], t.values[i], 1e-10) << t.names[i];
}

TEST(ForecastFiles, RowCountIsAgesHorizonCausesQuantiles) {
  ForecastSummary s;
  s.ages = 2;
  s.horizon = 3;
  s.causes = 2;
  s.first_year = 2010;
  s.quantiles = {0.1, 0.5, 0.9};
  s.band_cause.assign(2 * 3 * 2 * 3, -5.0);
  s.band_total.assign(2 * 3 * 3, -4.0);
  const auto dir = tmp_dir("forecast");
  write_forecast(dir + "/f.csv", dir + "/t.csv", s, AgeGrid::five_year(2), CauseSet({"a", "b"}));
  const auto f = read_csv_file(dir + "/f.csv");
  EXPECT_EQ(f.rows.size(), 2u * 3 * 2 * 3);
  EXPECT_EQ(f.meta.at("format_version"), "1");
  EXPECT_EQ(f.rows[0], (std::vector<std::string>{"0-4", "2010", "a", "0.10000000000000001", "-5"}));
  EXPECT_EQ(read_csv_file(dir + "/t.csv").rows.size(), 2u * 3 * 3);
}

TEST(ReportFiles, CsvRoundTripAndJson) {
  EvalReport r;
  r.rows.push_back({"lc", Sex::Male, Phase::OOS, "total", {0.125, 0.25}});
  r.rows.push_back({"coda", Sex::Female, Phase::Train, "CVD", {1.0 / 3.0, 0.5}});
  r.failures.push_back({"dmp-ap", ErrorKind::InitializationFailure, "no luck"});
  r.metadata["floor"] = "0.5";
  const auto dir = tmp_dir("report");
  write_report(dir + "/r.csv", dir + "/r.json", r);
  const auto rows = read_report_csv(dir + "/r.csv");
  ASSERT_EQ(rows.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(rows[i].model, r.rows[i].model);
    EXPECT_EQ(rows[i].sex, r.rows[i].sex);
    EXPECT_EQ(rows[i].phase, r.rows[i].phase);
    EXPECT_EQ(rows[i].cause, r.rows[i].cause);
    EXPECT_EQ(rows[i].metrics.mae, r.rows[i].metrics.mae);
    EXPECT_EQ(rows[i].metrics.rmse, r.rows[i].metrics.rmse);
  }
  std::ifstream in(dir + "/r.json");
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j["rows"].size(), 2u);
  EXPECT_EQ(j["failures"][0]["kind"], "InitializationFailure");
  EXPECT_EQ(j["metadata"]["floor"], "0.5");
}

TEST(Config, IniKeysAndPriorOverrides) {
  const auto dir = tmp_dir("config");
  std::ofstream(dir + "/run.ini") << "[run]\nseed = 42\nout = " << dir << "/out\n"
                                  << "[data]\nsex = female, male\nmapping = none\n"
                                  << "[split]\nholdout_years = 5\n"
                                  << "[models]\nlist = lc, coda\n"
                                  << "[sampler]\nchains = 2\niters = 800\nwarmup = 400\n"
                                  << "[forecast]\nhorizon = 7\nquantiles = 0.1, 0.9\n"
                                  << "[priors.lc]\ntheta_sd = 0.25\n";
  const auto c = load_config(dir + "/run.ini");
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.out_dir, dir + "/out");
  EXPECT_EQ(c.sexes, (std::vector<Sex>{Sex::Female, Sex::Male}));
  EXPECT_EQ(c.holdout_years, 5u);
  EXPECT_EQ(c.models, (std::vector<std::string>{"lc", "coda"}));
  EXPECT_EQ(c.sampler.chains, 2u);
  EXPECT_EQ(c.sampler.iters, 800u);
  EXPECT_EQ(c.forecast.horizon, 7u);
  EXPECT_EQ(c.quantiles, (std::vector<double>{0.1, 0.9}));
  EXPECT_EQ(c.priors(ModelKind::LC).theta_sd, 0.25);
  EXPECT_EQ(c.priors(ModelKind::AP).theta_sd, HyperPriors::age_period().theta_sd);

  std::ofstream(dir + "/bad.ini") << "[priors.ap]\nno_such = 1\n";
  EXPECT_EQ(caught([&] { load_config(dir + "/bad.ini").priors(ModelKind::AP); }).kind(), ErrorKind::ConfigError);
  EXPECT_EQ(caught([&] { load_config(dir + "/missing.ini"); }).kind(), ErrorKind::ConfigError);
}

}  // namespace
}  // namespace dmp
