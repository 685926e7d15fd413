#pragma once

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include "dmp/data_model.hpp"
#include "dmp/error.hpp"
#include "dmp/evaluation.hpp"
#include "dmp/fit.hpp"
#include "dmp/forecast.hpp"
#include "dmp/models.hpp"
#include "dmp/sampler.hpp"

namespace dmp {

inline constexpr const char* kFormatLine = "# dmp format_version=1";

// ---------------------------------------------------------------------------
// CSV

struct CsvTable {
  std::string source;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines;  // 1-based source line of each row
  std::map<std::string, std::string> meta;  // key=value pairs from '#' lines

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    fail(ErrorKind::ParseError, source + ": missing required column '" + name + "'");
  }
};

/// Splits one CSV record; double quotes may wrap fields containing commas.
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  for (auto& f : out) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
  }
  return out;
}

inline CsvTable read_csv(std::istream& in, const std::string& source) {
  CsvTable t;
  t.source = source;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || line == "\r") continue;
    if (line[0] == '#') {
      std::istringstream ss(line.substr(1));
      std::string kv;
      while (ss >> kv)
        if (const auto eq = kv.find('='); eq != std::string::npos) t.meta[kv.substr(0, eq)] = kv.substr(eq + 1);
      continue;
    }
    auto fields = split_csv_line(line);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size())
      fail(ErrorKind::ParseError, source + ":" + std::to_string(n) + ": expected " +
                                      std::to_string(t.header.size()) + " fields, found " +
                                      std::to_string(fields.size()));
    t.rows.push_back(std::move(fields));
    t.lines.push_back(n);
  }
  if (t.header.empty()) fail(ErrorKind::ParseError, source + ": missing header row");
  return t;
}

inline CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::IoError, "cannot open '" + path + "'");
  return read_csv(in, path);
}

namespace detail {

inline double parse_double(const CsvTable& t, std::size_t row, std::size_t col) {
  const std::string& s = t.rows[row][col];
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size())
    fail(ErrorKind::ParseError, t.source + ":" + std::to_string(t.lines[row]) + ": column '" +
                                    t.header[col] + "' is not a number: '" + s + "'");
  return v;
}

inline long long parse_int(const CsvTable& t, std::size_t row, std::size_t col) {
  const std::string& s = t.rows[row][col];
  char* end = nullptr;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size())
    fail(ErrorKind::ParseError, t.source + ":" + std::to_string(t.lines[row]) + ": column '" +
                                    t.header[col] + "' is not an integer: '" + s + "'");
  return v;
}

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Quotes a field when it holds a comma or a quote.
inline std::string field(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) {
    if (ch == '"') q += '"';
    q += ch;
  }
  return q + '"';
}

inline std::ofstream open_out(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(parent, ec);
  }
  std::ofstream out(path);
  if (!out) fail(ErrorKind::IoError, "cannot write '" + path + "'");
  return out;
}

inline void close_checked(std::ofstream& out, const std::string& path) {
  out.close();
  if (!out) fail(ErrorKind::IoError, "failed writing '" + path + "'");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Cause grouping

/// Input label -> cause group. Groups keep the order of first appearance.
class CauseMapping {
 public:
  void add(const std::string& label, const std::string& group) {
    if (label_to_group_.count(label) && label_to_group_[label] != group)
      fail(ErrorKind::ParseError, "cause label '" + label + "' mapped to two groups");
    label_to_group_[label] = group;
    if (std::find(groups_.begin(), groups_.end(), group) == groups_.end()) groups_.push_back(group);
  }

  std::optional<std::size_t> group_index(const std::string& label) const {
    const auto it = label_to_group_.find(label);
    if (it == label_to_group_.end()) return std::nullopt;
    return static_cast<std::size_t>(std::find(groups_.begin(), groups_.end(), it->second) - groups_.begin());
  }
  bool knows(const std::string& label) const { return label_to_group_.count(label) > 0; }
  const std::vector<std::string>& groups() const { return groups_; }

  /// Six broad groups (ICD-10 chapters as in the U.S. cause tables); group
  /// names map to themselves so pre-grouped files load unchanged.
  static CauseMapping six_groups() {
    CauseMapping m;
    const std::pair<const char*, const char*> rows[] = {
        {"Infectious", "Infectious"},
        {"Neoplasms", "Neoplasms"},
        {"Heart diseases", "CVD"},
        {"Cerebrovascular diseases", "CVD"},
        {"Other and unspecified disorders of the circulatory system", "CVD"},
        {"Acute respiratory diseases", "Respiratory"},
        {"Other respiratory diseases", "Respiratory"},
        {"External causes", "External"},
        {"All other causes", "Other"},
        {"CVD", "CVD"},
        {"Respiratory", "Respiratory"},
        {"External", "External"},
        {"Other", "Other"},
    };
    for (const auto& [label, group] : rows) m.add(label, group);
    return m;
  }

  /// CSV with columns label,group.
  static CauseMapping from_csv(const CsvTable& t) {
    CauseMapping m;
    const auto cl = t.column("label"), cg = t.column("group");
    for (const auto& r : t.rows) m.add(r[cl], r[cg]);
    if (m.groups_.size() < 2) fail(ErrorKind::ParseError, t.source + ": mapping needs two groups");
    return m;
  }

  static CauseMapping identity(const std::vector<std::string>& labels) {
    CauseMapping m;
    for (const auto& l : labels) m.add(l, l);
    return m;
  }

 private:
  std::map<std::string, std::string> label_to_group_;
  std::vector<std::string> groups_;
};

// ---------------------------------------------------------------------------
// Dataset ingestion

/// Assembles the dense grid from long-format tables: deaths (sex, year,
/// age_group, cause, deaths) and exposure (sex, year, age_group, exposure).
/// Rows for other sexes are ignored. Without a mapping the causes are the
/// distinct labels in order of first appearance.
inline MortalityDataset load_dataset(const CsvTable& deaths, const CsvTable& exposure, Sex sex,
                                     const std::optional<CauseMapping>& mapping = std::nullopt,
                                     const std::string& country = {}) {
  const auto ds = deaths.column("sex"), dy = deaths.column("year"), da = deaths.column("age_group"),
             dc = deaths.column("cause"), dd = deaths.column("deaths");
  const auto es = exposure.column("sex"), ey = exposure.column("year"), ea = exposure.column("age_group"),
             ee = exposure.column("exposure");
  const std::string want = to_string(sex);

  std::vector<std::string> labels;
  std::map<std::string, int> age_lo;
  int y0 = std::numeric_limits<int>::max(), y1 = std::numeric_limits<int>::min();
  auto note = [&](const std::string& age, long long year) {
    age_lo.emplace(age, age_lower_bound(age));
    y0 = std::min(y0, static_cast<int>(year));
    y1 = std::max(y1, static_cast<int>(year));
  };
  for (std::size_t i = 0; i < deaths.rows.size(); ++i) {
    if (parse_sex(deaths.rows[i][ds]) != sex) continue;
    note(deaths.rows[i][da], detail::parse_int(deaths, i, dy));
    const auto& l = deaths.rows[i][dc];
    if (std::find(labels.begin(), labels.end(), l) == labels.end()) labels.push_back(l);
  }
  for (std::size_t i = 0; i < exposure.rows.size(); ++i)
    if (parse_sex(exposure.rows[i][es]) == sex) note(exposure.rows[i][ea], detail::parse_int(exposure, i, ey));
  if (age_lo.empty() || labels.empty()) fail(ErrorKind::MissingCell, "no rows for sex " + want);

  const CauseMapping map = mapping ? *mapping : CauseMapping::identity(labels);
  for (const auto& l : labels)
    if (!map.knows(l)) fail(ErrorKind::UnknownCause, "cause label '" + l + "' is not in the mapping");

  std::vector<std::pair<int, std::string>> sorted;
  for (const auto& [label, lo] : age_lo) sorted.emplace_back(lo, label);
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::string> age_labels;
  std::map<std::string, std::size_t> age_index;
  for (const auto& [lo, label] : sorted) {
    age_index[label] = age_labels.size();
    age_labels.push_back(label);
  }
  const std::size_t A = age_labels.size(), T = static_cast<std::size_t>(y1 - y0 + 1),
                    C = map.groups().size();

  std::vector<double> e(A * T, 0.0);
  std::vector<char> e_seen(A * T, 0);
  for (std::size_t i = 0; i < exposure.rows.size(); ++i) {
    if (parse_sex(exposure.rows[i][es]) != sex) continue;
    const std::size_t a = age_index.at(exposure.rows[i][ea]);
    const auto t = static_cast<std::size_t>(detail::parse_int(exposure, i, ey) - y0);
    if (e_seen[a * T + t])
      fail(ErrorKind::ParseError, exposure.source + ":" + std::to_string(exposure.lines[i]) + ": duplicate row");
    e_seen[a * T + t] = 1;
    e[a * T + t] = detail::parse_double(exposure, i, ee);
  }

  std::vector<std::int64_t> d(A * T * C, 0);
  std::vector<char> d_seen(A * T * C, 0);
  std::map<std::tuple<std::size_t, std::size_t, std::string>, char> raw_seen;
  for (std::size_t i = 0; i < deaths.rows.size(); ++i) {
    if (parse_sex(deaths.rows[i][ds]) != sex) continue;
    const std::size_t a = age_index.at(deaths.rows[i][da]);
    const auto t = static_cast<std::size_t>(detail::parse_int(deaths, i, dy) - y0);
    const auto& label = deaths.rows[i][dc];
    if (!raw_seen.emplace(std::make_tuple(a, t, label), 1).second)
      fail(ErrorKind::ParseError, deaths.source + ":" + std::to_string(deaths.lines[i]) + ": duplicate row");
    const std::size_t c = *map.group_index(label);
    const long long v = detail::parse_int(deaths, i, dd);
    if (v < 0)
      fail(ErrorKind::ParseError, deaths.source + ":" + std::to_string(deaths.lines[i]) + ": negative deaths");
    d[(a * T + t) * C + c] += v;
    d_seen[(a * T + t) * C + c] = 1;
  }

  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t t = 0; t < T; ++t) {
      const std::string where = "age " + age_labels[a] + ", year " + std::to_string(y0 + static_cast<int>(t));
      if (!e_seen[a * T + t]) fail(ErrorKind::MissingCell, "no exposure for " + where);
      for (std::size_t c = 0; c < C; ++c)
        if (!d_seen[(a * T + t) * C + c])
          fail(ErrorKind::MissingCell, "no deaths for " + where + ", cause " + map.groups()[c]);
    }
  return MortalityDataset(AgeGrid(age_labels), YearGrid(y0, T), CauseSet(map.groups()), std::move(e),
                          std::move(d), sex, country);
}

inline MortalityDataset load_dataset(const std::string& deaths_csv, const std::string& exposure_csv, Sex sex,
                                     const std::optional<CauseMapping>& mapping = std::nullopt,
                                     const std::string& country = {}) {
  return load_dataset(read_csv_file(deaths_csv), read_csv_file(exposure_csv), sex, mapping, country);
}

/// Six-group mapping when it knows every label in the file, else identity.
inline std::optional<CauseMapping> auto_mapping(const CsvTable& deaths) {
  const auto m = CauseMapping::six_groups();
  const auto dc = deaths.column("cause");
  for (const auto& r : deaths.rows)
    if (!m.knows(r[dc])) return std::nullopt;
  return m;
}

// ---------------------------------------------------------------------------
// Writers and readers

inline void write_dataset(const MortalityDataset& data, const std::string& deaths_csv,
                          const std::string& exposure_csv) {
  const auto A = data.num_ages(), T = data.num_years(), C = data.num_causes();
  const std::string sex = to_string(data.sex());
  auto out = detail::open_out(deaths_csv);
  out << kFormatLine << "\nsex,year,age_group,cause,deaths\n";
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t c = 0; c < C; ++c)
        out << sex << ',' << data.years().year(t) << ',' << detail::field(data.ages()[a]) << ','
            << detail::field(data.causes()[c]) << ','
            << data.deaths(a, t, c) << '\n';
  detail::close_checked(out, deaths_csv);
  auto ex = detail::open_out(exposure_csv);
  ex << kFormatLine << "\nsex,year,age_group,exposure\n";
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t a = 0; a < A; ++a)
      ex << sex << ',' << data.years().year(t) << ',' << detail::field(data.ages()[a]) << ',' << detail::fmt(data.exposure(a, t))
         << '\n';
  detail::close_checked(ex, exposure_csv);
}

/// param,value for a constrained parameter point.
inline void write_params(const std::string& path, const std::vector<std::string>& names,
                         const std::vector<double>& values, ModelKind kind) {
  auto out = detail::open_out(path);
  out << kFormatLine << " model=" << to_string(kind) << "\nparam,value\n";
  for (std::size_t i = 0; i < names.size(); ++i) out << detail::field(names[i]) << ',' << detail::fmt(values[i]) << '\n';
  detail::close_checked(out, path);
}

/// Constrained draws in long format, as read back from disk.
struct DrawTable {
  ModelKind kind = ModelKind::AP;
  int first_year = 0;
  std::size_t chains = 0, kept = 0;
  std::vector<std::string> names;
  std::vector<double> values;  // [chain][iter][param]

  std::vector<std::vector<double>> param_chains(std::size_t k) const {
    std::vector<std::vector<double>> out(chains, std::vector<double>(kept));
    for (std::size_t c = 0; c < chains; ++c)
      for (std::size_t i = 0; i < kept; ++i) out[c][i] = values[(c * kept + i) * names.size() + k];
    return out;
  }
};

inline DrawTable draw_table(const DmpFit& fit) {
  return {fit.kind, fit.first_year, fit.draws.chains, fit.draws.kept, fit.names, fit.constrained};
}

inline void write_draws(const std::string& path, const DrawTable& t) {
  auto out = detail::open_out(path);
  out << kFormatLine << " model=" << to_string(t.kind) << " first_year=" << t.first_year
      << "\nchain,iter,param,value\n";
  const std::size_t P = t.names.size();
  for (std::size_t c = 0; c < t.chains; ++c)
    for (std::size_t i = 0; i < t.kept; ++i)
      for (std::size_t k = 0; k < P; ++k)
        out << c + 1 << ',' << i + 1 << ',' << detail::field(t.names[k]) << ',' << detail::fmt(t.values[(c * t.kept + i) * P + k])
            << '\n';
  detail::close_checked(out, path);
}

inline DrawTable read_draws(const std::string& path) {
  const auto csv = read_csv_file(path);
  DrawTable t;
  if (!csv.meta.count("model")) fail(ErrorKind::ParseError, path + ": missing model tag");
  t.kind = parse_model_kind(csv.meta.at("model"));
  if (csv.meta.count("first_year")) t.first_year = std::stoi(csv.meta.at("first_year"));
  const auto cc = csv.column("chain"), ci = csv.column("iter"), cp = csv.column("param"), cv = csv.column("value");
  std::map<std::string, std::size_t> index;
  for (const auto& r : csv.rows)
    if (index.emplace(r[cp], t.names.size()).second) t.names.push_back(r[cp]);
    else break;
  const std::size_t P = t.names.size();
  if (P == 0 || csv.rows.size() % P != 0) fail(ErrorKind::ParseError, path + ": ragged draws table");
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto chain = static_cast<std::size_t>(detail::parse_int(csv, r, cc));
    const auto iter = static_cast<std::size_t>(detail::parse_int(csv, r, ci));
    if (csv.rows[r][cp] != t.names[r % P])
      fail(ErrorKind::ParseError, path + ":" + std::to_string(csv.lines[r]) + ": unexpected parameter order");
    t.chains = std::max(t.chains, chain);
    t.kept = std::max(t.kept, iter);
    t.values.push_back(detail::parse_double(csv, r, cv));
  }
  if (t.chains * t.kept * P != t.values.size()) fail(ErrorKind::ParseError, path + ": incomplete draws table");
  return t;
}

/// Rebuilds a fit from stored constrained draws and the training data.
inline DmpFit fit_from_draws(const DrawTable& t, const MortalityDataset& data, const HyperPriors& hp) {
  DmpFit fit;
  fit.kind = t.kind;
  fit.hp = hp;
  fit.first_year = data.years().first();
  fit.model = std::make_shared<const DmpModel>(t.kind, data, hp);
  if (fit.model->constrained_names() != t.names)
    fail(ErrorKind::LayoutMismatch, "draws do not match the model for this dataset");
  fit.draws.chains = t.chains;
  fit.draws.kept = t.kept;
  fit.draws.dim = fit.model->dim();
  const std::size_t P = t.names.size();
  for (std::size_t k = 0; k < t.chains * t.kept; ++k) {
    const auto u = fit.model->unconstrain(
        fit.model->params_from_constrained(std::span<const double>(t.values.data() + k * P, P)));
    fit.draws.draws.insert(fit.draws.draws.end(), u.begin(), u.end());
  }
  fit.names = t.names;
  fit.constrained = t.values;
  return fit;
}

inline Diagnostics diagnose(const DrawTable& t) {
  Diagnostics d;
  for (std::size_t k = 0; k < t.names.size(); ++k) d.params.push_back(summarize_param(t.names[k], t.param_chains(k)));
  return d;
}

inline void write_sampler_stats(const std::string& path, const PosteriorDraws& d) {
  auto out = detail::open_out(path);
  out << kFormatLine << "\nchain,iter,divergent,treedepth,accept_stat\n";
  for (std::size_t c = 0; c < d.chains; ++c)
    for (std::size_t i = 0; i < d.kept; ++i) {
      const std::size_t k = c * d.kept + i;
      out << c + 1 << ',' << i + 1 << ',' << int(d.divergent[k]) << ',' << d.treedepth[k] << ','
          << detail::fmt(d.accept_stat[k]) << '\n';
    }
  detail::close_checked(out, path);
}

inline void write_diagnostics(const std::string& path, const Diagnostics& d) {
  auto out = detail::open_out(path);
  out << kFormatLine << "\nparam,mean,sd,q5,q50,q95,n_eff,rhat\n";
  for (const auto& p : d.params)
    out << detail::field(p.name) << ',' << detail::fmt(p.mean) << ',' << detail::fmt(p.sd) << ',' << detail::fmt(p.q5) << ','
        << detail::fmt(p.q50) << ',' << detail::fmt(p.q95) << ',' << detail::fmt(p.n_eff) << ','
        << detail::fmt(p.rhat) << '\n';
  detail::close_checked(out, path);
}

/// Fixed-width table with the usual posterior summary columns.
inline std::string format_diagnostics(const Diagnostics& d) {
  std::string s;
  char buf[200];
  std::snprintf(buf, sizeof buf, "%-18s %10s %10s %10s %10s %10s %8s %7s\n", "param", "Mean", "SD", "5%", "50%",
                "95%", "n_eff", "Rhat");
  s += buf;
  for (const auto& p : d.params) {
    std::snprintf(buf, sizeof buf, "%-18s %10.4g %10.4g %10.4g %10.4g %10.4g %8.0f %7.3f\n", p.name.c_str(),
                  p.mean, p.sd, p.q5, p.q50, p.q95, p.n_eff, p.rhat);
    s += buf;
  }
  return s;
}

/// Long format age,year,cause,quantile,value for log cause rates; totals
/// (log of summed cause rates) go to a separate file of the same shape.
inline void write_forecast(const std::string& cause_path, const std::string& total_path,
                           const ForecastSummary& s, const AgeGrid& ages, const CauseSet& causes) {
  const std::size_t Q = s.quantiles.size();
  auto out = detail::open_out(cause_path);
  out << kFormatLine << "\nage,year,cause,quantile,value\n";
  for (std::size_t a = 0; a < s.ages; ++a)
    for (std::size_t h = 0; h < s.horizon; ++h)
      for (std::size_t c = 0; c < s.causes; ++c)
        for (std::size_t q = 0; q < Q; ++q)
          out << detail::field(ages[a]) << ',' << s.first_year + static_cast<int>(h) << ',' << detail::field(causes[c]) << ','
              << detail::fmt(s.quantiles[q]) << ','
              << detail::fmt(s.band_cause[((a * s.horizon + h) * s.causes + c) * Q + q]) << '\n';
  detail::close_checked(out, cause_path);
  auto tot = detail::open_out(total_path);
  tot << kFormatLine << "\nage,year,cause,quantile,value\n";
  for (std::size_t a = 0; a < s.ages; ++a)
    for (std::size_t h = 0; h < s.horizon; ++h)
      for (std::size_t q = 0; q < Q; ++q)
        tot << detail::field(ages[a]) << ',' << s.first_year + static_cast<int>(h) << ",total," << detail::fmt(s.quantiles[q])
            << ',' << detail::fmt(s.band_total[(a * s.horizon + h) * Q + q]) << '\n';
  detail::close_checked(tot, total_path);
}

inline void write_report(const std::string& csv_path, const std::string& json_path, const EvalReport& r) {
  auto out = detail::open_out(csv_path);
  out << kFormatLine << "\nmodel,sex,phase,cause,metric,value\n";
  for (const auto& row : r.rows) {
    const std::string prefix =
        detail::field(row.model) + ',' + to_string(row.sex) + ',' + to_string(row.phase) + ',' +
        detail::field(row.cause) + ',';
    out << prefix << "MAE," << detail::fmt(row.metrics.mae) << '\n';
    out << prefix << "RMSE," << detail::fmt(row.metrics.rmse) << '\n';
  }
  detail::close_checked(out, csv_path);

  nlohmann::ordered_json j;
  j["format_version"] = 1;
  j["metadata"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.metadata) j["metadata"][k] = v;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& row : r.rows)
    j["rows"].push_back({{"model", row.model},
                         {"sex", to_string(row.sex)},
                         {"phase", to_string(row.phase)},
                         {"cause", row.cause},
                         {"MAE", row.metrics.mae},
                         {"RMSE", row.metrics.rmse}});
  j["failures"] = nlohmann::ordered_json::array();
  for (const auto& f : r.failures)
    j["failures"].push_back({{"model", f.model}, {"kind", std::string(to_string(f.kind))}, {"message", f.message}});
  auto js = detail::open_out(json_path);
  js << j.dump(2) << '\n';
  detail::close_checked(js, json_path);
}

inline std::vector<ReportRow> read_report_csv(const std::string& path) {
  const auto csv = read_csv_file(path);
  const auto cm = csv.column("model"), cs = csv.column("sex"), cp = csv.column("phase"), cc = csv.column("cause"),
             ck = csv.column("metric"), cv = csv.column("value");
  std::vector<ReportRow> rows;
  for (std::size_t i = 0; i < csv.rows.size(); ++i) {
    const auto& r = csv.rows[i];
    const Phase phase = r[cp] == "train" ? Phase::Train : Phase::OOS;
    if (r[ck] == "MAE") {
      rows.push_back({r[cm], parse_sex(r[cs]), phase, r[cc], {detail::parse_double(csv, i, cv), 0.0}});
    } else if (r[ck] == "RMSE" && !rows.empty()) {
      rows.back().metrics.rmse = detail::parse_double(csv, i, cv);
    } else {
      fail(ErrorKind::ParseError, path + ":" + std::to_string(csv.lines[i]) + ": unexpected metric row");
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Run configuration

struct RunConfig {
  std::string deaths_csv, exposure_csv, mapping = "auto";  // auto | six | none | <path>
  std::vector<Sex> sexes{Sex::Female};
  std::string country;
  std::optional<int> train_first, train_last;
  std::size_t holdout_years = 15;
  std::vector<std::string> models{"dmp-ap", "dmp-lc", "lc", "coda"};
  std::string model = "dmp-lc";  // model used by fit / forecast
  SamplerConfig sampler;
  ForecastConfig forecast;
  std::vector<double> quantiles{0.025, 0.05, 0.5, 0.95, 0.975};
  std::map<std::string, double> ap_priors, lc_priors;
  std::size_t coda_components = 1;
  double radix = 1e5;
  std::string out_dir;
  std::uint64_t seed = 1;
  // simulate
  std::size_t sim_ages = 5, sim_years = 12, sim_causes = 3;
  int sim_first_year = 2000;
  double sim_exposure = 1e5;
  std::string sim_flavor = "dmp-ap";

  /// Default output directory: DMP_OUT_DIR, else ./dmp_out.
  static std::string default_out_dir() {
    const char* env = std::getenv("DMP_OUT_DIR");
    return env && *env ? env : "dmp_out";
  }

  HyperPriors priors(ModelKind kind) const {
    HyperPriors hp = HyperPriors::defaults(kind);
    const auto& over = kind == ModelKind::AP ? ap_priors : lc_priors;
    const std::map<std::string, double*> fields{
        {"nu0_sd", &hp.nu0_sd},
        {"delta12_sd", &hp.delta12_sd},
        {"period12_sd", &hp.period12_sd},
        {"phi0_sd", &hp.phi0_sd},
        {"zeta12_sd", &hp.zeta12_sd},
        {"lambda12_sd", &hp.lambda12_sd},
        {"theta_sd", &hp.theta_sd},
        {"beta_scale", &hp.beta_scale},
        {"sigma_delta_scale", &hp.sigma_delta_scale},
        {"sigma_period_scale", &hp.sigma_period_scale},
        {"sigma_zeta_scale", &hp.sigma_zeta_scale},
        {"sigma_lambda_scale", &hp.sigma_lambda_scale},
        {"phi_mu", &hp.phi_mu},
        {"phi_sigma", &hp.phi_sigma},
    };
    for (const auto& [k, v] : over) {
      const auto it = fields.find(k);
      if (it == fields.end()) fail(ErrorKind::ConfigError, "unknown prior '" + k + "'");
      *it->second = v;
    }
    hp.validate();
    return hp;
  }

  std::optional<CauseMapping> cause_mapping(const CsvTable& deaths) const {
    if (mapping == "auto") return auto_mapping(deaths);
    if (mapping == "six") return CauseMapping::six_groups();
    if (mapping == "none") return std::nullopt;
    return CauseMapping::from_csv(read_csv_file(mapping));
  }

  /// Loaded dataset for one sex, restricted to the configured train window
  /// plus holdout when a window is given.
  MortalityDataset load(Sex sex) const {
    if (deaths_csv.empty() || exposure_csv.empty())
      fail(ErrorKind::ConfigError, "data.deaths and data.exposure are required");
    const auto d = read_csv_file(deaths_csv);
    const auto e = read_csv_file(exposure_csv);
    auto data = load_dataset(d, e, sex, cause_mapping(d), country);
    if (train_first || train_last) {
      const int y0 = train_first.value_or(data.years().first());
      const int y1 = train_last ? *train_last + static_cast<int>(holdout_years) : data.years().last();
      if (y0 < data.years().first() || y1 > data.years().last() || y1 < y0)
        fail(ErrorKind::InvalidSplit, "train window and holdout fall outside the data years");
      data = data.year_slice(static_cast<std::size_t>(y0 - data.years().first()),
                             static_cast<std::size_t>(y1 - y0 + 1));
    }
    return data;
  }
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ',')) {
    const auto b = cur.find_first_not_of(" \t"), e = cur.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(cur.substr(b, e - b + 1));
  }
  return out;
}

}  // namespace detail

/// INI file: sections [run] [data] [split] [models] [sampler] [forecast]
/// [simulate] [priors.ap] [priors.lc].
inline RunConfig load_config(const std::string& path) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(path, tree);
  } catch (const pt::ini_parser_error& e) {
    fail(ErrorKind::ConfigError, e.what());
  }
  RunConfig c;
  c.out_dir = RunConfig::default_out_dir();
  try {
    c.seed = tree.get("run.seed", c.seed);
    c.out_dir = tree.get("run.out", c.out_dir);
    c.deaths_csv = tree.get("data.deaths", c.deaths_csv);
    c.exposure_csv = tree.get("data.exposure", c.exposure_csv);
    c.mapping = tree.get("data.mapping", c.mapping);
    c.country = tree.get("data.country", c.country);
    if (auto s = tree.get_optional<std::string>("data.sex")) {
      c.sexes.clear();
      for (const auto& x : detail::split_list(*s)) c.sexes.push_back(parse_sex(x));
    }
    if (auto v = tree.get_optional<int>("split.train_first")) c.train_first = *v;
    if (auto v = tree.get_optional<int>("split.train_last")) c.train_last = *v;
    c.holdout_years = tree.get("split.holdout_years", c.holdout_years);
    if (auto s = tree.get_optional<std::string>("models.list")) c.models = detail::split_list(*s);
    c.model = tree.get("models.fit", c.model);
    c.coda_components = tree.get("models.coda_components", c.coda_components);
    c.radix = tree.get("models.radix", c.radix);
    c.sampler.chains = tree.get("sampler.chains", c.sampler.chains);
    c.sampler.iters = tree.get("sampler.iters", c.sampler.iters);
    c.sampler.warmup = tree.get("sampler.warmup", c.sampler.warmup);
    c.sampler.target_accept = tree.get("sampler.target_accept", c.sampler.target_accept);
    c.sampler.max_treedepth = tree.get("sampler.max_treedepth", c.sampler.max_treedepth);
    c.forecast.horizon = tree.get("forecast.horizon", c.forecast.horizon);
    c.forecast.thin = tree.get("forecast.thin", c.forecast.thin);
    if (auto s = tree.get_optional<std::string>("forecast.quantiles")) {
      c.quantiles.clear();
      for (const auto& x : detail::split_list(*s)) c.quantiles.push_back(std::stod(x));
    }
    c.sim_ages = tree.get("simulate.ages", c.sim_ages);
    c.sim_years = tree.get("simulate.years", c.sim_years);
    c.sim_causes = tree.get("simulate.causes", c.sim_causes);
    c.sim_first_year = tree.get("simulate.first_year", c.sim_first_year);
    c.sim_exposure = tree.get("simulate.exposure", c.sim_exposure);
    c.sim_flavor = tree.get("simulate.flavor", c.sim_flavor);
    for (const auto& [section, target] : {std::pair{"priors.ap", &c.ap_priors}, std::pair{"priors.lc", &c.lc_priors}})
      if (auto sub = tree.get_child_optional(pt::ptree::path_type(section, '/')))
        for (const auto& [k, v] : *sub) (*target)[k] = v.get_value<double>();
  } catch (const pt::ptree_error& e) {
    fail(ErrorKind::ConfigError, e.what());
  } catch (const std::invalid_argument& e) {
    fail(ErrorKind::ConfigError, std::string("bad number in config: ") + e.what());
  }
  return c;
}

}  // namespace dmp
