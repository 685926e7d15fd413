#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dmp/error.hpp"

namespace dmp {

enum class Sex { Female, Male };

inline std::string to_string(Sex s) { return s == Sex::Female ? "female" : "male"; }

inline Sex parse_sex(const std::string& s) {
  if (s == "female" || s == "f" || s == "F" || s == "Female") return Sex::Female;
  if (s == "male" || s == "m" || s == "M" || s == "Male") return Sex::Male;
  fail(ErrorKind::ParseError, "unknown sex '" + s + "'");
}

/// Lower bound of an age-group label: "0-4" -> 0, "100+" -> 100, "85" -> 85.
inline int age_lower_bound(const std::string& label) {
  std::size_t pos = 0;
  int lo = 0;
  try {
    lo = std::stoi(label, &pos);
  } catch (const std::exception&) {
    fail(ErrorKind::ParseError, "age label '" + label + "' has no numeric lower bound");
  }
  return lo;
}

/// Width in years of an age group; 0 marks the open-ended last group ("100+").
inline int age_width(const std::string& label) {
  if (!label.empty() && label.back() == '+') return 0;
  const auto dash = label.find('-');
  if (dash == std::string::npos) return 1;
  const int lo = age_lower_bound(label);
  const int hi = age_lower_bound(label.substr(dash + 1));
  if (hi < lo) fail(ErrorKind::ParseError, "age label '" + label + "' has hi < lo");
  return hi - lo + 1;
}

class AgeGrid {
 public:
  AgeGrid() = default;
  explicit AgeGrid(std::vector<std::string> labels) : labels_(std::move(labels)) {
    if (labels_.empty()) fail(ErrorKind::InvalidParams, "age grid is empty");
    std::set<std::string> seen;
    int prev = -1;
    for (const auto& l : labels_) {
      if (!seen.insert(l).second) fail(ErrorKind::InvalidParams, "duplicate age label '" + l + "'");
      const int lo = age_lower_bound(l);
      if (lo <= prev) fail(ErrorKind::InvalidParams, "age labels not ordered at '" + l + "'");
      prev = lo;
    }
  }

  /// Standard five-year grid "0-4", "5-9", ..., with the last group open.
  static AgeGrid five_year(std::size_t count) {
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < count; ++i) {
      const auto lo = 5 * i;
      labels.push_back(i + 1 == count ? std::to_string(lo) + "+"
                                      : std::to_string(lo) + "-" + std::to_string(lo + 4));
    }
    return AgeGrid(std::move(labels));
  }

  std::size_t size() const { return labels_.size(); }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::string& operator[](std::size_t i) const { return labels_.at(i); }

  bool operator==(const AgeGrid&) const = default;

 private:
  std::vector<std::string> labels_;
};

class YearGrid {
 public:
  YearGrid() = default;
  YearGrid(int first, std::size_t count) : first_(first), count_(count) {
    if (count == 0) fail(ErrorKind::InvalidParams, "year grid is empty");
  }

  int first() const { return first_; }
  int last() const { return first_ + static_cast<int>(count_) - 1; }
  std::size_t size() const { return count_; }
  int year(std::size_t t) const { return first_ + static_cast<int>(t); }

  bool operator==(const YearGrid&) const = default;

 private:
  int first_ = 0;
  std::size_t count_ = 0;
};

class CauseSet {
 public:
  CauseSet() = default;
  explicit CauseSet(std::vector<std::string> names) : names_(std::move(names)) {
    if (names_.size() < 2) fail(ErrorKind::InvalidParams, "need at least two causes");
    std::set<std::string> seen(names_.begin(), names_.end());
    if (seen.size() != names_.size()) fail(ErrorKind::InvalidParams, "duplicate cause names");
  }

  /// The six broad groups used for U.S./France cause-of-death tables.
  static CauseSet six_groups() {
    return CauseSet({"Infectious", "Neoplasms", "CVD", "Respiratory", "External", "Other"});
  }

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& operator[](std::size_t i) const { return names_.at(i); }

  std::optional<std::size_t> index_of(const std::string& name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - names_.begin());
  }

  bool operator==(const CauseSet&) const = default;

 private:
  std::vector<std::string> names_;
};

/// Dense A x T x C grid of exposures and cause-specific death counts.
/// Storage is row-major [age][year][cause]; immutable after construction.
class MortalityDataset {
 public:
  MortalityDataset() = default;
  MortalityDataset(AgeGrid ages, YearGrid years, CauseSet causes, std::vector<double> exposure,
                   std::vector<std::int64_t> deaths, Sex sex = Sex::Female,
                   std::string country = {})
      : ages_(std::move(ages)),
        years_(std::move(years)),
        causes_(std::move(causes)),
        exposure_(std::move(exposure)),
        deaths_(std::move(deaths)),
        sex_(sex),
        country_(std::move(country)) {
    const auto A = ages_.size(), T = years_.size(), C = causes_.size();
    if (exposure_.size() != A * T)
      fail(ErrorKind::InvalidParams, "exposure array has wrong size");
    if (deaths_.size() != A * T * C) fail(ErrorKind::InvalidParams, "deaths array has wrong size");
    for (double e : exposure_)
      if (!(e >= 0.0) || !std::isfinite(e))
        fail(ErrorKind::InvalidParams, "exposure must be finite and nonnegative");
    for (auto y : deaths_)
      if (y < 0) fail(ErrorKind::InvalidParams, "death counts must be nonnegative");
  }

  const AgeGrid& ages() const { return ages_; }
  const YearGrid& years() const { return years_; }
  const CauseSet& causes() const { return causes_; }
  Sex sex() const { return sex_; }
  const std::string& country() const { return country_; }

  std::size_t num_ages() const { return ages_.size(); }
  std::size_t num_years() const { return years_.size(); }
  std::size_t num_causes() const { return causes_.size(); }

  double exposure(std::size_t a, std::size_t t) const { return exposure_[a * num_years() + t]; }
  std::int64_t deaths(std::size_t a, std::size_t t, std::size_t c) const {
    return deaths_[(a * num_years() + t) * num_causes() + c];
  }
  /// Cause counts of one (age, year) cell.
  std::span<const std::int64_t> cell(std::size_t a, std::size_t t) const {
    return {deaths_.data() + (a * num_years() + t) * num_causes(), num_causes()};
  }

  const std::vector<double>& exposure_data() const { return exposure_; }
  const std::vector<std::int64_t>& deaths_data() const { return deaths_; }

  /// Copy restricted to year columns [t0, t0 + count).
  MortalityDataset year_slice(std::size_t t0, std::size_t count) const {
    const auto A = num_ages(), T = num_years(), C = num_causes();
    std::vector<double> e;
    std::vector<std::int64_t> d;
    e.reserve(A * count);
    d.reserve(A * count * C);
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t t = t0; t < t0 + count; ++t) {
        e.push_back(exposure_[a * T + t]);
        for (std::size_t c = 0; c < C; ++c) d.push_back(deaths(a, t, c));
      }
    return MortalityDataset(ages_, YearGrid(years_.year(t0), count), causes_, std::move(e),
                            std::move(d), sex_, country_);
  }

  bool operator==(const MortalityDataset&) const = default;

 private:
  AgeGrid ages_;
  YearGrid years_;
  CauseSet causes_;
  std::vector<double> exposure_;
  std::vector<std::int64_t> deaths_;
  Sex sex_ = Sex::Female;
  std::string country_;
};

/// Y_at = sum over causes, row-major [age][year].
inline std::vector<std::int64_t> total_deaths(const MortalityDataset& data) {
  const auto A = data.num_ages(), T = data.num_years();
  std::vector<std::int64_t> out(A * T, 0);
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t t = 0; t < T; ++t) {
      const auto cell = data.cell(a, t);
      out[a * T + t] = std::accumulate(cell.begin(), cell.end(), std::int64_t{0});
    }
  return out;
}

/// Half-count floor used whenever observed log rates enter error metrics.
inline constexpr double kDefaultCountFloor = 0.5;

/// log(max(Y_atc, floor) / E_at), row-major [age][year][cause].
/// Non-zero cells are exact whenever floor <= 1.
inline std::vector<double> observed_log_rates(const MortalityDataset& data,
                                              double floor = kDefaultCountFloor) {
  if (!(floor > 0.0)) fail(ErrorKind::InvalidParams, "count floor must be positive");
  const auto A = data.num_ages(), T = data.num_years(), C = data.num_causes();
  std::vector<double> out(A * T * C);
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t t = 0; t < T; ++t) {
      const double e = data.exposure(a, t);
      if (!(e > 0.0))
        fail(ErrorKind::ZeroExposure, "exposure is zero at age " + data.ages()[a] + ", year " +
                                          std::to_string(data.years().year(t)));
      for (std::size_t c = 0; c < C; ++c) {
        const double y = static_cast<double>(data.deaths(a, t, c));
        out[(a * T + t) * C + c] = std::log(std::max(y, floor) / e);
      }
    }
  return out;
}

/// log(max(Y_at, floor) / E_at) for all-cause mortality, row-major [age][year].
inline std::vector<double> observed_total_log_rates(const MortalityDataset& data,
                                                    double floor = kDefaultCountFloor) {
  const auto totals = total_deaths(data);
  const auto A = data.num_ages(), T = data.num_years();
  std::vector<double> out(A * T);
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t t = 0; t < T; ++t) {
      const double e = data.exposure(a, t);
      if (!(e > 0.0)) fail(ErrorKind::ZeroExposure, "exposure is zero at age " + data.ages()[a]);
      out[a * T + t] = std::log(std::max(static_cast<double>(totals[a * T + t]), floor) / e);
    }
  return out;
}

/// Withholds the last `holdout_years` columns. The training part keeps at
/// least three years so random-walk smoothing priors stay defined.
inline std::pair<MortalityDataset, MortalityDataset> split_train_holdout(
    const MortalityDataset& data, std::size_t holdout_years) {
  const auto T = data.num_years();
  if (holdout_years == 0 || holdout_years >= T || T - holdout_years < 3)
    fail(ErrorKind::InvalidSplit, "holdout of " + std::to_string(holdout_years) +
                                      " years leaves too few training years out of " +
                                      std::to_string(T));
  const auto train_T = T - holdout_years;
  return {data.year_slice(0, train_T), data.year_slice(train_T, holdout_years)};
}

}  // namespace dmp
