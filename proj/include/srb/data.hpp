#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "srb/csv.hpp"
#include "srb/error.hpp"

namespace srb {

inline constexpr int kGridStart = 1950;
inline constexpr int kGridEnd = 2100;
inline constexpr int kRiskFreeLastYear = 1970;

enum class SourceType { CrvsSrs = 0, Census = 1, Dhs = 2, OtherDhs = 3, Other = 4 };
inline constexpr std::size_t kSourceTypeCount = 5;
inline constexpr std::array<SourceType, kSourceTypeCount> kAllSourceTypes = {
    SourceType::CrvsSrs, SourceType::Census, SourceType::Dhs, SourceType::OtherDhs, SourceType::Other};

inline std::string_view to_string(SourceType s) {
  switch (s) {
    case SourceType::CrvsSrs: return "CRVS_SRS";
    case SourceType::Census: return "Census";
    case SourceType::Dhs: return "DHS";
    case SourceType::OtherDhs: return "OtherDHS";
    case SourceType::Other: return "Other";
  }
  return "?";
}

inline std::optional<SourceType> parse_source_type(std::string_view s) {
  for (auto t : kAllSourceTypes)
    if (to_string(t) == s) return t;
  return std::nullopt;
}

/// Calendar year of the model grid an observation informs.
inline int grid_year(double year) { return static_cast<int>(std::floor(year + 0.5)); }

struct Observation {
  std::string country;
  double year = 0;
  double srb = 0;
  SourceType source = SourceType::CrvsSrs;
  double sampling_sd = 0;

  int grid_year() const { return srb::grid_year(year); }
  bool operator==(const Observation&) const = default;
};

/// Observations kept sorted by (country, year); ties keep input order.
class ObservationSet {
 public:
  ObservationSet() = default;
  explicit ObservationSet(std::vector<Observation> rows) : rows_(std::move(rows)) {
    std::stable_sort(rows_.begin(), rows_.end(), [](const Observation& a, const Observation& b) {
      return a.country != b.country ? a.country < b.country : a.year < b.year;
    });
  }

  const std::vector<Observation>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }
  bool empty() const { return rows_.empty(); }
  auto begin() const { return rows_.begin(); }
  auto end() const { return rows_.end(); }
  const Observation& operator[](std::size_t i) const { return rows_[i]; }

  std::set<std::string> countries() const {
    std::set<std::string> out;
    for (const auto& o : rows_) out.insert(o.country);
    return out;
  }

  template <typename Pred>
  ObservationSet filter(Pred pred) const {
    std::vector<Observation> out;
    for (const auto& o : rows_)
      if (pred(o)) out.push_back(o);
    return ObservationSet(std::move(out));
  }

 private:
  std::vector<Observation> rows_;
};

struct Country {
  std::string code;
  std::string name;
  std::string region;
  bool at_risk = false;
};

class CountryRegistry {
 public:
  CountryRegistry() = default;
  explicit CountryRegistry(std::vector<Country> countries) : countries_(std::move(countries)) {
    for (std::size_t i = 0; i < countries_.size(); ++i) {
      const auto& c = countries_[i];
      if (!index_.emplace(c.code, i).second)
        throw Error(ErrorCode::InvalidArgument, "duplicate country code " + c.code);
      if (c.region.empty()) throw Error(ErrorCode::InvalidArgument, "country " + c.code + " has no region");
      if (std::find(regions_.begin(), regions_.end(), c.region) == regions_.end()) regions_.push_back(c.region);
    }
    std::sort(regions_.begin(), regions_.end());
  }

  const std::vector<Country>& countries() const { return countries_; }
  const std::vector<std::string>& regions() const { return regions_; }

  bool contains(std::string_view code) const { return index_.count(std::string(code)) > 0; }

  const Country& at(std::string_view code) const {
    auto it = index_.find(std::string(code));
    if (it == index_.end()) throw Error(ErrorCode::UnknownCountry, std::string(code));
    return countries_[it->second];
  }

  std::size_t region_index(std::string_view region) const {
    auto it = std::find(regions_.begin(), regions_.end(), region);
    if (it == regions_.end()) throw Error(ErrorCode::InvalidArgument, "unknown region " + std::string(region));
    return static_cast<std::size_t>(it - regions_.begin());
  }

  bool is_at_risk(std::string_view code) const { return at(code).at_risk; }

  std::vector<std::string> at_risk_codes() const {
    std::vector<std::string> out;
    for (const auto& c : countries_)
      if (c.at_risk) out.push_back(c.code);
    return out;
  }

  std::vector<std::string> codes() const {
    std::vector<std::string> out;
    for (const auto& c : countries_) out.push_back(c.code);
    return out;
  }

 private:
  std::vector<Country> countries_;
  std::vector<std::string> regions_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Annual series starting at `first_year`.
struct AnnualSeries {
  int first_year = kGridStart;
  std::vector<double> values;

  int last_year() const { return first_year + static_cast<int>(values.size()) - 1; }
  bool covers(int year) const { return year >= first_year && year <= last_year(); }
  double at(int year) const { return values.at(static_cast<std::size_t>(year - first_year)); }
};

struct CountryTfr {
  AnnualSeries median;
  std::vector<AnnualSeries> trajectories;  // optional projection trajectories, same years as median
};

struct TfrTable {
  std::map<std::string, CountryTfr> countries;

  const CountryTfr& at(std::string_view code) const {
    auto it = countries.find(std::string(code));
    if (it == countries.end()) throw Error(ErrorCode::MissingTfr, "no TFR series for " + std::string(code));
    return it->second;
  }
  std::size_t trajectory_count() const {
    return countries.empty() ? 0 : countries.begin()->second.trajectories.size();
  }
};

struct TfrAnchors {
  std::string country;
  int f6 = 0;
  int f29 = 0;
  int z = 0;  // lower truncation year of the start-year prior
  int x = 0;  // location year of the start-year prior
  bool never_crosses_6 = false;
  bool never_crosses_29 = false;
};

struct BirthsTable {
  std::string unit;
  std::map<std::string, AnnualSeries> countries;

  double at(std::string_view code, int year) const {
    auto it = countries.find(std::string(code));
    if (it == countries.end() || !it->second.covers(year))
      throw Error(ErrorCode::MissingBirths, "no births for " + std::string(code) + " in " + std::to_string(year));
    return it->second.at(year);
  }
};

/// One rejected input row.
struct RowError {
  std::size_t line = 0;
  ErrorCode code = ErrorCode::Parse;
  std::string message;
};

class IngestError : public Error {
 public:
  IngestError(std::string file, std::vector<RowError> rows)
      : Error(rows.empty() ? ErrorCode::Parse : rows.front().code, describe(file, rows)), rows_(std::move(rows)) {}

  const std::vector<RowError>& rows() const { return rows_; }

 private:
  static std::string describe(const std::string& file, const std::vector<RowError>& rows) {
    std::string s = file + ": " + std::to_string(rows.size()) + " invalid row(s)";
    for (std::size_t i = 0; i < rows.size() && i < 5; ++i)
      s += "; line " + std::to_string(rows[i].line) + " " + std::string(to_string(rows[i].code)) + " " +
           rows[i].message;
    return s;
  }
  std::vector<RowError> rows_;
};

// ---------------------------------------------------------------------------
// observations.csv

inline ObservationSet parse_observations(const csv::Table& t, const CountryRegistry* registry = nullptr,
                                         std::string_view file = "observations.csv") {
  const auto c_country = t.require("country_code", file);
  const auto c_year = t.require("year", file);
  const auto c_srb = t.require("srb", file);
  const auto c_source = t.require("source_type", file);
  const auto c_sd = t.require("sampling_sd", file);
  const std::size_t width = std::max({c_country, c_year, c_srb, c_source, c_sd}) + 1;

  std::vector<Observation> out;
  std::vector<RowError> errors;
  for (const auto& row : t.rows) {
    auto fail = [&](ErrorCode code, std::string msg) { errors.push_back({row.line, code, std::move(msg)}); };
    if (row.fields.size() < width) {
      fail(ErrorCode::MissingColumn, "expected " + std::to_string(t.header.size()) + " fields");
      continue;
    }
    Observation o;
    o.country = row.fields[c_country];
    auto year = csv::parse_double(row.fields[c_year]);
    auto srb = csv::parse_double(row.fields[c_srb]);
    auto sd = csv::parse_double(row.fields[c_sd]);
    auto source = parse_source_type(row.fields[c_source]);
    if (!year || !srb || !sd) {
      fail(ErrorCode::Parse, "non-numeric field");
      continue;
    }
    if (!(*srb > 0)) {
      fail(ErrorCode::NonPositiveSrb, "srb " + row.fields[c_srb]);
      continue;
    }
    if (!source) {
      fail(ErrorCode::UnknownSourceType, row.fields[c_source]);
      continue;
    }
    if (!(*sd >= 0)) {
      fail(ErrorCode::InvalidArgument, "negative sampling_sd");
      continue;
    }
    if (!(*year >= 1900 && *year <= 2100)) {
      fail(ErrorCode::InvalidArgument, "year outside [1900, 2100]");
      continue;
    }
    if (registry && !registry->contains(o.country)) {
      fail(ErrorCode::UnknownCountry, o.country);
      continue;
    }
    o.year = *year;
    o.srb = *srb;
    o.source = *source;
    o.sampling_sd = *sd;
    out.push_back(std::move(o));
  }
  if (!errors.empty()) throw IngestError(std::string(file), std::move(errors));
  return ObservationSet(std::move(out));
}

inline ObservationSet load_observations(const std::string& path, const CountryRegistry* registry = nullptr) {
  return parse_observations(csv::read_file(path), registry, path);
}

inline std::string serialize_observations(const ObservationSet& obs) {
  std::string s = "country_code,year,srb,source_type,sampling_sd\n";
  for (const auto& o : obs) {
    s += csv::quote(o.country);
    s += ',';
    s += csv::format_double(o.year);
    s += ',';
    s += csv::format_double(o.srb);
    s += ',';
    s += to_string(o.source);
    s += ',';
    s += csv::format_double(o.sampling_sd);
    s += '\n';
  }
  return s;
}

// ---------------------------------------------------------------------------
// countries.csv

inline CountryRegistry parse_countries(const csv::Table& t, std::string_view file = "countries.csv") {
  const auto c_code = t.require("country_code", file);
  const auto c_name = t.require("name", file);
  const auto c_region = t.require("region_code", file);
  const auto c_risk = t.require("at_risk", file);
  const std::size_t width = std::max({c_code, c_name, c_region, c_risk}) + 1;
  std::vector<Country> out;
  std::vector<RowError> errors;
  for (const auto& row : t.rows) {
    if (row.fields.size() < width) {
      errors.push_back({row.line, ErrorCode::MissingColumn, "short row"});
      continue;
    }
    const auto& risk = row.fields[c_risk];
    if (risk != "0" && risk != "1") {
      errors.push_back({row.line, ErrorCode::Parse, "at_risk must be 0 or 1"});
      continue;
    }
    out.push_back({row.fields[c_code], row.fields[c_name], row.fields[c_region], risk == "1"});
  }
  if (!errors.empty()) throw IngestError(std::string(file), std::move(errors));
  return CountryRegistry(std::move(out));
}

inline CountryRegistry load_countries(const std::string& path) { return parse_countries(csv::read_file(path), path); }

inline std::string serialize_countries(const CountryRegistry& reg) {
  std::string s = "country_code,name,region_code,at_risk\n";
  for (const auto& c : reg.countries())
    s += csv::quote(c.code) + ',' + csv::quote(c.name) + ',' + csv::quote(c.region) + ',' + (c.at_risk ? "1" : "0") +
         '\n';
  return s;
}

// ---------------------------------------------------------------------------
// tfr.csv

inline TfrTable parse_tfr(const csv::Table& t, std::string_view file = "tfr.csv") {
  const auto c_code = t.require("country_code", file);
  const auto c_year = t.require("year", file);
  const auto c_median = t.require("tfr_median", file);
  std::vector<std::size_t> traj_cols;
  for (std::size_t m = 1;; ++m) {
    auto col = t.column("traj_" + std::to_string(m));
    if (!col) break;
    traj_cols.push_back(*col);
  }
  TfrTable out;
  std::vector<RowError> errors;
  for (const auto& row : t.rows) {
    if (row.fields.size() < t.header.size()) {
      errors.push_back({row.line, ErrorCode::MissingColumn, "short row"});
      continue;
    }
    auto year = csv::parse_int(row.fields[c_year]);
    auto med = csv::parse_double(row.fields[c_median]);
    if (!year || !med) {
      errors.push_back({row.line, ErrorCode::Parse, "non-numeric field"});
      continue;
    }
    if (!(*med > 0)) {
      errors.push_back({row.line, ErrorCode::InvalidArgument, "TFR must be positive"});
      continue;
    }
    auto& ct = out.countries[row.fields[c_code]];
    if (ct.median.values.empty()) {
      ct.median.first_year = static_cast<int>(*year);
      ct.trajectories.assign(traj_cols.size(), AnnualSeries{static_cast<int>(*year), {}});
    } else if (*year != ct.median.last_year() + 1) {
      errors.push_back({row.line, ErrorCode::InvalidArgument, "TFR years must be contiguous and ascending"});
      continue;
    }
    ct.median.values.push_back(*med);
    for (std::size_t m = 0; m < traj_cols.size(); ++m) {
      auto v = csv::parse_double(row.fields[traj_cols[m]]);
      if (!v || !(*v > 0)) {
        errors.push_back({row.line, ErrorCode::InvalidArgument, "bad trajectory value"});
        v = *med;
      }
      ct.trajectories[m].values.push_back(*v);
    }
  }
  if (!errors.empty()) throw IngestError(std::string(file), std::move(errors));
  return out;
}

inline TfrTable load_tfr(const std::string& path) { return parse_tfr(csv::read_file(path), path); }

inline std::string serialize_tfr(const TfrTable& tfr) {
  const std::size_t m = tfr.trajectory_count();
  std::string s = "country_code,year,tfr_median";
  for (std::size_t k = 1; k <= m; ++k) s += ",traj_" + std::to_string(k);
  s += '\n';
  for (const auto& [code, ct] : tfr.countries) {
    for (std::size_t i = 0; i < ct.median.values.size(); ++i) {
      s += csv::quote(code) + ',' + std::to_string(ct.median.first_year + static_cast<int>(i)) + ',' +
           csv::format_double(ct.median.values[i]);
      for (std::size_t k = 0; k < m; ++k) s += ',' + csv::format_double(ct.trajectories[k].values[i]);
      s += '\n';
    }
  }
  return s;
}

/// First year the series is at or below `threshold`; nullopt if it never gets there.
inline std::optional<int> first_year_at_or_below(const AnnualSeries& series, double threshold) {
  for (std::size_t i = 0; i < series.values.size(); ++i)
    if (series.values[i] <= threshold) return series.first_year + static_cast<int>(i);
  return std::nullopt;
}

inline TfrAnchors anchors_from_series(std::string country, const AnnualSeries& series) {
  if (series.values.empty()) throw Error(ErrorCode::MissingTfr, "empty TFR series for " + country);
  TfrAnchors a;
  a.country = std::move(country);
  auto f6 = first_year_at_or_below(series, 6.0);
  auto f29 = first_year_at_or_below(series, 2.9);
  a.never_crosses_6 = !f6;
  a.never_crosses_29 = !f29;
  a.f6 = f6.value_or(series.last_year());
  a.f29 = f29.value_or(series.last_year());
  a.z = std::max(kRiskFreeLastYear, a.f6);
  a.x = std::max(kRiskFreeLastYear, a.f29);
  return a;
}

inline TfrAnchors compute_tfr_anchors(const TfrTable& tfr, std::string_view country) {
  return anchors_from_series(std::string(country), tfr.at(country).median);
}

// ---------------------------------------------------------------------------
// births.csv

inline BirthsTable parse_births(const csv::Table& t, std::string_view file = "births.csv") {
  const auto c_code = t.require("country_code", file);
  const auto c_year = t.require("year", file);
  const auto c_births = t.require("births", file);
  const auto c_unit = t.require("unit", file);
  BirthsTable out;
  std::vector<RowError> errors;
  for (const auto& row : t.rows) {
    if (row.fields.size() < t.header.size()) {
      errors.push_back({row.line, ErrorCode::MissingColumn, "short row"});
      continue;
    }
    auto year = csv::parse_int(row.fields[c_year]);
    auto b = csv::parse_double(row.fields[c_births]);
    if (!year || !b || !(*b >= 0)) {
      errors.push_back({row.line, ErrorCode::Parse, "bad year or births"});
      continue;
    }
    if (out.unit.empty()) {
      out.unit = row.fields[c_unit];
    } else if (out.unit != row.fields[c_unit]) {
      errors.push_back({row.line, ErrorCode::InvalidArgument, "mixed births units"});
      continue;
    }
    auto& series = out.countries[row.fields[c_code]];
    if (series.values.empty()) {
      series.first_year = static_cast<int>(*year);
    } else if (*year != series.last_year() + 1) {
      errors.push_back({row.line, ErrorCode::InvalidArgument, "births years must be contiguous and ascending"});
      continue;
    }
    series.values.push_back(*b);
  }
  if (!errors.empty()) throw IngestError(std::string(file), std::move(errors));
  return out;
}

inline BirthsTable load_births(const std::string& path) { return parse_births(csv::read_file(path), path); }

inline std::string serialize_births(const BirthsTable& births) {
  std::string s = "country_code,year,births,unit\n";
  for (const auto& [code, series] : births.countries)
    for (std::size_t i = 0; i < series.values.size(); ++i)
      s += csv::quote(code) + ',' + std::to_string(series.first_year + static_cast<int>(i)) + ',' +
           csv::format_double(series.values[i]) + ',' + csv::quote(births.unit) + '\n';
  return s;
}

// ---------------------------------------------------------------------------
// model databases

/// All rows of countries not at risk, plus at-risk rows with reference year up to 1970.
inline ObservationSet build_risk_free_db(const ObservationSet& obs, const CountryRegistry& reg) {
  return obs.filter([&](const Observation& o) { return !reg.is_at_risk(o.country) || o.year <= kRiskFreeLastYear; });
}

inline ObservationSet build_at_risk_db(const ObservationSet& obs, const CountryRegistry& reg) {
  return obs.filter([&](const Observation& o) { return reg.is_at_risk(o.country); });
}

inline ObservationSet build_country_db(const ObservationSet& obs, const CountryRegistry& reg,
                                       std::string_view country) {
  if (!reg.contains(country)) throw Error(ErrorCode::UnknownCountry, std::string(country));
  return obs.filter([&](const Observation& o) { return o.country == country; });
}

}  // namespace srb
