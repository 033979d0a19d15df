#pragma once

// Role-typed cohorts and the tabular preprocessing primitives (CSV ingestion,
// exponentially weighted trajectory aggregation, SpO2/SaO2 matching, filters).

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace pse {

// Immutable analysis table: confounders Z, binary exposure X, mediator blocks W
// and V, outcome Y. Blocks are stored row-major. An optional per-row weight
// vector turns the cohort into a weighted (e.g. exactly enumerated) distribution;
// an empty vector means unit weights.
struct Cohort {
  std::size_t dim_z = 0;
  std::size_t dim_w = 0;
  std::size_t dim_v = 0;
  std::vector<double> z;
  std::vector<std::uint8_t> x;
  std::vector<double> w;
  std::vector<double> v;
  std::vector<double> y;
  std::vector<double> weight;
  std::vector<std::string> z_names;
  std::vector<std::string> w_names;
  std::vector<std::string> v_names;
  std::string x_name = "x";
  std::string y_name = "y";

  std::size_t size() const { return y.size(); }
  bool weighted() const { return !weight.empty(); }
  double row_weight(std::size_t i) const { return weight.empty() ? 1.0 : weight[i]; }

  std::span<const double> z_row(std::size_t i) const { return {z.data() + i * dim_z, dim_z}; }
  std::span<const double> w_row(std::size_t i) const { return {w.data() + i * dim_w, dim_w}; }
  std::span<const double> v_row(std::size_t i) const { return {v.data() + i * dim_v, dim_v}; }

  // Rows in the given order (duplicates allowed, e.g. bootstrap resamples).
  Cohort subset(std::span<const std::size_t> rows) const;

  // Throws InvalidArgument if block sizes disagree, x is not 0/1, or an entry
  // is non-finite.
  void validate() const;

  // Fills default column names (z1.., w1.., v1..) for any empty name list.
  void ensure_names();

  std::size_t count_exposure(int value) const;
};

bool operator==(const Cohort& a, const Cohort& b);

// Generic named-column table; missing cells are NaN.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> data;  // data[column][row]
  // Columns whose cells are kept as raw strings (the exposure labels).
  std::map<std::string, std::vector<std::string>> text;

  std::size_t rows() const;
  std::optional<std::size_t> find(const std::string& name) const;
  const std::vector<double>& column(const std::string& name) const;
};

// Reads a header-first CSV. Columns listed in text_columns keep their raw string
// cells; every other cell is parsed as a number and unparseable or empty cells
// become NaN.
Table read_csv_table(const std::string& path, const std::vector<std::string>& text_columns = {});
Table parse_csv_table(const std::string& contents,
                      const std::vector<std::string>& text_columns = {});

struct DeltaRule {
  std::string spo2_column;
  std::string sao2_column;
  std::string name = "delta";
};

// Column-role mapping used to turn a table into a cohort.
struct RoleSchema {
  std::string x;
  std::string x0_label = "0";
  std::string x1_label = "1";
  std::string y;
  std::vector<std::string> z;
  std::vector<std::string> w;
  std::vector<std::string> v;
  std::optional<DeltaRule> delta;  // appended to the V block
  std::optional<std::string> weight;  // optional non-negative row weights

  // Throws InvalidArgument naming every problem (overlapping roles, empty y/x).
  void validate() const;
};

RoleSchema role_schema_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RoleSchema& schema);

struct LoadReport {
  std::size_t rows_read = 0;
  std::size_t rows_kept = 0;
  std::size_t rows_dropped = 0;  // missing a required field
  std::map<std::string, std::size_t> missing_by_column;
};

nlohmann::json to_json(const LoadReport& report);

// Maps a table onto a cohort. Rows missing any role column are dropped and
// counted. Throws on unknown columns, exposure labels outside {x0, x1}, or an
// empty result.
Cohort cohort_from_table(const Table& table, const RoleSchema& schema, LoadReport* report = nullptr);
Cohort load_csv(const std::string& path, const RoleSchema& schema, LoadReport* report = nullptr);

// Writes columns z..., x, w..., v..., y (and weight when present) using the
// shortest round-trip representation of each value, so reading the file back
// reproduces the cohort exactly.
std::string cohort_to_csv(const Cohort& cohort);
void write_cohort_csv(const Cohort& cohort, const std::string& path);
// Schema matching the column names cohort_to_csv writes for this cohort.
RoleSchema schema_for(const Cohort& cohort);
Cohort cohort_from_csv_string(const std::string& contents, const RoleSchema& schema);

// One measurement channel of one stay: (minutes before the anchor event, value).
struct EventSeries {
  std::vector<double> minutes_before;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  void validate() const;
};

inline constexpr double kDefaultEwaGamma = 0.01;
inline constexpr double kDefaultMatchWindowMinutes = 5.0;

// Σ w_i x_i / Σ w_i with w_i = exp(-gamma * t_i).
double ewa_aggregate(const EventSeries& series, double gamma = kDefaultEwaGamma);

// Pairs each SpO2 reading with the earliest SaO2 reading taken at the same time
// or within window_minutes after it (wall clock). Each SaO2 reading is used at
// most once; SpO2 readings are processed in chronological order so earlier
// readings win contested SaO2 values. Output times are the SpO2 times and
// values are SpO2 - SaO2.
EventSeries match_discrepancy(const EventSeries& spo2, const EventSeries& sao2,
                              double window_minutes = kDefaultMatchWindowMinutes);

struct RangeRule {
  std::string column;
  double lo;
  double hi;
};

struct FilterRules {
  std::optional<std::string> stay_hours_column;
  double min_stay_hours = 24.0;
  std::vector<std::string> required_columns;  // must be non-missing
  std::vector<RangeRule> ranges;              // inclusive bounds
};

FilterRules filter_rules_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FilterRules& rules);

struct FilterReport {
  std::size_t rows_in = 0;
  std::size_t rows_out = 0;
  // Rows removed by each rule, in rule order; a row is charged to the first
  // rule it fails.
  std::vector<std::pair<std::string, std::size_t>> excluded;
};

nlohmann::json to_json(const FilterReport& report);

// Applies the rules in order: stay length, required columns, ranges. Throws
// InvalidArgument for unknown columns and Error if nothing survives.
Table filter_table(const Table& table, const FilterRules& rules, FilterReport* report = nullptr);

// Long-format event aggregation: rows of (stay id, channel, minutes before
// anchor, value). Produces one row per stay with EWA aggregates per channel,
// plus the aggregated matched discrepancy when both oximetry channels exist.
struct EventAggregation {
  std::string stay_column = "stay_id";
  std::string channel_column = "channel";
  std::string time_column = "minutes_before";
  std::string value_column = "value";
  std::string spo2_channel = "spo2";
  std::string sao2_channel = "sao2";
  std::string delta_name = "delta";
  double gamma = kDefaultEwaGamma;
  double window_minutes = kDefaultMatchWindowMinutes;
};

// Aggregates an events table (stay/time/value numeric; channel kept as text)
// into a wide table keyed by stay id. Stays missing a channel get NaN there.
Table aggregate_events(const Table& events, const EventAggregation& cfg);

// Left-joins the wide aggregate onto a per-stay table by stay id.
Table join_on(const Table& left, const Table& right, const std::string& key);

std::string table_to_csv(const Table& table);

}  // namespace pse
