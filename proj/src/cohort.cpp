#include "pse/cohort.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "pse/common.hpp"

namespace pse {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cell.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cell));
      cell.clear();
    } else if (c != '\r') {
      cell.push_back(c);
    }
  }
  out.push_back(std::move(cell));
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

double parse_number(const std::string& raw) {
  const std::string s = trim(raw);
  if (s.empty()) return kNaN;
  double value = 0.0;
  const char* begin = s.data();
  if (*begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return kNaN;
  return value;
}

std::string format_number(double value) {
  if (std::isnan(value)) return "";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> default_names(const std::string& prefix, std::size_t n) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < n; ++i) names.push_back(prefix + std::to_string(i + 1));
  return names;
}

}  // namespace

// ---------------------------------------------------------------- Cohort

Cohort Cohort::subset(std::span<const std::size_t> rows) const {
  Cohort out;
  out.dim_z = dim_z;
  out.dim_w = dim_w;
  out.dim_v = dim_v;
  out.z_names = z_names;
  out.w_names = w_names;
  out.v_names = v_names;
  out.x_name = x_name;
  out.y_name = y_name;
  out.z.reserve(rows.size() * dim_z);
  out.w.reserve(rows.size() * dim_w);
  out.v.reserve(rows.size() * dim_v);
  out.x.reserve(rows.size());
  out.y.reserve(rows.size());
  for (std::size_t r : rows) {
    out.z.insert(out.z.end(), z.begin() + r * dim_z, z.begin() + (r + 1) * dim_z);
    out.w.insert(out.w.end(), w.begin() + r * dim_w, w.begin() + (r + 1) * dim_w);
    out.v.insert(out.v.end(), v.begin() + r * dim_v, v.begin() + (r + 1) * dim_v);
    out.x.push_back(x[r]);
    out.y.push_back(y[r]);
    if (!weight.empty()) out.weight.push_back(weight[r]);
  }
  return out;
}

void Cohort::validate() const {
  const std::size_t n = y.size();
  if (x.size() != n || z.size() != n * dim_z || w.size() != n * dim_w || v.size() != n * dim_v)
    throw InvalidArgument("cohort blocks have inconsistent row counts");
  if (!weight.empty() && weight.size() != n)
    throw InvalidArgument("cohort weight vector has the wrong length");
  for (auto xi : x)
    if (xi > 1) throw InvalidArgument("exposure must be 0/1");
  auto finite = [](const std::vector<double>& col) {
    return std::all_of(col.begin(), col.end(), [](double d) { return std::isfinite(d); });
  };
  if (!finite(z) || !finite(w) || !finite(v) || !finite(y) || !finite(weight))
    throw InvalidArgument("cohort contains non-finite entries");
  for (double wt : weight)
    if (wt < 0) throw InvalidArgument("cohort weights must be non-negative");
}

void Cohort::ensure_names() {
  if (z_names.size() != dim_z) z_names = default_names("z", dim_z);
  if (w_names.size() != dim_w) w_names = default_names("w", dim_w);
  if (v_names.size() != dim_v) v_names = default_names("v", dim_v);
}

std::size_t Cohort::count_exposure(int value) const {
  return static_cast<std::size_t>(
      std::count(x.begin(), x.end(), static_cast<std::uint8_t>(value)));
}

bool operator==(const Cohort& a, const Cohort& b) {
  return a.dim_z == b.dim_z && a.dim_w == b.dim_w && a.dim_v == b.dim_v && a.z == b.z &&
         a.x == b.x && a.w == b.w && a.v == b.v && a.y == b.y && a.weight == b.weight &&
         a.z_names == b.z_names && a.w_names == b.w_names && a.v_names == b.v_names &&
         a.x_name == b.x_name && a.y_name == b.y_name;
}

// ---------------------------------------------------------------- Table

std::size_t Table::rows() const {
  if (!data.empty()) return data.front().size();
  if (!text.empty()) return text.begin()->second.size();
  return 0;
}

std::optional<std::size_t> Table::find(const std::string& name) const {
  auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) return std::nullopt;
  return static_cast<std::size_t>(it - columns.begin());
}

const std::vector<double>& Table::column(const std::string& name) const {
  auto idx = find(name);
  if (!idx) throw InvalidArgument("unknown column: " + name);
  return data[*idx];
}

Table parse_csv_table(const std::string& contents, const std::vector<std::string>& text_columns) {
  std::istringstream in(contents);
  std::string line;
  Table table;
  if (!std::getline(in, line)) throw InvalidArgument("CSV has no header row");
  std::vector<std::string> header = split_csv_line(line);
  for (auto& h : header) h = trim(h);
  std::vector<bool> is_text(header.size(), false);
  for (std::size_t c = 0; c < header.size(); ++c) {
    is_text[c] = std::find(text_columns.begin(), text_columns.end(), header[c]) !=
                 text_columns.end();
    if (is_text[c]) table.text[header[c]] = {};
  }
  table.columns = header;
  table.data.assign(header.size(), {});
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw InvalidArgument("CSV line " + std::to_string(line_no) + " has " +
                            std::to_string(cells.size()) + " fields, expected " +
                            std::to_string(header.size()));
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (is_text[c]) {
        const std::string cell = trim(cells[c]);
        table.text[header[c]].push_back(cell);
        table.data[c].push_back(cell.empty() ? kNaN : 0.0);
      } else {
        table.data[c].push_back(parse_number(cells[c]));
      }
    }
  }
  return table;
}

Table read_csv_table(const std::string& path, const std::vector<std::string>& text_columns) {
  return parse_csv_table(read_file(path), text_columns);
}

std::string table_to_csv(const Table& table) {
  std::ostringstream out;
  for (std::size_t c = 0; c < table.columns.size(); ++c)
    out << (c ? "," : "") << table.columns[c];
  out << '\n';
  for (std::size_t r = 0; r < table.rows(); ++r) {
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
      if (c) out << ',';
      auto t = table.text.find(table.columns[c]);
      if (t != table.text.end())
        out << t->second[r];
      else
        out << format_number(table.data[c][r]);
    }
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------- RoleSchema

void RoleSchema::validate() const {
  std::vector<std::string> problems;
  if (x.empty()) problems.push_back("x column is empty");
  if (y.empty()) problems.push_back("y column is empty");
  if (x0_label == x1_label) problems.push_back("x0_label equals x1_label");
  std::set<std::string> seen;
  auto claim = [&](const std::string& col, const char* role) {
    if (col.empty()) return;
    if (!seen.insert(col).second)
      problems.push_back("column '" + col + "' assigned to more than one role (" + role + ")");
  };
  claim(x, "x");
  claim(y, "y");
  for (auto& c : z) claim(c, "z");
  for (auto& c : w) claim(c, "w");
  for (auto& c : v) claim(c, "v");
  if (delta) claim(delta->name, "delta");
  if (weight) claim(*weight, "weight");
  if (!problems.empty()) {
    std::string msg = "invalid role schema:";
    for (auto& p : problems) msg += " " + p + ";";
    throw InvalidArgument(msg);
  }
}

RoleSchema role_schema_from_json(const nlohmann::json& j) {
  RoleSchema s;
  s.x = j.at("x").get<std::string>();
  s.y = j.at("y").get<std::string>();
  s.x0_label = j.value("x0_label", s.x0_label);
  s.x1_label = j.value("x1_label", s.x1_label);
  s.z = j.value("z", std::vector<std::string>{});
  s.w = j.value("w", std::vector<std::string>{});
  s.v = j.value("v", std::vector<std::string>{});
  if (j.contains("delta") && !j["delta"].is_null()) {
    const auto& d = j["delta"];
    s.delta = DeltaRule{d.at("spo2").get<std::string>(), d.at("sao2").get<std::string>(),
                        d.value("name", std::string("delta"))};
  }
  if (j.contains("weight") && !j["weight"].is_null()) s.weight = j["weight"].get<std::string>();
  return s;
}

nlohmann::json to_json(const RoleSchema& s) {
  nlohmann::json j{{"x", s.x}, {"x0_label", s.x0_label}, {"x1_label", s.x1_label},
                   {"y", s.y}, {"z", s.z},               {"w", s.w},
                   {"v", s.v}};
  if (s.delta)
    j["delta"] = {{"spo2", s.delta->spo2_column},
                  {"sao2", s.delta->sao2_column},
                  {"name", s.delta->name}};
  if (s.weight) j["weight"] = *s.weight;
  return j;
}

nlohmann::json to_json(const LoadReport& r) {
  return {{"rows_read", r.rows_read},
          {"rows_kept", r.rows_kept},
          {"rows_dropped", r.rows_dropped},
          {"missing_by_column", r.missing_by_column}};
}

Cohort cohort_from_table(const Table& table, const RoleSchema& schema, LoadReport* report) {
  schema.validate();
  std::vector<std::string> unknown;
  auto require = [&](const std::string& c) {
    if (!table.find(c)) unknown.push_back(c);
  };
  require(schema.x);
  require(schema.y);
  for (auto& c : schema.z) require(c);
  for (auto& c : schema.w) require(c);
  for (auto& c : schema.v) require(c);
  if (schema.delta) {
    require(schema.delta->spo2_column);
    require(schema.delta->sao2_column);
  }
  if (schema.weight) require(*schema.weight);
  if (!unknown.empty()) {
    std::string msg = "unknown column(s):";
    for (auto& c : unknown) msg += " " + c;
    throw InvalidArgument(msg);
  }

  const std::size_t n = table.rows();
  // Exposure labels: text column if the loader kept one, otherwise numeric.
  std::vector<int> exposure(n, -1);
  std::vector<bool> x_missing(n, false);
  if (auto t = table.text.find(schema.x); t != table.text.end()) {
    for (std::size_t r = 0; r < n; ++r) {
      const auto& label = t->second[r];
      if (label.empty())
        x_missing[r] = true;
      else if (label == schema.x0_label)
        exposure[r] = 0;
      else if (label == schema.x1_label)
        exposure[r] = 1;
      else
        throw InvalidArgument("exposure label '" + label + "' in row " + std::to_string(r + 1) +
                              " is neither '" + schema.x0_label + "' nor '" + schema.x1_label +
                              "'");
    }
  } else {
    const auto& col = table.column(schema.x);
    const double l0 = parse_number(schema.x0_label);
    const double l1 = parse_number(schema.x1_label);
    for (std::size_t r = 0; r < n; ++r) {
      if (std::isnan(col[r]))
        x_missing[r] = true;
      else if (col[r] == l0)
        exposure[r] = 0;
      else if (col[r] == l1)
        exposure[r] = 1;
      else
        throw InvalidArgument("exposure value " + format_number(col[r]) + " in row " +
                              std::to_string(r + 1) + " is not binary after label mapping");
    }
  }

  std::vector<std::string> v_cols = schema.v;
  LoadReport rep;
  rep.rows_read = n;
  Cohort c;
  c.dim_z = schema.z.size();
  c.dim_w = schema.w.size();
  c.dim_v = schema.v.size() + (schema.delta ? 1 : 0);
  c.z_names = schema.z;
  c.w_names = schema.w;
  c.v_names = schema.v;
  if (schema.delta) c.v_names.push_back(schema.delta->name);
  c.x_name = schema.x;
  c.y_name = schema.y;

  const auto& ycol = table.column(schema.y);
  auto cols_of = [&](const std::vector<std::string>& names) {
    std::vector<const std::vector<double>*> out;
    for (auto& nm : names) out.push_back(&table.column(nm));
    return out;
  };
  auto zc = cols_of(schema.z);
  auto wc = cols_of(schema.w);
  auto vc = cols_of(schema.v);
  const std::vector<double>* spo2 = schema.delta ? &table.column(schema.delta->spo2_column) : nullptr;
  const std::vector<double>* sao2 = schema.delta ? &table.column(schema.delta->sao2_column) : nullptr;
  const std::vector<double>* wcol = schema.weight ? &table.column(*schema.weight) : nullptr;

  for (std::size_t r = 0; r < n; ++r) {
    bool ok = true;
    auto check = [&](double value, const std::string& name) {
      if (std::isnan(value)) {
        ok = false;
        ++rep.missing_by_column[name];
      }
    };
    if (x_missing[r]) {
      ok = false;
      ++rep.missing_by_column[schema.x];
    }
    check(ycol[r], schema.y);
    for (std::size_t k = 0; k < zc.size(); ++k) check((*zc[k])[r], schema.z[k]);
    for (std::size_t k = 0; k < wc.size(); ++k) check((*wc[k])[r], schema.w[k]);
    for (std::size_t k = 0; k < vc.size(); ++k) check((*vc[k])[r], schema.v[k]);
    if (spo2) {
      check((*spo2)[r], schema.delta->spo2_column);
      check((*sao2)[r], schema.delta->sao2_column);
    }
    if (wcol) check((*wcol)[r], *schema.weight);
    if (!ok) {
      ++rep.rows_dropped;
      continue;
    }
    for (auto* col : zc) c.z.push_back((*col)[r]);
    for (auto* col : wc) c.w.push_back((*col)[r]);
    for (auto* col : vc) c.v.push_back((*col)[r]);
    if (spo2) c.v.push_back((*spo2)[r] - (*sao2)[r]);
    c.x.push_back(static_cast<std::uint8_t>(exposure[r]));
    c.y.push_back(ycol[r]);
    if (wcol) c.weight.push_back((*wcol)[r]);
  }
  rep.rows_kept = c.size();
  if (report) *report = rep;
  if (c.size() == 0) throw InvalidArgument("cohort is empty after dropping incomplete rows");
  c.validate();
  return c;
}

Cohort load_csv(const std::string& path, const RoleSchema& schema, LoadReport* report) {
  schema.validate();
  return cohort_from_table(read_csv_table(path, {schema.x}), schema, report);
}

std::string cohort_to_csv(const Cohort& cohort) {
  Cohort named = cohort;
  named.ensure_names();
  std::ostringstream out;
  std::vector<std::string> header;
  for (auto& n : named.z_names) header.push_back(n);
  header.push_back(named.x_name);
  for (auto& n : named.w_names) header.push_back(n);
  for (auto& n : named.v_names) header.push_back(n);
  header.push_back(named.y_name);
  if (named.weighted()) header.push_back("weight");
  for (std::size_t c = 0; c < header.size(); ++c) out << (c ? "," : "") << header[c];
  out << '\n';
  for (std::size_t i = 0; i < named.size(); ++i) {
    bool first = true;
    auto put = [&](double v) {
      if (!first) out << ',';
      first = false;
      out << format_number(v);
    };
    for (double v : named.z_row(i)) put(v);
    put(named.x[i]);
    for (double v : named.w_row(i)) put(v);
    for (double v : named.v_row(i)) put(v);
    put(named.y[i]);
    if (named.weighted()) put(named.weight[i]);
    out << '\n';
  }
  return out.str();
}

void write_cohort_csv(const Cohort& cohort, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write file: " + path);
  out << cohort_to_csv(cohort);
}

RoleSchema schema_for(const Cohort& cohort) {
  Cohort named = cohort;
  named.ensure_names();
  RoleSchema s;
  s.x = named.x_name;
  s.y = named.y_name;
  s.z = named.z_names;
  s.w = named.w_names;
  s.v = named.v_names;
  if (named.weighted()) s.weight = "weight";
  return s;
}

Cohort cohort_from_csv_string(const std::string& contents, const RoleSchema& schema) {
  schema.validate();
  return cohort_from_table(parse_csv_table(contents, {schema.x}), schema);
}

// ---------------------------------------------------------------- Events

void EventSeries::validate() const {
  if (minutes_before.size() != values.size())
    throw InvalidArgument("event series times and values differ in length");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(minutes_before[i] >= 0.0) || !std::isfinite(minutes_before[i]))
      throw InvalidArgument("event times must be finite and >= 0");
    if (!std::isfinite(values[i])) throw InvalidArgument("event values must be finite");
  }
}

double ewa_aggregate(const EventSeries& series, double gamma) {
  series.validate();
  if (series.size() == 0) throw InvalidArgument("ewa_aggregate: empty series");
  if (!(gamma >= 0.0)) throw InvalidArgument("ewa_aggregate: gamma must be >= 0");
  // Shift by the most recent time so the largest weight is exactly 1.
  const double t_min = *std::min_element(series.minutes_before.begin(), series.minutes_before.end());
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double wi = std::exp(-gamma * (series.minutes_before[i] - t_min));
    num += wi * series.values[i];
    den += wi;
  }
  return num / den;
}

EventSeries match_discrepancy(const EventSeries& spo2, const EventSeries& sao2,
                              double window_minutes) {
  spo2.validate();
  sao2.validate();
  if (!(window_minutes > 0.0)) throw InvalidArgument("match window must be positive");
  // Chronological order = decreasing minutes-before.
  auto chronological = [](const EventSeries& s) {
    std::vector<std::size_t> idx(s.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return s.minutes_before[a] > s.minutes_before[b];
    });
    return idx;
  };
  const auto spo2_order = chronological(spo2);
  const auto sao2_order = chronological(sao2);
  std::vector<bool> used(sao2.size(), false);
  EventSeries out;
  for (std::size_t i : spo2_order) {
    const double t = spo2.minutes_before[i];
    for (std::size_t j : sao2_order) {
      if (used[j]) continue;
      const double lag = t - sao2.minutes_before[j];  // wall-clock minutes after the SpO2 reading
      if (lag < 0.0) continue;
      if (lag > window_minutes) break;
      used[j] = true;
      out.minutes_before.push_back(t);
      out.values.push_back(spo2.values[i] - sao2.values[j]);
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------- Filters

FilterRules filter_rules_from_json(const nlohmann::json& j) {
  FilterRules r;
  if (j.contains("stay_hours_column")) r.stay_hours_column = j["stay_hours_column"].get<std::string>();
  r.min_stay_hours = j.value("min_stay_hours", r.min_stay_hours);
  r.required_columns = j.value("required", std::vector<std::string>{});
  for (const auto& rng : j.value("ranges", nlohmann::json::array()))
    r.ranges.push_back({rng.at("column").get<std::string>(), rng.at("min").get<double>(),
                        rng.at("max").get<double>()});
  return r;
}

nlohmann::json to_json(const FilterRules& r) {
  nlohmann::json j;
  if (r.stay_hours_column) j["stay_hours_column"] = *r.stay_hours_column;
  j["min_stay_hours"] = r.min_stay_hours;
  j["required"] = r.required_columns;
  j["ranges"] = nlohmann::json::array();
  for (auto& rng : r.ranges) j["ranges"].push_back({{"column", rng.column}, {"min", rng.lo}, {"max", rng.hi}});
  return j;
}

nlohmann::json to_json(const FilterReport& r) {
  nlohmann::json ex = nlohmann::json::array();
  for (auto& [rule, count] : r.excluded) ex.push_back({{"rule", rule}, {"excluded", count}});
  return {{"rows_in", r.rows_in}, {"rows_out", r.rows_out}, {"exclusions", ex}};
}

Table filter_table(const Table& table, const FilterRules& rules, FilterReport* report) {
  std::vector<std::string> unknown;
  auto need = [&](const std::string& c) {
    if (!table.find(c)) unknown.push_back(c);
  };
  if (rules.stay_hours_column) need(*rules.stay_hours_column);
  for (auto& c : rules.required_columns) need(c);
  for (auto& r : rules.ranges) need(r.column);
  if (!unknown.empty()) {
    std::string msg = "filter rules reference unknown column(s):";
    for (auto& c : unknown) msg += " " + c;
    throw InvalidArgument(msg);
  }
  for (auto& r : rules.ranges)
    if (r.lo > r.hi) throw InvalidArgument("range rule for " + r.column + " has min > max");

  using Predicate = std::pair<std::string, std::function<bool(std::size_t)>>;
  std::vector<Predicate> preds;
  if (rules.stay_hours_column) {
    const auto& col = table.column(*rules.stay_hours_column);
    const double min_h = rules.min_stay_hours;
    preds.emplace_back("min_stay_hours", [&col, min_h](std::size_t r) { return col[r] >= min_h; });
  }
  for (auto& c : rules.required_columns) {
    const auto& col = table.column(c);
    preds.emplace_back("required:" + c, [&col](std::size_t r) { return !std::isnan(col[r]); });
  }
  for (auto& rng : rules.ranges) {
    const auto& col = table.column(rng.column);
    const double lo = rng.lo, hi = rng.hi;
    // Missing values are not excluded by a range rule; use `required` for that.
    preds.emplace_back("range:" + rng.column, [&col, lo, hi](std::size_t r) {
      return std::isnan(col[r]) || (col[r] >= lo && col[r] <= hi);
    });
  }

  FilterReport rep;
  rep.rows_in = table.rows();
  for (auto& p : preds) rep.excluded.emplace_back(p.first, 0);
  std::vector<std::size_t> keep;
  for (std::size_t r = 0; r < table.rows(); ++r) {
    bool ok = true;
    for (std::size_t k = 0; k < preds.size(); ++k) {
      if (!preds[k].second(r)) {
        ++rep.excluded[k].second;
        ok = false;
        break;
      }
    }
    if (ok) keep.push_back(r);
  }
  rep.rows_out = keep.size();
  if (report) *report = rep;
  if (keep.empty()) throw Error("filter rules exclude every row");

  Table out;
  out.columns = table.columns;
  out.data.assign(table.columns.size(), {});
  for (std::size_t c = 0; c < table.columns.size(); ++c)
    for (std::size_t r : keep) out.data[c].push_back(table.data[c][r]);
  for (auto& [name, cells] : table.text) {
    auto& dst = out.text[name];
    for (std::size_t r : keep) dst.push_back(cells[r]);
  }
  return out;
}

Table aggregate_events(const Table& events, const EventAggregation& cfg) {
  const auto& stay = events.column(cfg.stay_column);
  const auto& time = events.column(cfg.time_column);
  const auto& value = events.column(cfg.value_column);
  auto ch = events.text.find(cfg.channel_column);
  if (ch == events.text.end())
    throw InvalidArgument("channel column must be loaded as text: " + cfg.channel_column);
  const auto& channel = ch->second;

  std::map<double, std::map<std::string, EventSeries>> per_stay;
  std::set<std::string> channels;
  for (std::size_t r = 0; r < events.rows(); ++r) {
    if (std::isnan(stay[r]) || std::isnan(time[r]) || std::isnan(value[r]) || channel[r].empty())
      continue;
    auto& s = per_stay[stay[r]][channel[r]];
    s.minutes_before.push_back(time[r]);
    s.values.push_back(value[r]);
    channels.insert(channel[r]);
  }
  Table out;
  out.columns.push_back(cfg.stay_column);
  for (auto& c : channels) out.columns.push_back(c);
  out.columns.push_back(cfg.delta_name);
  out.data.assign(out.columns.size(), {});
  for (auto& [id, series] : per_stay) {
    out.data[0].push_back(id);
    std::size_t k = 1;
    for (auto& c : channels) {
      auto it = series.find(c);
      out.data[k++].push_back(it == series.end() ? kNaN : ewa_aggregate(it->second, cfg.gamma));
    }
    double delta = kNaN;
    auto s = series.find(cfg.spo2_channel);
    auto a = series.find(cfg.sao2_channel);
    if (s != series.end() && a != series.end()) {
      EventSeries matched = match_discrepancy(s->second, a->second, cfg.window_minutes);
      if (matched.size() > 0) delta = ewa_aggregate(matched, cfg.gamma);
    }
    out.data[k].push_back(delta);
  }
  return out;
}

Table join_on(const Table& left, const Table& right, const std::string& key) {
  const auto& lk = left.column(key);
  const auto& rk = right.column(key);
  std::map<double, std::size_t> index;
  for (std::size_t r = 0; r < rk.size(); ++r) index[rk[r]] = r;
  Table out = left;
  for (std::size_t c = 0; c < right.columns.size(); ++c) {
    if (right.columns[c] == key) continue;
    if (out.find(right.columns[c])) throw InvalidArgument("join would duplicate column " + right.columns[c]);
    out.columns.push_back(right.columns[c]);
    std::vector<double> col(left.rows(), kNaN);
    for (std::size_t r = 0; r < left.rows(); ++r)
      if (auto it = index.find(lk[r]); it != index.end()) col[r] = right.data[c][it->second];
    out.data.push_back(std::move(col));
  }
  return out;
}

}  // namespace pse
