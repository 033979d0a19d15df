#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "pse/cohort.hpp"
#include "pse/scm.hpp"

using namespace pse;

namespace {

const char* kThreeRows =
    "race,age,sofa,spo2,sao2,y\n"
    "White,61,4,97,93,0\n"
    "Black,55,6,98,91,1\n"
    "White,70,,96,95,1\n";

RoleSchema three_row_schema() {
  RoleSchema s;
  s.x = "race";
  s.x0_label = "White";
  s.x1_label = "Black";
  s.y = "y";
  s.z = {"age"};
  s.w = {"sofa"};
  s.delta = DeltaRule{"spo2", "sao2", "delta"};
  return s;
}

}  // namespace

TEST_CASE("labels map onto the binary exposure and incomplete rows are dropped") {
  LoadReport report;
  const Cohort c = cohort_from_table(parse_csv_table(kThreeRows, {"race"}), three_row_schema(), &report);
  CHECK(c.size() == 2);
  CHECK(c.x == std::vector<std::uint8_t>{0, 1});
  CHECK(report.rows_read == 3);
  CHECK(report.rows_dropped == 1);
  CHECK(report.missing_by_column.at("sofa") == 1);
  // Hand-computed cohort: Z = age, W = sofa, V = spo2 - sao2.
  CHECK(c.z == std::vector<double>{61, 55});
  CHECK(c.w == std::vector<double>{4, 6});
  CHECK(c.v == std::vector<double>{4, 7});
  CHECK(c.y == std::vector<double>{0, 1});
  CHECK(c.v_names == std::vector<std::string>{"delta"});
}

TEST_CASE("missing outcome drops exactly one row") {
  const char* csv = "x,z,y\n0,1,1\n1,2,\n1,3,0\n";
  RoleSchema s;
  s.x = "x";
  s.y = "y";
  s.z = {"z"};
  LoadReport r;
  const Cohort c = cohort_from_table(parse_csv_table(csv, {"x"}), s, &r);
  CHECK(c.size() == 2);
  CHECK(r.rows_dropped == 1);
}

TEST_CASE("loader rejects unknown columns, stray labels and bad schemas") {
  RoleSchema s = three_row_schema();
  s.z = {"age", "bmi"};
  CHECK_THROWS_AS(cohort_from_table(parse_csv_table(kThreeRows, {"race"}), s, nullptr), InvalidArgument);

  const std::string stray = std::string(kThreeRows) + "Asian,40,3,97,96,0\n";
  CHECK_THROWS_AS(cohort_from_table(parse_csv_table(stray, {"race"}), three_row_schema(), nullptr), InvalidArgument);

  RoleSchema overlap = three_row_schema();
  overlap.w = {"age"};
  CHECK_THROWS_AS(overlap.validate(), InvalidArgument);
}

TEST_CASE("cohort CSV round trip is exact") {
  const Cohort c = sample(linear_scm(2, 3, 2, 4), 300, 8);
  const std::string csv = cohort_to_csv(c);
  const Cohort back = cohort_from_csv_string(csv, schema_for(c));
  CHECK(back == c);
  CHECK(cohort_to_csv(back) == csv);

  const auto path = std::filesystem::temp_directory_path() / "pse_roundtrip.csv";
  write_cohort_csv(c, path.string());
  CHECK(load_csv(path.string(), schema_for(c)) == c);
  std::filesystem::remove(path);
}

TEST_CASE("exponentially weighted averages") {
  CHECK(ewa_aggregate({{12.0}, {5.0}}, 0.5) == 5.0);
  // Weights exp(0) = 1 and exp(-ln 2) = 1/2.
  CHECK(ewa_aggregate({{0.0, std::log(2.0)}, {2.0, 4.0}}, 1.0) == doctest::Approx(8.0 / 3.0));
  CHECK(ewa_aggregate({{0.0, 30.0, 90.0}, {1.0, 2.0, 6.0}}, 0.0) == doctest::Approx(3.0));
  CHECK_THROWS_AS(ewa_aggregate({{}, {}}, 0.1), InvalidArgument);
}

TEST_CASE("oximetry matching pairs each SpO2 with a later SaO2") {
  // Times are minutes before the anchor, so 100 is three minutes after 103.
  const EventSeries one = match_discrepancy({{103.0}, {97.0}}, {{100.0}, {90.0}});
  REQUIRE(one.size() == 1);
  CHECK(one.values[0] == 7.0);
  CHECK(one.minutes_before[0] == 103.0);

  CHECK(match_discrepancy({{106.0}, {97.0}}, {{100.0}, {90.0}}).size() == 0);  // six minutes
  CHECK(match_discrepancy({{100.0}, {97.0}}, {{103.0}, {90.0}}).size() == 0);  // blood gas came first
  CHECK(match_discrepancy({{100.0}, {97.0}}, {{100.0}, {90.0}}).size() == 1);  // same time

  // Both SpO2 readings fall within the window of one SaO2; the earlier wins.
  const EventSeries contested = match_discrepancy({{104.0, 102.0}, {99.0, 95.0}}, {{100.0}, {92.0}});
  REQUIRE(contested.size() == 1);
  CHECK(contested.minutes_before[0] == 104.0);
  CHECK(contested.values[0] == 7.0);
}

TEST_CASE("filters charge each exclusion to the first failing rule") {
  const char* csv =
      "stay,hours,sao2,age\n"
      "1,23.9,90,50\n"   // short stay
      "2,48,65,50\n"     // SaO2 out of range
      "3,30,,50\n"       // missing SaO2
      "4,30,95,50\n"
      "5,20,,50\n"       // short stay and missing: charged to stay length
      "6,72,98,61\n";
  FilterRules rules;
  rules.stay_hours_column = "hours";
  rules.min_stay_hours = 24.0;
  rules.required_columns = {"sao2"};
  rules.ranges = {{"sao2", 70.0, 100.0}};
  FilterReport report;
  const Table out = filter_table(parse_csv_table(csv), rules, &report);
  CHECK(out.rows() == 2);
  CHECK(out.column("stay") == std::vector<double>{4, 6});
  REQUIRE(report.excluded.size() == 3);
  CHECK(report.excluded[0].second == 2);
  CHECK(report.excluded[1].second == 1);
  CHECK(report.excluded[2].second == 1);

  rules.ranges = {{"sao2", 101.0, 102.0}};
  CHECK_THROWS_AS(filter_table(parse_csv_table(csv), rules, nullptr), Error);
  rules.required_columns = {"lactate"};
  CHECK_THROWS_AS(filter_table(parse_csv_table(csv), rules, nullptr), InvalidArgument);
}

TEST_CASE("filter rules parse from JSON") {
  const FilterRules r = filter_rules_from_json(
      {{"stay_hours_column", "h"}, {"required", {"a"}}, {"ranges", {{{"column", "a"}, {"min", 1}, {"max", 2}}}}});
  CHECK(*r.stay_hours_column == "h");
  CHECK(r.min_stay_hours == 24.0);
  CHECK(r.ranges.size() == 1);
  CHECK(filter_rules_from_json(to_json(r)).ranges[0].hi == 2.0);
}

TEST_CASE("event aggregation and join") {
  const char* events =
      "stay_id,channel,minutes_before,value\n"
      "1,spo2,10,97\n"
      "1,sao2,8,90\n"
      "1,spo2,0,95\n"
      "2,spo2,5,99\n";
  EventAggregation cfg;
  cfg.gamma = 0.0;
  const Table wide = aggregate_events(parse_csv_table(events, {"channel"}), cfg);
  CHECK(wide.rows() == 2);
  CHECK(wide.column("spo2") == std::vector<double>{96.0, 99.0});
  CHECK(wide.column("sao2")[0] == 90.0);
  CHECK(std::isnan(wide.column("sao2")[1]));
  CHECK(wide.column("delta")[0] == 7.0);
  CHECK(std::isnan(wide.column("delta")[1]));

  const Table stays = parse_csv_table("stay_id,age\n2,40\n3,50\n1,60\n");
  const Table joined = join_on(stays, wide, "stay_id");
  CHECK(joined.column("spo2")[0] == 99.0);
  CHECK(std::isnan(joined.column("spo2")[1]));
  CHECK(joined.column("delta")[2] == 7.0);
}

TEST_CASE("shipped fixtures ingest into a cohort") {
  const std::string dir = PSE_FIXTURE_DIR;
  RoleSchema s;
  s.x = "race";
  s.x0_label = "0";
  s.x1_label = "1";
  s.z = {"age", "sex"};
  s.w = {"sofa"};
  s.v = {"delta", "spo2"};
  s.y = "hypoxemia";
  const Cohort c = load_csv(dir + "/cohort.csv", s);
  CHECK(c.size() == 411);
  CHECK(c.count_exposure(1) == 145);
  CHECK_NOTHROW(c.validate());
}
