#include "cli.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>
#include <json.hpp>

#include "pse/cohort.hpp"
#include "pse/common.hpp"
#include "pse/estimators.hpp"
#include "pse/inference.hpp"
#include "pse/oracle.hpp"
#include "pse/scm.hpp"

namespace pse::cli {
namespace {

using nlohmann::json;

// Seed streams derived from the single user-facing seed.
constexpr std::uint64_t kSampleStream = 1;
constexpr std::uint64_t kCrossFitStream = 2;
constexpr std::uint64_t kBootstrapStream = 3;
constexpr std::uint64_t kOracleStream = 4;
constexpr std::uint64_t kStudyStream = 5;

struct Violation {
  std::string field;
  std::string message;
};

// Raised for anything the user can fix by changing flags or config.
struct UsageError {
  std::string kind;
  std::string message;
  std::vector<Violation> violations;
  std::vector<std::string> flags;
};

json error_json(const UsageError& e) {
  json j = {{"kind", e.kind}, {"message", e.message}};
  if (!e.violations.empty()) {
    json v = json::array();
    for (const auto& x : e.violations) v.push_back({{"field", x.field}, {"message", x.message}});
    j["violations"] = v;
  }
  if (!e.flags.empty()) j["flags"] = e.flags;
  return {{"error", j}};
}

const std::vector<std::string>& commands() {
  static const std::vector<std::string> c = {"simulate", "oracle",   "estimate", "bootstrap",
                                             "conditional", "diagnose", "study",    "ingest"};
  return c;
}

// Top-level config keys each subcommand consumes. Known keys outside the set are
// dropped from the resolved config; unknown keys are violations.
const std::map<std::string, std::set<std::string>>& command_keys() {
  static const std::set<std::string> fit = {"data",  "effects", "mode",     "folds",    "clip",     "learner",
                                            "seed",  "jobs",    "x0_label", "x1_label", "misspecification",
                                            "level", "out"};
  static const std::map<std::string, std::set<std::string>> m = [] {
    std::map<std::string, std::set<std::string>> k;
    k["simulate"] = {"data", "seed", "out"};
    k["oracle"] = {"data", "seed", "jobs", "oracle", "x0_label", "x1_label", "out"};
    k["estimate"] = fit;
    k["diagnose"] = fit;
    k["bootstrap"] = fit;
    k["bootstrap"].insert("bootstrap");
    k["conditional"] = fit;
    k["conditional"].insert({"conditional", "csv_out"});
    k["conditional"].erase("effects");
    k["study"] = {"data", "folds", "clip", "learner", "seed", "jobs", "misspecification",
                  "level", "study", "x0_label", "x1_label", "out", "csv_out"};
    k["ingest"] = {"ingest", "out"};
    return k;
  }();
  return m;
}

const std::set<std::string>& all_keys() {
  static const std::set<std::string> s = [] {
    std::set<std::string> a = {"command"};
    for (const auto& [_, keys] : command_keys()) a.insert(keys.begin(), keys.end());
    return a;
  }();
  return s;
}

json defaults_for(const std::string& command) {
  json d = {{"effects", {"vde"}},
            {"mode", "sndr"},
            {"folds", kDefaultFolds},
            {"clip", kDefaultClip},
            {"bootstrap", kDefaultBootstrap},
            {"level", kDefaultLevel},
            {"learner", to_json(LearnerConfig{})},
            {"seed", 0},
            {"jobs", 1},
            {"x0_label", "0"},
            {"x1_label", "1"},
            {"misspecification", "none"},
            {"oracle", {{"query", "vde"}, {"n_mc", 1'000'000}, {"method", "mc"}}},
            {"conditional", {{"min_count", kDefaultMinCount}}},
            {"study",
             {{"kind", "convergence"},
              {"sizes", {1000, 2000, 4000, 8000, 16000, 32000}},
              {"etas", {0.1, 0.2, 0.33, 0.5}},
              {"n", 32000},
              {"replications", 20},
              {"modes", {"dr", "sndr"}},
              {"n_mc", 1'000'000}}},
            {"out", nullptr},
            {"csv_out", nullptr}};
  json r = json::object();
  for (const auto& k : command_keys().at(command))
    if (d.contains(k)) r[k] = d[k];
  return r;
}

// Objects merge key by key; everything else replaces.
void merge_into(json& base, const json& patch) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    if (it.value().is_object() && base.contains(it.key()) && base[it.key()].is_object() && it.key() != "data" &&
        it.key() != "learner")
      merge_into(base[it.key()], it.value());
    else
      base[it.key()] = it.value();
  }
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError{"config", "cannot open config file '" + path + "'", {}, {}};
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError{"config", "config file '" + path + "' is not valid JSON: " + e.what(), {}, {}};
  }
}

// ---------------------------------------------------------------- flags

struct Flags {
  std::optional<std::string> config, mode, learner, out, csv_out, x0_label, x1_label, query, method, preset,
      data_csv, misspec, study_kind;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> folds, bootstrap, jobs, n, n_mc, replications;
  std::optional<double> clip, level;
  std::vector<std::string> effects;
};

template <class T>
void opt(CLI::App* app, const std::string& name, std::optional<T>& slot, const std::string& help) {
  app->add_option_function<T>(name, [&slot](const T& v) { slot = v; }, help);
}

void register_flags(CLI::App* app, const std::string& command, Flags& f) {
  const auto& keys = command_keys().at(command);
  opt(app, "--config", f.config, "JSON config file; flags override its values");
  if (keys.count("out")) opt(app, "--out", f.out, "write the result (JSON, or CSV for simulate/ingest) here");
  if (command == "ingest") return;
  if (keys.count("seed")) opt(app, "--seed", f.seed, "master seed");
  if (keys.count("data")) {
    opt(app, "--preset", f.preset, "synthetic data source: binary, linear, nonlinear or discrete");
    if (command != "oracle" && command != "study") opt(app, "--n", f.n, "sample size drawn from the SCM");
    if (command != "oracle" && command != "simulate" && command != "study")
      opt(app, "--data", f.data_csv, "CSV data source (the role schema comes from the config)");
  }
  if (keys.count("x0_label")) {
    opt(app, "--x0-label", f.x0_label, "reference exposure label");
    opt(app, "--x1-label", f.x1_label, "comparison exposure label");
  }
  if (keys.count("mode")) opt(app, "--mode", f.mode, "plugin, ipw, dr or sndr");
  if (keys.count("effects"))
    app->add_option("--effect", f.effects, "te, nde, nie, nie-star or vde (repeatable)")->delimiter(',');
  if (keys.count("folds")) opt(app, "--folds", f.folds, "cross-fitting folds");
  if (keys.count("clip")) opt(app, "--clip", f.clip, "propensity clip epsilon");
  if (keys.count("learner")) opt(app, "--learner", f.learner, "ridge, logistic, stumps or frequency");
  if (keys.count("jobs")) opt(app, "--jobs", f.jobs, "worker thread cap");
  if (keys.count("level")) opt(app, "--level", f.level, "interval level");
  if (keys.count("misspecification")) opt(app, "--misspecify", f.misspec, "none, break_mu, break_pi, break_both");
  if (keys.count("bootstrap")) opt(app, "--bootstrap", f.bootstrap, "bootstrap draws");
  if (keys.count("csv_out")) opt(app, "--csv-out", f.csv_out, "plot-ready CSV table");
  if (command == "oracle") {
    opt(app, "--query", f.query, "mean_yx, nested_vde, nested_nde, te, nde, nie, nie-star or vde");
    opt(app, "--n-mc", f.n_mc, "Monte-Carlo draws");
    opt(app, "--method", f.method, "mc, exact, idformula or closed_form");
  }
  if (command == "study") {
    opt(app, "--kind", f.study_kind, "convergence or imbalance");
    opt(app, "--replications", f.replications, "replications per point");
    opt(app, "--n-mc", f.n_mc, "Monte-Carlo draws for the oracle");
  }
}

json apply_flags(json cfg, const Flags& f) {
  auto set = [&](const char* key, const auto& v) {
    if (v) cfg[key] = *v;
  };
  set("seed", f.seed);
  set("mode", f.mode);
  set("folds", f.folds);
  set("clip", f.clip);
  set("bootstrap", f.bootstrap);
  set("level", f.level);
  set("jobs", f.jobs);
  set("out", f.out);
  set("csv_out", f.csv_out);
  set("x0_label", f.x0_label);
  set("x1_label", f.x1_label);
  set("misspecification", f.misspec);
  if (!f.effects.empty()) cfg["effects"] = f.effects;
  if (f.learner) {
    // A different kind resets the remaining learner settings to their defaults.
    json l = cfg.contains("learner") && cfg["learner"].is_object() ? cfg["learner"] : json::object();
    if (l.value("kind", std::string()) != *f.learner) l = to_json(LearnerConfig{});
    l["kind"] = *f.learner;
    cfg["learner"] = l;
  }
  if (f.preset || f.data_csv) {
    json d = json::object();
    if (cfg.contains("data") && cfg["data"].is_object()) {
      if (cfg["data"].contains("n")) d["n"] = cfg["data"]["n"];
      if (f.data_csv && cfg["data"].contains("schema")) d["schema"] = cfg["data"]["schema"];
    }
    if (f.preset) d["preset"] = *f.preset;
    if (f.data_csv) d["csv"] = *f.data_csv;
    cfg["data"] = d;
  }
  if (f.n) cfg["data"]["n"] = *f.n;
  if (f.query) cfg["oracle"]["query"] = *f.query;
  if (f.method) cfg["oracle"]["method"] = *f.method;
  if (f.n_mc) cfg[cfg.contains("study") ? "study" : "oracle"]["n_mc"] = *f.n_mc;
  if (f.study_kind) cfg["study"]["kind"] = *f.study_kind;
  if (f.replications) cfg["study"]["replications"] = *f.replications;
  return cfg;
}

// ---------------------------------------------------------------- resolution

struct DataSource {
  std::optional<ScmSpec> spec;
  std::size_t n = 0;
  std::optional<std::string> csv;
  RoleSchema schema;
  std::optional<FilterRules> filters;
};

struct Resolved {
  std::string command;
  json config;
  std::optional<DataSource> data;
  std::vector<QueryKind> effects;
  EstimatorMode mode = EstimatorMode::sn_dr;
  CrossFitOptions options;
  std::size_t bootstrap = kDefaultBootstrap;
  double level = kDefaultLevel;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  int x0 = 0;
  int x1 = 1;
  std::optional<std::string> out, csv_out;
};

class Checker {
 public:
  // Runs fn; any exception becomes a violation for `field`.
  template <class Fn>
  void check(const std::string& field, Fn&& fn) {
    try {
      fn();
    } catch (const json::exception& e) {
      add(field, std::string("wrong type or missing value (") + e.what() + ")");
    } catch (const std::exception& e) {
      add(field, e.what());
    }
  }
  void add(const std::string& field, const std::string& message) { v_.push_back({field, message}); }
  const std::vector<Violation>& violations() const { return v_; }

 private:
  std::vector<Violation> v_;
};

void require(bool ok, const std::string& message) {
  if (!ok) throw InvalidArgument(message);
}

ScmSpec preset_spec(const std::string& name, const json& params) {
  auto p = [&](const char* key, std::size_t dflt) { return params.value(key, dflt); };
  if (name == "binary") return binary_scm();
  if (name == "discrete") return discrete_reference_scm();
  if (name == "linear") return linear_scm(p("dim_z", 3), p("dim_w", 10), p("dim_v", 3), params.value("seed", 201));
  if (name == "nonlinear")
    return nonlinear_scm(p("dim_z", 3), p("dim_w", 10), p("dim_v", 3), p("depth", 3), params.value("seed", 11),
                         p("n_trees", kDefaultSurrogateTrees));
  throw InvalidArgument("unknown preset '" + name + "' (expected binary, linear, nonlinear or discrete)");
}

// Resolves the data block in place: presets are expanded into full specs so the
// emitted config does not depend on preset defaults.
std::optional<DataSource> resolve_data(json& cfg, const std::string& command, Checker& chk) {
  if (!cfg.contains("data") || cfg["data"].is_null()) {
    chk.add("data", "a data source is required (data.preset, data.scm or data.csv)");
    return std::nullopt;
  }
  json& d = cfg["data"];
  if (!d.is_object()) {
    chk.add("data", "must be an object");
    return std::nullopt;
  }
  static const std::set<std::string> known = {"preset", "params", "scm", "n", "csv", "schema", "filters", "origin"};
  for (auto it = d.begin(); it != d.end(); ++it)
    if (!known.count(it.key())) chk.add("data." + it.key(), "unknown key");
  const int sources = int(d.contains("preset")) + int(d.contains("scm")) + int(d.contains("csv"));
  if (sources != 1) {
    chk.add("data", "exactly one of data.preset, data.scm, data.csv must be given (found " +
                        std::to_string(sources) + ")");
    return std::nullopt;
  }
  DataSource src;
  bool ok = true;
  if (d.contains("preset")) {
    chk.check("data.preset", [&] {
      const std::string name = d["preset"].get<std::string>();
      src.spec = preset_spec(name, d.value("params", json::object()));
      d.erase("preset");
      d.erase("params");
      d["origin"] = "preset:" + name;
      d["scm"] = to_json(*src.spec);
    });
    ok = src.spec.has_value();
  } else if (d.contains("scm")) {
    chk.check("data.scm", [&] {
      src.spec = scm_from_json(d["scm"]);
      src.spec->validate();
    });
    ok = src.spec.has_value();
  } else {
    if (command == "oracle" || command == "simulate" || command == "study")
      chk.add("data.csv", command + " needs a structural model, not a CSV file");
    src.csv = d["csv"].is_string() ? std::optional(d["csv"].get<std::string>()) : std::nullopt;
    if (!src.csv) chk.add("data.csv", "must be a path string");
    if (!d.contains("schema")) {
      chk.add("data.schema", "a role schema is required with data.csv");
      ok = false;
    } else {
      chk.check("data.schema", [&] { src.schema = role_schema_from_json(d["schema"]); });
    }
    if (d.contains("filters")) chk.check("data.filters", [&] { src.filters = filter_rules_from_json(d["filters"]); });
    ok = ok && src.csv.has_value();
  }
  if (src.spec && command != "oracle" && command != "study") {
    if (!d.contains("n")) d["n"] = 4000;
    chk.check("data.n", [&] {
      src.n = d["n"].get<std::size_t>();
      require(src.n >= 2, "must be >= 2");
    });
  } else if (d.contains("n") && src.spec) {
    d.erase("n");
  }
  if (!ok) return std::nullopt;
  return src;
}

Resolved resolve(const std::string& command, const json& file_cfg, const Flags& flags,
                 const std::set<std::string>& labels_in_file) {
  Checker chk;
  json cfg = defaults_for(command);
  const auto& keys = command_keys().at(command);
  for (auto it = file_cfg.begin(); it != file_cfg.end(); ++it) {
    if (!all_keys().count(it.key())) {
      chk.add(it.key(), "unknown config key");
      continue;
    }
    if (it.key() == "command") {
      if (it.value() != command) chk.add("command", "config was written for '" + it.value().dump() + "'");
      continue;
    }
    if (keys.count(it.key())) {
      json patch = {{it.key(), it.value()}};
      merge_into(cfg, patch);
    }
  }
  cfg = apply_flags(cfg, flags);
  for (auto it = cfg.begin(); it != cfg.end();)
    it = keys.count(it.key()) ? std::next(it) : cfg.erase(it);

  Resolved r;
  r.command = command;
  if (keys.count("seed")) chk.check("seed", [&] { r.seed = cfg["seed"].get<std::uint64_t>(); });
  if (keys.count("jobs"))
    chk.check("jobs", [&] {
      r.jobs = cfg["jobs"].get<std::size_t>();
      require(r.jobs >= 1, "must be >= 1");
    });
  if (keys.count("data")) r.data = resolve_data(cfg, command, chk);

  // For CSV sources the schema labels fill in labels not set explicitly.
  if (keys.count("x0_label") && r.data && r.data->csv) {
    for (const char* side : {"x0_label", "x1_label"}) {
      const bool explicit_label = labels_in_file.count(side) ||
                                  (std::string(side) == "x0_label" ? flags.x0_label : flags.x1_label).has_value();
      std::string& schema_label = std::string(side) == "x0_label" ? r.data->schema.x0_label : r.data->schema.x1_label;
      if (explicit_label)
        schema_label = cfg[side].get<std::string>();
      else
        cfg[side] = schema_label;
    }
    cfg["data"]["schema"] = to_json(r.data->schema);
  } else if (keys.count("x0_label")) {
    auto label = [&](const char* side, int& slot) {
      chk.check(side, [&] {
        const std::string s = cfg[side].get<std::string>();
        require(s == "0" || s == "1", "structural models have exposure labels 0 and 1 (got '" + s + "')");
        slot = s == "1" ? 1 : 0;
      });
    };
    label("x0_label", r.x0);
    label("x1_label", r.x1);
  }

  if (keys.count("effects"))
    chk.check("effects", [&] {
      require(cfg["effects"].is_array() && !cfg["effects"].empty(), "must be a non-empty list");
      for (const auto& e : cfg["effects"]) {
        const QueryKind k = query_kind_from_string(e.get<std::string>());
        require(k == QueryKind::te || k == QueryKind::nde || k == QueryKind::nie || k == QueryKind::nie_star ||
                    k == QueryKind::vde,
                "effect must be te, nde, nie, nie-star or vde (got '" + e.get<std::string>() + "')");
        r.effects.push_back(k);
      }
    });
  if (command == "conditional") r.effects = {QueryKind::vde};
  if (keys.count("mode")) chk.check("mode", [&] { r.mode = estimator_mode_from_string(cfg["mode"].get<std::string>()); });
  if (keys.count("folds"))
    chk.check("folds", [&] {
      r.options.folds = cfg["folds"].get<std::size_t>();
      require(r.options.folds >= 2, "must be >= 2");
    });
  if (keys.count("clip"))
    chk.check("clip", [&] {
      r.options.clip = cfg["clip"].get<double>();
      validate_clip(r.options.clip);
    });
  if (keys.count("learner")) {
    chk.check("learner", [&] {
      r.options.learner = learner_config_from_json(cfg["learner"]);
      cfg["learner"] = to_json(r.options.learner);
    });
  }
  if (keys.count("misspecification"))
    chk.check("misspecification", [&] {
      r.options = inject_misspecification(r.options,
                                          misspecification_from_string(cfg["misspecification"].get<std::string>()));
    });
  if (keys.count("level"))
    chk.check("level", [&] {
      r.level = cfg["level"].get<double>();
      require(r.level > 0.0 && r.level < 1.0, "must lie in (0, 1)");
    });
  if (keys.count("bootstrap"))
    chk.check("bootstrap", [&] {
      r.bootstrap = cfg["bootstrap"].get<std::size_t>();
      require(r.bootstrap >= 2, "must be >= 2");
    });
  auto path = [&](const char* key, std::optional<std::string>& slot) {
    if (!keys.count(key) || cfg[key].is_null()) return;
    chk.check(key, [&] { slot = cfg[key].get<std::string>(); });
  };
  path("out", r.out);
  path("csv_out", r.csv_out);
  r.options.seed = derive_seed(r.seed, kCrossFitStream);

  if (command == "oracle")
    chk.check("oracle", [&] {
      const json& o = cfg["oracle"];
      for (auto it = o.begin(); it != o.end(); ++it)
        require(it.key() == "query" || it.key() == "n_mc" || it.key() == "method",
                "unknown key '" + it.key() + "'");
      query_kind_from_string(o.at("query").get<std::string>());
      require(o.at("n_mc").get<std::size_t>() >= 2, "n_mc must be >= 2");
      const std::string m = o.at("method").get<std::string>();
      require(m == "mc" || m == "exact" || m == "idformula" || m == "closed_form",
              "method must be mc, exact, idformula or closed_form");
    });
  if (command == "conditional")
    chk.check("conditional", [&] {
      const json& c = cfg["conditional"];
      for (const char* k : {"axis1", "axis2", "edges1", "edges2"})
        require(c.contains(k), std::string("missing conditional.") + k);
      for (auto it = c.begin(); it != c.end(); ++it)
        require(std::set<std::string>{"axis1", "axis2", "edges1", "edges2", "min_count"}.count(it.key()),
                "unknown key '" + it.key() + "'");
      c.at("axis1").get<std::string>();
      c.at("axis2").get<std::string>();
      c.at("edges1").get<std::vector<double>>();
      c.at("edges2").get<std::vector<double>>();
      c.at("min_count").get<std::size_t>();
    });
  if (command == "study")
    chk.check("study", [&] {
      const json& s = cfg["study"];
      static const std::set<std::string> known = {"kind", "sizes", "etas", "n", "replications", "modes", "n_mc"};
      for (auto it = s.begin(); it != s.end(); ++it) require(known.count(it.key()), "unknown key '" + it.key() + "'");
      const std::string kind = s.at("kind").get<std::string>();
      require(kind == "convergence" || kind == "imbalance", "kind must be convergence or imbalance");
      require(s.at("replications").get<std::size_t>() >= 2, "replications must be >= 2");
      for (const auto& m : s.at("modes")) estimator_mode_from_string(m.get<std::string>());
      for (double eta : s.at("etas").get<std::vector<double>>()) require(eta > 0.0 && eta < 1.0, "etas must lie in (0, 1)");
      for (std::size_t n : s.at("sizes").get<std::vector<std::size_t>>()) require(n >= 10, "sizes must be >= 10");
      require(s.at("n").get<std::size_t>() >= 10, "n must be >= 10");
      s.at("n_mc").get<std::size_t>();
    });
  if (command == "ingest")
    chk.check("ingest", [&] {
      require(cfg.contains("ingest") && cfg["ingest"].is_object(), "an ingest block is required");
      const json& g = cfg["ingest"];
      static const std::set<std::string> known = {"stays", "events", "aggregation", "join_key",
                                                  "filters", "schema", "text_columns"};
      for (auto it = g.begin(); it != g.end(); ++it) require(known.count(it.key()), "unknown key '" + it.key() + "'");
      require(g.contains("stays"), "ingest.stays (CSV path) is required");
    });

  if (!chk.violations().empty())
    throw UsageError{"config", "configuration has " + std::to_string(chk.violations().size()) + " problem(s)",
                     chk.violations(), {}};
  cfg["command"] = command;
  r.config = cfg;
  return r;
}

// ---------------------------------------------------------------- commands

Cohort load_cohort(const Resolved& r, json& report) {
  const DataSource& d = *r.data;
  if (d.spec) return sample(*d.spec, d.n, derive_seed(r.seed, kSampleStream));
  Table t = read_csv_table(*d.csv, {d.schema.x});
  if (d.filters) {
    FilterReport fr;
    t = filter_table(t, *d.filters, &fr);
    report["filters"] = to_json(fr);
  }
  LoadReport lr;
  Cohort c = cohort_from_table(t, d.schema, &lr);
  report["load"] = to_json(lr);
  return c;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write '" + path + "'");
  f << text;
  if (!f) throw Error("failed writing '" + path + "'");
}

json cmd_simulate(const Resolved& r, std::ostream& out, bool& printed) {
  const Cohort c = sample(*r.data->spec, r.data->n, derive_seed(r.seed, kSampleStream));
  const std::string csv = cohort_to_csv(c);
  if (!r.out) {
    out << csv;
    printed = true;
    return {};
  }
  write_text(*r.out, csv);
  return {{"rows", c.size()},
          {"exposed", c.count_exposure(1)},
          {"schema", to_json(schema_for(c))},
          {"csv", *r.out}};
}

json cmd_oracle(const Resolved& r) {
  const json& o = r.config["oracle"];
  EffectQuery q;
  q.kind = query_kind_from_string(o["query"].get<std::string>());
  q.x0 = r.x0;
  q.x1 = r.x1;
  q.validate();
  const std::string method = o["method"].get<std::string>();
  const ScmSpec& spec = *r.data->spec;
  const std::uint64_t seed = derive_seed(r.seed, kOracleStream);
  OracleValue v;
  if (method == "mc") {
    v = mc_counterfactual(spec, q, o["n_mc"].get<std::size_t>(), seed);
  } else if (method == "exact") {
    if (!spec.enumerable()) throw InvalidArgument("exact oracle needs finite noise everywhere");
    v.value = enumerate_exact(spec, q);
  } else if (method == "closed_form") {
    if (spec.kind != MechanismKind::linear_gaussian) throw InvalidArgument("closed_form oracle needs a linear spec");
    v.value = linear_closed_form(spec, q);
  } else {
    if (!spec.enumerable()) throw InvalidArgument("idformula oracle needs finite noise everywhere");
    const IdentifiedTerms t = idformula_eval(enumerate_joint(spec), q.x0, q.x1);
    switch (q.kind) {
      case QueryKind::mean_yx: v.value = t.backdoor_x1; break;
      case QueryKind::nested_vde: v.value = t.nested_vde; break;
      case QueryKind::nested_nde: v.value = t.nested_nde; break;
      case QueryKind::te: v.value = t.backdoor_x1 - t.backdoor_x0; break;
      case QueryKind::nde: v.value = t.nested_nde - t.backdoor_x0; break;
      case QueryKind::nie: v.value = t.backdoor_x1 - t.nested_nde; break;
      case QueryKind::nie_star: v.value = t.backdoor_x1 - t.nested_nie_star; break;
      case QueryKind::vde: v.value = t.vde(); break;
    }
  }
  return {{"query", to_json(q)},
          {"method", method},
          {"value", v.value},
          {"std_error", v.std_error},
          {"n_mc", v.n_mc},
          {"seed", method == "mc" ? json(seed) : json(nullptr)}};
}

json estimates_json(const std::vector<EffectEstimate>& es) {
  json a = json::array();
  for (const auto& e : es) a.push_back(to_json(e));
  return a;
}

json cmd_estimate(const Resolved& r, const Cohort& c) {
  std::vector<EffectEstimate> es = estimate_effects(c, r.effects, r.x0, r.x1, r.mode, r.options);
  if (r.mode == EstimatorMode::dr || r.mode == EstimatorMode::sn_dr)
    for (auto& e : es) e = analytic_ci(std::move(e), r.level);
  return {{"n", c.size()}, {"results", estimates_json(es)}};
}

json cmd_bootstrap(const Resolved& r, const Cohort& c) {
  const auto es = bootstrap_effects(c, r.effects, r.x0, r.x1, r.bootstrap, r.level, r.mode, r.options,
                                    derive_seed(r.seed, kBootstrapStream));
  return {{"n", c.size()}, {"results", estimates_json(es)}};
}

json cmd_conditional(const Resolved& r, const Cohort& c) {
  const json& k = r.config["conditional"];
  const auto e1 = k["edges1"].get<std::vector<double>>();
  const auto e2 = k["edges2"].get<std::vector<double>>();
  const BinnedEffect b = conditional_vde(c, k["axis1"].get<std::string>(), k["axis2"].get<std::string>(), e1, e2,
                                         k["min_count"].get<std::size_t>(), r.x0, r.x1, r.mode, r.options);
  if (r.csv_out) write_text(*r.csv_out, binned_to_csv(b));
  return {{"n", c.size()}, {"result", to_json(b)}};
}

json cmd_diagnose(const Resolved& r, const Cohort& c) {
  const std::vector<EffectEstimate> es = estimate_effects(c, r.effects, r.x0, r.x1, r.mode, r.options);
  json a = json::array();
  for (const auto& e : es) {
    std::set<Term> seen;
    for (const auto& m : e.weight_means) seen.insert(m.term);
    json terms = json::object();
    for (Term t : seen) terms[to_string(t)] = to_json(nuisance_mean_diagnostics(e, t));
    a.push_back({{"effect", to_string(e.effect)},
                 {"estimate", e.estimate},
                 {"clipped_fraction", e.clips.fraction()},
                 {"positivity_warning", e.positivity_warning},
                 {"fold_retries", e.fold_retries},
                 {"weights", terms}});
  }
  return {{"n", c.size()}, {"results", a}};
}

json cmd_study(const Resolved& r) {
  const json& s = r.config["study"];
  const ScmSpec& spec = *r.data->spec;
  std::vector<EstimatorMode> modes;
  for (const auto& m : s["modes"]) modes.push_back(estimator_mode_from_string(m.get<std::string>()));
  const std::uint64_t seed = derive_seed(r.seed, kStudyStream);
  const StudyOracle oracle = study_oracle(spec, s["n_mc"].get<std::size_t>(), derive_seed(r.seed, kOracleStream));
  const std::size_t reps = s["replications"].get<std::size_t>();
  StudyResult res;
  if (s["kind"] == "convergence") {
    const auto sizes = s["sizes"].get<std::vector<std::size_t>>();
    res = convergence_study(spec, sizes, reps, modes, r.options, seed, oracle, r.level);
  } else {
    const auto etas = s["etas"].get<std::vector<double>>();
    res = imbalance_study(spec, etas, s["n"].get<std::size_t>(), reps, modes, r.options, seed, oracle, r.level);
  }
  if (r.csv_out) write_text(*r.csv_out, study_to_csv(res));
  return {{"result", to_json(res)}};
}

EventAggregation aggregation_from_json(const json& j) {
  EventAggregation a;
  static const std::set<std::string> known = {"stay_column",  "channel_column", "time_column", "value_column",
                                              "spo2_channel", "sao2_channel",   "delta_name",  "gamma",
                                              "window_minutes"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw InvalidArgument("unknown aggregation key '" + it.key() + "'");
  a.stay_column = j.value("stay_column", a.stay_column);
  a.channel_column = j.value("channel_column", a.channel_column);
  a.time_column = j.value("time_column", a.time_column);
  a.value_column = j.value("value_column", a.value_column);
  a.spo2_channel = j.value("spo2_channel", a.spo2_channel);
  a.sao2_channel = j.value("sao2_channel", a.sao2_channel);
  a.delta_name = j.value("delta_name", a.delta_name);
  a.gamma = j.value("gamma", a.gamma);
  a.window_minutes = j.value("window_minutes", a.window_minutes);
  return a;
}

json to_json(const EventAggregation& a) {
  return {{"stay_column", a.stay_column},   {"channel_column", a.channel_column}, {"time_column", a.time_column},
          {"value_column", a.value_column}, {"spo2_channel", a.spo2_channel},     {"sao2_channel", a.sao2_channel},
          {"delta_name", a.delta_name},     {"gamma", a.gamma},                   {"window_minutes", a.window_minutes}};
}

// Stays table (+ optional long-format events aggregated and joined by stay id)
// -> filters -> optional role schema. Writes the resulting CSV to --out.
json cmd_ingest(Resolved& r, std::ostream& out, bool& printed) {
  json& g = r.config["ingest"];
  json report = json::object();
  const auto text_cols = g.value("text_columns", std::vector<std::string>{});
  std::vector<std::string> stay_text = text_cols;
  std::optional<RoleSchema> schema;
  if (g.contains("schema")) {
    schema = role_schema_from_json(g["schema"]);
    stay_text.push_back(schema->x);
    g["schema"] = to_json(*schema);
  }
  Table table = read_csv_table(g["stays"].get<std::string>(), stay_text);
  report["stays_rows"] = table.rows();
  if (g.contains("events")) {
    const EventAggregation agg = aggregation_from_json(g.value("aggregation", json::object()));
    g["aggregation"] = to_json(agg);
    g["join_key"] = g.value("join_key", agg.stay_column);
    const Table events = read_csv_table(g["events"].get<std::string>(), {agg.channel_column});
    const Table wide = aggregate_events(events, agg);
    report["events_rows"] = events.rows();
    report["aggregated_stays"] = wide.rows();
    table = join_on(table, wide, g["join_key"].get<std::string>());
  }
  if (g.contains("filters")) {
    const FilterRules rules = filter_rules_from_json(g["filters"]);
    g["filters"] = to_json(rules);
    FilterReport fr;
    table = filter_table(table, rules, &fr);
    report["filters"] = to_json(fr);
  }
  std::string csv;
  if (schema) {
    LoadReport lr;
    const Cohort c = cohort_from_table(table, *schema, &lr);
    report["load"] = to_json(lr);
    report["exposed"] = c.count_exposure(1);
    csv = cohort_to_csv(c);
  } else {
    csv = table_to_csv(table);
  }
  report["rows_out"] = schema ? report["load"]["rows_kept"].get<std::size_t>() : table.rows();
  if (!r.out) {
    out << csv;
    printed = true;
    return {};
  }
  write_text(*r.out, csv);
  report["csv"] = *r.out;
  return report;
}

json dispatch(Resolved& r, std::ostream& out, bool& printed) {
  set_max_jobs(r.jobs);
  if (r.command == "simulate") return cmd_simulate(r, out, printed);
  if (r.command == "oracle") return cmd_oracle(r);
  if (r.command == "study") return cmd_study(r);
  if (r.command == "ingest") return cmd_ingest(r, out, printed);
  json report = json::object();
  const Cohort c = load_cohort(r, report);
  json result;
  if (r.command == "estimate") result = cmd_estimate(r, c);
  else if (r.command == "bootstrap") result = cmd_bootstrap(r, c);
  else if (r.command == "conditional") result = cmd_conditional(r, c);
  else result = cmd_diagnose(r, c);
  if (!report.empty()) result["ingest"] = report;
  return result;
}

std::string flag_name(const std::string& arg) {
  const auto eq = arg.find('=');
  return eq == std::string::npos ? arg : arg.substr(0, eq);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out) {
  CLI::App app{"Path-specific causal effect estimation", "pse"};
  app.require_subcommand(1, 1);
  app.allow_extras(false);
  std::map<std::string, Flags> flags;
  for (const auto& name : commands()) {
    CLI::App* sub = app.add_subcommand(name, "");
    sub->allow_extras(true);
    register_flags(sub, name, flags[name]);
  }
  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    out << error_json({"usage", e.what(), {}, {}}).dump(2) << "\n";
    return 2;
  }
  const CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  try {
    std::vector<std::string> unknown;
    for (const auto& a : sub->remaining())
      if (!a.empty() && a[0] == '-') unknown.push_back(flag_name(a));
    if (!sub->remaining().empty()) {
      std::string msg = unknown.empty() ? "unexpected argument(s):" : "unknown flag(s) for " + command + ":";
      for (const auto& a : unknown.empty() ? sub->remaining() : unknown) msg += " " + a;
      throw UsageError{"unknown_flag", msg, {}, unknown};
    }
    const Flags& f = flags[command];
    json file_cfg = json::object();
    std::set<std::string> labels_in_file;
    if (f.config) {
      file_cfg = read_json_file(*f.config);
      if (!file_cfg.is_object()) throw UsageError{"config", "config file must hold a JSON object", {}, {}};
      for (const char* k : {"x0_label", "x1_label"})
        if (file_cfg.contains(k)) labels_in_file.insert(k);
    }
    Resolved r = resolve(command, file_cfg, f, labels_in_file);
    bool printed = false;
    json result = dispatch(r, out, printed);
    if (printed) return 0;
    json doc = {{"command", command}, {"config", r.config}};
    for (auto it = result.begin(); it != result.end(); ++it) doc[it.key()] = it.value();
    const std::string text = doc.dump(2) + "\n";
    if (r.out && command != "simulate" && command != "ingest") write_text(*r.out, text);
    out << text;
    return 0;
  } catch (const UsageError& u) {
    out << error_json(u).dump(2) << "\n";
    return 2;
  } catch (const InvalidArgument& e) {
    out << error_json({"invalid_argument", e.what(), {}, {}}).dump(2) << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::string kind = "runtime";
    if (dynamic_cast<const PositivityError*>(&e)) kind = "positivity";
    else if (dynamic_cast<const DegenerateFoldError*>(&e)) kind = "degenerate_folds";
    else if (dynamic_cast<const RankError*>(&e)) kind = "rank";
    out << error_json({kind, e.what(), {}, {}}).dump(2) << "\n";
    return 1;
  }
}

}  // namespace pse::cli
