// Acceptance checks, one line per criterion. Pass criterion numbers as
// arguments to run a subset. Exit status is nonzero if any selected check fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cli.hpp"
#include "pse/cohort.hpp"
#include "pse/estimators.hpp"
#include "pse/inference.hpp"
#include "pse/oracle.hpp"
#include "pse/scm.hpp"

using namespace pse;
using nlohmann::json;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_variance(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

double median(std::vector<double> v) { return percentile(std::move(v), 0.5); }

CrossFitOptions ridge() {
  CrossFitOptions o;
  o.learner.kind = LearnerKind::ridge;
  return o;
}

const ScmSpec& linear() {
  static const ScmSpec s = linear_scm(3, 10, 3, 201);
  return s;
}

double linear_vde() {
  static const double v = study_oracle(linear(), 0, 0).vde();
  return v;
}

// Seeds: one independent stream per criterion.
std::uint64_t stream(int criterion, std::uint64_t k) { return derive_seed(derive_seed(20240611, criterion), k); }

// -- 1 ------------------------------------------------------------------------

Verdict oracle_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  const ScmSpec spec = discrete_reference_scm();
  const IdentifiedTerms id = idformula_eval(enumerate_joint(spec), 0, 1);
  auto exact = [&](QueryKind k, int x1) {
    EffectQuery q;
    q.kind = k;
    q.x1 = x1;
    return enumerate_exact(spec, q);
  };
  const double d[] = {std::abs(id.nested_vde - exact(QueryKind::nested_vde, 1)),
                      std::abs(id.nested_nde - exact(QueryKind::nested_nde, 1)),
                      std::abs(id.backdoor_x0 - exact(QueryKind::mean_yx, 0)),
                      std::abs(id.backdoor_x1 - exact(QueryKind::mean_yx, 1))};
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double worst = *std::max_element(std::begin(d), std::end(d));
  return {worst <= 1e-10 && secs < 1.0, fmt("max |idformula - exact| = %.2e over 4 terms, %.3f s", worst, secs)};
}

// -- 2 ------------------------------------------------------------------------

Verdict parametrizations() {
  const ScmSpec spec = discrete_reference_scm();
  const DiscreteJoint joint = enumerate_joint(spec);
  const Cohort c = joint.to_cohort(spec.dim_z, spec.dim_w, spec.dim_v);
  const double truth = idformula_eval(joint, 0, 1).nested_vde;
  CrossFitOptions o;
  o.folds = 1;
  o.learner.kind = LearnerKind::frequency;
  double worst = 0.0;
  std::string values;
  for (EstimatorMode m : {EstimatorMode::plugin, EstimatorMode::ipw, EstimatorMode::dr}) {
    const double e = crossfit_nested_vde(c, 0, 1, m, o).estimate;
    worst = std::max(worst, std::abs(e - truth));
    values += fmt(" %s=%.12f", to_string(m).c_str(), e);
  }
  return {worst <= 1e-10, fmt("oracle=%.12f%s, max dev %.2e", truth, values.c_str(), worst)};
}

// -- 3 and 4 ----------------------------------------------------------------

struct BinaryRuns {
  double oracle = 0.0, oracle_se = 0.0;
  std::vector<double> dr, sn_dr;
  double worst_post = 0.0;  // max |post - 1| over every fold and family
  std::size_t post_checked = 0;
};

const BinaryRuns& binary_runs() {
  static const BinaryRuns runs = [] {
    BinaryRuns r;
    const ScmSpec spec = binary_scm();
    EffectQuery q;
    const OracleValue o = mc_counterfactual(spec, q, 10'000'000, stream(3, 0));
    r.oracle = o.value;
    r.oracle_se = o.std_error;
    const QueryKind vde[] = {QueryKind::vde};
    for (std::uint64_t k = 1; k <= 100; ++k) {
      const Cohort c = sample(spec, 32000, stream(3, k));
      CrossFitOptions opt;
      opt.seed = stream(3, 1000 + k);
      const NuisanceRun run = crossfit_nuisances(c, 0, 1, terms_for(vde), opt);
      r.dr.push_back(effects_from_run(run, assemble_terms(run, EstimatorMode::dr), vde)[0].estimate);
      const TermSet sn = assemble_terms(run, EstimatorMode::sn_dr);
      r.sn_dr.push_back(effects_from_run(run, sn, vde)[0].estimate);
      for (const WeightMean& w : sn.weight_means) {
        r.worst_post = std::max(r.worst_post, std::abs(w.post - 1.0));
        ++r.post_checked;
      }
    }
    return r;
  }();
  return runs;
}

Verdict binary_reproduction() {
  const BinaryRuns& r = binary_runs();
  const double rel_dr = std::abs(mean(r.dr) - r.oracle) / std::abs(r.oracle);
  const double rel_sn = std::abs(mean(r.sn_dr) - r.oracle) / std::abs(r.oracle);
  const double vs_published = std::abs(mean(r.sn_dr) + 0.125) / 0.125;
  return {rel_dr <= 0.02 && rel_sn <= 0.02,
          fmt("oracle %.5f (se %.5f, 1e7 draws); mean dr %.5f (rel err %.2f%%), sn_dr %.5f (%.2f%%); "
              "sn_dr vs -0.125: %.2f%%",
              r.oracle, r.oracle_se, mean(r.dr), 100 * rel_dr, mean(r.sn_dr), 100 * rel_sn, 100 * vs_published)};
}

Verdict self_normalization() {
  const BinaryRuns& r = binary_runs();
  const ScmSpec spec = binary_scm();
  const std::size_t sizes[] = {1000, 2000, 4000, 8000, 16000, 32000};
  const QueryKind vde[] = {QueryKind::vde};
  std::vector<double> medians;
  for (std::size_t s = 0; s < std::size(sizes); ++s) {
    std::vector<double> dev;
    for (std::uint64_t k = 0; k < 20; ++k) {
      const Cohort c = sample(spec, sizes[s], stream(4, s * 1000 + k));
      CrossFitOptions opt;
      opt.seed = stream(4, 100000 + s * 1000 + k);
      const NuisanceRun run = crossfit_nuisances(c, 0, 1, terms_for(vde), opt);
      for (const WeightMean& w : assemble_terms(run, EstimatorMode::sn_dr).weight_means)
        dev.push_back(std::abs(w.pre - 1.0));
    }
    medians.push_back(median(dev));
  }
  bool monotone = true;
  std::string trend;
  for (std::size_t s = 0; s < medians.size(); ++s) {
    if (s > 0 && medians[s] > medians[s - 1]) monotone = false;
    trend += fmt("%s%.4f", s ? " " : "", medians[s]);
  }
  return {r.worst_post <= 1e-12 && monotone,
          fmt("post max |mean-1| %.1e over %zu fold means; pre median |mean-1| 1k..32k: %s", r.worst_post,
              r.post_checked, trend.c_str())};
}

// -- 5 ------------------------------------------------------------------------

Verdict variance_contrast() {
  const QueryKind vde[] = {QueryKind::vde};
  std::vector<double> dr, sn;
  for (std::uint64_t k = 0; k < 100; ++k) {
    const Cohort c = sample(linear(), 2000, stream(5, k));
    CrossFitOptions opt = ridge();
    opt.seed = stream(5, 1000 + k);
    const NuisanceRun run = crossfit_nuisances(c, 0, 1, terms_for(vde), opt);
    dr.push_back(effects_from_run(run, assemble_terms(run, EstimatorMode::dr), vde)[0].estimate);
    sn.push_back(effects_from_run(run, assemble_terms(run, EstimatorMode::sn_dr), vde)[0].estimate);
  }
  const double vd = sample_variance(dr), vs = sample_variance(sn);
  return {vs <= vd, fmt("100 reps at n=2000: var(sn_dr) %.3e, var(dr) %.3e", vs, vd)};
}

// -- 6 ------------------------------------------------------------------------

Verdict double_robustness() {
  const double truth = linear_vde();
  const Misspecification cases[] = {Misspecification::break_mu, Misspecification::break_pi,
                                    Misspecification::break_both};
  double err[3];
  std::string detail = fmt("oracle %.5f;", truth);
  for (int i = 0; i < 3; ++i) {
    std::vector<double> est;
    for (std::uint64_t k = 0; k < 64; ++k) {
      const Cohort c = sample(linear(), 32000, stream(6, k));
      CrossFitOptions opt = inject_misspecification(ridge(), cases[i]);
      opt.seed = stream(6, 1000 + k);
      est.push_back(estimate_effect(c, QueryKind::vde, 0, 1, EstimatorMode::dr, opt).estimate);
    }
    err[i] = std::abs(mean(est) - truth) / std::abs(truth);
    detail += fmt(" %s mean %.5f (%.2f%%)", to_string(cases[i]).c_str(), mean(est), 100 * err[i]);
  }
  return {err[0] <= 0.03 && err[1] <= 0.03 && err[2] > err[0] && err[2] > err[1], detail + ", 64 reps"};
}

// -- 7 ------------------------------------------------------------------------

Verdict rate_and_coverage() {
  const std::size_t sizes[] = {1000, 2000, 4000, 8000, 16000, 32000};
  const EstimatorMode modes[] = {EstimatorMode::sn_dr};
  const StudyOracle oracle = study_oracle(linear(), 0, 0);
  const StudyResult rate = convergence_study(linear(), sizes, 40, modes, ridge(), stream(7, 0), oracle);
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double m = static_cast<double>(std::size(sizes));
  for (std::size_t n : sizes) {
    const double x = std::log(static_cast<double>(n));
    const double y = std::log(rate.at(static_cast<double>(n), EstimatorMode::sn_dr, "vde").rmse);
    sx += x, sy += y, sxx += x * x, sxy += x * y;
  }
  const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);

  const std::size_t n4k[] = {4000};
  const StudyResult cov = convergence_study(linear(), n4k, 200, modes, ridge(), stream(7, 1), oracle);
  const double analytic = cov.at(4000, EstimatorMode::sn_dr, "vde").coverage;

  constexpr std::size_t kDraws = 100;
  std::size_t hits = 0;
  for (std::uint64_t k = 0; k < 200; ++k) {
    const Cohort c = sample(linear(), 4000, stream(7, 10 + k));
    CrossFitOptions opt = ridge();
    opt.seed = stream(7, 1000 + k);
    const EffectEstimate e =
        bootstrap_ci(c, QueryKind::vde, 0, 1, kDraws, 0.95, EstimatorMode::sn_dr, opt, stream(7, 2000 + k));
    hits += e.ci.lower <= oracle.vde() && oracle.vde() <= e.ci.upper;
  }
  const double boot = static_cast<double>(hits) / 200.0;
  auto in = [](double c) { return c >= 0.90 && c <= 0.98; };
  return {slope >= -0.65 && slope <= -0.35 && in(analytic) && in(boot),
          fmt("RMSE slope %.3f (40 reps per n); coverage at n=4000 over 200 reps: analytic %.3f, bootstrap "
              "%.3f (B=%zu)",
              slope, analytic, boot, kDraws)};
}

// -- 8 ------------------------------------------------------------------------

Verdict decomposition() {
  std::vector<std::pair<std::string, Cohort>> cohorts;
  for (std::uint64_t s = 0; s < 3; ++s) {
    cohorts.emplace_back("binary", sample(binary_scm(), 4000, stream(8, s)));
    cohorts.emplace_back("linear", sample(linear(), 4000, stream(8, 10 + s)));
    cohorts.emplace_back("nonlinear", sample(nonlinear_scm(3, 10, 3, 3, 11, 8), 4000, stream(8, 20 + s)));
    cohorts.emplace_back("discrete", sample(discrete_reference_scm(), 4000, stream(8, 30 + s)));
  }
  const QueryKind effects[] = {QueryKind::te, QueryKind::nde, QueryKind::nie};
  double worst = 0.0;
  std::size_t runs = 0;
  for (const auto& [name, c] : cohorts) {
    CrossFitOptions opt = name == "linear" ? ridge() : CrossFitOptions{};
    for (std::uint64_t seed : {1, 2}) {
      opt.seed = stream(8, 100 + seed);
      const NuisanceRun run = crossfit_nuisances(c, 0, 1, terms_for(effects), opt);
      for (EstimatorMode m : {EstimatorMode::plugin, EstimatorMode::ipw, EstimatorMode::dr, EstimatorMode::sn_dr}) {
        const auto e = effects_from_run(run, assemble_terms(run, m), effects);
        worst = std::max(worst, std::abs(e[0].estimate - e[1].estimate - e[2].estimate));
        ++runs;
      }
    }
  }
  std::size_t covered = 0, checked = 0;
  for (const auto& [name, c] : cohorts) {
    CrossFitOptions opt = name == "linear" ? ridge() : CrossFitOptions{};
    opt.seed = stream(8, 200);
    for (int x : {0, 1}) {
      const EffectEstimate e = analytic_ci(c, QueryKind::vde, x, x, EstimatorMode::sn_dr, opt, 0.95);
      covered += e.ci.lower <= 0.0 && 0.0 <= e.ci.upper;
      ++checked;
    }
  }
  // 95% intervals miss now and then even at a true zero; ask for at least 90% of them to cover.
  return {worst <= 1e-12 && covered >= 0.9 * static_cast<double>(checked),
          fmt("max |TE-NDE-NIE| %.1e over %zu cohort/seed/mode runs; VDE(x,x) CI covers 0 in %zu/%zu", worst, runs,
              covered, checked)};
}

// -- 9 ------------------------------------------------------------------------

Verdict conditional() {
  const Cohort c = sample(binary_scm(), 32000, stream(9, 0));
  CrossFitOptions opt;
  opt.seed = stream(9, 1);
  const double e01[] = {0.0, 0.5, 1.0};
  const BinnedEffect full = conditional_vde(c, "z1", "w1", e01, e01, 20, 0, 1, EstimatorMode::sn_dr, opt);
  double num = 0.0, den = 0.0;
  bool all_present = true;
  for (std::size_t k = 0; k < full.mean.size(); ++k) {
    all_present = all_present && !full.missing[k];
    if (full.missing[k]) continue;
    num += static_cast<double>(full.count[k]) * full.mean[k];
    den += static_cast<double>(full.count[k]);
  }
  const double gap = std::abs(num / den - full.global_estimate);

  // A small cohort on a fine grid leaves sparse cells.
  const Cohort small = sample(linear(), 600, stream(9, 2));
  CrossFitOptions ro = ridge();
  ro.seed = stream(9, 3);
  const double edges[] = {-3.0, -1.5, -0.5, 0.0, 0.5, 1.5, 3.0};
  const BinnedEffect sparse = conditional_vde(small, "z1", "z2", edges, edges, 20, 0, 1, EstimatorMode::sn_dr, ro);
  bool flags_ok = true;
  std::size_t flagged = 0;
  for (std::size_t k = 0; k < sparse.mean.size(); ++k) {
    flags_ok = flags_ok && sparse.missing[k] == (sparse.count[k] < 20);
    flagged += sparse.missing[k];
  }
  return {all_present && gap <= 1e-12 && flags_ok && flagged > 0,
          fmt("|weighted cell mean - global| %.1e on a full 2x2 grid; %zu/%zu sparse cells flagged, all with count < 20",
              gap, flagged, sparse.mean.size())};
}

// -- 10 -----------------------------------------------------------------------

Verdict imbalance() {
  const ScmSpec base = nonlinear_scm(3, 10, 3, 3, 11, 8);
  const double etas[] = {0.5, 0.33, 0.2, 0.1};
  std::vector<double> var;
  std::string detail;
  bool finite = true;
  std::size_t aborted = 0;
  for (std::size_t i = 0; i < std::size(etas); ++i) {
    const ScmSpec spec = calibrate_imbalance(base, etas[i]);
    std::vector<double> est, se2;
    for (std::uint64_t k = 0; k < 5; ++k) {
      try {
        const Cohort c = sample(spec, 32000, stream(10, i * 100 + k));
        CrossFitOptions opt;
        opt.seed = stream(10, 1000 + i * 100 + k);
        const EffectEstimate e = estimate_effect(c, QueryKind::vde, 0, 1, EstimatorMode::sn_dr, opt);
        finite = finite && std::isfinite(e.estimate) && std::isfinite(e.std_error);
        est.push_back(e.estimate);
        se2.push_back(e.std_error * e.std_error);
      } catch (const std::exception&) {
        ++aborted;
      }
    }
    var.push_back(mean(se2));
    detail += fmt("%seta %.2f: mean %.4f, var %.2e", i ? "; " : "", etas[i], mean(est), var.back());
  }
  bool monotone = true;
  for (std::size_t i = 1; i < var.size(); ++i) monotone = monotone && var[i] >= var[i - 1];
  return {finite && aborted == 0 && monotone, detail + fmt("; %zu aborted", aborted)};
}

// -- 11 -----------------------------------------------------------------------

Verdict ingestion() {
  namespace fs = std::filesystem;
  const std::string dir = PSE_FIXTURE_DIR;
  json cfg = json::parse(std::ifstream(dir + "/ingest.json"));
  cfg["ingest"]["stays"] = dir + "/stays.csv";
  cfg["ingest"]["events"] = dir + "/events.csv";
  const std::string ingest_cfg = (fs::temp_directory_path() / "pse_accept_ingest.json").string();
  const std::string cohort_csv = (fs::temp_directory_path() / "pse_accept_cohort.csv").string();
  std::ofstream(ingest_cfg) << cfg.dump();
  std::ostringstream out1;
  const int c1 = cli::run({"ingest", "--config", ingest_cfg, "--out", cohort_csv}, out1);

  json est = json::parse(std::ifstream(dir + "/estimate_cohort.json"));
  est["data"]["csv"] = cohort_csv;
  const std::string est_cfg = (fs::temp_directory_path() / "pse_accept_estimate.json").string();
  std::ofstream(est_cfg) << est.dump();
  std::ostringstream out2;
  const int c2 = cli::run({"estimate", "--config", est_cfg}, out2);
  if (c1 != 0 || c2 != 0) return {false, "fixture ingestion or estimation failed: " + out1.str() + out2.str()};

  const json r = json::parse(out2.str());
  double te = 0, nde = 0, nie = 0;
  for (const json& e : r["results"]) {
    if (e["effect"] == "te") te = e["estimate"];
    if (e["effect"] == "nde") nde = e["estimate"];
    if (e["effect"] == "nie") nie = e["estimate"];
  }
  const std::size_t rows = json::parse(out1.str())["rows_out"];
  return {rows > 0 && std::abs(te - nde - nie) <= 1e-12,
          fmt("credentialed-data figures not reproduced; synthetic fixture ingested (%zu rows) and estimated, "
              "|TE-NDE-NIE| %.1e",
              rows, std::abs(te - nde - nie))};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<int, std::function<Verdict()>>> checks = {
      {1, oracle_equivalence}, {2, parametrizations}, {3, binary_reproduction}, {4, self_normalization},
      {5, variance_contrast},  {6, double_robustness}, {7, rate_and_coverage},  {8, decomposition},
      {9, conditional},        {10, imbalance},        {11, ingestion}};
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& [id, check] : checks) {
    if (!wanted.empty() && !wanted.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %d: %s  %s  [%.1f s]\n", id, v.pass ? "PASS" : "FAIL", v.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !v.pass;
  }
  return failed == 0 ? 0 : 1;
}
