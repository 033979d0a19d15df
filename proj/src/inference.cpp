#include "pse/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <boost/math/distributions/normal.hpp>

namespace pse {

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("normal_quantile: p must lie in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

namespace {

void validate_level(double level) {
  if (!(level > 0.0 && level < 1.0)) throw InvalidArgument("confidence level must lie in (0, 1)");
}

// Non-finite values become empty CSV cells.
std::string fmt(double v) {
  if (!std::isfinite(v)) return "";
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw InvalidArgument("percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

// ---------------------------------------------------------------------------
// Intervals

std::vector<EffectEstimate> bootstrap_effects(const Cohort& c, std::span<const QueryKind> effects, int x0, int x1,
                                              std::size_t draws, double level, EstimatorMode mode,
                                              const CrossFitOptions& options, std::uint64_t seed) {
  if (draws < 2) throw InvalidArgument("bootstrap needs at least 2 draws");
  validate_level(level);
  if (c.weighted()) throw InvalidArgument("bootstrap resampling needs an unweighted cohort");
  std::vector<EffectEstimate> full = estimate_effects(c, effects, x0, x1, mode, options);

  const std::size_t n = c.size();
  const std::size_t k = effects.size();
  std::vector<std::vector<double>> values(draws, std::vector<double>(k));
  std::vector<std::size_t> redraws(draws, 0);
  constexpr std::size_t kMaxRedraws = 100;

  parallel_for(draws, [&](std::size_t b) {
    for (std::size_t attempt = 0;; ++attempt) {
      const std::uint64_t s = derive_seed(derive_seed(seed, b), attempt);
      Rng rng(s);
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      std::vector<std::size_t> rows(n);
      for (auto& r : rows) r = pick(rng);
      const Cohort resample = c.subset(rows);
      CrossFitOptions o = options;
      o.seed = derive_seed(s, 0x424f4f54);
      try {
        const auto est = estimate_effects(resample, effects, x0, x1, mode, o);
        for (std::size_t e = 0; e < k; ++e) values[b][e] = est[e].estimate;
        redraws[b] = attempt;
        return;
      } catch (const DegenerateFoldError&) {
        if (attempt + 1 >= kMaxRedraws) throw;
      }
    }
  });

  std::size_t total_redraws = 0;
  for (std::size_t r : redraws) total_redraws += r;
  const double alpha = 1.0 - level;
  for (std::size_t e = 0; e < k; ++e) {
    std::vector<double> v(draws);
    double s = 0.0;
    for (std::size_t b = 0; b < draws; ++b) {
      v[b] = values[b][e];
      s += v[b];
    }
    EffectEstimate& out = full[e];
    out.terms["full_sample"] = out.estimate;
    out.estimate = s / static_cast<double>(draws);
    out.ci = Interval{percentile(v, alpha / 2.0), percentile(v, 1.0 - alpha / 2.0), "bootstrap", level};
    out.bootstrap_draws = draws;
    out.bootstrap_redraws = total_redraws;
  }
  return full;
}

EffectEstimate bootstrap_ci(const Cohort& c, QueryKind effect, int x0, int x1, std::size_t draws, double level,
                            EstimatorMode mode, const CrossFitOptions& options, std::uint64_t seed) {
  const QueryKind one[] = {effect};
  return bootstrap_effects(c, one, x0, x1, draws, level, mode, options, seed).front();
}

EffectEstimate analytic_ci(EffectEstimate e, double level) {
  validate_level(level);
  if (e.mode != EstimatorMode::dr && e.mode != EstimatorMode::sn_dr)
    throw InvalidArgument("analytic intervals need the dr or sndr mode");
  const double z = normal_quantile(0.5 + level / 2.0);
  e.ci = Interval{e.estimate - z * e.std_error, e.estimate + z * e.std_error, "analytic", level};
  return e;
}

EffectEstimate analytic_ci(const Cohort& c, QueryKind effect, int x0, int x1, EstimatorMode mode,
                           const CrossFitOptions& options, double level) {
  return analytic_ci(estimate_effect(c, effect, x0, x1, mode, options), level);
}

// ---------------------------------------------------------------------------
// Conditional effects

namespace {

void check_edges(std::span<const double> edges, const char* axis) {
  if (edges.size() < 2) throw InvalidArgument(std::string("axis ") + axis + " needs at least two bin edges");
  for (std::size_t k = 0; k + 1 < edges.size(); ++k)
    if (!(edges[k] < edges[k + 1])) throw InvalidArgument(std::string("bin edges of axis ") + axis + " must increase strictly");
}

// Index of the bin holding v, or -1.
long bin_of(std::span<const double> edges, double v) {
  if (!(v >= edges.front() && v <= edges.back())) return -1;
  if (v == edges.back()) return static_cast<long>(edges.size()) - 2;
  return static_cast<long>(std::upper_bound(edges.begin(), edges.end(), v) - edges.begin()) - 1;
}

}  // namespace

BinnedEffect bin_contributions(const EffectEstimate& e, std::span<const double> axis1, std::span<const double> axis2,
                               std::span<const double> edges1, std::span<const double> edges2,
                               std::size_t min_count) {
  check_edges(edges1, "1");
  check_edges(edges2, "2");
  if (min_count == 0) throw InvalidArgument("min_count must be >= 1");
  const std::size_t n = e.contributions.size();
  if (axis1.size() != n || axis2.size() != n) throw InvalidArgument("axis length does not match the estimate's rows");

  BinnedEffect b;
  b.edges1.assign(edges1.begin(), edges1.end());
  b.edges2.assign(edges2.begin(), edges2.end());
  b.min_count = min_count;
  b.global_estimate = e.estimate;
  const std::size_t c1 = b.cells1(), c2 = b.cells2();
  std::vector<double> sum(c1 * c2, 0.0), wsum(c1 * c2, 0.0);
  b.count.assign(c1 * c2, 0);
  double all_sum = 0.0, all_w = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const long k1 = bin_of(edges1, axis1[i]);
    const long k2 = bin_of(edges2, axis2[i]);
    if (k1 < 0 || k2 < 0) {
      ++b.outside;
      continue;
    }
    const std::size_t cell = static_cast<std::size_t>(k1) * c2 + static_cast<std::size_t>(k2);
    const double w = e.row_weight.empty() ? 1.0 : e.row_weight[i];
    sum[cell] += w * e.contributions[i];
    wsum[cell] += w;
    ++b.count[cell];
    ++b.contributing;
  }
  if (b.contributing == 0) throw InvalidArgument("no row falls inside the conditioning grid");
  b.mean.assign(c1 * c2, std::numeric_limits<double>::quiet_NaN());
  b.missing.assign(c1 * c2, true);
  for (std::size_t cell = 0; cell < c1 * c2; ++cell) {
    if (wsum[cell] > 0.0) {
      b.mean[cell] = sum[cell] / wsum[cell];
      all_sum += wsum[cell] * b.mean[cell];
      all_w += wsum[cell];
    }
    b.missing[cell] = b.count[cell] < min_count;
  }
  b.partition_mean = all_sum / all_w;
  return b;
}

std::vector<double> cohort_column(const Cohort& c, const std::string& name) {
  auto pick = [&](const std::vector<std::string>& names, const std::vector<double>& data,
                  std::size_t dim) -> std::optional<std::vector<double>> {
    for (std::size_t j = 0; j < names.size(); ++j) {
      if (names[j] != name) continue;
      std::vector<double> out(c.size());
      for (std::size_t i = 0; i < c.size(); ++i) out[i] = data[i * dim + j];
      return out;
    }
    return std::nullopt;
  };
  Cohort named = c;
  named.ensure_names();
  if (auto v = pick(named.v_names, c.v, c.dim_v)) return *v;
  if (auto w = pick(named.w_names, c.w, c.dim_w)) return *w;
  if (auto z = pick(named.z_names, c.z, c.dim_z)) return *z;
  throw InvalidArgument("unknown cohort column '" + name + "'");
}

BinnedEffect conditional_vde(const Cohort& c, const std::string& axis1, const std::string& axis2,
                             std::span<const double> edges1, std::span<const double> edges2, std::size_t min_count,
                             int x0, int x1, EstimatorMode mode, const CrossFitOptions& options) {
  const std::vector<double> a1 = cohort_column(c, axis1);
  const std::vector<double> a2 = cohort_column(c, axis2);
  check_edges(edges1, "1");
  check_edges(edges2, "2");
  const EffectEstimate e = estimate_effect(c, QueryKind::vde, x0, x1, mode, options);
  BinnedEffect b = bin_contributions(e, a1, a2, edges1, edges2, min_count);
  b.axis1 = axis1;
  b.axis2 = axis2;
  return b;
}

nlohmann::json to_json(const BinnedEffect& b) {
  nlohmann::json cells = nlohmann::json::array();
  for (std::size_t k1 = 0; k1 < b.cells1(); ++k1)
    for (std::size_t k2 = 0; k2 < b.cells2(); ++k2) {
      const std::size_t cell = k1 * b.cells2() + k2;
      cells.push_back({{"axis1_lower", b.edges1[k1]},
                       {"axis1_upper", b.edges1[k1 + 1]},
                       {"axis2_lower", b.edges2[k2]},
                       {"axis2_upper", b.edges2[k2 + 1]},
                       {"count", b.count[cell]},
                       {"missing", static_cast<bool>(b.missing[cell])},
                       {"mean", std::isfinite(b.mean[cell]) ? nlohmann::json(b.mean[cell]) : nlohmann::json(nullptr)}});
    }
  return {{"axis1", b.axis1},           {"axis2", b.axis2},
          {"edges1", b.edges1},         {"edges2", b.edges2},
          {"min_count", b.min_count},   {"contributing", b.contributing},
          {"outside", b.outside},       {"global_estimate", b.global_estimate},
          {"partition_mean", b.partition_mean}, {"cells", cells}};
}

std::string binned_to_csv(const BinnedEffect& b) {
  std::string out = "axis1_lower,axis1_upper,axis2_lower,axis2_upper,count,missing,mean\n";
  for (std::size_t k1 = 0; k1 < b.cells1(); ++k1)
    for (std::size_t k2 = 0; k2 < b.cells2(); ++k2) {
      const std::size_t cell = k1 * b.cells2() + k2;
      out += fmt(b.edges1[k1]) + "," + fmt(b.edges1[k1 + 1]) + "," + fmt(b.edges2[k2]) + "," + fmt(b.edges2[k2 + 1]) +
             "," + std::to_string(b.count[cell]) + "," + (b.missing[cell] ? "1" : "0") + "," +
             (std::isfinite(b.mean[cell]) ? fmt(b.mean[cell]) : "") + "\n";
    }
  return out;
}

// ---------------------------------------------------------------------------
// Diagnostics

NuisanceDiagnostics nuisance_mean_diagnostics(const EffectEstimate& e, Term term) {
  NuisanceDiagnostics d;
  d.n = e.n;
  for (const auto& m : e.weight_means) {
    if (m.term != term) continue;
    WeightDiagnosticRow row{m.fold, m.family, m.pre, m.post, std::abs(m.pre - 1.0) > 0.25 && e.n < 4000};
    d.small_sample_regime = d.small_sample_regime || row.small_sample;
    d.rows.push_back(row);
  }
  return d;
}

nlohmann::json to_json(const NuisanceDiagnostics& d) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : d.rows)
    rows.push_back({{"fold", r.fold}, {"family", r.family}, {"pre", r.pre}, {"post", r.post}, {"small_sample", r.small_sample}});
  return {{"n", d.n}, {"small_sample_regime", d.small_sample_regime}, {"weight_means", rows}};
}

// ---------------------------------------------------------------------------
// Studies

StudyOracle study_oracle(const ScmSpec& spec, std::size_t n_mc, std::uint64_t seed) {
  StudyOracle o;
  auto value = [&](QueryKind kind, int x0, int x1) {
    EffectQuery q;
    q.kind = kind;
    q.x0 = x0;
    q.x1 = x1;
    if (spec.kind == MechanismKind::linear_gaussian) return linear_closed_form(spec, q);
    if (spec.enumerable()) return enumerate_exact(spec, q);
    return mc_counterfactual(spec, q, n_mc, seed).value;
  };
  o.mean_y_x0 = value(QueryKind::mean_yx, 1, 0);
  o.mean_y_x1 = value(QueryKind::mean_yx, 0, 1);
  o.nested_nde = value(QueryKind::nested_nde, 0, 1);
  o.nested_vde = value(QueryKind::nested_vde, 0, 1);
  return o;
}

const StudyPoint& StudyResult::at(double axis_value, EstimatorMode mode, const std::string& quantity) const {
  for (const auto& p : points)
    if (p.axis_value == axis_value && p.mode == mode && p.quantity == quantity) return p;
  throw InvalidArgument("no study point for " + quantity + " at " + fmt(axis_value));
}

namespace {

double unit_std_error(const std::vector<double>& c) {
  const double n = static_cast<double>(c.size());
  double mean = 0.0;
  for (double v : c) mean += v;
  mean /= n;
  double sq = 0.0;
  for (double v : c) sq += (v - mean) * (v - mean);
  return std::sqrt(sq / (n - 1.0) / n);
}

struct Replicate {
  // [mode][quantity]
  std::vector<std::vector<double>> value, se;
  bool failed = false;
};

Replicate run_replicate(const Cohort& d, std::span<const EstimatorMode> modes, const CrossFitOptions& options) {
  TermRequest req;
  req.backdoor_x0 = req.backdoor_x1 = req.nested_vde = req.nested_nde = true;
  const NuisanceRun run = crossfit_nuisances(d, 0, 1, req, options);
  Replicate r;
  for (EstimatorMode mode : modes) {
    const TermSet set = assemble_terms(run, mode);
    const auto& b0 = set.terms.at(Term::backdoor_x0);
    const auto& b1 = set.terms.at(Term::backdoor_x1);
    const auto& nn = set.terms.at(Term::nested_nde);
    const auto& nv = set.terms.at(Term::nested_vde);
    std::vector<double> vde_c(b1.contributions.size());
    for (std::size_t i = 0; i < vde_c.size(); ++i) vde_c[i] = b1.contributions[i] - nv.contributions[i];
    r.value.push_back({b0.value, b1.value, nn.value, nv.value, b1.value - nv.value});
    r.se.push_back({unit_std_error(b0.contributions), unit_std_error(b1.contributions),
                    unit_std_error(nn.contributions), unit_std_error(nv.contributions), unit_std_error(vde_c)});
  }
  return r;
}

void summarize(StudyResult& result, const std::string& axis, double axis_value, std::size_t n,
               std::span<const EstimatorMode> modes, const std::vector<Replicate>& reps, double level) {
  const auto& o = result.oracle;
  const double truth[] = {o.mean_y_x0, o.mean_y_x1, o.nested_nde, o.nested_vde, o.vde()};
  const double z = normal_quantile(0.5 + level / 2.0);
  for (std::size_t m = 0; m < modes.size(); ++m) {
    const bool analytic = modes[m] == EstimatorMode::dr || modes[m] == EstimatorMode::sn_dr;
    for (std::size_t q = 0; q < study_quantities().size(); ++q) {
      StudyPoint p;
      p.axis = axis;
      p.axis_value = axis_value;
      p.n = n;
      p.mode = modes[m];
      p.quantity = study_quantities()[q];
      p.oracle = truth[q];
      std::size_t covered = 0;
      for (const auto& r : reps) {
        if (r.failed) {
          ++p.failures;
          continue;
        }
        const double v = r.value[m][q];
        p.estimates.push_back(v);
        if (std::abs(v - truth[q]) <= z * r.se[m][q]) ++covered;
      }
      p.replications = p.estimates.size();
      if (p.replications > 0) {
        const double k = static_cast<double>(p.replications);
        double s = 0.0, rel = 0.0, arel = 0.0, sq = 0.0;
        for (double v : p.estimates) {
          s += v;
          rel += (v - truth[q]) / truth[q];
          arel += std::abs((v - truth[q]) / truth[q]);
          sq += (v - truth[q]) * (v - truth[q]);
        }
        p.mean_estimate = s / k;
        // Relative error is undefined against a zero oracle.
        const double nan = std::numeric_limits<double>::quiet_NaN();
        p.mean_relative_error = truth[q] != 0.0 ? rel / k : nan;
        p.mean_abs_relative_error = truth[q] != 0.0 ? arel / k : nan;
        p.rmse = std::sqrt(sq / k);
        double var = 0.0;
        for (double v : p.estimates) var += (v - p.mean_estimate) * (v - p.mean_estimate);
        p.variance = p.replications > 1 ? var / (k - 1.0) : 0.0;
        p.coverage = analytic ? static_cast<double>(covered) / k : std::numeric_limits<double>::quiet_NaN();
      }
      result.points.push_back(std::move(p));
    }
  }
}

void check_study(std::span<const EstimatorMode> modes, std::size_t replications, double level) {
  if (modes.empty()) throw InvalidArgument("study needs at least one estimator mode");
  if (replications == 0) throw InvalidArgument("study needs at least one replication");
  validate_level(level);
}

}  // namespace

StudyResult convergence_study(const ScmSpec& spec, std::span<const std::size_t> sizes, std::size_t replications,
                              std::span<const EstimatorMode> modes, const CrossFitOptions& options,
                              std::uint64_t seed, const StudyOracle& oracle, double level) {
  if (sizes.empty()) throw InvalidArgument("convergence study needs at least one sample size");
  check_study(modes, replications, level);
  StudyResult result;
  result.seed = seed;
  result.level = level;
  result.oracle = oracle;
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    std::vector<Replicate> reps(replications);
    std::vector<std::uint64_t> seeds(replications);
    for (std::size_t r = 0; r < replications; ++r) seeds[r] = derive_seed(seed, s * 1000003 + r);
    parallel_for(replications, [&](std::size_t r) {
      const Cohort d = sample(spec, sizes[s], seeds[r]);
      CrossFitOptions o = options;
      o.seed = derive_seed(seeds[r], 0x43464954);
      reps[r] = run_replicate(d, modes, o);
    });
    result.replication_seeds.insert(result.replication_seeds.end(), seeds.begin(), seeds.end());
    summarize(result, "n", static_cast<double>(sizes[s]), sizes[s], modes, reps, level);
  }
  return result;
}

StudyResult imbalance_study(const ScmSpec& spec, std::span<const double> etas, std::size_t n,
                            std::size_t replications, std::span<const EstimatorMode> modes,
                            const CrossFitOptions& options, std::uint64_t seed, const StudyOracle& oracle,
                            double level) {
  if (etas.empty()) throw InvalidArgument("imbalance study needs at least one eta");
  for (double eta : etas)
    if (!(eta > 0.0 && eta < 1.0)) throw InvalidArgument("eta values must lie in (0, 1)");
  check_study(modes, replications, level);
  StudyResult result;
  result.seed = seed;
  result.level = level;
  result.oracle = oracle;
  for (std::size_t e = 0; e < etas.size(); ++e) {
    const ScmSpec calibrated = calibrate_imbalance(spec, etas[e]);
    std::vector<Replicate> reps(replications);
    std::vector<std::uint64_t> seeds(replications);
    for (std::size_t r = 0; r < replications; ++r) seeds[r] = derive_seed(seed, 0x494d42000000ULL + e * 1000003 + r);
    parallel_for(replications, [&](std::size_t r) {
      try {
        const Cohort d = sample(calibrated, n, seeds[r]);
        CrossFitOptions o = options;
        o.seed = derive_seed(seeds[r], 0x43464954);
        reps[r] = run_replicate(d, modes, o);
        for (const auto& row : reps[r].value)
          for (double v : row)
            if (!std::isfinite(v)) reps[r].failed = true;
      } catch (const Error&) {
        reps[r].failed = true;
      }
    });
    result.replication_seeds.insert(result.replication_seeds.end(), seeds.begin(), seeds.end());
    summarize(result, "eta", etas[e], n, modes, reps, level);
  }
  return result;
}

nlohmann::json to_json(const StudyResult& r) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& p : r.points) {
    points.push_back({{"axis", p.axis},
                      {"value", p.axis_value},
                      {"n", p.n},
                      {"mode", to_string(p.mode)},
                      {"quantity", p.quantity},
                      {"oracle", p.oracle},
                      {"replications", p.replications},
                      {"failures", p.failures},
                      {"mean_estimate", p.mean_estimate},
                      {"mean_relative_error", p.mean_relative_error},
                      {"mean_abs_relative_error", p.mean_abs_relative_error},
                      {"variance", p.variance},
                      {"rmse", p.rmse},
                      {"coverage", std::isfinite(p.coverage) ? nlohmann::json(p.coverage) : nlohmann::json(nullptr)}});
  }
  return {{"seed", r.seed},
          {"level", r.level},
          {"oracle",
           {{"mean_y_x0", r.oracle.mean_y_x0},
            {"mean_y_x1", r.oracle.mean_y_x1},
            {"nested_nde", r.oracle.nested_nde},
            {"nested_vde", r.oracle.nested_vde},
            {"vde", r.oracle.vde()}}},
          {"replication_seeds", r.replication_seeds},
          {"points", points}};
}

std::string study_to_csv(const StudyResult& r) {
  std::string out =
      "axis,value,n,mode,quantity,oracle,replications,failures,mean_estimate,mean_relative_error,"
      "mean_abs_relative_error,variance,rmse,coverage\n";
  for (const auto& p : r.points) {
    out += p.axis + "," + fmt(p.axis_value) + "," + std::to_string(p.n) + "," + to_string(p.mode) + "," + p.quantity +
           "," + fmt(p.oracle) + "," + std::to_string(p.replications) + "," + std::to_string(p.failures) + "," +
           fmt(p.mean_estimate) + "," + fmt(p.mean_relative_error) + "," + fmt(p.mean_abs_relative_error) + "," +
           fmt(p.variance) + "," + fmt(p.rmse) + "," + fmt(p.coverage) + "\n";
  }
  return out;
}

}  // namespace pse
