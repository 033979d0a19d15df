#include "pse/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pse {

std::string to_string(EstimatorMode mode) {
  switch (mode) {
    case EstimatorMode::plugin: return "plugin";
    case EstimatorMode::ipw: return "ipw";
    case EstimatorMode::dr: return "dr";
    case EstimatorMode::sn_dr: return "sndr";
  }
  return "?";
}

EstimatorMode estimator_mode_from_string(const std::string& s) {
  if (s == "plugin") return EstimatorMode::plugin;
  if (s == "ipw") return EstimatorMode::ipw;
  if (s == "dr") return EstimatorMode::dr;
  if (s == "sndr" || s == "sn_dr" || s == "sn-dr") return EstimatorMode::sn_dr;
  throw InvalidArgument("unknown estimator mode '" + s + "' (expected plugin, ipw, dr or sndr)");
}

std::string to_string(Misspecification m) {
  switch (m) {
    case Misspecification::none: return "none";
    case Misspecification::break_mu: return "break_mu";
    case Misspecification::break_pi: return "break_pi";
    case Misspecification::break_both: return "break_both";
  }
  return "?";
}

Misspecification misspecification_from_string(const std::string& s) {
  if (s == "none") return Misspecification::none;
  if (s == "break_mu" || s == "break-mu") return Misspecification::break_mu;
  if (s == "break_pi" || s == "break-pi") return Misspecification::break_pi;
  if (s == "break_both" || s == "break-both") return Misspecification::break_both;
  throw InvalidArgument("unknown misspecification '" + s + "'");
}

std::string to_string(Term t) {
  switch (t) {
    case Term::backdoor_x0: return "backdoor_x0";
    case Term::backdoor_x1: return "backdoor_x1";
    case Term::nested_vde: return "nested_vde";
    case Term::nested_nde: return "nested_nde";
    case Term::nested_nie_star: return "nested_nie_star";
  }
  return "?";
}

bool TermRequest::wants(Term t) const {
  switch (t) {
    case Term::backdoor_x0: return backdoor_x0;
    case Term::backdoor_x1: return backdoor_x1;
    case Term::nested_vde: return nested_vde;
    case Term::nested_nde: return nested_nde;
    case Term::nested_nie_star: return nested_nie_star;
  }
  return false;
}

TermRequest terms_for(std::span<const QueryKind> effects) {
  TermRequest r;
  for (QueryKind k : effects) {
    switch (k) {
      case QueryKind::mean_yx: r.backdoor_x1 = true; break;
      case QueryKind::nested_vde: r.nested_vde = true; break;
      case QueryKind::nested_nde: r.nested_nde = true; break;
      case QueryKind::te: r.backdoor_x0 = r.backdoor_x1 = true; break;
      case QueryKind::nde: r.backdoor_x0 = r.nested_nde = true; break;
      case QueryKind::nie: r.backdoor_x1 = r.nested_nde = true; break;
      case QueryKind::nie_star: r.backdoor_x1 = r.nested_nie_star = true; break;
      case QueryKind::vde: r.backdoor_x1 = r.nested_vde = true; break;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Folds

namespace {

bool both_groups(const Cohort& c, std::span<const std::size_t> rows) {
  bool has0 = false, has1 = false;
  for (std::size_t i : rows) {
    if (c.row_weight(i) <= 0.0) continue;
    (c.x[i] ? has1 : has0) = true;
    if (has0 && has1) return true;
  }
  return false;
}

}  // namespace

FoldPlan FoldPlan::make(const Cohort& c, std::size_t folds, std::uint64_t seed) {
  const std::size_t n = c.size();
  if (folds == 0) throw InvalidArgument("number of folds must be >= 1");
  if (folds > n) throw InvalidArgument("more folds than rows");
  FoldPlan plan;
  plan.folds = folds;
  plan.fold.assign(n, 0);
  if (folds == 1) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    if (!both_groups(c, all)) throw DegenerateFoldError("cohort lacks one exposure group");
    plan.seed = seed;
    return plan;
  }
  std::vector<std::size_t> perm(n);
  for (std::size_t attempt = 0; attempt < kFoldRetries; ++attempt) {
    const std::uint64_t s = derive_seed(seed, 0x464f4c44 + attempt);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(s);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t p = 0; p < n; ++p) plan.fold[perm[p]] = static_cast<std::uint32_t>(p % folds);
    bool ok = true;
    for (std::size_t l = 0; l < folds && ok; ++l) ok = both_groups(c, plan.eval_rows(l)) && both_groups(c, plan.train_rows(l));
    if (ok) {
      plan.seed = s;
      plan.retries = attempt;
      return plan;
    }
  }
  throw DegenerateFoldError("could not draw " + std::to_string(folds) +
                            " folds with both exposure groups in every fold and complement after " +
                            std::to_string(kFoldRetries) + " attempts");
}

std::vector<std::size_t> FoldPlan::eval_rows(std::size_t l) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < fold.size(); ++i)
    if (fold[i] == l) rows.push_back(i);
  return rows;
}

std::vector<std::size_t> FoldPlan::train_rows(std::size_t l) const {
  if (folds == 1) return eval_rows(0);
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < fold.size(); ++i)
    if (fold[i] != l) rows.push_back(i);
  return rows;
}

// ---------------------------------------------------------------------------

void CrossFitOptions::validate() const {
  if (folds == 0) throw InvalidArgument("folds must be >= 1");
  validate_clip(clip);
  learner.validate();
}

CrossFitOptions inject_misspecification(CrossFitOptions options, Misspecification which) {
  const bool mu = which == Misspecification::break_mu || which == Misspecification::break_both ||
                  options.misspec == Misspecification::break_mu || options.misspec == Misspecification::break_both;
  const bool pi = which == Misspecification::break_pi || which == Misspecification::break_both ||
                  options.misspec == Misspecification::break_pi || options.misspec == Misspecification::break_both;
  options.misspec = mu && pi ? Misspecification::break_both
                    : mu     ? Misspecification::break_mu
                    : pi     ? Misspecification::break_pi
                             : Misspecification::none;
  return options;
}

NuisanceRun crossfit_nuisances(const Cohort& c, int x0, int x1, const TermRequest& terms,
                               const CrossFitOptions& options) {
  c.validate();
  options.validate();
  if ((x0 != 0 && x0 != 1) || (x1 != 0 && x1 != 1)) throw InvalidArgument("exposure levels must be 0 or 1");
  const std::size_t n = c.size();

  NuisanceRun run;
  run.x0 = x0;
  run.x1 = x1;
  run.terms = terms;
  run.options = options;
  run.plan = FoldPlan::make(c, options.folds, options.seed);
  run.x = c.x;
  run.y = c.y;
  run.weight = c.weight;

  const bool zero_mu = options.misspec == Misspecification::break_mu || options.misspec == Misspecification::break_both;
  const bool flat_pi = options.misspec == Misspecification::break_pi || options.misspec == Misspecification::break_both;
  PropensityNeeds needs;
  needs.wz = terms.nested_vde;
  needs.vwz = terms.nested_vde || terms.nested_nde;
  needs.vz = terms.nested_nie_star;

  run.p1_z.assign(n, 0.0);
  if (needs.wz) run.p1_wz.assign(n, 0.0);
  if (needs.vwz) run.p1_vwz.assign(n, 0.0);
  if (needs.vz) run.p1_vz.assign(n, 0.0);
  if (terms.backdoor_x0) run.mu_b0.assign(n, 0.0);
  if (terms.backdoor_x1) run.mu_b1.assign(n, 0.0);
  if (terms.nested_vde) run.mu3.assign(n, 0.0), run.mu2.assign(n, 0.0), run.mu1.assign(n, 0.0);
  if (terms.nested_nde) run.nde_mu2.assign(n, 0.0), run.nde_mu1.assign(n, 0.0);
  if (terms.nested_nie_star) run.star_mu2.assign(n, 0.0), run.star_mu1.assign(n, 0.0);

  const std::size_t folds = run.plan.folds;
  std::vector<ClipCounter> counters(folds);
  parallel_for(folds, [&](std::size_t l) {
    const std::vector<std::size_t> train = run.plan.train_rows(l);
    const std::vector<std::size_t> eval = run.plan.eval_rows(l);
    auto scatter = [&](std::vector<double>& dst, const std::vector<double>& src) {
      for (std::size_t r = 0; r < eval.size(); ++r) dst[eval[r]] = src[r];
    };

    const PropensitySet props = fit_propensities(c, train, needs, options.learner, options.clip, flat_pi);
    scatter(run.p1_z, props.predict(PropensityInput::z, c, eval, &counters[l]));
    if (needs.wz) scatter(run.p1_wz, props.predict(PropensityInput::wz, c, eval, &counters[l]));
    if (needs.vwz) scatter(run.p1_vwz, props.predict(PropensityInput::vwz, c, eval, &counters[l]));
    if (needs.vz) scatter(run.p1_vz, props.predict(PropensityInput::vz, c, eval, &counters[l]));

    const FeatureMatrix z_eval = block_features(c, eval, kBlockZ);
    if (terms.backdoor_x0) scatter(run.mu_b0, fit_backdoor(c, train, x0, options.learner, zero_mu)->predict(z_eval));
    if (terms.backdoor_x1) scatter(run.mu_b1, fit_backdoor(c, train, x1, options.learner, zero_mu)->predict(z_eval));
    if (terms.nested_vde) {
      const auto v = fit_nested(c, train, options.learner, x0, x1, zero_mu).evaluate(c, eval);
      scatter(run.mu3, v.mu3);
      scatter(run.mu2, v.mu2);
      scatter(run.mu1, v.mu1);
    }
    if (terms.nested_nde) {
      const auto v = fit_nde_nuisances(c, train, MediatorSet::merged_wv, options.learner, x0, x1, zero_mu)
                         .evaluate(c, eval);
      scatter(run.nde_mu2, v.mu2);
      scatter(run.nde_mu1, v.mu1);
    }
    if (terms.nested_nie_star) {
      const auto v =
          fit_nde_nuisances(c, train, MediatorSet::v_only, options.learner, x0, x1, zero_mu).evaluate(c, eval);
      scatter(run.star_mu2, v.mu2);
      scatter(run.star_mu1, v.mu1);
    }
  });
  for (const auto& k : counters) run.clips.merge(k);
  if (run.clips.evaluations > 0 && run.clips.clipped == run.clips.evaluations)
    throw PositivityError("every propensity evaluation was clipped; the weights carry no information");
  return run;
}

// ---------------------------------------------------------------------------

namespace {

struct FoldContext {
  const NuisanceRun& run;
  const std::vector<std::size_t>& rows;
  std::vector<double> w;  // row weights of the fold, empty for unit
  EstimatorMode mode;
  std::size_t fold;
  std::vector<WeightMean>* means;
  Term term;

  double mean(const std::vector<double>& v) const { return weighted_average(v, w); }

  // Records pre/post means and returns the weights actually used.
  std::vector<double> family(const std::string& name, std::vector<double> pi) const {
    WeightMean m{term, name, fold, mean(pi), 0.0};
    if (mode == EstimatorMode::sn_dr) pi = self_normalize(pi, w);
    m.post = mean(pi);
    means->push_back(m);
    return pi;
  }
};

std::vector<double> fold_functional(const FoldContext& f, Term term) {
  const NuisanceRun& r = f.run;
  const auto& rows = f.rows;
  const std::size_t m = rows.size();
  const double eps = r.options.clip;
  std::vector<double> phi(m);
  auto y = [&](std::size_t k) { return r.y[rows[k]]; };

  if (term == Term::backdoor_x0 || term == Term::backdoor_x1) {
    const int target = term == Term::backdoor_x0 ? r.x0 : r.x1;
    const auto& mu = term == Term::backdoor_x0 ? r.mu_b0 : r.mu_b1;
    std::vector<double> pi(m);
    for (std::size_t k = 0; k < m; ++k) pi[k] = backdoor_weight(r.p1_z[rows[k]], r.x[rows[k]], target, eps);
    pi = f.family("pi", std::move(pi));
    for (std::size_t k = 0; k < m; ++k) {
      const double mk = mu[rows[k]];
      switch (f.mode) {
        case EstimatorMode::plugin: phi[k] = mk; break;
        case EstimatorMode::ipw: phi[k] = pi[k] * y(k); break;
        default: phi[k] = pi[k] * (y(k) - mk) + mk; break;
      }
    }
    return phi;
  }

  if (term == Term::nested_vde) {
    std::vector<double> pi1(m), pi2(m), pi3(m);
    for (std::size_t k = 0; k < m; ++k) {
      const std::size_t i = rows[k];
      const auto p = ComponentProbs::from_p1(r.p1_z[i], r.p1_wz[i], r.p1_vwz[i], r.x0, r.x1);
      const PiWeights w = pi_weights(p, r.x[i], r.x0, r.x1, eps);
      pi1[k] = w.pi1;
      pi2[k] = w.pi2;
      pi3[k] = w.pi3;
    }
    pi1 = f.family("pi1", std::move(pi1));
    pi2 = f.family("pi2", std::move(pi2));
    pi3 = f.family("pi3", std::move(pi3));
    for (std::size_t k = 0; k < m; ++k) {
      const std::size_t i = rows[k];
      const double m3 = r.mu3[i], m2 = r.mu2[i], m1 = r.mu1[i];
      switch (f.mode) {
        case EstimatorMode::plugin: phi[k] = m1; break;
        case EstimatorMode::ipw: phi[k] = pi3[k] * y(k); break;
        default: phi[k] = pi3[k] * (y(k) - m3) + pi2[k] * (m3 - m2) + pi1[k] * (m2 - m1) + m1; break;
      }
    }
    return phi;
  }

  const bool star = term == Term::nested_nie_star;
  const auto& p1_mz = star ? r.p1_vz : r.p1_vwz;
  const auto& mu2 = star ? r.star_mu2 : r.nde_mu2;
  const auto& mu1 = star ? r.star_mu1 : r.nde_mu1;
  std::vector<double> pi1(m), pi2(m);
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t i = rows[k];
    const TwoStageWeights w = two_stage_weights(r.p1_z[i], p1_mz[i], r.x[i], r.x0, r.x1, eps);
    pi1[k] = w.pi1;
    pi2[k] = w.pi2;
  }
  pi1 = f.family("pi1", std::move(pi1));
  pi2 = f.family("pi2", std::move(pi2));
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t i = rows[k];
    switch (f.mode) {
      case EstimatorMode::plugin: phi[k] = mu1[i]; break;
      case EstimatorMode::ipw: phi[k] = pi2[k] * y(k); break;
      default: phi[k] = pi2[k] * (y(k) - mu2[i]) + pi1[k] * (mu2[i] - mu1[i]) + mu1[i]; break;
    }
  }
  return phi;
}

}  // namespace

TermSet assemble_terms(const NuisanceRun& run, EstimatorMode mode) {
  TermSet out;
  out.mode = mode;
  const std::size_t n = run.size();
  const std::size_t folds = run.plan.folds;
  double total_w = 0.0;
  for (std::size_t i = 0; i < n; ++i) total_w += run.row_weight(i);

  std::vector<std::vector<std::size_t>> fold_rows(folds);
  for (std::size_t l = 0; l < folds; ++l) fold_rows[l] = run.plan.eval_rows(l);

  for (Term term : {Term::backdoor_x0, Term::backdoor_x1, Term::nested_vde, Term::nested_nde, Term::nested_nie_star}) {
    if (!run.terms.wants(term)) continue;
    TermEstimate est;
    est.contributions.assign(n, 0.0);
    for (std::size_t l = 0; l < folds; ++l) {
      const auto& rows = fold_rows[l];
      std::vector<double> w;
      if (!run.weight.empty())
        for (std::size_t i : rows) w.push_back(run.weight[i]);
      FoldContext ctx{run, rows, w, mode, l, &out.weight_means, term};
      const std::vector<double> phi = fold_functional(ctx, term);
      const double fold_value = weighted_average(phi, w);
      est.fold_values.push_back(fold_value);
      double fold_w = 0.0;
      for (std::size_t i : rows) fold_w += run.row_weight(i);
      const double scale = total_w / (static_cast<double>(folds) * fold_w);
      for (std::size_t k = 0; k < rows.size(); ++k) est.contributions[rows[k]] = phi[k] * scale;
    }
    double s = 0.0;
    for (double v : est.fold_values) s += v;
    est.value = s / static_cast<double>(folds);
    out.terms.emplace(term, std::move(est));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void spread(EffectEstimate& e) {
  const std::size_t n = e.contributions.size();
  if (n < 2) return;
  double W = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) W += e.row_weight.empty() ? 1.0 : e.row_weight[i];
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += (e.row_weight.empty() ? 1.0 : e.row_weight[i]) * e.contributions[i];
  mean /= W;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = e.row_weight.empty() ? 1.0 : e.row_weight[i];
    const double d = e.contributions[i] - mean;
    sq += w * w * d * d;
  }
  const double dn = static_cast<double>(n);
  e.std_error = std::sqrt(sq) / W * std::sqrt(dn / (dn - 1.0));
  e.rho = e.std_error * std::sqrt(dn);
}

}  // namespace

std::vector<EffectEstimate> effects_from_run(const NuisanceRun& run, const TermSet& set,
                                             std::span<const QueryKind> effects) {
  auto term = [&](Term t) -> const TermEstimate& {
    const auto it = set.terms.find(t);
    if (it == set.terms.end()) throw InvalidArgument("term " + to_string(t) + " was not computed in this run");
    return it->second;
  };
  std::vector<EffectEstimate> out;
  for (QueryKind kind : effects) {
    EffectEstimate e;
    e.effect = kind;
    e.x0 = run.x0;
    e.x1 = run.x1;
    e.mode = set.mode;
    e.options = run.options;
    e.options.seed = run.options.seed;
    e.n = run.size();
    e.clips = run.clips;
    e.positivity_warning = run.clips.fraction() > 0.05;
    e.fold_retries = run.plan.retries;
    e.weight_means = set.weight_means;
    e.row_weight = run.weight;
    for (const auto& [t, est] : set.terms) e.terms[to_string(t)] = est.value;

    auto single = [&](Term t) {
      const auto& a = term(t);
      e.estimate = a.value;
      e.contributions = a.contributions;
    };
    auto diff = [&](Term plus, Term minus) {
      const auto& a = term(plus);
      const auto& b = term(minus);
      e.estimate = a.value - b.value;
      e.contributions.resize(a.contributions.size());
      for (std::size_t i = 0; i < a.contributions.size(); ++i)
        e.contributions[i] = a.contributions[i] - b.contributions[i];
    };
    switch (kind) {
      case QueryKind::mean_yx: single(Term::backdoor_x1); break;
      case QueryKind::nested_vde: single(Term::nested_vde); break;
      case QueryKind::nested_nde: single(Term::nested_nde); break;
      case QueryKind::te: diff(Term::backdoor_x1, Term::backdoor_x0); break;
      case QueryKind::nde: diff(Term::nested_nde, Term::backdoor_x0); break;
      case QueryKind::nie: diff(Term::backdoor_x1, Term::nested_nde); break;
      case QueryKind::nie_star:
        diff(Term::backdoor_x1, Term::nested_nie_star);
        e.mediators = MediatorSet::v_only;
        break;
      case QueryKind::vde: diff(Term::backdoor_x1, Term::nested_vde); break;
    }
    spread(e);
    e.ci = Interval{e.estimate, e.estimate, "none", 0.95};
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<EffectEstimate> estimate_effects(const Cohort& c, std::span<const QueryKind> effects, int x0, int x1,
                                             EstimatorMode mode, const CrossFitOptions& options) {
  if (effects.empty()) throw InvalidArgument("no effects requested");
  const NuisanceRun run = crossfit_nuisances(c, x0, x1, terms_for(effects), options);
  return effects_from_run(run, assemble_terms(run, mode), effects);
}

EffectEstimate estimate_effect(const Cohort& c, QueryKind effect, int x0, int x1, EstimatorMode mode,
                               const CrossFitOptions& options) {
  const QueryKind one[] = {effect};
  return estimate_effects(c, one, x0, x1, mode, options).front();
}

EffectEstimate crossfit_backdoor_mean(const Cohort& c, int x, EstimatorMode mode, const CrossFitOptions& options) {
  return estimate_effect(c, QueryKind::mean_yx, 1 - x, x, mode, options);
}

EffectEstimate crossfit_nested_vde(const Cohort& c, int x0, int x1, EstimatorMode mode,
                                   const CrossFitOptions& options) {
  return estimate_effect(c, QueryKind::nested_vde, x0, x1, mode, options);
}

EffectEstimate crossfit_nested_nde(const Cohort& c, MediatorSet mediators, int x0, int x1, EstimatorMode mode,
                                   const CrossFitOptions& options) {
  if (mediators == MediatorSet::merged_wv) return estimate_effect(c, QueryKind::nested_nde, x0, x1, mode, options);
  TermRequest req;
  req.nested_nie_star = true;
  const NuisanceRun run = crossfit_nuisances(c, x0, x1, req, options);
  const TermSet set = assemble_terms(run, mode);
  const auto& t = set.terms.at(Term::nested_nie_star);
  // Reuse the assembly path through a single-term view.
  const QueryKind kinds[] = {QueryKind::nested_nde};
  TermSet view = set;
  view.terms.emplace(Term::nested_nde, t);
  EffectEstimate e = effects_from_run(run, view, kinds).front();
  e.mediators = MediatorSet::v_only;
  e.terms.erase(to_string(Term::nested_nde));
  return e;
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const CrossFitOptions& o) {
  return {{"folds", o.folds},
          {"clip", o.clip},
          {"seed", o.seed},
          {"misspecification", to_string(o.misspec)},
          {"learner", to_json(o.learner)}};
}

nlohmann::json to_json(const EffectEstimate& e) {
  nlohmann::json means = nlohmann::json::array();
  for (const auto& m : e.weight_means)
    means.push_back({{"term", to_string(m.term)}, {"family", m.family}, {"fold", m.fold}, {"pre", m.pre}, {"post", m.post}});
  nlohmann::json j = {
      {"effect", to_string(e.effect)},
      {"x0", e.x0},
      {"x1", e.x1},
      {"estimate", e.estimate},
      {"ci", {{"lower", e.ci.lower}, {"upper", e.ci.upper}, {"method", e.ci.method}, {"level", e.ci.level}}},
      {"mode", to_string(e.mode)},
      {"folds", e.options.folds},
      {"clip", e.options.clip},
      {"seed", e.options.seed},
      {"misspecification", to_string(e.options.misspec)},
      {"learner", to_json(e.options.learner)},
      {"n", e.n},
      {"std_error", e.std_error},
      {"rho", e.rho},
      {"terms", e.terms},
      {"diagnostics",
       {{"weight_means", means},
        {"clip_evaluations", e.clips.evaluations},
        {"clipped", e.clips.clipped},
        {"clipped_fraction", e.clips.fraction()},
        {"positivity_warning", e.positivity_warning},
        {"fold_retries", e.fold_retries},
        {"bootstrap_draws", e.bootstrap_draws},
        {"bootstrap_redraws", e.bootstrap_redraws}}},
  };
  if (e.effect == QueryKind::nested_nde || e.effect == QueryKind::nie_star)
    j["mediators"] = e.mediators == MediatorSet::v_only ? "v" : "wv";
  return j;
}

}  // namespace pse
