#pragma once

// Cross-fitted effect estimators.
//
// One cross-fitting pass (crossfit_nuisances) stores every out-of-fold nuisance
// prediction per row; assemble_terms then turns them into per-row functionals
// for a given mode. Splitting the two lets dr and sn_dr share one set of fits,
// and lets every effect of a call share its terms, so TE = NDE + NIE holds up
// to rounding.
//
// Per-row functionals, with all weights in Bayes form (see nuisance.hpp):
//   backdoor mean  1[X=x]/p(x|Z) (Y - mu(Z)) + mu(Z)
//   nested VDE     pi3 (Y - mu3) + pi2 (mu3 - mu2) + pi1 (mu2 - mu1) + mu1
//   nested NDE     pi2 (Y - mu2) + pi1 (mu2 - mu1) + mu1
// plugin keeps only the final regression, ipw keeps only the outermost weight
// times Y, sn_dr divides each weight family by its mean in the evaluation fold.
//
// The term estimate is the average of fold means. Each row's contribution is
// its functional scaled by W / (L W_fold) (W = total row weight), so the plain
// weighted mean of contributions equals the estimate and their spread drives
// the analytic interval.

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pse/cohort.hpp"
#include "pse/learners.hpp"
#include "pse/nuisance.hpp"
#include "pse/oracle.hpp"

namespace pse {

enum class EstimatorMode { plugin, ipw, dr, sn_dr };
std::string to_string(EstimatorMode mode);
EstimatorMode estimator_mode_from_string(const std::string& s);  // accepts "sndr" and "sn_dr"

enum class Misspecification { none, break_mu, break_pi, break_both };
std::string to_string(Misspecification m);
Misspecification misspecification_from_string(const std::string& s);

inline constexpr std::size_t kDefaultFolds = 5;
inline constexpr std::size_t kFoldRetries = 10;

struct FoldPlan {
  std::size_t folds = 0;
  std::vector<std::uint32_t> fold;  // per row
  std::uint64_t seed = 0;           // seed that produced the accepted assignment
  std::size_t retries = 0;

  // Random partition into `folds` groups whose sizes differ by at most one.
  // Every evaluation fold and every training complement must contain both
  // exposure values with positive weight; otherwise the assignment is redrawn
  // with a shifted seed, up to kFoldRetries attempts, then DegenerateFoldError.
  // folds = 1 means no split: training and evaluation both use every row
  // (for exact-nuisance checks only).
  static FoldPlan make(const Cohort& c, std::size_t folds, std::uint64_t seed);

  std::vector<std::size_t> eval_rows(std::size_t l) const;
  std::vector<std::size_t> train_rows(std::size_t l) const;
};

struct CrossFitOptions {
  std::size_t folds = kDefaultFolds;
  double clip = kDefaultClip;
  LearnerConfig learner;
  std::uint64_t seed = 0;
  Misspecification misspec = Misspecification::none;

  void validate() const;
};

// Adds one-sided (or two-sided) misspecification to the options.
CrossFitOptions inject_misspecification(CrossFitOptions options, Misspecification which);

enum class Term { backdoor_x0, backdoor_x1, nested_vde, nested_nde, nested_nie_star };
std::string to_string(Term t);

struct TermRequest {
  bool backdoor_x0 = false;
  bool backdoor_x1 = false;
  bool nested_vde = false;
  bool nested_nde = false;
  bool nested_nie_star = false;

  bool wants(Term t) const;
};

TermRequest terms_for(std::span<const QueryKind> effects);

// Out-of-fold nuisance predictions, one entry per cohort row. Propensities are
// clipped P(X = 1 | ·).
struct NuisanceRun {
  int x0 = 0;
  int x1 = 1;
  TermRequest terms;
  CrossFitOptions options;
  FoldPlan plan;
  std::vector<std::uint8_t> x;
  std::vector<double> y;
  std::vector<double> weight;  // empty for unit weights

  std::vector<double> p1_z, p1_wz, p1_vwz, p1_vz;
  std::vector<double> mu_b0, mu_b1;
  std::vector<double> mu3, mu2, mu1;
  std::vector<double> nde_mu2, nde_mu1;
  std::vector<double> star_mu2, star_mu1;
  ClipCounter clips;

  std::size_t size() const { return y.size(); }
  double row_weight(std::size_t i) const { return weight.empty() ? 1.0 : weight[i]; }
};

NuisanceRun crossfit_nuisances(const Cohort& c, int x0, int x1, const TermRequest& terms,
                               const CrossFitOptions& options);

struct WeightMean {
  Term term = Term::nested_vde;
  std::string family;  // "pi1", "pi2", "pi3"
  std::size_t fold = 0;
  double pre = 0.0;
  double post = 0.0;
};

struct TermEstimate {
  double value = 0.0;
  std::vector<double> fold_values;
  std::vector<double> contributions;
};

struct TermSet {
  EstimatorMode mode = EstimatorMode::dr;
  std::map<Term, TermEstimate> terms;
  std::vector<WeightMean> weight_means;
};

TermSet assemble_terms(const NuisanceRun& run, EstimatorMode mode);

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
  std::string method = "none";  // none | analytic | bootstrap
  double level = 0.95;
};

struct EffectEstimate {
  QueryKind effect = QueryKind::vde;
  MediatorSet mediators = MediatorSet::merged_wv;  // nested_nde only
  int x0 = 0;
  int x1 = 1;
  double estimate = 0.0;
  Interval ci;
  EstimatorMode mode = EstimatorMode::dr;
  CrossFitOptions options;
  std::size_t n = 0;
  double std_error = 0.0;  // influence-contribution standard error
  double rho = 0.0;        // standard deviation of contributions
  std::map<std::string, double> terms;
  std::vector<WeightMean> weight_means;
  ClipCounter clips;
  bool positivity_warning = false;  // clipped fraction above 5%
  std::size_t fold_retries = 0;
  std::size_t bootstrap_draws = 0;
  std::size_t bootstrap_redraws = 0;
  std::vector<double> contributions;  // per row, not serialized
  std::vector<double> row_weight;     // empty for unit weights, not serialized
};

nlohmann::json to_json(const EffectEstimate& e);
nlohmann::json to_json(const CrossFitOptions& o);

// Effects (or bare terms: mean_yx, nested_vde, nested_nde) from one run.
std::vector<EffectEstimate> effects_from_run(const NuisanceRun& run, const TermSet& terms,
                                             std::span<const QueryKind> effects);

std::vector<EffectEstimate> estimate_effects(const Cohort& c, std::span<const QueryKind> effects, int x0, int x1,
                                             EstimatorMode mode, const CrossFitOptions& options);
EffectEstimate estimate_effect(const Cohort& c, QueryKind effect, int x0, int x1, EstimatorMode mode,
                               const CrossFitOptions& options);

EffectEstimate crossfit_backdoor_mean(const Cohort& c, int x, EstimatorMode mode, const CrossFitOptions& options);
EffectEstimate crossfit_nested_vde(const Cohort& c, int x0, int x1, EstimatorMode mode,
                                   const CrossFitOptions& options);
EffectEstimate crossfit_nested_nde(const Cohort& c, MediatorSet mediators, int x0, int x1, EstimatorMode mode,
                                   const CrossFitOptions& options);

}  // namespace pse
