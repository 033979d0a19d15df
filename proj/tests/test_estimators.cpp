#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "pse/estimators.hpp"
#include "pse/inference.hpp"
#include "pse/oracle.hpp"
#include "pse/scm.hpp"

using namespace pse;

namespace {

const EstimatorMode kModes[] = {EstimatorMode::plugin, EstimatorMode::ipw, EstimatorMode::dr, EstimatorMode::sn_dr};

CrossFitOptions exact_options() {
  CrossFitOptions o;
  o.folds = 1;
  o.learner.kind = LearnerKind::frequency;
  return o;
}

struct Reference {
  ScmSpec spec = discrete_reference_scm();
  DiscreteJoint joint = enumerate_joint(spec);
  Cohort cohort = joint.to_cohort(spec.dim_z, spec.dim_w, spec.dim_v);
  IdentifiedTerms terms = idformula_eval(joint, 0, 1);
};

double weighted_mean(const std::vector<double>& v, const std::vector<double>& w) {
  double s = 0.0, sw = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double wi = w.empty() ? 1.0 : w[i];
    s += wi * v[i];
    sw += wi;
  }
  return s / sw;
}

}  // namespace

TEST_CASE("all parametrizations agree with exact nuisances") {
  const Reference r;
  for (EstimatorMode m : kModes) {
    CAPTURE(to_string(m));
    CHECK(std::abs(crossfit_nested_vde(r.cohort, 0, 1, m, exact_options()).estimate - r.terms.nested_vde) < 1e-10);
    CHECK(std::abs(crossfit_nested_nde(r.cohort, MediatorSet::merged_wv, 0, 1, m, exact_options()).estimate -
                   r.terms.nested_nde) < 1e-10);
    CHECK(std::abs(crossfit_nested_nde(r.cohort, MediatorSet::v_only, 0, 1, m, exact_options()).estimate -
                   r.terms.nested_nie_star) < 1e-10);
    CHECK(std::abs(crossfit_backdoor_mean(r.cohort, 1, m, exact_options()).estimate - r.terms.backdoor_x1) < 1e-10);
    CHECK(std::abs(crossfit_backdoor_mean(r.cohort, 0, m, exact_options()).estimate - r.terms.backdoor_x0) < 1e-10);
  }
  EffectQuery q;
  q.kind = QueryKind::vde;
  CHECK(std::abs(estimate_effect(r.cohort, QueryKind::vde, 0, 1, EstimatorMode::dr, exact_options()).estimate -
                 enumerate_exact(r.spec, q)) < 1e-10);
}

TEST_CASE("exact weights have unit means") {
  const Reference r;
  const EffectEstimate e = estimate_effect(r.cohort, QueryKind::vde, 0, 1, EstimatorMode::dr, exact_options());
  REQUIRE_FALSE(e.weight_means.empty());
  for (const auto& m : e.weight_means) CHECK(std::abs(m.pre - 1.0) < 1e-10);
}

TEST_CASE("self-normalized weights average to one in every fold") {
  const Cohort c = sample(binary_scm(), 1000, 3);
  const QueryKind effects[] = {QueryKind::vde, QueryKind::nde, QueryKind::nie_star};
  for (const auto& e : estimate_effects(c, effects, 0, 1, EstimatorMode::sn_dr, CrossFitOptions{})) {
    CHECK(e.weight_means.size() >= 5);
    for (const auto& m : e.weight_means) CHECK(std::abs(m.post - 1.0) < 1e-12);
  }
}

TEST_CASE("total effect splits into direct and indirect parts") {
  const QueryKind effects[] = {QueryKind::te, QueryKind::nde, QueryKind::nie};
  for (const ScmSpec& spec : {binary_scm(), linear_scm(3, 10, 3, 201)}) {
    for (std::uint64_t seed : {1u, 2u}) {
      const Cohort c = sample(spec, 1500, seed);
      CrossFitOptions o;
      o.seed = seed;
      if (spec.kind == MechanismKind::linear_gaussian) o.learner.kind = LearnerKind::ridge;
      for (EstimatorMode m : kModes) {
        const auto es = estimate_effects(c, effects, 0, 1, m, o);
        CHECK(std::abs(es[0].estimate - (es[1].estimate + es[2].estimate)) <= 1e-12);
      }
    }
  }
}

TEST_CASE("contributions average to the estimate") {
  const Cohort c = sample(binary_scm(), 1200, 8);
  for (EstimatorMode m : kModes) {
    const EffectEstimate e = estimate_effect(c, QueryKind::vde, 0, 1, m, CrossFitOptions{});
    REQUIRE(e.contributions.size() == c.size());
    CHECK(std::abs(weighted_mean(e.contributions, e.row_weight) - e.estimate) < 1e-12);
  }
}

TEST_CASE("identical interventions give a null VDE") {
  const Cohort c = sample(binary_scm(), 4000, 5);
  for (int x : {0, 1}) {
    const EffectEstimate e = analytic_ci(c, QueryKind::vde, x, x, EstimatorMode::dr, CrossFitOptions{}, 0.95);
    CHECK(e.ci.lower <= 0.0);
    CHECK(e.ci.upper >= 0.0);
  }
}

TEST_CASE("fold plans are balanced, seeded and non-degenerate") {
  const Cohort c = sample(binary_scm(), 1003, 1);
  const FoldPlan a = FoldPlan::make(c, 5, 42);
  const FoldPlan b = FoldPlan::make(c, 5, 42);
  CHECK(a.fold == b.fold);
  std::vector<std::size_t> sizes(5, 0);
  for (auto f : a.fold) ++sizes[f];
  CHECK(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()) <= 1);
  for (std::size_t l = 0; l < 5; ++l) {
    std::set<int> seen;
    for (auto i : a.eval_rows(l)) seen.insert(c.x[i]);
    CHECK(seen.size() == 2);
    CHECK(a.eval_rows(l).size() + a.train_rows(l).size() == c.size());
  }

  Cohort rare = sample(binary_scm(), 200, 2);
  std::fill(rare.x.begin(), rare.x.end(), 0);
  rare.x[7] = 1;
  CHECK_THROWS_AS(FoldPlan::make(rare, 5, 1), DegenerateFoldError);
}

TEST_CASE("deterministic exposure exhausts positivity") {
  // X copies Z, so exact propensities are 0 or 1 everywhere.
  Cohort c = sample(binary_scm(), 2000, 3);
  for (std::size_t i = 0; i < c.size(); ++i) c.x[i] = c.z[i] > 0.5;
  CrossFitOptions o;
  o.learner.kind = LearnerKind::frequency;
  CHECK_THROWS_AS(estimate_effect(c, QueryKind::vde, 0, 1, EstimatorMode::dr, o), PositivityError);
}

TEST_CASE("estimates are reproducible from their options") {
  const Cohort c = sample(linear_scm(3, 10, 3, 201), 1500, 9);
  CrossFitOptions o;
  o.learner.kind = LearnerKind::ridge;
  o.seed = 77;
  const auto a = estimate_effect(c, QueryKind::vde, 0, 1, EstimatorMode::sn_dr, o);
  const auto b = estimate_effect(c, QueryKind::vde, 0, 1, EstimatorMode::sn_dr, o);
  CHECK(a.estimate == b.estimate);
  CHECK(to_json(a) == to_json(b));
  o.seed = 78;
  CHECK(estimate_effect(c, QueryKind::vde, 0, 1, EstimatorMode::sn_dr, o).estimate != a.estimate);
}

TEST_CASE("misspecification leaves the weights or the regressions intact") {
  const Cohort c = sample(linear_scm(3, 10, 3, 201), 4000, 1);
  CrossFitOptions o;
  o.learner.kind = LearnerKind::ridge;
  const auto both = estimate_effect(c, QueryKind::nested_vde, 0, 1, EstimatorMode::dr,
                                    inject_misspecification(o, Misspecification::break_both));
  const auto plugin_broken = estimate_effect(c, QueryKind::nested_vde, 0, 1, EstimatorMode::plugin,
                                             inject_misspecification(o, Misspecification::break_mu));
  CHECK(plugin_broken.estimate == 0.0);
  CHECK(std::isfinite(both.estimate));
  CHECK(inject_misspecification(inject_misspecification(o, Misspecification::break_mu), Misspecification::break_pi)
            .misspec == Misspecification::break_both);
}

TEST_CASE("mode and option parsing") {
  CHECK(estimator_mode_from_string("sndr") == EstimatorMode::sn_dr);
  CHECK(estimator_mode_from_string("sn_dr") == EstimatorMode::sn_dr);
  CHECK_THROWS_AS(estimator_mode_from_string("tmle"), InvalidArgument);
  CrossFitOptions o;
  o.clip = 0.6;
  CHECK_THROWS_AS(o.validate(), InvalidArgument);
}
