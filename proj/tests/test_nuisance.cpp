#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "pse/nuisance.hpp"
#include "pse/oracle.hpp"
#include "pse/scm.hpp"

using namespace pse;

namespace {

std::vector<std::size_t> all_rows(const Cohort& c) {
  std::vector<std::size_t> r(c.size());
  std::iota(r.begin(), r.end(), 0);
  return r;
}

LearnerConfig frequency() {
  LearnerConfig c;
  c.kind = LearnerKind::frequency;
  return c;
}

}  // namespace

TEST_CASE("Bayes-form weights") {
  ComponentProbs p;
  p.x1_z = 0.5;
  p.x0_z = 0.5;
  p.x0_vwz = 0.4;
  p.x1_vwz = 0.6;
  p.x1_wz = 0.6;
  p.x0_wz = 0.5;
  const PiWeights exposed = pi_weights(p, 1, 0, 1, kDefaultClip);
  CHECK(exposed.pi3 == doctest::Approx(1.6));
  CHECK(exposed.pi1 == doctest::Approx(2.0));
  CHECK(exposed.pi2 == 0.0);

  const PiWeights reference = pi_weights(p, 0, 0, 1, kDefaultClip);
  CHECK(reference.pi1 == 0.0);
  CHECK(reference.pi3 == 0.0);
  CHECK(reference.pi2 == doctest::Approx(0.6 / (0.5 * 0.5)));
}

TEST_CASE("component probabilities are clipped before forming ratios") {
  ClipCounter counter;
  const ComponentProbs p = ComponentProbs::from_p1(1.0, 0.0, 0.5, 0, 1);
  const PiWeights w = pi_weights(p, 1, 0, 1, 0.01, &counter);
  CHECK(std::isfinite(w.pi3));
  CHECK(w.pi1 == doctest::Approx(1.0 / 0.99));
  CHECK(counter.clipped > 0);
  CHECK(counter.evaluations >= counter.clipped);

  // Near-maximal clipping flattens every factor to about 1/2.
  const double eps = 0.5 - 1e-6;
  const PiWeights flat = pi_weights(ComponentProbs::from_p1(0.9, 0.1, 0.8, 0, 1), 1, 0, 1, eps);
  CHECK(flat.pi1 == doctest::Approx(2.0).epsilon(1e-5));
  CHECK(flat.pi3 == doctest::Approx(2.0).epsilon(1e-5));

  CHECK(clip_probability(0.3, 0.1) == 0.3);
  CHECK(clip_probability(-1.0, 0.1) == 0.1);
  CHECK(clip_probability(2.0, 0.1) == 0.9);
  CHECK_THROWS_AS(validate_clip(0.0), InvalidArgument);
  CHECK_THROWS_AS(validate_clip(0.5), InvalidArgument);
}

TEST_CASE("two-stage and backdoor weights") {
  const TwoStageWeights t = two_stage_weights(0.25, 0.6, 1, 0, 1, kDefaultClip);
  CHECK(t.pi2 == doctest::Approx(0.4 / (0.6 * 0.75)));
  CHECK(t.pi1 == 0.0);
  CHECK(two_stage_weights(0.25, 0.6, 0, 0, 1, kDefaultClip).pi1 == doctest::Approx(1.0 / 0.75));
  CHECK(backdoor_weight(0.25, 1, 1, kDefaultClip) == doctest::Approx(4.0));
  CHECK(backdoor_weight(0.25, 0, 1, kDefaultClip) == 0.0);
}

TEST_CASE("self-normalization") {
  const auto out = self_normalize(std::vector<double>{0.5, 1.5, 2.0});
  CHECK(out[0] == doctest::Approx(0.375));
  CHECK(out[1] == doctest::Approx(1.125));
  CHECK(out[2] == doctest::Approx(1.5));
  const std::vector<double> unit = {0.5, 1.5, 1.0};
  CHECK(self_normalize(unit) == unit);
  CHECK_THROWS_AS(self_normalize(std::vector<double>{0.0, 0.0}), InvalidArgument);
  // Row weights enter the mean: (1·1 + 3·2) / 3 = 7/3.
  const auto rw = self_normalize(std::vector<double>{1.0, 3.0}, std::vector<double>{1.0, 2.0});
  CHECK(rw[0] == doctest::Approx(3.0 / 7.0));
  CHECK(weighted_average(rw, std::vector<double>{1.0, 2.0}) == doctest::Approx(1.0));
}

TEST_CASE("feature blocks keep Z, W, V order") {
  Cohort c;
  c.dim_z = 1;
  c.dim_w = 2;
  c.dim_v = 1;
  c.z = {1, 10};
  c.w = {2, 3, 20, 30};
  c.v = {4, 40};
  c.x = {0, 1};
  c.y = {0, 1};
  const std::vector<std::size_t> rows = {1};
  const FeatureMatrix f = block_features(c, rows, kBlockZ | kBlockW | kBlockV);
  CHECK(f.cols() == 4);
  CHECK(f(0, 0) == 10);
  CHECK(f(0, 1) == 20);
  CHECK(f(0, 2) == 30);
  CHECK(f(0, 3) == 40);
  const FeatureMatrix v = block_features(c, rows, kBlockZ | kBlockV);
  CHECK(v(0, 1) == 40);
}

TEST_CASE("constant outcomes propagate through nested regressions") {
  Cohort c = sample(binary_scm(), 2000, 4);
  for (auto& y : c.y) y = 0.75;
  const auto rows = all_rows(c);
  for (LearnerKind k : {LearnerKind::ridge, LearnerKind::stumps, LearnerKind::frequency}) {
    LearnerConfig cfg;
    cfg.kind = k;
    const auto v = fit_nested(c, rows, cfg, 0, 1).evaluate(c, rows);
    for (const auto* stage : {&v.mu1, &v.mu2, &v.mu3})
      for (double m : *stage) CHECK(m == doctest::Approx(0.75).epsilon(1e-12));
  }
}

TEST_CASE("exact nuisances reproduce the identification formula") {
  const ScmSpec s = discrete_reference_scm();
  const DiscreteJoint joint = enumerate_joint(s);
  const Cohort c = joint.to_cohort(s.dim_z, s.dim_w, s.dim_v);
  const IdentifiedTerms t = idformula_eval(joint, 0, 1);
  const auto rows = all_rows(c);

  const auto nested = fit_nested(c, rows, frequency(), 0, 1).evaluate(c, rows);
  CHECK(std::abs(weighted_average(nested.mu1, c.weight) - t.nested_vde) < 1e-10);

  const auto merged = fit_nde_nuisances(c, rows, MediatorSet::merged_wv, frequency(), 0, 1).evaluate(c, rows);
  CHECK(std::abs(weighted_average(merged.mu1, c.weight) - t.nested_nde) < 1e-10);

  const auto v_only = fit_nde_nuisances(c, rows, MediatorSet::v_only, frequency(), 0, 1).evaluate(c, rows);
  CHECK(std::abs(weighted_average(v_only.mu1, c.weight) - t.nested_nie_star) < 1e-10);

  EffectQuery q;
  q.kind = QueryKind::nested_nde;
  CHECK(std::abs(t.nested_nde - enumerate_exact(s, q)) < 1e-10);
}

TEST_CASE("nested fits need both exposure groups") {
  Cohort c = sample(binary_scm(), 500, 1);
  const std::vector<std::size_t> treated = exposure_rows(c, std::vector<std::size_t>(all_rows(c)), 1);
  CHECK_THROWS_AS(fit_nested(c, treated, LearnerConfig{}, 0, 1), InvalidArgument);
}

TEST_CASE("constant propensities equal the training marginal") {
  const Cohort c = sample(binary_scm(), 1000, 2);
  const auto rows = all_rows(c);
  const PropensitySet p = fit_propensities(c, rows, {true, true, false}, LearnerConfig{}, kDefaultClip, true);
  const double rate = static_cast<double>(c.count_exposure(1)) / c.size();
  for (double v : p.predict(PropensityInput::vwz, c, rows)) CHECK(v == doctest::Approx(rate));
}
