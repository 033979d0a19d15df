#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "pse/learners.hpp"

using namespace pse;

namespace {

// Small weighted design shared by the frozen-value checks. Reference values
// were computed with numpy (ridge normal equations on the standardized design)
// and scipy BFGS (penalized logistic likelihood).
const FeatureMatrix kX(8, 2, {0.5, 1.2, 1.5, -0.3, -0.7, 0.8, 2.1, 0.1, 0.0, -1.1, 1.1, 2.0, -1.4, 0.4, 0.9, -0.6});
const std::vector<double> kY = {1.3, 2.9, -0.4, 3.8, 0.2, 3.1, -1.0, 1.7};
const std::vector<double> kW = {1, 2, 1, 0.5, 1, 1.5, 1, 0.5};
const std::vector<std::uint8_t> kLabels = {1, 1, 0, 1, 0, 0, 0, 1};

FeatureMatrix gaussian_design(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  FeatureMatrix x(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) x(i, j) = nd(rng);
  return x;
}

double mse(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / a.size();
}

}  // namespace

TEST_CASE("ridge matches the reference solution") {
  const RidgeRegressor m = RidgeRegressor::fit(kX, kY, kW, 0.7);
  CHECK(m.coefficients()[0] == doctest::Approx(1.3827666872815116).epsilon(1e-12));
  CHECK(m.coefficients()[1] == doctest::Approx(0.28892653001810675).epsilon(1e-12));
  CHECK(m.intercept() == doctest::Approx(0.7072488287419592).epsilon(1e-12));
}

TEST_CASE("ridge recovers an exact line and constant targets") {
  FeatureMatrix x(50, 1);
  std::vector<double> y(50);
  for (std::size_t i = 0; i < 50; ++i) {
    x(i, 0) = 0.1 * static_cast<double>(i) - 2.0;
    y[i] = 2.0 * x(i, 0);
  }
  const RidgeRegressor line = RidgeRegressor::fit(x, y, {}, 1e-12);
  CHECK(std::abs(line.coefficients()[0] - 2.0) < 1e-8);
  CHECK(std::abs(line.intercept()) < 1e-8);

  const std::vector<double> c(50, 3.25);
  const auto pred = RidgeRegressor::fit(gaussian_design(50, 3, 1), c, {}, 0.1).predict(gaussian_design(20, 3, 2));
  for (double p : pred) CHECK(std::abs(p - 3.25) < 1e-12);
}

TEST_CASE("ridge without penalty reports a singular design") {
  FeatureMatrix x(20, 2);
  std::vector<double> y(20);
  for (std::size_t i = 0; i < 20; ++i) {
    x(i, 0) = static_cast<double>(i);
    x(i, 1) = 2.0 * static_cast<double>(i) + 1.0;
    y[i] = static_cast<double>(i % 3);
  }
  CHECK_THROWS_AS(RidgeRegressor::fit(x, y, {}, 0.0), RankError);
  CHECK_NOTHROW(RidgeRegressor::fit(x, y, {}, 0.1));
}

TEST_CASE("ridge ignores constant columns") {
  FeatureMatrix x = gaussian_design(40, 2, 3);
  for (std::size_t i = 0; i < 40; ++i) x(i, 1) = 5.0;
  std::vector<double> y(40);
  for (std::size_t i = 0; i < 40; ++i) y[i] = x(i, 0);
  const RidgeRegressor m = RidgeRegressor::fit(x, y, {}, 0.0);
  CHECK(m.coefficients()[1] == 0.0);
  CHECK(std::abs(m.coefficients()[0] - 1.0) < 1e-10);
}

TEST_CASE("logistic matches the reference solution") {
  const LogisticClassifier m = LogisticClassifier::fit(kX, kLabels, kW, 0.5, 100, 1e-12);
  CHECK(m.converged());
  CHECK(m.coefficients()[0] == doctest::Approx(1.247172108599674).epsilon(1e-6));
  CHECK(m.coefficients()[1] == doctest::Approx(-0.5190754838183016).epsilon(1e-6));
  CHECK(m.intercept() == doctest::Approx(-0.6676921667025424).epsilon(1e-6));
  const FeatureMatrix q(1, 2, {0.3, -0.2});
  CHECK(m.predict_proba(q)[0] == doctest::Approx(0.4527104076275379).epsilon(1e-6));
  const auto& h = m.objective_history();
  REQUIRE(h.size() >= 2);
  for (std::size_t i = 1; i < h.size(); ++i) CHECK(h[i] <= h[i - 1]);
  CHECK(h.back() == doctest::Approx(3.7414232106617025).epsilon(1e-9));
}

TEST_CASE("logistic without signal predicts the base rate") {
  // Labels alternate within every feature value.
  FeatureMatrix x(200, 1);
  std::vector<std::uint8_t> y(200);
  for (std::size_t i = 0; i < 200; ++i) {
    x(i, 0) = static_cast<double>(i / 2);
    y[i] = static_cast<std::uint8_t>(i % 2);
  }
  for (double p : LogisticClassifier::fit(x, y, {}, 1.0, 100, 1e-10).predict_proba(x))
    CHECK(std::abs(p - 0.5) < 1e-9);
}

TEST_CASE("logistic is monotone on separable data") {
  FeatureMatrix x(20, 1);
  std::vector<std::uint8_t> y(20);
  for (std::size_t i = 0; i < 20; ++i) {
    x(i, 0) = static_cast<double>(i);
    y[i] = i >= 10;
  }
  const auto p = LogisticClassifier::fit(x, y, {}, 1.0, 100, 1e-10).predict_proba(x);
  for (std::size_t i = 1; i < 20; ++i) CHECK(p[i] > p[i - 1]);
  CHECK(p.front() < 0.5);
  CHECK(p.back() > 0.5);
}

TEST_CASE("boosted stumps beat ridge on a nonlinear target") {
  const FeatureMatrix x = gaussian_design(2000, 3, 7);
  std::vector<double> y(2000);
  for (std::size_t i = 0; i < 2000; ++i) y[i] = (x(i, 0) > 0.3 ? 1.0 : -1.0) + std::sin(2.0 * x(i, 1));
  LearnerConfig cfg;
  const auto boosted = fit_regressor(x, y, {}, cfg)->predict(x);
  cfg.kind = LearnerKind::ridge;
  const auto ridge = fit_regressor(x, y, {}, cfg)->predict(x);
  CHECK(mse(boosted, y) < 0.5 * mse(ridge, y));
}

TEST_CASE("boosting is deterministic and improves with more trees") {
  const FeatureMatrix x = gaussian_design(500, 4, 3);
  std::vector<double> y(500);
  for (std::size_t i = 0; i < 500; ++i) y[i] = x(i, 0) * x(i, 1) + x(i, 2);
  LearnerConfig cfg;
  cfg.n_trees = 10;
  const auto few = BoostedTrees::fit(x, y, {}, BoostedTrees::Loss::squared, cfg);
  cfg.n_trees = 60;
  const auto many = BoostedTrees::fit(x, y, {}, BoostedTrees::Loss::squared, cfg);
  const auto again = BoostedTrees::fit(x, y, {}, BoostedTrees::Loss::squared, cfg);
  CHECK(many.training_loss() < few.training_loss());
  std::vector<double> a(500), b(500);
  many.score(x, a);
  again.score(x, b);
  CHECK(a == b);
}

TEST_CASE("boosted classifier gives probabilities that follow the signal") {
  const FeatureMatrix x = gaussian_design(3000, 2, 5);
  std::vector<std::uint8_t> y(3000);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u;
  for (std::size_t i = 0; i < 3000; ++i) y[i] = u(rng) < 1.0 / (1.0 + std::exp(-2.0 * x(i, 0)));
  const auto p = fit_classifier(x, y, {}, LearnerConfig{})->predict_proba(FeatureMatrix(2, 2, {-2.0, 0.0, 2.0, 0.0}));
  CHECK(p[0] > 0.0);
  CHECK(p[1] < 1.0);
  CHECK(p[0] < 0.25);
  CHECK(p[1] > 0.75);
}

TEST_CASE("frequency learner returns weighted cell means") {
  const FeatureMatrix x(5, 1, {0, 0, 1, 1, 1});
  const std::vector<double> t = {1, 3, 2, 4, 6};
  const std::vector<double> w = {1, 1, 1, 1, 2};
  LearnerConfig cfg;
  cfg.kind = LearnerKind::frequency;
  const auto p = fit_regressor(x, t, w, cfg)->predict(FeatureMatrix(3, 1, {0, 1, 7}));
  CHECK(p[0] == doctest::Approx(2.0));
  CHECK(p[1] == doctest::Approx(4.5));
  CHECK(p[2] == doctest::Approx(22.0 / 6.0));  // unseen cell falls back to the global mean
}

TEST_CASE("classifiers reject single-class input") {
  const FeatureMatrix x = gaussian_design(10, 2, 1);
  const std::vector<std::uint8_t> ones(10, 1);
  for (LearnerKind k : {LearnerKind::logistic, LearnerKind::stumps, LearnerKind::frequency}) {
    LearnerConfig cfg;
    cfg.kind = k;
    CHECK_THROWS_AS(fit_classifier(x, ones, {}, cfg), InvalidArgument);
  }
}

TEST_CASE("learner config parsing") {
  LearnerConfig c;
  c.kind = LearnerKind::ridge;
  c.l2 = 0.25;
  const LearnerConfig back = learner_config_from_json(to_json(c));
  CHECK(back.kind == LearnerKind::ridge);
  CHECK(back.l2 == 0.25);
  CHECK_THROWS_AS(learner_config_from_json({{"depht", 2}}), InvalidArgument);
  CHECK_THROWS_AS(learner_config_from_json({{"learning_rate", 0.0}}), InvalidArgument);
  CHECK_THROWS_AS(learner_kind_from_string("forest"), InvalidArgument);
}

TEST_CASE("k-fold score prefers the better model") {
  const FeatureMatrix x = gaussian_design(1000, 2, 9);
  std::vector<double> y(1000);
  for (std::size_t i = 0; i < 1000; ++i) y[i] = x(i, 0) > 0 ? 1.0 : 0.0;
  LearnerConfig stumps;
  LearnerConfig ridge;
  ridge.kind = LearnerKind::ridge;
  CHECK(kfold_score(x, y, stumps, 5, 1, false) < kfold_score(x, y, ridge, 5, 1, false));
}
