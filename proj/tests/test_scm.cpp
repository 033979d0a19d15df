#include <doctest.h>

#include <cmath>

#include "pse/oracle.hpp"
#include "pse/scm.hpp"

using namespace pse;

TEST_CASE("binary model marginal of Z") {
  // 1 - Phi(0.2), from the normal tail.
  const double p_z = 0.420740290560897;
  const Cohort c = sample(binary_scm(), 1'000'000, 17);
  double m = 0.0;
  for (double z : c.z) m += z;
  CHECK(std::abs(m / c.size() - p_z) < 0.002);
}

TEST_CASE("sampling is deterministic and validates its input") {
  const ScmSpec s = linear_scm(3, 10, 3, 5);
  CHECK(sample(s, 500, 3) == sample(s, 500, 3));
  CHECK_FALSE(sample(s, 500, 3) == sample(s, 500, 4));
  CHECK_THROWS_AS(sample(s, 0, 1), InvalidArgument);
}

TEST_CASE("generators are reproducible from their seed") {
  CHECK(to_json(linear_scm(3, 10, 3, 9)) == to_json(linear_scm(3, 10, 3, 9)));
  CHECK(to_json(linear_scm(3, 10, 3, 9)) != to_json(linear_scm(3, 10, 3, 10)));
  CHECK(to_json(nonlinear_scm(3, 10, 3, 2, 4)) == to_json(nonlinear_scm(3, 10, 3, 2, 4)));
}

TEST_CASE("spec JSON round trip preserves every field") {
  for (const ScmSpec& s : {binary_scm(), linear_scm(2, 3, 2, 1), nonlinear_scm(2, 3, 2, 2, 8),
                           discrete_reference_scm()}) {
    const ScmSpec back = scm_from_json(to_json(s));
    CHECK(to_json(back) == to_json(s));
    CHECK(sample(back, 200, 1) == sample(s, 200, 1));
  }
}

TEST_CASE("spec validation rejects inconsistent dimensions") {
  ScmSpec s = linear_scm(3, 4, 2, 1);
  s.v_w.pop_back();
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  nlohmann::json j = to_json(binary_scm());
  j["kind"] = "quadratic";
  CHECK_THROWS(scm_from_json(j));
}

TEST_CASE("imbalance calibration hits the requested exposure rate") {
  const ScmSpec base = binary_scm();
  for (double eta : {0.1, 0.2, 0.33, 0.5}) {
    CAPTURE(eta);
    const ScmSpec s = calibrate_imbalance(base, eta);
    const Cohort c = sample(s, 32'000, 3);
    CHECK(std::abs(static_cast<double>(c.count_exposure(1)) / c.size() - eta) < 0.01);
  }
  CHECK_THROWS_AS(calibrate_imbalance(base, 0.0), InvalidArgument);
  CHECK_THROWS_AS(calibrate_imbalance(base, 1.0), InvalidArgument);
}

TEST_CASE("balanced calibration of a symmetric index sits at its median") {
  // Linear model: the X index is a centred Gaussian, so the median is 0.
  const ScmSpec s = calibrate_imbalance(linear_scm(3, 10, 3, 2), 0.5);
  CHECK(std::abs(s.x_threshold) < 0.01);
}

TEST_CASE("nonlinear model without trees has no V effect") {
  const ScmSpec s = nonlinear_scm(2, 3, 2, 2, 1, 0);
  EffectQuery q;
  q.kind = QueryKind::vde;
  CHECK(mc_counterfactual(s, q, 50'000, 2).value == 0.0);
}
