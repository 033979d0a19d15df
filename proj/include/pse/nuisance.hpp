#pragma once

// Nuisance parameters of the doubly robust estimators.
//
// Importance weights use the Bayes form, so only exposure classifiers are
// needed: P(X|Z), P(X|W,Z), P(X|V,W,Z) (which doubles as P(X|M,Z) for the
// merged mediator M = {W,V}) and P(X|V,Z) for the V-only path. Every component
// probability is clipped into [eps, 1-eps] before ratios are formed.
//
// Nested regressions are fit on exposure-restricted rows and never take X as a
// feature:
//   mu3(V,W,Z) = E[Y | x1, V, W, Z]        fit on X = x1
//   mu2(W,Z)   = E[mu3(V,W,Z) | x0, W, Z]  fit on X = x0
//   mu1(Z)     = E[mu2(W,Z) | x1, Z]       fit on X = x1
// and for the two-stage (direct/indirect) term with mediator block M:
//   mu2(M,Z)   = E[Y | x1, M, Z]           fit on X = x1
//   mu1(Z)     = E[mu2(M,Z) | x0, Z]       fit on X = x0

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "pse/cohort.hpp"
#include "pse/learners.hpp"
#include "pse/oracle.hpp"

namespace pse {

inline constexpr double kDefaultClip = 1e-4;

struct ClipCounter {
  std::size_t evaluations = 0;
  std::size_t clipped = 0;

  double fraction() const { return evaluations ? static_cast<double>(clipped) / evaluations : 0.0; }
  void merge(const ClipCounter& o) {
    evaluations += o.evaluations;
    clipped += o.clipped;
  }
};

// Clamps into [eps, 1-eps]; counts the evaluation and whether it moved.
double clip_probability(double p, double eps, ClipCounter* counter = nullptr);
void validate_clip(double eps);

// Component probabilities of the three-stage weights, each P(X = x | ·).
struct ComponentProbs {
  double x1_z = 0.5;
  double x0_z = 0.5;
  double x1_wz = 0.5;
  double x0_wz = 0.5;
  double x1_vwz = 0.5;
  double x0_vwz = 0.5;

  // From classifier outputs P(X = 1 | ·).
  static ComponentProbs from_p1(double p1_z, double p1_wz, double p1_vwz, int x0, int x1);
};

struct PiWeights {
  double pi1 = 0.0;
  double pi2 = 0.0;
  double pi3 = 0.0;
};

// pi1 = 1[X=x1] / p(x1|Z)
// pi2 = 1[X=x0] p(x1|WZ) / (p(x0|WZ) p(x1|Z))
// pi3 = 1[X=x1] p(x0|VWZ) p(x1|WZ) / (p(x1|VWZ) p(x0|WZ) p(x1|Z))
PiWeights pi_weights(const ComponentProbs& p, int x, int x0, int x1, double eps,
                     ClipCounter* counter = nullptr);

struct TwoStageWeights {
  double pi1 = 0.0;
  double pi2 = 0.0;
};

// pi2 = 1[X=x1] p(x0|MZ) / (p(x1|MZ) p(x0|Z)),  pi1 = 1[X=x0] / p(x0|Z)
TwoStageWeights two_stage_weights(double p1_z, double p1_mz, int x, int x0, int x1, double eps);

// 1[X=target] / p(target|Z)
double backdoor_weight(double p1_z, int x, int target, double eps);

// Divides by the (row-weighted) empirical mean. Throws InvalidArgument when the
// mean is not positive, e.g. no row of the weighted exposure group.
std::vector<double> self_normalize(std::span<const double> weights, std::span<const double> row_weights = {});
double weighted_average(std::span<const double> values, std::span<const double> row_weights);

// Feature blocks, concatenated in the order Z, W, V.
enum Block : unsigned { kBlockZ = 1u, kBlockW = 2u, kBlockV = 4u };
FeatureMatrix block_features(const Cohort& c, std::span<const std::size_t> rows, unsigned blocks);
std::vector<double> row_weights(const Cohort& c, std::span<const std::size_t> rows);

enum class PropensityInput { z, wz, vwz, vz };

struct PropensityNeeds {
  bool wz = false;
  bool vwz = false;
  bool vz = false;
};

struct PropensitySet {
  std::shared_ptr<const ProbClassifier> z, wz, vwz, vz;  // P(X = 1 | ·); null when not needed
  double clip = kDefaultClip;

  // Clipped P(X = 1 | ·) for the given rows.
  std::vector<double> predict(PropensityInput input, const Cohort& c, std::span<const std::size_t> rows,
                              ClipCounter* counter = nullptr) const;
};

// constant_marginal replaces every model by the training-rows frequency of X=1.
PropensitySet fit_propensities(const Cohort& c, std::span<const std::size_t> rows, const PropensityNeeds& needs,
                               const LearnerConfig& config, double clip, bool constant_marginal = false);

// Rows of `rows` whose exposure equals x.
std::vector<std::size_t> exposure_rows(const Cohort& c, std::span<const std::size_t> rows, int x);

struct NestedRegressionSet {
  std::shared_ptr<const Regressor> mu3, mu2, mu1;

  struct Values {
    std::vector<double> mu3, mu2, mu1;
  };
  Values evaluate(const Cohort& c, std::span<const std::size_t> rows) const;
};

// zero_mu replaces every stage by the constant 0 predictor. Throws
// InvalidArgument when an exposure group is missing.
NestedRegressionSet fit_nested(const Cohort& c, std::span<const std::size_t> rows, const LearnerConfig& config,
                               int x0, int x1, bool zero_mu = false);

struct TwoStageRegressionSet {
  MediatorSet mediators = MediatorSet::merged_wv;
  std::shared_ptr<const Regressor> mu2, mu1;

  struct Values {
    std::vector<double> mu2, mu1;
  };
  Values evaluate(const Cohort& c, std::span<const std::size_t> rows) const;
};

TwoStageRegressionSet fit_nde_nuisances(const Cohort& c, std::span<const std::size_t> rows, MediatorSet mediators,
                                        const LearnerConfig& config, int x0, int x1, bool zero_mu = false);

// mu(Z) = E[Y | X = x, Z].
std::shared_ptr<const Regressor> fit_backdoor(const Cohort& c, std::span<const std::size_t> rows, int x,
                                              const LearnerConfig& config, bool zero_mu = false);

unsigned mediator_blocks(MediatorSet m);

}  // namespace pse
