#pragma once

// Ground truth for every estimand, by routes that do not share code with the
// estimators:
//   * mc_counterfactual: simulate exogenous noise and evaluate nested
//     counterfactuals by composing the SCM mechanisms under interventions;
//   * enumerate_exact: the same compositions summed exactly over finite noise;
//   * idformula_eval: identification formulas evaluated on a tabulated joint;
//   * linear_closed_form: expectations of the linear-Gaussian model.

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "pse/cohort.hpp"
#include "pse/scm.hpp"

namespace pse {

enum class QueryKind { mean_yx, nested_vde, nested_nde, te, nde, nie, nie_star, vde };
enum class MediatorSet { merged_wv, v_only };

std::string to_string(QueryKind kind);
QueryKind query_kind_from_string(const std::string& s);

// mean_yx uses x1 as the exposure. nested_nde/nde/nie honour `mediators`;
// nie_star always uses the V-only mediator set.
struct EffectQuery {
  QueryKind kind = QueryKind::vde;
  int x0 = 0;
  int x1 = 1;
  MediatorSet mediators = MediatorSet::merged_wv;

  void validate() const;
};

nlohmann::json to_json(const EffectQuery& q);

struct OracleValue {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t n_mc = 0;
  std::uint64_t seed = 0;
};

inline constexpr std::size_t kOraclePartitions = 64;

// Monte-Carlo counterfactual oracle. Draws are split into fixed partitions with
// derived seeds and reduced in partition order. V-only nested terms are not a
// single-world composition; they are tabulated from simulated interventional
// worlds as sum_z P(z) sum_v P(V_x0=v|z) E[Y_x1 | V_x1=v, z], which needs
// discrete Z and V (threshold kinds). Their standard error comes from the
// spread across partitions.
OracleValue mc_counterfactual(const ScmSpec& spec, const EffectQuery& query, std::size_t n_mc,
                              std::uint64_t seed);

// Exact expectation by summing over the finite noise support.
double enumerate_exact(const ScmSpec& spec, const EffectQuery& query);

// Finite observational distribution over (z, x, w, v, y).
struct DiscreteJoint {
  struct Cell {
    std::vector<double> z, w, v;
    int x = 0;
    double y = 0.0;
    double prob = 0.0;
  };
  std::vector<Cell> cells;

  double total() const;
  // Rows of a weighted cohort, one per cell, with probabilities as weights.
  Cohort to_cohort(std::size_t dim_z, std::size_t dim_w, std::size_t dim_v) const;
};

DiscreteJoint enumerate_joint(const ScmSpec& spec);
// Empirical joint of a (possibly weighted) cohort with discrete columns.
DiscreteJoint tabulate_joint(const Cohort& cohort);

struct IdentifiedTerms {
  double backdoor_x0 = 0.0;  // sum_z E[Y|x0,z] P(z)
  double backdoor_x1 = 0.0;  // sum_z E[Y|x1,z] P(z)
  double nested_vde = 0.0;   // sum E[Y|x1,w,v,z] P(v|x0,w,z) P(w|x1,z) P(z)
  double nested_nde = 0.0;   // sum E[Y|x1,m,z] P(m|x0,z) P(z), m = (w, v)
  double nested_nie_star = 0.0;  // same with m = v, W ignored

  double vde() const { return backdoor_x1 - nested_vde; }
};

// Throws PositivityError naming the first conditioning cell that has zero mass
// while the formula needs it.
IdentifiedTerms idformula_eval(const DiscreteJoint& joint, int x0, int x1);

// Exact expectations for linear-Gaussian specs (all noise has mean zero).
// V-only nested terms are not supported.
double linear_closed_form(const ScmSpec& spec, const EffectQuery& query);

}  // namespace pse
