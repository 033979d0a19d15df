#pragma once

// Uncertainty quantification and study drivers.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pse/estimators.hpp"
#include "pse/scm.hpp"

namespace pse {

inline constexpr std::size_t kDefaultBootstrap = 500;
inline constexpr double kDefaultLevel = 0.95;
inline constexpr std::size_t kDefaultMinCount = 20;

double normal_quantile(double p);

// Percentile bootstrap over row resamples with full refits. The reported
// estimate is the bootstrap mean; the full-sample estimate is kept under
// terms["full_sample"]. Replicates whose resample cannot be split into
// non-degenerate folds are redrawn with a shifted seed and counted.
std::vector<EffectEstimate> bootstrap_effects(const Cohort& c, std::span<const QueryKind> effects, int x0, int x1,
                                              std::size_t draws, double level, EstimatorMode mode,
                                              const CrossFitOptions& options, std::uint64_t seed);
EffectEstimate bootstrap_ci(const Cohort& c, QueryKind effect, int x0, int x1, std::size_t draws, double level,
                            EstimatorMode mode, const CrossFitOptions& options, std::uint64_t seed);

// psi ± z * se with se from the per-row contributions. Needs dr or sn_dr.
EffectEstimate analytic_ci(EffectEstimate e, double level);
EffectEstimate analytic_ci(const Cohort& c, QueryKind effect, int x0, int x1, EstimatorMode mode,
                           const CrossFitOptions& options, double level);

// Percentile with linear interpolation between order statistics.
double percentile(std::vector<double> values, double q);

struct BinnedEffect {
  std::string axis1, axis2;
  std::vector<double> edges1, edges2;  // bins are [e_k, e_k+1), the last one closed
  std::size_t min_count = kDefaultMinCount;
  // Row-major (axis1 × axis2) cells.
  std::vector<double> mean;
  std::vector<std::size_t> count;
  std::vector<bool> missing;
  std::size_t contributing = 0;  // rows inside the grid
  std::size_t outside = 0;       // rows outside every bin
  double global_estimate = 0.0;
  double partition_mean = 0.0;  // count-weighted mean over every cell

  std::size_t cells1() const { return edges1.size() - 1; }
  std::size_t cells2() const { return edges2.size() - 1; }
};

// Averages per-row contributions of an effect within each grid cell.
BinnedEffect bin_contributions(const EffectEstimate& e, std::span<const double> axis1, std::span<const double> axis2,
                               std::span<const double> edges1, std::span<const double> edges2,
                               std::size_t min_count);

// Values of a named Z, W or V column.
std::vector<double> cohort_column(const Cohort& c, const std::string& name);

BinnedEffect conditional_vde(const Cohort& c, const std::string& axis1, const std::string& axis2,
                             std::span<const double> edges1, std::span<const double> edges2, std::size_t min_count,
                             int x0, int x1, EstimatorMode mode, const CrossFitOptions& options);

nlohmann::json to_json(const BinnedEffect& b);
std::string binned_to_csv(const BinnedEffect& b);

struct WeightDiagnosticRow {
  std::size_t fold = 0;
  std::string family;
  double pre = 0.0;
  double post = 0.0;
  bool small_sample = false;  // |pre - 1| > 0.25 with n < 4000
};

struct NuisanceDiagnostics {
  std::size_t n = 0;
  std::vector<WeightDiagnosticRow> rows;
  bool small_sample_regime = false;
};

NuisanceDiagnostics nuisance_mean_diagnostics(const EffectEstimate& e, Term term = Term::nested_vde);
nlohmann::json to_json(const NuisanceDiagnostics& d);

// Ground truth for the four study terms and the VDE.
struct StudyOracle {
  double mean_y_x0 = 0.0;
  double mean_y_x1 = 0.0;
  double nested_nde = 0.0;
  double nested_vde = 0.0;

  double vde() const { return mean_y_x1 - nested_vde; }
};

// Closed form for linear specs, exact enumeration for enumerable ones,
// otherwise Monte Carlo with n_mc draws.
StudyOracle study_oracle(const ScmSpec& spec, std::size_t n_mc, std::uint64_t seed);

inline const std::vector<std::string>& study_quantities() {
  static const std::vector<std::string> q = {"mean_y_x0", "mean_y_x1", "nested_nde", "nested_vde", "vde"};
  return q;
}

struct StudyPoint {
  std::string axis;  // "n" or "eta"
  double axis_value = 0.0;
  std::size_t n = 0;
  EstimatorMode mode = EstimatorMode::dr;
  std::string quantity;
  double oracle = 0.0;
  std::size_t replications = 0;
  std::size_t failures = 0;
  double mean_estimate = 0.0;
  double mean_relative_error = 0.0;      // signed
  double mean_abs_relative_error = 0.0;
  double variance = 0.0;                 // sample variance of the estimates
  double rmse = 0.0;
  double coverage = 0.0;                 // analytic interval coverage, NaN for plugin/ipw
  std::vector<double> estimates;
};

struct StudyResult {
  std::uint64_t seed = 0;
  double level = kDefaultLevel;
  StudyOracle oracle;
  std::vector<StudyPoint> points;
  std::vector<std::uint64_t> replication_seeds;

  const StudyPoint& at(double axis_value, EstimatorMode mode, const std::string& quantity) const;
};

nlohmann::json to_json(const StudyResult& r);
std::string study_to_csv(const StudyResult& r);

// Fresh cohorts per (size, replication); one cross-fitting pass per cohort is
// shared by every mode.
StudyResult convergence_study(const ScmSpec& spec, std::span<const std::size_t> sizes, std::size_t replications,
                              std::span<const EstimatorMode> modes, const CrossFitOptions& options,
                              std::uint64_t seed, const StudyOracle& oracle, double level = kDefaultLevel);

// For each eta, recalibrates the exposure threshold so P(X = 1) = eta. The
// interventional terms do not involve the exposure mechanism, so one oracle
// serves every eta. Replications that throw are counted as failures.
StudyResult imbalance_study(const ScmSpec& spec, std::span<const double> etas, std::size_t n,
                            std::size_t replications, std::span<const EstimatorMode> modes,
                            const CrossFitOptions& options, std::uint64_t seed, const StudyOracle& oracle,
                            double level = kDefaultLevel);

}  // namespace pse
