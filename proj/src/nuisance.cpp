#include "pse/nuisance.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace pse {

namespace {

double p_of(double p1, int x) { return x == 1 ? p1 : 1.0 - p1; }

std::vector<double> gather_y(const Cohort& c, std::span<const std::size_t> rows) {
  std::vector<double> y(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) y[r] = c.y[rows[r]];
  return y;
}

void require_group(const std::vector<std::size_t>& rows, int x) {
  if (rows.empty()) throw InvalidArgument("no rows with exposure " + std::to_string(x) + " in the fitting slice");
}

}  // namespace

void validate_clip(double eps) {
  if (!(eps > 0.0 && eps < 0.5)) throw InvalidArgument("clip epsilon must lie in (0, 0.5)");
}

double clip_probability(double p, double eps, ClipCounter* counter) {
  const double q = std::clamp(p, eps, 1.0 - eps);
  if (counter) {
    ++counter->evaluations;
    if (q != p) ++counter->clipped;
  }
  return q;
}

ComponentProbs ComponentProbs::from_p1(double p1_z, double p1_wz, double p1_vwz, int x0, int x1) {
  return {p_of(p1_z, x1), p_of(p1_z, x0), p_of(p1_wz, x1), p_of(p1_wz, x0), p_of(p1_vwz, x1), p_of(p1_vwz, x0)};
}

PiWeights pi_weights(const ComponentProbs& p, int x, int x0, int x1, double eps, ClipCounter* counter) {
  const double x1_z = clip_probability(p.x1_z, eps, counter);
  const double x1_wz = clip_probability(p.x1_wz, eps, counter);
  const double x0_wz = clip_probability(p.x0_wz, eps, counter);
  const double x1_vwz = clip_probability(p.x1_vwz, eps, counter);
  const double x0_vwz = clip_probability(p.x0_vwz, eps, counter);
  PiWeights w;
  if (x == x1) {
    w.pi1 = 1.0 / x1_z;
    w.pi3 = (x0_vwz * x1_wz) / (x1_vwz * x0_wz * x1_z);
  }
  if (x == x0) w.pi2 = x1_wz / (x0_wz * x1_z);
  return w;
}

TwoStageWeights two_stage_weights(double p1_z, double p1_mz, int x, int x0, int x1, double eps) {
  const double x0_z = clip_probability(p_of(p1_z, x0), eps);
  const double x1_mz = clip_probability(p_of(p1_mz, x1), eps);
  const double x0_mz = clip_probability(p_of(p1_mz, x0), eps);
  TwoStageWeights w;
  if (x == x1) w.pi2 = x0_mz / (x1_mz * x0_z);
  if (x == x0) w.pi1 = 1.0 / x0_z;
  return w;
}

double backdoor_weight(double p1_z, int x, int target, double eps) {
  return x == target ? 1.0 / clip_probability(p_of(p1_z, target), eps) : 0.0;
}

double weighted_average(std::span<const double> values, std::span<const double> row_weights) {
  if (values.empty()) throw InvalidArgument("average of an empty vector");
  if (row_weights.empty()) {
    double s = 0.0;
    for (double v : values) s += v;
    return s / static_cast<double>(values.size());
  }
  if (row_weights.size() != values.size()) throw InvalidArgument("row weight length mismatch");
  double s = 0.0, w = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    s += row_weights[i] * values[i];
    w += row_weights[i];
  }
  if (!(w > 0.0)) throw InvalidArgument("row weights sum to zero");
  return s / w;
}

std::vector<double> self_normalize(std::span<const double> weights, std::span<const double> row_weights) {
  for (double v : weights)
    if (!std::isfinite(v)) throw InvalidArgument("self_normalize: non-finite weight");
  const double m = weighted_average(weights, row_weights);
  if (!(m > 0.0)) throw InvalidArgument("self_normalize: weights have no positive mass (exposure group absent)");
  std::vector<double> out(weights.begin(), weights.end());
  for (double& v : out) v /= m;
  return out;
}

FeatureMatrix block_features(const Cohort& c, std::span<const std::size_t> rows, unsigned blocks) {
  const std::size_t dz = (blocks & kBlockZ) ? c.dim_z : 0;
  const std::size_t dw = (blocks & kBlockW) ? c.dim_w : 0;
  const std::size_t dv = (blocks & kBlockV) ? c.dim_v : 0;
  FeatureMatrix m(rows.size(), dz + dw + dv);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto out = m.row(r).begin();
    const std::size_t i = rows[r];
    if (dz) out = std::copy_n(c.z_row(i).begin(), dz, out);
    if (dw) out = std::copy_n(c.w_row(i).begin(), dw, out);
    if (dv) std::copy_n(c.v_row(i).begin(), dv, out);
  }
  return m;
}

std::vector<double> row_weights(const Cohort& c, std::span<const std::size_t> rows) {
  if (!c.weighted()) return {};
  std::vector<double> w(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) w[r] = c.weight[rows[r]];
  return w;
}

std::vector<std::size_t> exposure_rows(const Cohort& c, std::span<const std::size_t> rows, int x) {
  std::vector<std::size_t> out;
  for (std::size_t i : rows)
    if (c.x[i] == x && c.row_weight(i) > 0.0) out.push_back(i);
  return out;
}

unsigned mediator_blocks(MediatorSet m) { return m == MediatorSet::merged_wv ? (kBlockW | kBlockV) : kBlockV; }

// ---------------------------------------------------------------------------

namespace {

unsigned input_blocks(PropensityInput input) {
  switch (input) {
    case PropensityInput::z: return kBlockZ;
    case PropensityInput::wz: return kBlockZ | kBlockW;
    case PropensityInput::vwz: return kBlockZ | kBlockW | kBlockV;
    case PropensityInput::vz: return kBlockZ | kBlockV;
  }
  return kBlockZ;
}

}  // namespace

std::vector<double> PropensitySet::predict(PropensityInput input, const Cohort& c, std::span<const std::size_t> rows,
                                           ClipCounter* counter) const {
  const ProbClassifier* model = nullptr;
  switch (input) {
    case PropensityInput::z: model = z.get(); break;
    case PropensityInput::wz: model = wz.get(); break;
    case PropensityInput::vwz: model = vwz.get(); break;
    case PropensityInput::vz: model = vz.get(); break;
  }
  if (!model) throw InvalidArgument("propensity model was not fitted for this input");
  std::vector<double> p = model->predict_proba(block_features(c, rows, input_blocks(input)));
  for (double& v : p) v = clip_probability(v, clip, counter);
  return p;
}

PropensitySet fit_propensities(const Cohort& c, std::span<const std::size_t> rows, const PropensityNeeds& needs,
                               const LearnerConfig& config, double clip, bool constant_marginal) {
  validate_clip(clip);
  PropensitySet set;
  set.clip = clip;
  const std::vector<double> w = row_weights(c, rows);
  std::vector<std::uint8_t> labels(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) labels[r] = c.x[rows[r]];

  if (constant_marginal) {
    std::vector<double> xs(labels.begin(), labels.end());
    auto model = std::make_shared<ConstantClassifier>(weighted_average(xs, w));
    set.z = model;
    if (needs.wz) set.wz = model;
    if (needs.vwz) set.vwz = model;
    if (needs.vz) set.vz = model;
    return set;
  }
  auto fit = [&](PropensityInput input) {
    return fit_classifier(block_features(c, rows, input_blocks(input)), labels, w, config);
  };
  set.z = fit(PropensityInput::z);
  if (needs.wz) set.wz = fit(PropensityInput::wz);
  if (needs.vwz) set.vwz = fit(PropensityInput::vwz);
  if (needs.vz) set.vz = fit(PropensityInput::vz);
  return set;
}

// ---------------------------------------------------------------------------

NestedRegressionSet::Values NestedRegressionSet::evaluate(const Cohort& c, std::span<const std::size_t> rows) const {
  Values v;
  v.mu3 = mu3->predict(block_features(c, rows, kBlockZ | kBlockW | kBlockV));
  v.mu2 = mu2->predict(block_features(c, rows, kBlockZ | kBlockW));
  v.mu1 = mu1->predict(block_features(c, rows, kBlockZ));
  return v;
}

NestedRegressionSet fit_nested(const Cohort& c, std::span<const std::size_t> rows, const LearnerConfig& config,
                               int x0, int x1, bool zero_mu) {
  const auto r1 = exposure_rows(c, rows, x1);
  const auto r0 = exposure_rows(c, rows, x0);
  require_group(r1, x1);
  require_group(r0, x0);
  NestedRegressionSet set;
  if (zero_mu) {
    auto zero = std::make_shared<ConstantRegressor>(0.0);
    set.mu3 = set.mu2 = set.mu1 = zero;
    return set;
  }
  set.mu3 = fit_regressor(block_features(c, r1, kBlockZ | kBlockW | kBlockV), gather_y(c, r1), row_weights(c, r1),
                          config);

  const FeatureMatrix wz0 = block_features(c, r0, kBlockZ | kBlockW);
  const std::vector<double> pseudo3 = set.mu3->predict(block_features(c, r0, kBlockZ | kBlockW | kBlockV));
  set.mu2 = fit_regressor(wz0, pseudo3, row_weights(c, r0), config);

  const std::vector<double> pseudo2 = set.mu2->predict(block_features(c, r1, kBlockZ | kBlockW));
  set.mu1 = fit_regressor(block_features(c, r1, kBlockZ), pseudo2, row_weights(c, r1), config);
  return set;
}

TwoStageRegressionSet::Values TwoStageRegressionSet::evaluate(const Cohort& c,
                                                              std::span<const std::size_t> rows) const {
  Values v;
  v.mu2 = mu2->predict(block_features(c, rows, kBlockZ | mediator_blocks(mediators)));
  v.mu1 = mu1->predict(block_features(c, rows, kBlockZ));
  return v;
}

TwoStageRegressionSet fit_nde_nuisances(const Cohort& c, std::span<const std::size_t> rows, MediatorSet mediators,
                                        const LearnerConfig& config, int x0, int x1, bool zero_mu) {
  const auto r1 = exposure_rows(c, rows, x1);
  const auto r0 = exposure_rows(c, rows, x0);
  require_group(r1, x1);
  require_group(r0, x0);
  TwoStageRegressionSet set;
  set.mediators = mediators;
  if (zero_mu) {
    auto zero = std::make_shared<ConstantRegressor>(0.0);
    set.mu2 = set.mu1 = zero;
    return set;
  }
  const unsigned mz = kBlockZ | mediator_blocks(mediators);
  set.mu2 = fit_regressor(block_features(c, r1, mz), gather_y(c, r1), row_weights(c, r1), config);
  const std::vector<double> pseudo = set.mu2->predict(block_features(c, r0, mz));
  set.mu1 = fit_regressor(block_features(c, r0, kBlockZ), pseudo, row_weights(c, r0), config);
  return set;
}

std::shared_ptr<const Regressor> fit_backdoor(const Cohort& c, std::span<const std::size_t> rows, int x,
                                              const LearnerConfig& config, bool zero_mu) {
  const auto rx = exposure_rows(c, rows, x);
  require_group(rx, x);
  if (zero_mu) return std::make_shared<ConstantRegressor>(0.0);
  return fit_regressor(block_features(c, rx, kBlockZ), gather_y(c, rx), row_weights(c, rx), config);
}

}  // namespace pse
