#pragma once

// Supervised learners for the nuisance fits: a scalar regressor interface and
// a probabilistic binary classifier interface.
//
// Kinds:
//   ridge     - penalized least squares (classification requests fall back to
//               logistic regression)
//   logistic  - IRLS logistic regression (regression requests fall back to
//               ridge)
//   stumps    - gradient-boosted depth-limited trees (squared or logistic loss)
//   frequency - exact weighted cell means over the distinct feature rows; the
//               exact-nuisance learner for discrete data
//
// Linear learners standardize features internally with (weighted) column means
// and scales; the intercept is never penalized.

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pse/common.hpp"

namespace pse {

enum class LearnerKind { ridge, logistic, stumps, frequency };

std::string to_string(LearnerKind kind);
LearnerKind learner_kind_from_string(const std::string& s);

struct LearnerConfig {
  LearnerKind kind = LearnerKind::stumps;
  double l2 = 1.0;
  std::size_t max_iter = 100;
  double tol = 1e-8;
  std::size_t depth = 3;
  std::size_t n_trees = 50;
  double learning_rate = 0.1;
  std::size_t max_bins = 64;

  void validate() const;
};

nlohmann::json to_json(const LearnerConfig& c);
// Missing keys keep their defaults.
LearnerConfig learner_config_from_json(const nlohmann::json& j, LearnerConfig base = {});

// Row-major n×d matrix of finite reals.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols) {}
  FeatureMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }
  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  std::span<const double> data() const { return data_; }

  void validate() const;  // throws on non-finite entries

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct Standardization {
  std::vector<double> mean;
  std::vector<double> scale;  // 1 for constant columns
  std::vector<bool> constant;

  static Standardization fit(const FeatureMatrix& x, std::span<const double> weights);
  FeatureMatrix apply(const FeatureMatrix& x) const;
};

class Regressor {
 public:
  virtual ~Regressor() = default;
  virtual void predict(const FeatureMatrix& x, std::span<double> out) const = 0;
  std::vector<double> predict(const FeatureMatrix& x) const;
};

class ProbClassifier {
 public:
  virtual ~ProbClassifier() = default;
  // P(label = 1 | features), in (0, 1) for the fitted learners.
  virtual void predict_proba(const FeatureMatrix& x, std::span<double> out) const = 0;
  std::vector<double> predict_proba(const FeatureMatrix& x) const;
};

class RidgeRegressor final : public Regressor {
 public:
  // l2 = 0 gives ordinary least squares and throws RankError when the
  // standardized design is rank deficient. Zero-variance columns get
  // coefficient 0.
  static RidgeRegressor fit(const FeatureMatrix& x, std::span<const double> y,
                            std::span<const double> weights, double l2);

  void predict(const FeatureMatrix& x, std::span<double> out) const override;
  using Regressor::predict;

  // Coefficients on the original feature scale.
  const std::vector<double>& coefficients() const { return coef_; }
  double intercept() const { return intercept_; }
  const std::vector<double>& standardized_coefficients() const { return std_coef_; }
  const Standardization& standardization() const { return standardization_; }

 private:
  std::vector<double> coef_;
  double intercept_ = 0.0;
  std::vector<double> std_coef_;
  Standardization standardization_;
};

class LogisticClassifier final : public ProbClassifier {
 public:
  // Newton/IRLS on the penalized negative log-likelihood
  //   -Σ w_i [y_i log p_i + (1-y_i) log(1-p_i)] + (l2/2) ||β||²
  // with step halving, so the objective never increases between iterations.
  static LogisticClassifier fit(const FeatureMatrix& x, std::span<const std::uint8_t> labels,
                                std::span<const double> weights, double l2, std::size_t max_iter,
                                double tol);

  void predict_proba(const FeatureMatrix& x, std::span<double> out) const override;
  using ProbClassifier::predict_proba;

  const std::vector<double>& coefficients() const { return coef_; }
  double intercept() const { return intercept_; }
  const std::vector<double>& objective_history() const { return history_; }
  bool converged() const { return converged_; }

 private:
  std::vector<double> coef_;
  double intercept_ = 0.0;
  std::vector<double> history_;
  bool converged_ = false;
};

// Gradient-boosted regression trees on histogram-binned features.
class BoostedTrees {
 public:
  enum class Loss { squared, logistic };

  static BoostedTrees fit(const FeatureMatrix& x, std::span<const double> targets,
                          std::span<const double> weights, Loss loss, const LearnerConfig& config);

  // Raw additive score (log-odds for the logistic loss).
  void score(const FeatureMatrix& x, std::span<double> out) const;
  double training_loss() const { return training_loss_; }
  std::size_t tree_count() const { return trees_.size(); }

 private:
  struct Node {
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
  };
  double base_ = 0.0;
  std::vector<std::vector<Node>> trees_;
  double training_loss_ = 0.0;
};

class BoostedRegressor final : public Regressor {
 public:
  explicit BoostedRegressor(BoostedTrees model) : model_(std::move(model)) {}
  void predict(const FeatureMatrix& x, std::span<double> out) const override;
  using Regressor::predict;
  const BoostedTrees& model() const { return model_; }

 private:
  BoostedTrees model_;
};

class BoostedClassifier final : public ProbClassifier {
 public:
  explicit BoostedClassifier(BoostedTrees model) : model_(std::move(model)) {}
  void predict_proba(const FeatureMatrix& x, std::span<double> out) const override;
  using ProbClassifier::predict_proba;

 private:
  BoostedTrees model_;
};

// Weighted mean of the target within each distinct feature row. Rows never
// seen during fitting get the global weighted mean.
class FrequencyTable {
 public:
  static FrequencyTable fit(const FeatureMatrix& x, std::span<const double> targets,
                            std::span<const double> weights);
  double lookup(std::span<const double> row) const;
  std::size_t cells() const { return cells_.size(); }

 private:
  std::map<std::vector<double>, std::pair<double, double>> cells_;  // sum(w·t), sum(w)
  double global_ = 0.0;
};

class FrequencyRegressor final : public Regressor {
 public:
  explicit FrequencyRegressor(FrequencyTable t) : table_(std::move(t)) {}
  void predict(const FeatureMatrix& x, std::span<double> out) const override;
  using Regressor::predict;

 private:
  FrequencyTable table_;
};

class FrequencyClassifier final : public ProbClassifier {
 public:
  explicit FrequencyClassifier(FrequencyTable t) : table_(std::move(t)) {}
  void predict_proba(const FeatureMatrix& x, std::span<double> out) const override;
  using ProbClassifier::predict_proba;

 private:
  FrequencyTable table_;
};

class ConstantRegressor final : public Regressor {
 public:
  explicit ConstantRegressor(double value) : value_(value) {}
  void predict(const FeatureMatrix& x, std::span<double> out) const override;
  using Regressor::predict;

 private:
  double value_;
};

class ConstantClassifier final : public ProbClassifier {
 public:
  explicit ConstantClassifier(double p) : p_(p) {}
  void predict_proba(const FeatureMatrix& x, std::span<double> out) const override;
  using ProbClassifier::predict_proba;

 private:
  double p_;
};

// weights may be empty (unit weights).
std::shared_ptr<const Regressor> fit_regressor(const FeatureMatrix& x, std::span<const double> targets,
                                               std::span<const double> weights,
                                               const LearnerConfig& config);

// Throws InvalidArgument when only one class carries positive weight.
std::shared_ptr<const ProbClassifier> fit_classifier(const FeatureMatrix& x,
                                                     std::span<const std::uint8_t> labels,
                                                     std::span<const double> weights,
                                                     const LearnerConfig& config);

// Mean held-out loss over k folds: squared error for regression, Brier score
// for classification (targets must then be 0/1).
double kfold_score(const FeatureMatrix& x, std::span<const double> targets, const LearnerConfig& config,
                   std::size_t k, std::uint64_t seed, bool classification);

}  // namespace pse
