#include "pse/learners.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "linalg.hpp"
#include "pse/kernels.hpp"

namespace pse {

namespace {

// Validates row weights and rescales them to mean 1, so the penalty strength
// does not depend on whether weights are counts or probabilities.
std::vector<double> normalized_weights(std::span<const double> weights, std::size_t n) {
  if (n == 0) throw InvalidArgument("learner needs at least one row");
  std::vector<double> w(n, 1.0);
  if (weights.empty()) return w;
  if (weights.size() != n) throw InvalidArgument("weight vector length does not match rows");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(weights[i]) || weights[i] < 0.0) throw InvalidArgument("weights must be finite and non-negative");
    total += weights[i];
  }
  if (!(total > 0.0)) throw InvalidArgument("weights sum to zero");
  const double s = static_cast<double>(n) / total;
  for (std::size_t i = 0; i < n; ++i) w[i] = weights[i] * s;
  return w;
}

double weighted_mean(std::span<const double> v, std::span<const double> w) {
  return kernels::weighted_sum(w, v) / kernels::sum(w);
}

double sigmoid(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

double softplus(double eta) { return eta > 0.0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta)); }

// Standardized copy of the non-constant columns, optionally led by a column of ones.
std::vector<double> active_design(const FeatureMatrix& x, const Standardization& s,
                                  const std::vector<std::size_t>& active, bool intercept) {
  const std::size_t p = active.size() + (intercept ? 1 : 0);
  std::vector<double> out(x.rows() * p);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double* r = out.data() + i * p;
    std::size_t c = 0;
    if (intercept) r[c++] = 1.0;
    for (std::size_t j : active) r[c++] = (x(i, j) - s.mean[j]) / s.scale[j];
  }
  return out;
}

std::vector<std::size_t> active_columns(const Standardization& s) {
  std::vector<std::size_t> a;
  for (std::size_t j = 0; j < s.constant.size(); ++j)
    if (!s.constant[j]) a.push_back(j);
  return a;
}

void check_rows(const FeatureMatrix& x, std::size_t n, const char* what) {
  if (n != x.rows()) throw InvalidArgument(std::string(what) + " length does not match feature rows");
}

}  // namespace

std::string to_string(LearnerKind kind) {
  switch (kind) {
    case LearnerKind::ridge: return "ridge";
    case LearnerKind::logistic: return "logistic";
    case LearnerKind::stumps: return "stumps";
    case LearnerKind::frequency: return "frequency";
  }
  return "?";
}

LearnerKind learner_kind_from_string(const std::string& s) {
  if (s == "ridge") return LearnerKind::ridge;
  if (s == "logistic") return LearnerKind::logistic;
  if (s == "stumps") return LearnerKind::stumps;
  if (s == "frequency") return LearnerKind::frequency;
  throw InvalidArgument("unknown learner '" + s + "' (expected ridge, logistic, stumps or frequency)");
}

void LearnerConfig::validate() const {
  if (!std::isfinite(l2) || l2 < 0.0) throw InvalidArgument("learner l2 must be finite and >= 0");
  if (max_iter == 0) throw InvalidArgument("learner max_iter must be >= 1");
  if (!(tol > 0.0)) throw InvalidArgument("learner tol must be > 0");
  if (depth == 0) throw InvalidArgument("learner depth must be >= 1");
  if (n_trees == 0) throw InvalidArgument("learner n_trees must be >= 1");
  if (!(learning_rate > 0.0 && learning_rate <= 1.0)) throw InvalidArgument("learner learning_rate must be in (0, 1]");
  if (max_bins < 2 || max_bins > 65535) throw InvalidArgument("learner max_bins must be in [2, 65535]");
}

nlohmann::json to_json(const LearnerConfig& c) {
  return {{"kind", to_string(c.kind)}, {"l2", c.l2},       {"max_iter", c.max_iter},
          {"tol", c.tol},              {"depth", c.depth}, {"n_trees", c.n_trees},
          {"learning_rate", c.learning_rate}, {"max_bins", c.max_bins}};
}

LearnerConfig learner_config_from_json(const nlohmann::json& j, LearnerConfig c) {
  if (!j.is_object()) throw InvalidArgument("learner config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "kind") c.kind = learner_kind_from_string(value.get<std::string>());
    else if (key == "l2") c.l2 = value.get<double>();
    else if (key == "max_iter") c.max_iter = value.get<std::size_t>();
    else if (key == "tol") c.tol = value.get<double>();
    else if (key == "depth") c.depth = value.get<std::size_t>();
    else if (key == "n_trees") c.n_trees = value.get<std::size_t>();
    else if (key == "learning_rate") c.learning_rate = value.get<double>();
    else if (key == "max_bins") c.max_bins = value.get<std::size_t>();
    else throw InvalidArgument("unknown learner config key '" + key + "'");
  }
  c.validate();
  return c;
}

FeatureMatrix::FeatureMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) throw InvalidArgument("feature buffer size does not match rows*cols");
}

void FeatureMatrix::validate() const {
  for (std::size_t k = 0; k < data_.size(); ++k)
    if (!std::isfinite(data_[k]))
      throw InvalidArgument("non-finite feature at row " + std::to_string(k / cols_) + ", column " +
                            std::to_string(k % cols_));
}

Standardization Standardization::fit(const FeatureMatrix& x, std::span<const double> weights) {
  const std::size_t n = x.rows(), d = x.cols();
  const std::vector<double> w = normalized_weights(weights, n);
  const double wsum = kernels::sum(w);
  Standardization s;
  s.mean.assign(d, 0.0);
  s.scale.assign(d, 1.0);
  s.constant.assign(d, false);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += w[i] * x(i, j);
  for (auto& m : s.mean) m /= wsum;
  std::vector<double> var(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double c = x(i, j) - s.mean[j];
      var[j] += w[i] * c * c;
    }
  for (std::size_t j = 0; j < d; ++j) {
    const double sd = std::sqrt(var[j] / wsum);
    if (sd <= 1e-12 * (1.0 + std::abs(s.mean[j]))) {
      s.constant[j] = true;
    } else {
      s.scale[j] = sd;
    }
  }
  return s;
}

FeatureMatrix Standardization::apply(const FeatureMatrix& x) const {
  if (x.cols() != mean.size()) throw InvalidArgument("standardization column count mismatch");
  FeatureMatrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = (x(i, j) - mean[j]) / scale[j];
  return out;
}

std::vector<double> Regressor::predict(const FeatureMatrix& x) const {
  std::vector<double> out(x.rows());
  predict(x, out);
  return out;
}

std::vector<double> ProbClassifier::predict_proba(const FeatureMatrix& x) const {
  std::vector<double> out(x.rows());
  predict_proba(x, out);
  return out;
}

// ---------------------------------------------------------------------------
// Ridge

RidgeRegressor RidgeRegressor::fit(const FeatureMatrix& x, std::span<const double> y,
                                   std::span<const double> weights, double l2) {
  check_rows(x, y.size(), "target");
  if (!std::isfinite(l2) || l2 < 0.0) throw InvalidArgument("ridge l2 must be finite and >= 0");
  const std::size_t n = x.rows(), d = x.cols();
  const std::vector<double> w = normalized_weights(weights, n);

  RidgeRegressor m;
  m.standardization_ = Standardization::fit(x, w);
  const auto& s = m.standardization_;
  const std::vector<std::size_t> active = active_columns(s);
  const std::size_t a = active.size();

  const double ybar = weighted_mean(y, w);
  m.std_coef_.assign(d, 0.0);
  if (a > 0) {
    const std::vector<double> xs = active_design(x, s, active, false);
    std::vector<double> yc(n);
    for (std::size_t i = 0; i < n; ++i) yc[i] = y[i] - ybar;
    std::vector<double> gram(a * a, 0.0), rhs(a, 0.0);
    kernels::weighted_gram(xs, a, w, yc, gram, rhs);
    for (std::size_t j = 0; j < a; ++j) gram[j * a + j] += l2;
    const std::vector<double> beta = detail::solve_spd(std::move(gram), rhs, a);
    for (std::size_t k = 0; k < a; ++k) m.std_coef_[active[k]] = beta[k];
  }
  m.coef_.assign(d, 0.0);
  m.intercept_ = ybar;
  for (std::size_t j = 0; j < d; ++j) {
    m.coef_[j] = m.std_coef_[j] / s.scale[j];
    m.intercept_ -= m.coef_[j] * s.mean[j];
  }
  return m;
}

void RidgeRegressor::predict(const FeatureMatrix& x, std::span<double> out) const {
  if (x.cols() != coef_.size()) throw InvalidArgument("ridge predict: column count mismatch");
  kernels::gemv_rows(x.data(), x.cols(), coef_, intercept_, out.first(x.rows()));
}

// ---------------------------------------------------------------------------
// Logistic

LogisticClassifier LogisticClassifier::fit(const FeatureMatrix& x, std::span<const std::uint8_t> labels,
                                           std::span<const double> weights, double l2,
                                           std::size_t max_iter, double tol) {
  check_rows(x, labels.size(), "label");
  if (!std::isfinite(l2) || l2 < 0.0) throw InvalidArgument("logistic l2 must be finite and >= 0");
  const std::size_t n = x.rows(), d = x.cols();
  const std::vector<double> w = normalized_weights(weights, n);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] > 1) throw InvalidArgument("logistic labels must be 0 or 1");
    y[i] = labels[i];
  }
  const double ybar = weighted_mean(y, w);
  if (!(ybar > 0.0 && ybar < 1.0)) throw InvalidArgument("logistic fit needs both classes with positive weight");

  const Standardization s = Standardization::fit(x, w);
  const std::vector<std::size_t> active = active_columns(s);
  const std::size_t p = active.size() + 1;
  const std::vector<double> xa = active_design(x, s, active, true);

  std::vector<double> beta(p, 0.0);
  beta[0] = std::log(ybar / (1.0 - ybar));
  std::vector<double> eta(n), prob(n), wh(n), work(n);

  auto objective = [&](const std::vector<double>& b) {
    kernels::gemv_rows(xa, p, b, 0.0, eta);
    double f = 0.0;
    for (std::size_t i = 0; i < n; ++i) f += w[i] * (softplus(eta[i]) - y[i] * eta[i]);
    for (std::size_t j = 1; j < p; ++j) f += 0.5 * l2 * b[j] * b[j];
    return f;
  };

  LogisticClassifier m;
  double f = objective(beta);
  m.history_.push_back(f);
  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    for (std::size_t i = 0; i < n; ++i) {
      prob[i] = sigmoid(eta[i]);
      const double h = std::max(prob[i] * (1.0 - prob[i]), 1e-12);
      wh[i] = w[i] * h;
      work[i] = (y[i] - prob[i]) / h;
    }
    std::vector<double> gram(p * p, 0.0), rhs(p, 0.0);
    kernels::weighted_gram(xa, p, wh, work, gram, rhs);
    for (std::size_t j = 1; j < p; ++j) {
      gram[j * p + j] += l2;
      rhs[j] -= l2 * beta[j];
    }
    const std::vector<double> step = detail::solve_spd(std::move(gram), rhs, p);

    double t = 1.0;
    bool accepted = false;
    std::vector<double> trial(p);
    double f_new = f;
    for (int halving = 0; halving < 40; ++halving, t *= 0.5) {
      for (std::size_t j = 0; j < p; ++j) trial[j] = beta[j] + t * step[j];
      f_new = objective(trial);
      if (std::isfinite(f_new) && f_new <= f) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      objective(beta);  // restore eta
      m.converged_ = true;
      break;
    }
    beta = trial;
    m.history_.push_back(f_new);
    const double change = f - f_new;
    f = f_new;
    if (change <= tol * std::max(1.0, std::abs(f))) {
      m.converged_ = true;
      break;
    }
  }

  m.coef_.assign(d, 0.0);
  m.intercept_ = beta[0];
  for (std::size_t k = 0; k < active.size(); ++k) {
    const std::size_t j = active[k];
    m.coef_[j] = beta[k + 1] / s.scale[j];
    m.intercept_ -= m.coef_[j] * s.mean[j];
  }
  return m;
}

void LogisticClassifier::predict_proba(const FeatureMatrix& x, std::span<double> out) const {
  if (x.cols() != coef_.size()) throw InvalidArgument("logistic predict: column count mismatch");
  auto o = out.first(x.rows());
  kernels::gemv_rows(x.data(), x.cols(), coef_, intercept_, o);
  for (double& v : o) v = sigmoid(v);
}

// ---------------------------------------------------------------------------
// Boosted trees

namespace {

std::vector<double> bin_thresholds(const FeatureMatrix& x, std::size_t j, std::size_t max_bins) {
  // Low-cardinality columns (the common case for coded covariates) skip the sort.
  std::vector<double> few;
  for (std::size_t i = 0; i < x.rows() && few.size() <= max_bins; ++i) {
    const double value = x(i, j);
    const auto it = std::lower_bound(few.begin(), few.end(), value);
    if (it == few.end() || *it != value) few.insert(it, value);
  }
  if (few.size() <= max_bins) {
    std::vector<double> thr;
    for (std::size_t k = 0; k + 1 < few.size(); ++k) thr.push_back(0.5 * (few[k] + few[k + 1]));
    return thr;
  }
  // Quantile cuts come from a strided subsample; exact order statistics buy
  // nothing at 64 bins.
  constexpr std::size_t kQuantileSample = 4096;
  const std::size_t stride = std::max<std::size_t>(1, x.rows() / kQuantileSample);
  std::vector<double> v;
  for (std::size_t i = 0; i < x.rows(); i += stride) v.push_back(x(i, j));
  std::sort(v.begin(), v.end());
  std::vector<double> distinct = v;
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  std::vector<double> thr;
  if (distinct.size() <= max_bins) {
    for (std::size_t k = 0; k + 1 < distinct.size(); ++k) thr.push_back(0.5 * (distinct[k] + distinct[k + 1]));
    return thr;
  }
  for (std::size_t k = 1; k < max_bins; ++k) thr.push_back(v[k * v.size() / max_bins]);
  thr.erase(std::unique(thr.begin(), thr.end()), thr.end());
  if (!thr.empty() && thr.back() >= distinct.back()) thr.pop_back();
  return thr;
}

}  // namespace

BoostedTrees BoostedTrees::fit(const FeatureMatrix& x, std::span<const double> targets,
                               std::span<const double> weights, Loss loss, const LearnerConfig& config) {
  config.validate();
  check_rows(x, targets.size(), "target");
  const std::size_t n = x.rows(), d = x.cols();
  const std::vector<double> w = normalized_weights(weights, n);

  std::vector<std::vector<double>> thresholds(d);
  std::vector<std::uint16_t> codes(n * d);
  for (std::size_t j = 0; j < d; ++j) {
    thresholds[j] = bin_thresholds(x, j, config.max_bins);
    const auto& t = thresholds[j];
    for (std::size_t i = 0; i < n; ++i)
      codes[i * d + j] = static_cast<std::uint16_t>(std::lower_bound(t.begin(), t.end(), x(i, j)) - t.begin());
  }

  // Rows sharing every bin code are indistinguishable to the trees, so growth
  // runs over distinct code patterns with summed gradients. Compression is
  // only attempted when the code space is small enough to guarantee it.
  std::vector<std::uint32_t> pattern(n);
  std::vector<std::vector<std::uint16_t>> bins(d);
  double code_space = 1.0;
  for (std::size_t j = 0; j < d; ++j) code_space *= static_cast<double>(thresholds[j].size() + 1);
  if (code_space > static_cast<double>(n) / 2.0) {
    std::iota(pattern.begin(), pattern.end(), std::uint32_t{0});
    for (std::size_t j = 0; j < d; ++j) {
      bins[j].resize(n);
      for (std::size_t i = 0; i < n; ++i) bins[j][i] = codes[i * d + j];
    }
  } else {
    std::map<std::vector<std::uint16_t>, std::uint32_t> ids;
    std::vector<std::uint16_t> key(d);
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(codes.begin() + i * d, d, key.begin());
      auto it = ids.find(key);
      if (it == ids.end()) {
        it = ids.emplace(key, static_cast<std::uint32_t>(ids.size())).first;
        for (std::size_t j = 0; j < d; ++j) bins[j].push_back(key[j]);
      }
      pattern[i] = it->second;
    }
  }
  const std::size_t patterns = d ? bins[0].size() : 1;
  std::vector<std::size_t> offset(d);
  std::size_t total_bins = 0;
  for (std::size_t j = 0; j < d; ++j) {
    offset[j] = total_bins;
    total_bins += thresholds[j].size() + 1;
  }

  BoostedTrees model;
  const double mean = weighted_mean(targets, w);
  if (loss == Loss::squared) {
    model.base_ = mean;
  } else {
    const double p = std::clamp(mean, 1e-6, 1.0 - 1e-6);
    model.base_ = std::log(p / (1.0 - p));
  }
  std::vector<double> f(n, model.base_), g(patterns), h(patterns), leaf(patterns);
  const double l2 = config.l2;

  for (std::size_t t = 0; t < config.n_trees; ++t) {
    std::fill(g.begin(), g.end(), 0.0);
    std::fill(h.begin(), h.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t p = pattern[i];
      if (loss == Loss::squared) {
        g[p] += w[i] * (f[i] - targets[i]);
        h[p] += w[i];
      } else {
        const double q = sigmoid(f[i]);
        g[p] += w[i] * (q - targets[i]);
        h[p] += w[i] * std::max(q * (1.0 - q), 1e-12);
      }
    }
    double h_total = 0.0;
    for (double v : h) h_total += v;
    const double min_hess = 1e-9 * h_total;

    std::vector<Node> nodes;
    std::vector<std::size_t> all(patterns);
    std::iota(all.begin(), all.end(), std::size_t{0});

    // Interleaved (gradient, hessian) histogram over every feature's bins.
    auto histogram = [&](const std::vector<std::size_t>& idx) {
      std::vector<double> hist(2 * total_bins, 0.0);
      for (std::size_t j = 0; j < d; ++j) {
        double* hj = hist.data() + 2 * offset[j];
        const auto& bj = bins[j];
        for (std::size_t p : idx) {
          hj[2 * bj[p]] += g[p];
          hj[2 * bj[p] + 1] += h[p];
        }
      }
      return hist;
    };

    // Depth-first growth; each call appends its node and returns the index.
    // Nodes that may still split receive their histogram from the caller: the
    // smaller child is scanned and the larger one is the parent minus it.
    auto grow = [&](auto&& self, std::vector<std::size_t> idx, std::vector<double> hist, std::size_t depth) -> int {
      double G = 0.0, H = 0.0;
      for (std::size_t p : idx) {
        G += g[p];
        H += h[p];
      }
      const int me = static_cast<int>(nodes.size());
      nodes.push_back(Node{});
      int best_f = -1;
      std::size_t best_k = 0;
      double best_gain = 0.0;
      if (depth < config.depth && idx.size() >= 2) {
        const double parent = G * G / (H + l2);
        for (std::size_t j = 0; j < d; ++j) {
          const std::size_t nb = thresholds[j].size() + 1;
          if (nb < 2) continue;
          const double* hj = hist.data() + 2 * offset[j];
          double gl = 0.0, hl = 0.0;
          for (std::size_t k = 0; k + 1 < nb; ++k) {
            gl += hj[2 * k];
            hl += hj[2 * k + 1];
            const double gr = G - gl, hr = H - hl;
            if (hl <= min_hess || hr <= min_hess) continue;
            const double gain = gl * gl / (hl + l2) + gr * gr / (hr + l2) - parent;
            if (gain > best_gain * (1.0 + 1e-12) + 1e-14 * std::max(1.0, parent)) {
              best_gain = gain;
              best_f = static_cast<int>(j);
              best_k = k;
            }
          }
        }
      }
      if (best_f < 0) {
        const double value = -config.learning_rate * G / (H + l2);
        nodes[me].value = value;
        for (std::size_t p : idx) leaf[p] = value;
        return me;
      }
      std::vector<std::size_t> left, right;
      const auto& bj = bins[best_f];
      for (std::size_t p : idx) (bj[p] <= best_k ? left : right).push_back(p);
      idx = {};
      std::vector<double> hist_left, hist_right;
      if (depth + 1 < config.depth) {
        const bool left_small = left.size() <= right.size();
        std::vector<double> small = histogram(left_small ? left : right);
        for (std::size_t k = 0; k < hist.size(); ++k) hist[k] -= small[k];
        hist_left = left_small ? std::move(small) : std::move(hist);
        hist_right = left_small ? std::move(hist) : std::move(small);
      }
      nodes[me].feature = best_f;
      nodes[me].threshold = thresholds[best_f][best_k];
      const int l = self(self, std::move(left), std::move(hist_left), depth + 1);
      const int r = self(self, std::move(right), std::move(hist_right), depth + 1);
      nodes[me].left = l;
      nodes[me].right = r;
      return me;
    };
    std::vector<double> root_hist = histogram(all);
    grow(grow, std::move(all), std::move(root_hist), 0);
    for (std::size_t i = 0; i < n; ++i) f[i] += leaf[pattern[i]];
    model.trees_.push_back(std::move(nodes));
  }

  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (loss == Loss::squared) {
      const double r = f[i] - targets[i];
      total += w[i] * r * r;
    } else {
      total += w[i] * (softplus(f[i]) - targets[i] * f[i]);
    }
  }
  model.training_loss_ = total / static_cast<double>(n);
  return model;
}

void BoostedTrees::score(const FeatureMatrix& x, std::span<double> out) const {
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto r = x.row(i);
    double s = base_;
    for (const auto& tree : trees_) {
      int k = 0;
      while (tree[k].feature >= 0) k = r[tree[k].feature] <= tree[k].threshold ? tree[k].left : tree[k].right;
      s += tree[k].value;
    }
    out[i] = s;
  }
}

void BoostedRegressor::predict(const FeatureMatrix& x, std::span<double> out) const { model_.score(x, out); }

void BoostedClassifier::predict_proba(const FeatureMatrix& x, std::span<double> out) const {
  model_.score(x, out);
  for (std::size_t i = 0; i < x.rows(); ++i) out[i] = sigmoid(out[i]);
}

// ---------------------------------------------------------------------------
// Frequency tables and constants

FrequencyTable FrequencyTable::fit(const FeatureMatrix& x, std::span<const double> targets,
                                   std::span<const double> weights) {
  check_rows(x, targets.size(), "target");
  const std::vector<double> w = normalized_weights(weights, x.rows());
  FrequencyTable t;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    if (w[i] <= 0.0) continue;
    const auto r = x.row(i);
    auto& cell = t.cells_[std::vector<double>(r.begin(), r.end())];
    cell.first += w[i] * targets[i];
    cell.second += w[i];
  }
  t.global_ = weighted_mean(targets, w);
  return t;
}

double FrequencyTable::lookup(std::span<const double> row) const {
  const auto it = cells_.find(std::vector<double>(row.begin(), row.end()));
  if (it == cells_.end()) return global_;
  return it->second.first / it->second.second;
}

void FrequencyRegressor::predict(const FeatureMatrix& x, std::span<double> out) const {
  for (std::size_t i = 0; i < x.rows(); ++i) out[i] = table_.lookup(x.row(i));
}

void FrequencyClassifier::predict_proba(const FeatureMatrix& x, std::span<double> out) const {
  for (std::size_t i = 0; i < x.rows(); ++i) out[i] = table_.lookup(x.row(i));
}

void ConstantRegressor::predict(const FeatureMatrix& x, std::span<double> out) const {
  std::fill_n(out.begin(), x.rows(), value_);
}

void ConstantClassifier::predict_proba(const FeatureMatrix& x, std::span<double> out) const {
  std::fill_n(out.begin(), x.rows(), p_);
}

// ---------------------------------------------------------------------------

std::shared_ptr<const Regressor> fit_regressor(const FeatureMatrix& x, std::span<const double> targets,
                                               std::span<const double> weights, const LearnerConfig& config) {
  config.validate();
  x.validate();
  for (double t : targets)
    if (!std::isfinite(t)) throw InvalidArgument("non-finite regression target");
  switch (config.kind) {
    case LearnerKind::ridge:
    case LearnerKind::logistic:
      return std::make_shared<RidgeRegressor>(RidgeRegressor::fit(x, targets, weights, config.l2));
    case LearnerKind::stumps:
      return std::make_shared<BoostedRegressor>(
          BoostedTrees::fit(x, targets, weights, BoostedTrees::Loss::squared, config));
    case LearnerKind::frequency:
      return std::make_shared<FrequencyRegressor>(FrequencyTable::fit(x, targets, weights));
  }
  throw InvalidArgument("unknown learner kind");
}

std::shared_ptr<const ProbClassifier> fit_classifier(const FeatureMatrix& x, std::span<const std::uint8_t> labels,
                                                     std::span<const double> weights,
                                                     const LearnerConfig& config) {
  config.validate();
  x.validate();
  check_rows(x, labels.size(), "label");
  const std::vector<double> w = normalized_weights(weights, x.rows());
  double w1 = 0.0, w0 = 0.0;
  std::vector<double> y(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 1) throw InvalidArgument("classifier labels must be 0 or 1");
    y[i] = labels[i];
    (labels[i] ? w1 : w0) += w[i];
  }
  if (!(w1 > 0.0 && w0 > 0.0)) throw InvalidArgument("classifier needs both classes with positive weight");
  switch (config.kind) {
    case LearnerKind::ridge:
    case LearnerKind::logistic:
      return std::make_shared<LogisticClassifier>(
          LogisticClassifier::fit(x, labels, w, config.l2, config.max_iter, config.tol));
    case LearnerKind::stumps:
      return std::make_shared<BoostedClassifier>(BoostedTrees::fit(x, y, w, BoostedTrees::Loss::logistic, config));
    case LearnerKind::frequency:
      return std::make_shared<FrequencyClassifier>(FrequencyTable::fit(x, y, w));
  }
  throw InvalidArgument("unknown learner kind");
}

double kfold_score(const FeatureMatrix& x, std::span<const double> targets, const LearnerConfig& config,
                   std::size_t k, std::uint64_t seed, bool classification) {
  const std::size_t n = x.rows();
  check_rows(x, targets.size(), "target");
  if (k < 2 || k > n) throw InvalidArgument("kfold_score needs 2 <= k <= rows");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::size_t> fold(n);
  for (std::size_t p = 0; p < n; ++p) fold[perm[p]] = p % k;

  double loss = 0.0;
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < n; ++i) (fold[i] == f ? test : train).push_back(i);
    auto gather = [&](const std::vector<std::size_t>& rows) {
      FeatureMatrix m(rows.size(), x.cols());
      for (std::size_t r = 0; r < rows.size(); ++r) std::copy_n(x.row(rows[r]).begin(), x.cols(), m.row(r).begin());
      return m;
    };
    const FeatureMatrix xtr = gather(train), xte = gather(test);
    std::vector<double> pred(test.size());
    if (classification) {
      std::vector<std::uint8_t> lab(train.size());
      for (std::size_t r = 0; r < train.size(); ++r) {
        const double t = targets[train[r]];
        if (t != 0.0 && t != 1.0) throw InvalidArgument("classification targets must be 0 or 1");
        lab[r] = static_cast<std::uint8_t>(t);
      }
      fit_classifier(xtr, lab, {}, config)->predict_proba(xte, pred);
    } else {
      std::vector<double> ytr(train.size());
      for (std::size_t r = 0; r < train.size(); ++r) ytr[r] = targets[train[r]];
      fit_regressor(xtr, ytr, {}, config)->predict(xte, pred);
    }
    for (std::size_t r = 0; r < test.size(); ++r) {
      const double e = pred[r] - targets[test[r]];
      loss += e * e;
    }
  }
  return loss / static_cast<double>(n);
}

}  // namespace pse
