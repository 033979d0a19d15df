#include "pse/scm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pse {
namespace {

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }
double std_normal_cdf(double t) { return 0.5 * std::erfc(-t / std::sqrt(2.0)); }

double row_dot(const std::vector<double>& m, std::size_t row, std::size_t cols,
               std::span<const double> v) {
  double acc = 0.0;
  for (std::size_t k = 0; k < cols; ++k) acc += m[row * cols + k] * v[k];
  return acc;
}

std::vector<double> uniform_weights(Rng& rng, std::size_t count, double scale) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> out(count);
  for (auto& x : out) x = u(rng) * scale;
  return out;
}

void check_size(const std::vector<double>& v, std::size_t n, const char* name) {
  if (v.size() != n)
    throw InvalidArgument(std::string("scm spec field '") + name + "' has size " +
                          std::to_string(v.size()) + ", expected " + std::to_string(n));
}

// Parent vector layout used by the tree ensembles: [x, z..., w..., v...].
struct Parents {
  std::vector<double> buf;
  Parents(const ScmSpec& s) : buf(1 + s.dim_z + s.dim_w + s.dim_v, 0.0) {}
  void fill(const ScmSpec& s, int x, std::span<const double> z, std::span<const double> w,
            std::span<const double> v) {
    buf[0] = x;
    std::copy(z.begin(), z.end(), buf.begin() + 1);
    std::copy(w.begin(), w.end(), buf.begin() + 1 + s.dim_z);
    std::copy(v.begin(), v.end(), buf.begin() + 1 + s.dim_z + s.dim_w);
  }
};

RandomTree random_tree(Rng& rng, std::size_t depth, std::size_t n_features, int forced_root,
                       double leaf_scale, std::span<const double> feature_threshold_scale) {
  std::uniform_int_distribution<std::size_t> pick(0, n_features - 1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  RandomTree tree;
  // Complete binary tree, breadth first.
  const std::size_t internal = (std::size_t{1} << depth) - 1;
  const std::size_t total = (std::size_t{1} << (depth + 1)) - 1;
  tree.nodes.resize(total);
  for (std::size_t i = 0; i < total; ++i) {
    auto& node = tree.nodes[i];
    if (i < internal) {
      const std::size_t f = (i == 0 && forced_root >= 0) ? static_cast<std::size_t>(forced_root) : pick(rng);
      node.feature = static_cast<int>(f);
      // Feature 0 is the binary exposure.
      node.threshold = f == 0 ? 0.5 : u(rng) * feature_threshold_scale[f];
      node.left = static_cast<int>(2 * i + 1);
      node.right = static_cast<int>(2 * i + 2);
    } else {
      node.value = u(rng) * leaf_scale;
    }
  }
  return tree;
}

nlohmann::json noise_to_json(const NoiseSpec& n) {
  if (!n.is_finite()) return {{"kind", "standard_normal"}};
  return {{"kind", "finite"}, {"atoms", n.atoms}, {"probs", n.probs}};
}

NoiseSpec noise_from_json(const nlohmann::json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "standard_normal") return NoiseSpec::standard_normal();
  if (kind == "finite")
    return NoiseSpec::finite(j.at("atoms").get<std::vector<double>>(),
                             j.at("probs").get<std::vector<double>>());
  throw InvalidArgument("unknown noise kind: " + kind);
}

nlohmann::json ensemble_to_json(const TreeEnsemble& e) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : e.trees) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : t.nodes)
      nodes.push_back({n.feature, n.threshold, n.left, n.right, n.value});
    trees.push_back(nodes);
  }
  return {{"bias", e.bias}, {"trees", trees}};
}

TreeEnsemble ensemble_from_json(const nlohmann::json& j) {
  TreeEnsemble e;
  e.bias = j.value("bias", 0.0);
  for (const auto& t : j.at("trees")) {
    RandomTree tree;
    for (const auto& n : t)
      tree.nodes.push_back({n.at(0).get<int>(), n.at(1).get<double>(), n.at(2).get<int>(),
                            n.at(3).get<int>(), n.at(4).get<double>()});
    e.trees.push_back(std::move(tree));
  }
  return e;
}

}  // namespace

std::string to_string(MechanismKind kind) {
  switch (kind) {
    case MechanismKind::binary_threshold: return "binary-threshold";
    case MechanismKind::linear_gaussian: return "linear-gaussian";
    case MechanismKind::nonlinear_surrogate: return "nonlinear-surrogate";
    case MechanismKind::discrete_enumerable: return "discrete-enumerable";
  }
  return "unknown";
}

MechanismKind mechanism_kind_from_string(const std::string& s) {
  if (s == "binary-threshold") return MechanismKind::binary_threshold;
  if (s == "linear-gaussian") return MechanismKind::linear_gaussian;
  if (s == "nonlinear-surrogate") return MechanismKind::nonlinear_surrogate;
  if (s == "discrete-enumerable") return MechanismKind::discrete_enumerable;
  throw InvalidArgument("unknown mechanism kind: " + s);
}

NoiseSpec NoiseSpec::finite(std::vector<double> atoms, std::vector<double> probs) {
  NoiseSpec n;
  n.kind = Kind::finite;
  n.atoms = std::move(atoms);
  n.probs = std::move(probs);
  n.validate();
  return n;
}

void NoiseSpec::validate() const {
  if (kind != Kind::finite) return;
  if (atoms.empty() || atoms.size() != probs.size())
    throw InvalidArgument("finite noise needs matching non-empty atoms and probs");
  double total = 0.0;
  for (double p : probs) {
    if (!(p > 0.0)) throw InvalidArgument("finite noise probabilities must be positive");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-12) throw InvalidArgument("finite noise probabilities must sum to 1");
}

double NoiseSpec::draw(NoiseSource& src) const {
  if (kind == Kind::standard_normal) return src.gaussian();
  double u = src.uniform();
  for (std::size_t k = 0; k + 1 < atoms.size(); ++k) {
    if (u < probs[k]) return atoms[k];
    u -= probs[k];
  }
  return atoms.back();
}

double RandomTree::eval(std::span<const double> parents) const {
  int i = 0;
  while (nodes[i].feature >= 0)
    i = parents[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
  return nodes[i].value;
}

double TreeEnsemble::eval(std::span<const double> parents) const {
  double acc = bias;
  for (const auto& t : trees) acc += t.eval(parents);
  return acc;
}

bool ScmSpec::enumerable() const {
  return kind == MechanismKind::discrete_enumerable && u_xz.is_finite() && u_x.is_finite() &&
         u_z.is_finite() && u_w.is_finite() && u_v.is_finite() && u_y.is_finite();
}

void ScmSpec::validate() const {
  if (dim_z == 0 || dim_w == 0 || dim_v == 0) throw InvalidArgument("scm dimensions must be >= 1");
  check_size(z_uxz, dim_z, "z_uxz");
  check_size(x_z, dim_z, "x_z");
  if (kind != MechanismKind::nonlinear_surrogate) {
    check_size(w_x, dim_w, "w_x");
    check_size(w_z, dim_w * dim_z, "w_z");
    check_size(v_x, dim_v, "v_x");
    check_size(v_w, dim_v * dim_w, "v_w");
    check_size(v_z, dim_v * dim_z, "v_z");
    check_size(y_w, dim_w, "y_w");
    check_size(y_v, dim_v, "y_v");
    check_size(y_z, dim_z, "y_z");
  } else {
    if (w_trees.size() != dim_w || v_trees.size() != dim_v)
      throw InvalidArgument("nonlinear surrogate needs one ensemble per W and V coordinate");
  }
  if (thresholded()) {
    check_size(z_threshold, dim_z, "z_threshold");
    check_size(w_threshold, dim_w, "w_threshold");
    check_size(v_threshold, dim_v, "v_threshold");
  }
  for (const auto* n : {&u_xz, &u_x, &u_z, &u_w, &u_v, &u_y}) n->validate();
  if (kind == MechanismKind::discrete_enumerable && !enumerable())
    throw InvalidArgument("discrete-enumerable spec requires finite-support noise everywhere");
}

void draw_exogenous(const ScmSpec& spec, NoiseSource& src, Exogenous& u) {
  u.u_z.resize(spec.dim_z);
  u.u_w.resize(spec.dim_w);
  u.u_v.resize(spec.dim_v);
  u.u_xz = spec.u_xz.draw(src);
  u.u_x = spec.u_x.draw(src);
  for (auto& e : u.u_z) e = spec.u_z.draw(src);
  for (auto& e : u.u_w) e = spec.u_w.draw(src);
  for (auto& e : u.u_v) e = spec.u_v.draw(src);
  u.u_y = spec.u_y.draw(src);
}

void eval_z(const ScmSpec& s, const Exogenous& u, std::span<double> z) {
  for (std::size_t j = 0; j < s.dim_z; ++j) {
    const double idx = s.z_uxz[j] * u.u_xz + s.z_noise_scale * u.u_z[j];
    z[j] = s.thresholded() ? (idx > s.z_threshold[j] ? 1.0 : 0.0) : idx;
  }
}

double x_index(const ScmSpec& s, std::span<const double> z, const Exogenous& u) {
  double idx = s.x_uxz * u.u_xz + u.u_x;
  for (std::size_t k = 0; k < s.dim_z; ++k) idx += s.x_z[k] * z[k];
  return idx;
}

int eval_x(const ScmSpec& s, std::span<const double> z, const Exogenous& u) {
  return x_index(s, z, u) > s.x_threshold ? 1 : 0;
}

void eval_w(const ScmSpec& s, int x, std::span<const double> z, const Exogenous& u,
            std::span<double> w) {
  if (s.kind == MechanismKind::nonlinear_surrogate) {
    Parents p(s);
    p.fill(s, x, z, {}, {});
    for (std::size_t j = 0; j < s.dim_w; ++j) w[j] = s.w_trees[j].eval(p.buf) + u.u_w[j];
    return;
  }
  for (std::size_t j = 0; j < s.dim_w; ++j) {
    const double idx = s.w_x[j] * x + row_dot(s.w_z, j, s.dim_z, z) + u.u_w[j];
    w[j] = s.thresholded() ? (idx > s.w_threshold[j] ? 1.0 : 0.0) : idx;
  }
}

void eval_v(const ScmSpec& s, int x, std::span<const double> w, std::span<const double> z,
            const Exogenous& u, std::span<double> v) {
  if (s.kind == MechanismKind::nonlinear_surrogate) {
    Parents p(s);
    p.fill(s, x, z, w, {});
    for (std::size_t j = 0; j < s.dim_v; ++j) v[j] = s.v_trees[j].eval(p.buf) + u.u_v[j];
    return;
  }
  for (std::size_t j = 0; j < s.dim_v; ++j) {
    const double idx = s.v_x[j] * x + row_dot(s.v_w, j, s.dim_w, w) +
                       row_dot(s.v_z, j, s.dim_z, z) + u.u_v[j];
    v[j] = s.thresholded() ? (idx > s.v_threshold[j] ? 1.0 : 0.0) : idx;
  }
}

double eval_y(const ScmSpec& s, int x, std::span<const double> w, std::span<const double> v,
              std::span<const double> z, const Exogenous& u) {
  if (s.kind == MechanismKind::nonlinear_surrogate) {
    Parents p(s);
    p.fill(s, x, z, w, v);
    return std_normal_cdf(u.u_y) < sigmoid(s.y_tree.eval(p.buf)) ? 1.0 : 0.0;
  }
  double idx = s.y_x * x + u.u_y;
  for (std::size_t k = 0; k < s.dim_w; ++k) idx += s.y_w[k] * w[k];
  for (std::size_t k = 0; k < s.dim_v; ++k) idx += s.y_v[k] * v[k];
  for (std::size_t k = 0; k < s.dim_z; ++k) idx += s.y_z[k] * z[k];
  return s.thresholded() ? (idx > s.y_threshold ? 1.0 : 0.0) : idx;
}

ScmSpec binary_scm() {
  ScmSpec s;
  s.kind = MechanismKind::binary_threshold;
  s.dim_z = s.dim_w = s.dim_v = 1;
  s.z_uxz = {1.0};
  s.z_noise_scale = 0.0;
  s.z_threshold = {0.2};
  s.x_z = {1.0};
  s.x_uxz = 1.0;
  s.x_threshold = 0.2;
  s.w_x = {1.0};
  s.w_z = {-1.0};
  s.w_threshold = {0.8};
  s.v_x = {1.0};
  s.v_w = {1.0};
  s.v_z = {-1.0};
  s.v_threshold = {0.8};
  s.y_x = 1.0;
  s.y_w = {2.0};
  s.y_v = {-2.0};
  s.y_z = {-1.0};
  s.y_threshold = 0.2;
  return s;
}

ScmSpec discrete_reference_scm() {
  ScmSpec s = binary_scm();
  s.kind = MechanismKind::discrete_enumerable;
  s.u_xz = NoiseSpec::finite({-1.0, 0.5, 1.5}, {0.5, 0.3, 0.2});
  s.u_x = NoiseSpec::finite({-1.5, 0.0, 1.5}, {0.3, 0.4, 0.3});
  s.u_z = NoiseSpec::finite({0.0}, {1.0});
  s.u_w = NoiseSpec::finite({-1.5, 0.5, 2.0}, {0.3, 0.4, 0.3});
  s.u_v = NoiseSpec::finite({-1.5, 0.5, 2.5}, {0.25, 0.5, 0.25});
  s.u_y = NoiseSpec::finite({-3.5, 0.0, 3.5}, {0.2, 0.5, 0.3});
  s.validate();
  return s;
}

ScmSpec linear_scm(std::size_t dim_z, std::size_t dim_w, std::size_t dim_v, std::uint64_t seed) {
  if (dim_z == 0 || dim_w == 0 || dim_v == 0)
    throw InvalidArgument("linear_scm: dimensions must be >= 1");
  Rng rng(derive_seed(seed, 0x4c494e));
  ScmSpec s;
  s.kind = MechanismKind::linear_gaussian;
  s.dim_z = dim_z;
  s.dim_w = dim_w;
  s.dim_v = dim_v;
  s.seed = seed;
  auto scale = [](std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };
  s.z_uxz = uniform_weights(rng, dim_z, 1.0);
  s.z_noise_scale = 1.0;
  s.x_z = uniform_weights(rng, dim_z, scale(dim_z));
  s.x_uxz = 1.0;
  s.x_threshold = 0.0;
  const double sw = scale(1 + dim_z);
  s.w_x = uniform_weights(rng, dim_w, sw);
  s.w_z = uniform_weights(rng, dim_w * dim_z, sw);
  const double sv = scale(1 + dim_w + dim_z);
  s.v_x = uniform_weights(rng, dim_v, sv);
  s.v_w = uniform_weights(rng, dim_v * dim_w, sv);
  s.v_z = uniform_weights(rng, dim_v * dim_z, sv);
  const double sy = scale(1 + dim_w + dim_v + dim_z);
  s.y_x = uniform_weights(rng, 1, sy)[0];
  s.y_w = uniform_weights(rng, dim_w, sy);
  s.y_v = uniform_weights(rng, dim_v, sy);
  s.y_z = uniform_weights(rng, dim_z, sy);
  return s;
}

ScmSpec nonlinear_scm(std::size_t dim_z, std::size_t dim_w, std::size_t dim_v, std::size_t depth,
                      std::uint64_t seed, std::size_t n_trees) {
  if (dim_z == 0 || dim_w == 0 || dim_v == 0 || depth == 0)
    throw InvalidArgument("nonlinear_scm: dimensions and depth must be >= 1");
  // Z and X mechanisms are shared with the linear model.
  ScmSpec lin = linear_scm(dim_z, dim_w, dim_v, seed);
  ScmSpec s;
  s.kind = MechanismKind::nonlinear_surrogate;
  s.dim_z = dim_z;
  s.dim_w = dim_w;
  s.dim_v = dim_v;
  s.seed = seed;
  s.z_uxz = lin.z_uxz;
  s.z_noise_scale = 1.0;
  s.x_z = lin.x_z;
  s.x_uxz = 1.0;
  s.x_threshold = 0.0;

  Rng rng(derive_seed(seed, 0x545245));
  const std::size_t n_all = 1 + dim_z + dim_w + dim_v;
  // Thresholds are drawn on the typical scale of each parent.
  std::vector<double> thr_scale(n_all, 1.0);
  const double leaf = n_trees > 0 ? 2.0 / std::sqrt(static_cast<double>(n_trees)) : 0.0;
  auto build = [&](std::size_t n_parents, int forced_root) {
    TreeEnsemble e;
    for (std::size_t t = 0; t < n_trees; ++t)
      e.trees.push_back(random_tree(rng, depth, n_parents, t == 0 ? forced_root : -1, leaf, thr_scale));
    return e;
  };
  for (std::size_t j = 0; j < dim_w; ++j) s.w_trees.push_back(build(1 + dim_z, -1));
  // The first tree of every V coordinate splits on X at the root and the first
  // outcome tree splits on V_1, so the X -> V -> Y path is always present.
  for (std::size_t j = 0; j < dim_v; ++j) s.v_trees.push_back(build(1 + dim_z + dim_w, 0));
  s.y_tree = build(n_all, static_cast<int>(1 + dim_z + dim_w));
  return s;
}

Cohort sample(const ScmSpec& spec, std::size_t n, std::uint64_t seed) {
  spec.validate();
  if (n == 0) throw InvalidArgument("sample: n must be >= 1");
  NoiseSource src(derive_seed(spec.seed, seed));
  Cohort c;
  c.dim_z = spec.dim_z;
  c.dim_w = spec.dim_w;
  c.dim_v = spec.dim_v;
  c.z.resize(n * spec.dim_z);
  c.w.resize(n * spec.dim_w);
  c.v.resize(n * spec.dim_v);
  c.x.resize(n);
  c.y.resize(n);
  Exogenous u;
  for (std::size_t i = 0; i < n; ++i) {
    draw_exogenous(spec, src, u);
    std::span<double> z(c.z.data() + i * spec.dim_z, spec.dim_z);
    std::span<double> w(c.w.data() + i * spec.dim_w, spec.dim_w);
    std::span<double> v(c.v.data() + i * spec.dim_v, spec.dim_v);
    eval_z(spec, u, z);
    const int x = eval_x(spec, z, u);
    eval_w(spec, x, z, u, w);
    eval_v(spec, x, w, z, u, v);
    c.x[i] = static_cast<std::uint8_t>(x);
    c.y[i] = eval_y(spec, x, w, v, z, u);
  }
  c.ensure_names();
  return c;
}

ScmSpec calibrate_imbalance(const ScmSpec& spec, double eta, std::size_t draws) {
  spec.validate();
  if (!(eta > 0.0 && eta < 1.0)) throw InvalidArgument("calibrate_imbalance: eta must lie in (0,1)");
  NoiseSource src(derive_seed(spec.seed, 0x43414c));
  std::vector<double> index(draws);
  std::vector<double> z(spec.dim_z);
  Exogenous u;
  for (auto& idx : index) {
    draw_exogenous(spec, src, u);
    eval_z(spec, u, z);
    idx = x_index(spec, z, u);
  }
  std::sort(index.begin(), index.end());
  const double n = static_cast<double>(draws);
  // Fraction of draws with index strictly above t; non-increasing in t.
  auto p_above = [&](double t) {
    auto it = std::upper_bound(index.begin(), index.end(), t);
    return static_cast<double>(index.end() - it) / n;
  };
  double lo = index.front() - 1.0;  // p_above(lo) = 1 >= eta
  double hi = index.back() + 1.0;   // p_above(hi) = 0 < eta
  for (int iter = 0; iter < 200 && hi - lo > 1e-12 * (1.0 + std::abs(lo)); ++iter) {
    const double mid = 0.5 * (lo + hi);
    (p_above(mid) >= eta ? lo : hi) = mid;
  }
  const double t = std::abs(p_above(lo) - eta) <= std::abs(p_above(hi) - eta) ? lo : hi;
  const double achieved = p_above(t);
  if (std::abs(achieved - eta) > kCalibrationTolerance)
    throw Error("calibrate_imbalance: eta=" + std::to_string(eta) +
                " is unreachable; closest achievable P(X=1) is " + std::to_string(achieved));
  ScmSpec out = spec;
  out.x_threshold = t;
  return out;
}

nlohmann::json to_json(const ScmSpec& s) {
  nlohmann::json j{{"kind", to_string(s.kind)},
                   {"dims", {s.dim_z, s.dim_w, s.dim_v}},
                   {"seed", s.seed},
                   {"weights",
                    {{"z_uxz", s.z_uxz},
                     {"z_noise_scale", s.z_noise_scale},
                     {"x_z", s.x_z},
                     {"x_uxz", s.x_uxz},
                     {"w_x", s.w_x},
                     {"w_z", s.w_z},
                     {"v_x", s.v_x},
                     {"v_w", s.v_w},
                     {"v_z", s.v_z},
                     {"y_x", s.y_x},
                     {"y_w", s.y_w},
                     {"y_v", s.y_v},
                     {"y_z", s.y_z}}},
                   {"thresholds",
                    {{"z", s.z_threshold},
                     {"x", s.x_threshold},
                     {"w", s.w_threshold},
                     {"v", s.v_threshold},
                     {"y", s.y_threshold}}},
                   {"noise",
                    {{"u_xz", noise_to_json(s.u_xz)},
                     {"u_x", noise_to_json(s.u_x)},
                     {"u_z", noise_to_json(s.u_z)},
                     {"u_w", noise_to_json(s.u_w)},
                     {"u_v", noise_to_json(s.u_v)},
                     {"u_y", noise_to_json(s.u_y)}}}};
  if (s.kind == MechanismKind::nonlinear_surrogate) {
    nlohmann::json w = nlohmann::json::array(), v = nlohmann::json::array();
    for (auto& e : s.w_trees) w.push_back(ensemble_to_json(e));
    for (auto& e : s.v_trees) v.push_back(ensemble_to_json(e));
    j["ensembles"] = {{"w", w}, {"v", v}, {"y", ensemble_to_json(s.y_tree)}};
  }
  return j;
}

ScmSpec scm_from_json(const nlohmann::json& j) {
  ScmSpec s;
  s.kind = mechanism_kind_from_string(j.at("kind").get<std::string>());
  const auto dims = j.at("dims").get<std::vector<std::size_t>>();
  if (dims.size() != 3) throw InvalidArgument("scm dims must have three entries");
  s.dim_z = dims[0];
  s.dim_w = dims[1];
  s.dim_v = dims[2];
  s.seed = j.value("seed", std::uint64_t{0});
  const auto& w = j.at("weights");
  auto vec = [&](const char* key) { return w.value(key, std::vector<double>{}); };
  s.z_uxz = vec("z_uxz");
  s.z_noise_scale = w.value("z_noise_scale", 0.0);
  s.x_z = vec("x_z");
  s.x_uxz = w.value("x_uxz", 1.0);
  s.w_x = vec("w_x");
  s.w_z = vec("w_z");
  s.v_x = vec("v_x");
  s.v_w = vec("v_w");
  s.v_z = vec("v_z");
  s.y_x = w.value("y_x", 0.0);
  s.y_w = vec("y_w");
  s.y_v = vec("y_v");
  s.y_z = vec("y_z");
  const auto& t = j.at("thresholds");
  s.z_threshold = t.value("z", std::vector<double>{});
  s.x_threshold = t.value("x", 0.0);
  s.w_threshold = t.value("w", std::vector<double>{});
  s.v_threshold = t.value("v", std::vector<double>{});
  s.y_threshold = t.value("y", 0.0);
  const auto& n = j.at("noise");
  s.u_xz = noise_from_json(n.at("u_xz"));
  s.u_x = noise_from_json(n.at("u_x"));
  s.u_z = noise_from_json(n.at("u_z"));
  s.u_w = noise_from_json(n.at("u_w"));
  s.u_v = noise_from_json(n.at("u_v"));
  s.u_y = noise_from_json(n.at("u_y"));
  if (j.contains("ensembles")) {
    const auto& e = j["ensembles"];
    for (const auto& x : e.at("w")) s.w_trees.push_back(ensemble_from_json(x));
    for (const auto& x : e.at("v")) s.v_trees.push_back(ensemble_from_json(x));
    s.y_tree = ensemble_from_json(e.at("y"));
  }
  s.validate();
  return s;
}

}  // namespace pse
