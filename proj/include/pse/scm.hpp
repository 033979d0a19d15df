#pragma once

// Structural causal models over (Z, X, W, V, Y) with the fixed graph
//   Z -> {X, W, V, Y},  X -> {W, V, Y},  W -> {V, Y},  V -> Y,
// and latent X-Z confounding through a shared exogenous term U_XZ.
//
// Each endogenous block is a function of its parents and its own exogenous
// noise. The per-variable mechanism functions are public so that oracles can
// evaluate counterfactuals by composing them under arbitrary interventions.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pse/cohort.hpp"
#include "pse/common.hpp"

namespace pse {

enum class MechanismKind { binary_threshold, linear_gaussian, nonlinear_surrogate, discrete_enumerable };

std::string to_string(MechanismKind kind);
MechanismKind mechanism_kind_from_string(const std::string& s);

struct NoiseSpec {
  enum class Kind { standard_normal, finite };
  Kind kind = Kind::standard_normal;
  std::vector<double> atoms;
  std::vector<double> probs;

  static NoiseSpec standard_normal() { return {}; }
  static NoiseSpec finite(std::vector<double> atoms, std::vector<double> probs);

  bool is_finite() const { return kind == Kind::finite; }
  double draw(NoiseSource& src) const;
  void validate() const;
};

// Shallow regression tree over the parent vector [x, z..., w..., v...] used by
// the nonlinear surrogate mechanisms. Node 0 is the root; leaves have
// feature == -1.
struct RandomTree {
  struct Node {
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
  };
  std::vector<Node> nodes;

  double eval(std::span<const double> parents) const;
};

struct TreeEnsemble {
  double bias = 0.0;
  std::vector<RandomTree> trees;

  double eval(std::span<const double> parents) const;
};

struct ScmSpec {
  MechanismKind kind = MechanismKind::binary_threshold;
  std::size_t dim_z = 1;
  std::size_t dim_w = 1;
  std::size_t dim_v = 1;

  // Linear indices. Matrices are row-major (rows = output coordinates).
  //   Z_j index = z_uxz_j U_XZ + z_noise_scale U_Zj
  //   X index   = <x_z, Z> + x_uxz U_XZ + U_X                 (X = 1[index > x_threshold])
  //   W_j index = w_x_j X + <w_z_j, Z> + U_Wj
  //   V_j index = v_x_j X + <v_w_j, W> + <v_z_j, Z> + U_Vj
  //   Y index   = y_x X + <y_w, W> + <y_v, V> + <y_z, Z> + U_Y
  // Threshold kinds emit 1[index > threshold] for every block; the linear kind
  // emits the index itself for Z, W, V, Y. The nonlinear surrogate replaces the
  // W, V, Y linear parts by tree ensembles over the parent vector and emits
  // Y = 1[Phi(U_Y) < sigmoid(ensemble)].
  std::vector<double> z_uxz;
  double z_noise_scale = 0.0;
  std::vector<double> x_z;
  double x_uxz = 1.0;
  std::vector<double> w_x, w_z;
  std::vector<double> v_x, v_w, v_z;
  double y_x = 0.0;
  std::vector<double> y_w, y_v, y_z;

  std::vector<double> z_threshold, w_threshold, v_threshold;
  double x_threshold = 0.0;
  double y_threshold = 0.0;

  std::vector<TreeEnsemble> w_trees, v_trees;  // one ensemble per coordinate
  TreeEnsemble y_tree;

  NoiseSpec u_xz, u_x, u_z, u_w, u_v, u_y;

  std::uint64_t seed = 0;

  bool thresholded() const {
    return kind == MechanismKind::binary_threshold || kind == MechanismKind::discrete_enumerable;
  }
  bool enumerable() const;
  // Throws InvalidArgument describing the first inconsistency.
  void validate() const;
};

// One draw of every exogenous term.
struct Exogenous {
  double u_xz = 0.0;
  double u_x = 0.0;
  std::vector<double> u_z, u_w, u_v;
  double u_y = 0.0;
};

void draw_exogenous(const ScmSpec& spec, NoiseSource& src, Exogenous& out);

// Mechanisms. Outputs are written into the provided buffers.
void eval_z(const ScmSpec& spec, const Exogenous& u, std::span<double> z);
int eval_x(const ScmSpec& spec, std::span<const double> z, const Exogenous& u);
double x_index(const ScmSpec& spec, std::span<const double> z, const Exogenous& u);
void eval_w(const ScmSpec& spec, int x, std::span<const double> z, const Exogenous& u,
            std::span<double> w);
void eval_v(const ScmSpec& spec, int x, std::span<const double> w, std::span<const double> z,
            const Exogenous& u, std::span<double> v);
double eval_y(const ScmSpec& spec, int x, std::span<const double> w, std::span<const double> v,
              std::span<const double> z, const Exogenous& u);

// Binary threshold model with standard normal noise:
//   Z=1[U_XZ>0.2], X=1[Z+U_X+U_XZ>0.2], W=1[X-Z+U_W>0.8],
//   V=1[X-Z+W+U_V>0.8], Y=1[X-Z+2(W-V)+U_Y>0.2].
ScmSpec binary_scm();

// Linear-Gaussian model; weights are i.i.d. U[-1,1] / sqrt(fan-in) drawn from
// seed, X is thresholded at 0.
ScmSpec linear_scm(std::size_t dim_z = 3, std::size_t dim_w = 10, std::size_t dim_v = 3,
                   std::uint64_t seed = 0);

inline constexpr std::size_t kDefaultSurrogateTrees = 8;

// Nonlinear surrogate: random depth-limited tree ensembles for W, V, Y with a
// binary outcome. n_trees = 0 gives noise-only mechanisms.
ScmSpec nonlinear_scm(std::size_t dim_z = 3, std::size_t dim_w = 10, std::size_t dim_v = 3,
                      std::size_t depth = 2, std::uint64_t seed = 0,
                      std::size_t n_trees = kDefaultSurrogateTrees);

// Small binary model with three-atom noise everywhere; every cell of its joint
// has positive mass, so identification formulas are well defined.
ScmSpec discrete_reference_scm();

// n i.i.d. observational draws; deterministic in (spec.seed, seed).
Cohort sample(const ScmSpec& spec, std::size_t n, std::uint64_t seed);

inline constexpr std::size_t kCalibrationDraws = 1'000'000;
inline constexpr double kCalibrationTolerance = 0.005;

// Returns spec with x_threshold moved so that P(X=1) is within 0.005 of eta,
// found by bisection on a fixed set of draws of the X index.
ScmSpec calibrate_imbalance(const ScmSpec& spec, double eta,
                            std::size_t draws = kCalibrationDraws);

nlohmann::json to_json(const ScmSpec& spec);
ScmSpec scm_from_json(const nlohmann::json& j);

}  // namespace pse
