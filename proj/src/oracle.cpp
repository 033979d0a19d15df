#include "pse/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace pse {
namespace {

using Key = std::vector<double>;

// Counterfactual worlds evaluated for one exogenous draw.
struct Worlds {
  std::vector<double> z, w_a, v_a, w_b, v_b;
};

// Y_x with all mediators at their natural response to x.
double y_under(const ScmSpec& s, const Exogenous& u, std::span<const double> z, int x, Worlds& b) {
  eval_w(s, x, z, u, b.w_a);
  eval_v(s, x, b.w_a, z, u, b.v_a);
  return eval_y(s, x, b.w_a, b.v_a, z, u);
}

// Y_{x1, V_{x0, W_{x1}}}
double y_nested_vde(const ScmSpec& s, const Exogenous& u, std::span<const double> z, int x0,
                    int x1, Worlds& b) {
  eval_w(s, x1, z, u, b.w_a);
  eval_v(s, x0, b.w_a, z, u, b.v_a);
  return eval_y(s, x1, b.w_a, b.v_a, z, u);
}

// Y_{x1, W_{x0}, V_{x0}}
double y_nested_nde(const ScmSpec& s, const Exogenous& u, std::span<const double> z, int x0,
                    int x1, Worlds& b) {
  eval_w(s, x0, z, u, b.w_a);
  eval_v(s, x0, b.w_a, z, u, b.v_a);
  return eval_y(s, x1, b.w_a, b.v_a, z, u);
}

bool uses_v_only(const EffectQuery& q) {
  if (q.kind == QueryKind::nie_star) return true;
  return (q.kind == QueryKind::nested_nde || q.kind == QueryKind::nde || q.kind == QueryKind::nie) &&
         q.mediators == MediatorSet::v_only;
}

// Per-draw value for single-world-composable queries.
double per_draw(const ScmSpec& s, const EffectQuery& q, const Exogenous& u,
                std::span<const double> z, Worlds& b) {
  switch (q.kind) {
    case QueryKind::mean_yx: return y_under(s, u, z, q.x1, b);
    case QueryKind::nested_vde: return y_nested_vde(s, u, z, q.x0, q.x1, b);
    case QueryKind::nested_nde: return y_nested_nde(s, u, z, q.x0, q.x1, b);
    case QueryKind::te: return y_under(s, u, z, q.x1, b) - y_under(s, u, z, q.x0, b);
    case QueryKind::nde: return y_nested_nde(s, u, z, q.x0, q.x1, b) - y_under(s, u, z, q.x0, b);
    case QueryKind::nie: return y_under(s, u, z, q.x1, b) - y_nested_nde(s, u, z, q.x0, q.x1, b);
    case QueryKind::vde: return y_under(s, u, z, q.x1, b) - y_nested_vde(s, u, z, q.x0, q.x1, b);
    case QueryKind::nie_star: break;
  }
  throw InvalidArgument("query is not single-world composable");
}

// Tables for the V-only nested term, built from interventional worlds.
struct VOnlyTables {
  std::map<Key, double> pz;                 // z -> mass
  std::map<std::pair<Key, Key>, double> pv0;  // (z, v) -> mass of V_x0 = v
  std::map<std::pair<Key, Key>, double> pv1;  // (z, v) -> mass of V_x1 = v
  std::map<std::pair<Key, Key>, double> sy1;  // (z, v) -> sum of Y_x1 over V_x1 = v
  double sum_y_x0 = 0.0;
  double sum_y_x1 = 0.0;
  double mass = 0.0;

  void add(const ScmSpec& s, const Exogenous& u, std::span<const double> z, int x0, int x1,
           double p, Worlds& b) {
    Key zk(z.begin(), z.end());
    pz[zk] += p;
    const double y0 = y_under(s, u, z, x0, b);
    pv0[{zk, Key(b.v_a.begin(), b.v_a.end())}] += p;
    const double y1 = y_under(s, u, z, x1, b);
    Key v1(b.v_a.begin(), b.v_a.end());
    pv1[{zk, v1}] += p;
    sy1[{zk, v1}] += p * y1;
    sum_y_x0 += p * y0;
    sum_y_x1 += p * y1;
    mass += p;
  }

  void merge(const VOnlyTables& o) {
    for (auto& [k, m] : o.pz) pz[k] += m;
    for (auto& [k, m] : o.pv0) pv0[k] += m;
    for (auto& [k, m] : o.pv1) pv1[k] += m;
    for (auto& [k, m] : o.sy1) sy1[k] += m;
    sum_y_x0 += o.sum_y_x0;
    sum_y_x1 += o.sum_y_x1;
    mass += o.mass;
  }

  double nested() const {
    double acc = 0.0;
    for (auto& [zk, mz] : pz) {
      double inner = 0.0;
      for (auto it = pv0.lower_bound({zk, Key{}}); it != pv0.end() && it->first.first == zk; ++it) {
        auto y = sy1.find(it->first);
        auto m1 = pv1.find(it->first);
        if (m1 == pv1.end() || m1->second <= 0.0)
          throw PositivityError("V-only nested term: V_x1 never takes a value that V_x0 takes");
        inner += (it->second / mz) * (y->second / m1->second);
      }
      acc += mz * inner;
    }
    return acc / mass;
  }

  double value(QueryKind kind) const {
    const double t = nested();
    switch (kind) {
      case QueryKind::nested_nde: return t;
      case QueryKind::nde: return t - sum_y_x0 / mass;
      case QueryKind::nie:
      case QueryKind::nie_star: return sum_y_x1 / mass - t;
      default: break;
    }
    throw InvalidArgument("unsupported V-only query");
  }
};

// Calls fn(u, prob) for every point of the finite noise support.
void for_each_atom_combo(const ScmSpec& s, const std::function<void(const Exogenous&, double)>& fn) {
  std::vector<const NoiseSpec*> slots;
  slots.push_back(&s.u_xz);
  slots.push_back(&s.u_x);
  for (std::size_t k = 0; k < s.dim_z; ++k) slots.push_back(&s.u_z);
  for (std::size_t k = 0; k < s.dim_w; ++k) slots.push_back(&s.u_w);
  for (std::size_t k = 0; k < s.dim_v; ++k) slots.push_back(&s.u_v);
  slots.push_back(&s.u_y);
  std::vector<std::size_t> idx(slots.size(), 0);
  Exogenous u;
  u.u_z.resize(s.dim_z);
  u.u_w.resize(s.dim_w);
  u.u_v.resize(s.dim_v);
  while (true) {
    double p = 1.0;
    std::size_t k = 0;
    auto take = [&](double& dst) {
      dst = slots[k]->atoms[idx[k]];
      p *= slots[k]->probs[idx[k]];
      ++k;
    };
    take(u.u_xz);
    take(u.u_x);
    for (auto& e : u.u_z) take(e);
    for (auto& e : u.u_w) take(e);
    for (auto& e : u.u_v) take(e);
    take(u.u_y);
    fn(u, p);
    std::size_t pos = 0;
    while (pos < slots.size() && ++idx[pos] == slots[pos]->atoms.size()) idx[pos++] = 0;
    if (pos == slots.size()) break;
  }
}

Worlds make_worlds(const ScmSpec& s) {
  return {std::vector<double>(s.dim_z), std::vector<double>(s.dim_w), std::vector<double>(s.dim_v),
          std::vector<double>(s.dim_w), std::vector<double>(s.dim_v)};
}

std::string describe(const char* what, int x, const Key& z, const Key* w = nullptr,
                     const Key* v = nullptr) {
  std::ostringstream os;
  os << what << " (x=" << x << ", z=[";
  for (std::size_t i = 0; i < z.size(); ++i) os << (i ? "," : "") << z[i];
  os << "]";
  auto block = [&](const char* name, const Key* k) {
    if (!k) return;
    os << ", " << name << "=[";
    for (std::size_t i = 0; i < k->size(); ++i) os << (i ? "," : "") << (*k)[i];
    os << "]";
  };
  block("w", w);
  block("v", v);
  os << ")";
  return os.str();
}

Key concat(const Key& a, const Key& b) {
  Key out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

}  // namespace

std::string to_string(QueryKind kind) {
  switch (kind) {
    case QueryKind::mean_yx: return "mean_yx";
    case QueryKind::nested_vde: return "nested_vde";
    case QueryKind::nested_nde: return "nested_nde";
    case QueryKind::te: return "te";
    case QueryKind::nde: return "nde";
    case QueryKind::nie: return "nie";
    case QueryKind::nie_star: return "nie_star";
    case QueryKind::vde: return "vde";
  }
  return "unknown";
}

QueryKind query_kind_from_string(const std::string& raw) {
  std::string s = raw;
  for (auto& c : s)
    if (c == '-') c = '_';
  if (s == "mean_yx") return QueryKind::mean_yx;
  if (s == "nested_vde") return QueryKind::nested_vde;
  if (s == "nested_nde") return QueryKind::nested_nde;
  if (s == "te") return QueryKind::te;
  if (s == "nde") return QueryKind::nde;
  if (s == "nie") return QueryKind::nie;
  if (s == "nie_star") return QueryKind::nie_star;
  if (s == "vde") return QueryKind::vde;
  throw InvalidArgument("unknown query kind: " + raw);
}

void EffectQuery::validate() const {
  if ((x0 != 0 && x0 != 1) || (x1 != 0 && x1 != 1))
    throw InvalidArgument("query exposures must be 0 or 1");
}

nlohmann::json to_json(const EffectQuery& q) {
  return {{"kind", to_string(q.kind)},
          {"x0", q.x0},
          {"x1", q.x1},
          {"mediators", q.mediators == MediatorSet::v_only || q.kind == QueryKind::nie_star ? "v" : "wv"}};
}

OracleValue mc_counterfactual(const ScmSpec& spec, const EffectQuery& query, std::size_t n_mc,
                              std::uint64_t seed) {
  spec.validate();
  query.validate();
  if (n_mc == 0) throw InvalidArgument("mc_counterfactual: n_mc must be >= 1");
  const std::size_t parts = std::min(kOraclePartitions, n_mc);
  const bool v_only = uses_v_only(query);
  if (v_only && !spec.thresholded())
    throw InvalidArgument("V-only nested terms need discrete Z and V (threshold mechanisms)");

  std::vector<double> sums(parts, 0.0), sumsq(parts, 0.0);
  std::vector<VOnlyTables> tables(v_only ? parts : 0);
  std::vector<std::size_t> counts(parts);
  parallel_for(parts, [&](std::size_t p) {
    const std::size_t count = n_mc / parts + (p < n_mc % parts ? 1 : 0);
    counts[p] = count;
    NoiseSource src(derive_seed(seed, p));
    Exogenous u;
    Worlds b = make_worlds(spec);
    double s = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
      draw_exogenous(spec, src, u);
      eval_z(spec, u, b.z);
      if (v_only) {
        tables[p].add(spec, u, b.z, query.x0, query.x1, 1.0, b);
      } else {
        const double val = per_draw(spec, query, u, b.z, b);
        s += val;
        s2 += val * val;
      }
    }
    sums[p] = s;
    sumsq[p] = s2;
  });

  OracleValue out;
  out.n_mc = n_mc;
  out.seed = seed;
  const double n = static_cast<double>(n_mc);
  if (!v_only) {
    const double total = std::accumulate(sums.begin(), sums.end(), 0.0);
    const double total2 = std::accumulate(sumsq.begin(), sumsq.end(), 0.0);
    out.value = total / n;
    const double var = n > 1 ? std::max(0.0, (total2 - n * out.value * out.value) / (n - 1)) : 0.0;
    out.std_error = std::sqrt(var / n);
    return out;
  }
  VOnlyTables all;
  std::vector<double> per_part;
  for (std::size_t p = 0; p < parts; ++p) {
    all.merge(tables[p]);
    if (counts[p] > 0) per_part.push_back(tables[p].value(query.kind));
  }
  out.value = all.value(query.kind);
  if (per_part.size() > 1) {
    const double m = std::accumulate(per_part.begin(), per_part.end(), 0.0) / per_part.size();
    double ss = 0.0;
    for (double v : per_part) ss += (v - m) * (v - m);
    out.std_error = std::sqrt(ss / (per_part.size() - 1) / per_part.size());
  }
  return out;
}

double enumerate_exact(const ScmSpec& spec, const EffectQuery& query) {
  spec.validate();
  query.validate();
  if (!spec.enumerable()) throw InvalidArgument("enumerate_exact requires a discrete-enumerable spec");
  Worlds b = make_worlds(spec);
  if (uses_v_only(query)) {
    VOnlyTables t;
    for_each_atom_combo(spec, [&](const Exogenous& u, double p) {
      eval_z(spec, u, b.z);
      t.add(spec, u, b.z, query.x0, query.x1, p, b);
    });
    return t.value(query.kind);
  }
  double acc = 0.0;
  for_each_atom_combo(spec, [&](const Exogenous& u, double p) {
    eval_z(spec, u, b.z);
    acc += p * per_draw(spec, query, u, b.z, b);
  });
  return acc;
}

double DiscreteJoint::total() const {
  double t = 0.0;
  for (auto& c : cells) t += c.prob;
  return t;
}

Cohort DiscreteJoint::to_cohort(std::size_t dim_z, std::size_t dim_w, std::size_t dim_v) const {
  Cohort c;
  c.dim_z = dim_z;
  c.dim_w = dim_w;
  c.dim_v = dim_v;
  for (auto& cell : cells) {
    c.z.insert(c.z.end(), cell.z.begin(), cell.z.end());
    c.w.insert(c.w.end(), cell.w.begin(), cell.w.end());
    c.v.insert(c.v.end(), cell.v.begin(), cell.v.end());
    c.x.push_back(static_cast<std::uint8_t>(cell.x));
    c.y.push_back(cell.y);
    c.weight.push_back(cell.prob);
  }
  c.ensure_names();
  c.validate();
  return c;
}

namespace {

DiscreteJoint joint_from_map(const std::map<Key, double>& m, std::size_t dz, std::size_t dw,
                             std::size_t dv) {
  DiscreteJoint j;
  for (auto& [k, p] : m) {
    DiscreteJoint::Cell c;
    c.z.assign(k.begin(), k.begin() + dz);
    c.x = static_cast<int>(k[dz]);
    c.w.assign(k.begin() + dz + 1, k.begin() + dz + 1 + dw);
    c.v.assign(k.begin() + dz + 1 + dw, k.begin() + dz + 1 + dw + dv);
    c.y = k.back();
    c.prob = p;
    j.cells.push_back(std::move(c));
  }
  return j;
}

}  // namespace

DiscreteJoint enumerate_joint(const ScmSpec& spec) {
  spec.validate();
  if (!spec.enumerable()) throw InvalidArgument("enumerate_joint requires a discrete-enumerable spec");
  std::map<Key, double> cells;
  std::vector<double> z(spec.dim_z), w(spec.dim_w), v(spec.dim_v);
  for_each_atom_combo(spec, [&](const Exogenous& u, double p) {
    eval_z(spec, u, z);
    const int x = eval_x(spec, z, u);
    eval_w(spec, x, z, u, w);
    eval_v(spec, x, w, z, u, v);
    const double y = eval_y(spec, x, w, v, z, u);
    Key k = z;
    k.push_back(x);
    k.insert(k.end(), w.begin(), w.end());
    k.insert(k.end(), v.begin(), v.end());
    k.push_back(y);
    cells[k] += p;
  });
  return joint_from_map(cells, spec.dim_z, spec.dim_w, spec.dim_v);
}

DiscreteJoint tabulate_joint(const Cohort& c) {
  c.validate();
  std::map<Key, double> cells;
  double total = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    Key k(c.z_row(i).begin(), c.z_row(i).end());
    k.push_back(c.x[i]);
    k.insert(k.end(), c.w_row(i).begin(), c.w_row(i).end());
    k.insert(k.end(), c.v_row(i).begin(), c.v_row(i).end());
    k.push_back(c.y[i]);
    cells[k] += c.row_weight(i);
    total += c.row_weight(i);
  }
  for (auto& [k, p] : cells) p /= total;
  return joint_from_map(cells, c.dim_z, c.dim_w, c.dim_v);
}

IdentifiedTerms idformula_eval(const DiscreteJoint& joint, int x0, int x1) {
  if ((x0 != 0 && x0 != 1) || (x1 != 0 && x1 != 1))
    throw InvalidArgument("idformula_eval: exposures must be 0 or 1");
  if (std::abs(joint.total() - 1.0) > 1e-9) throw InvalidArgument("joint probabilities must sum to 1");

  // Margins keyed by (x, z, ...) blocks.
  std::map<Key, double> pz;
  std::map<std::pair<int, Key>, double> pxz, sy_xz;
  std::map<std::pair<int, Key>, double> pxwz;                  // key z|w
  std::map<std::pair<int, Key>, double> pxwvz, sy_xwvz;       // key z|w|v
  std::map<std::pair<int, Key>, double> pxvz, sy_xvz;         // key z|v
  std::map<Key, std::vector<Key>> w_of_z;                      // distinct w per z
  std::map<Key, std::vector<Key>> v_of_zw;                     // distinct v per (z,w)
  std::map<Key, std::vector<Key>> v_of_z;
  auto note = [](std::map<Key, std::vector<Key>>& m, const Key& k, const Key& val) {
    auto& list = m[k];
    if (std::find(list.begin(), list.end(), val) == list.end()) list.push_back(val);
  };
  for (auto& c : joint.cells) {
    if (c.prob < 0.0) throw InvalidArgument("joint has a negative cell");
    if (c.prob == 0.0) continue;
    const Key zw = concat(c.z, c.w);
    const Key zwv = concat(zw, c.v);
    const Key zv = concat(c.z, c.v);
    pz[c.z] += c.prob;
    pxz[{c.x, c.z}] += c.prob;
    sy_xz[{c.x, c.z}] += c.prob * c.y;
    pxwz[{c.x, zw}] += c.prob;
    pxwvz[{c.x, zwv}] += c.prob;
    sy_xwvz[{c.x, zwv}] += c.prob * c.y;
    pxvz[{c.x, zv}] += c.prob;
    sy_xvz[{c.x, zv}] += c.prob * c.y;
    note(w_of_z, c.z, c.w);
    note(v_of_zw, zw, c.v);
    note(v_of_z, c.z, c.v);
  }
  auto get = [](const auto& m, const auto& k) {
    auto it = m.find(k);
    return it == m.end() ? 0.0 : it->second;
  };

  IdentifiedTerms out;
  for (auto& [z, p_z] : pz) {
    for (int x : {x0, x1}) {
      if (get(pxz, std::pair{x, z}) <= 0.0)
        throw PositivityError("positivity violation: P(x, z) = 0 at " + describe("cell", x, z));
    }
    const double p_x1z = get(pxz, std::pair{x1, z});
    const double p_x0z = get(pxz, std::pair{x0, z});
    out.backdoor_x1 += p_z * get(sy_xz, std::pair{x1, z}) / p_x1z;
    out.backdoor_x0 += p_z * get(sy_xz, std::pair{x0, z}) / p_x0z;

    double vde_inner = 0.0;
    double nde_inner = 0.0;
    for (const auto& w : w_of_z[z]) {
      const Key zw = concat(z, w);
      const double p_w_x1 = get(pxwz, std::pair{x1, zw}) / p_x1z;
      const double p_x0wz = get(pxwz, std::pair{x0, zw});
      const double p_w_x0 = p_x0wz / p_x0z;
      if (p_w_x1 > 0.0 && p_x0wz <= 0.0)
        throw PositivityError("positivity violation: P(x0, w, z) = 0 at " + describe("cell", x0, z, &w));
      for (const auto& v : v_of_zw[zw]) {
        const Key zwv = concat(zw, v);
        const double p_x0wvz = get(pxwvz, std::pair{x0, zwv});
        const double p_x1wvz = get(pxwvz, std::pair{x1, zwv});
        // Both nested terms condition on (x1, w, v, z) wherever P(v | x0, w, z) > 0.
        if (p_x0wvz > 0.0 && p_x1wvz <= 0.0)
          throw PositivityError("positivity violation: P(x1, w, v, z) = 0 at " +
                                describe("cell", x1, z, &w, &v));
        if (p_x1wvz <= 0.0) continue;
        const double ey = get(sy_xwvz, std::pair{x1, zwv}) / p_x1wvz;
        if (p_w_x1 > 0.0) vde_inner += p_w_x1 * (p_x0wvz / p_x0wz) * ey;
        // P(w, v | x0, z) for the merged mediator.
        nde_inner += p_w_x0 * (p_x0wz > 0.0 ? p_x0wvz / p_x0wz : 0.0) * ey;
      }
    }
    out.nested_vde += p_z * vde_inner;
    out.nested_nde += p_z * nde_inner;

    double star_inner = 0.0;
    for (const auto& v : v_of_z[z]) {
      const Key zv = concat(z, v);
      const double p_x0vz = get(pxvz, std::pair{x0, zv});
      const double p_x1vz = get(pxvz, std::pair{x1, zv});
      if (p_x0vz <= 0.0) continue;
      if (p_x1vz <= 0.0)
        throw PositivityError("positivity violation: P(x1, v, z) = 0 at " + describe("cell", x1, z, nullptr, &v));
      star_inner += (p_x0vz / p_x0z) * get(sy_xvz, std::pair{x1, zv}) / p_x1vz;
    }
    out.nested_nie_star += p_z * star_inner;
  }
  return out;
}

double linear_closed_form(const ScmSpec& s, const EffectQuery& q) {
  s.validate();
  q.validate();
  if (s.kind != MechanismKind::linear_gaussian)
    throw InvalidArgument("linear_closed_form requires a linear-gaussian spec");
  if (uses_v_only(q)) throw InvalidArgument("linear_closed_form does not cover V-only nested terms");
  // E[Z] = 0, so expectations are linear in the exposures along each path.
  auto ew = [&](int x) {
    std::vector<double> w(s.dim_w);
    for (std::size_t j = 0; j < s.dim_w; ++j) w[j] = s.w_x[j] * x;
    return w;
  };
  auto ev = [&](int x, const std::vector<double>& w) {
    std::vector<double> v(s.dim_v);
    for (std::size_t j = 0; j < s.dim_v; ++j) {
      v[j] = s.v_x[j] * x;
      for (std::size_t k = 0; k < s.dim_w; ++k) v[j] += s.v_w[j * s.dim_w + k] * w[k];
    }
    return v;
  };
  auto ey = [&](int x, const std::vector<double>& w, const std::vector<double>& v) {
    double y = s.y_x * x;
    for (std::size_t k = 0; k < s.dim_w; ++k) y += s.y_w[k] * w[k];
    for (std::size_t k = 0; k < s.dim_v; ++k) y += s.y_v[k] * v[k];
    return y;
  };
  auto m = [&](int x) {
    auto w = ew(x);
    return ey(x, w, ev(x, w));
  };
  auto nested_vde = [&] {
    auto w1 = ew(q.x1);
    return ey(q.x1, w1, ev(q.x0, w1));
  };
  auto nested_nde = [&] {
    auto w0 = ew(q.x0);
    return ey(q.x1, w0, ev(q.x0, w0));
  };
  switch (q.kind) {
    case QueryKind::mean_yx: return m(q.x1);
    case QueryKind::nested_vde: return nested_vde();
    case QueryKind::nested_nde: return nested_nde();
    case QueryKind::te: return m(q.x1) - m(q.x0);
    case QueryKind::nde: return nested_nde() - m(q.x0);
    case QueryKind::nie: return m(q.x1) - nested_nde();
    case QueryKind::vde: return m(q.x1) - nested_vde();
    case QueryKind::nie_star: break;
  }
  throw InvalidArgument("unsupported query");
}

}  // namespace pse
