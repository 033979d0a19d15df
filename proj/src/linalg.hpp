#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "pse/common.hpp"

namespace pse::detail {

// Solves A x = b for symmetric positive definite A given by its upper triangle
// (row-major d×d). Throws RankError when a pivot falls below rel_tol times the
// largest diagonal entry.
inline std::vector<double> solve_spd(std::vector<double> a, std::span<const double> b, std::size_t d,
                                     double rel_tol = 1e-12) {
  double max_diag = 0.0;
  for (std::size_t i = 0; i < d; ++i) max_diag = std::max(max_diag, a[i * d + i]);
  const double floor = rel_tol * (max_diag > 0.0 ? max_diag : 1.0);
  // In-place Cholesky: upper triangle becomes R with A = RᵀR.
  for (std::size_t i = 0; i < d; ++i) {
    double s = a[i * d + i];
    for (std::size_t k = 0; k < i; ++k) s -= a[k * d + i] * a[k * d + i];
    if (!(s > floor)) throw RankError("design matrix is rank deficient (pivot " + std::to_string(i) + ")");
    const double r = std::sqrt(s);
    a[i * d + i] = r;
    for (std::size_t j = i + 1; j < d; ++j) {
      double t = a[i * d + j];
      for (std::size_t k = 0; k < i; ++k) t -= a[k * d + i] * a[k * d + j];
      a[i * d + j] = t / r;
    }
  }
  std::vector<double> x(b.begin(), b.end());
  for (std::size_t i = 0; i < d; ++i) {  // Rᵀ y = b
    double s = x[i];
    for (std::size_t k = 0; k < i; ++k) s -= a[k * d + i] * x[k];
    x[i] = s / a[i * d + i];
  }
  for (std::size_t i = d; i-- > 0;) {  // R x = y
    double s = x[i];
    for (std::size_t k = i + 1; k < d; ++k) s -= a[i * d + k] * x[k];
    x[i] = s / a[i * d + i];
  }
  return x;
}

}  // namespace pse::detail
