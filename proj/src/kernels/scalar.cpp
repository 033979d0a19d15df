#include "pse/kernels.hpp"

namespace pse::kernels::scalar {

double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double sum(const double* a, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i];
  return acc;
}

double weighted_sum(const double* w, const double* a, std::size_t n) { return dot(w, a, n); }

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemv_rows(const double* x, std::size_t n, std::size_t d, const double* beta, double bias,
               double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = bias + dot(x + i * d, beta, d);
}

void weighted_gram(const double* x, std::size_t n, std::size_t d, const double* w,
                   const double* t, double* gram, double* rhs) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = x + i * d;
    const double wi = w[i];
    if (wi == 0.0) continue;
    for (std::size_t j = 0; j < d; ++j) {
      const double s = wi * row[j];
      rhs[j] += s * t[i];
      double* g = gram + j * d;
      for (std::size_t k = j; k < d; ++k) g[k] += s * row[k];
    }
  }
}

}  // namespace pse::kernels::scalar
