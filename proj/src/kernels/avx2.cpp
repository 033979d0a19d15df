// Compiled with -mavx2 -mfma; only reached after a CPUID check.
#include <immintrin.h>

#include <algorithm>
#include <vector>

#include "pse/kernels.hpp"

namespace pse::kernels::avx2 {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d shuf = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, shuf));
}

}  // namespace

double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double sum(const double* a, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(a + i));
    acc1 = _mm256_add_pd(acc1, _mm256_loadu_pd(a + i + 4));
  }
  for (; i + 4 <= n; i += 4) acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(a + i));
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i];
  return acc;
}

double weighted_sum(const double* w, const double* a, std::size_t n) { return dot(w, a, n); }

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void gemv_rows(const double* x, std::size_t n, std::size_t d, const double* beta, double bias,
               double* out) {
  if (d < 4) {
    for (std::size_t i = 0; i < n; ++i) {
      double acc = bias;
      for (std::size_t k = 0; k < d; ++k) acc += x[i * d + k] * beta[k];
      out[i] = acc;
    }
    return;
  }
  for (std::size_t i = 0; i < n; ++i) out[i] = bias + dot(x + i * d, beta, d);
}

// Rows are transposed in blocks so each gram entry is one register-resident
// dot product per block instead of a read-modify-write per row.
void weighted_gram(const double* x, std::size_t n, std::size_t d, const double* w,
                   const double* t, double* gram, double* rhs) {
  constexpr std::size_t kBlock = 64;
  std::vector<double> cols(d * kBlock), wcols(d * kBlock), tw(kBlock);
  for (std::size_t s = 0; s < n; s += kBlock) {
    const std::size_t m = std::min(kBlock, n - s);
    for (std::size_t r = 0; r < m; ++r) {
      const double* row = x + (s + r) * d;
      const double wi = w[s + r];
      // Zero-weight rows must not touch the sums even if t is not finite.
      tw[r] = wi == 0.0 ? 0.0 : t[s + r];
      for (std::size_t j = 0; j < d; ++j) {
        cols[j * kBlock + r] = row[j];
        wcols[j * kBlock + r] = wi * row[j];
      }
    }
    for (std::size_t j = 0; j < d; ++j) {
      const double* wj = wcols.data() + j * kBlock;
      rhs[j] += dot(wj, tw.data(), m);
      double* g = gram + j * d;
      for (std::size_t k = j; k < d; ++k) g[k] += dot(wj, cols.data() + k * kBlock, m);
    }
  }
}

}  // namespace pse::kernels::avx2
