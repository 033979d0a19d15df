#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "pse/kernels.hpp"

namespace k = pse::kernels;

namespace {

std::vector<double> randoms(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<double> v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

// Reduction order differs between paths; bound the gap relative to the
// magnitude of the summands.
void close(double a, double b, double scale) { CHECK(std::abs(a - b) <= 1e-13 * (1.0 + scale)); }

}  // namespace

TEST_CASE("scalar kernels match hand arithmetic") {
  const std::vector<double> a = {1, 2, 3, 4, 5};
  const std::vector<double> b = {2, -1, 0.5, 0, 1};
  CHECK(k::scalar::dot(a.data(), b.data(), 5) == 6.5);
  CHECK(k::scalar::sum(a.data(), 5) == 15.0);
  CHECK(k::scalar::weighted_sum(b.data(), a.data(), 5) == 6.5);

  std::vector<double> y = {1, 1, 1, 1, 1};
  k::scalar::axpy(2.0, a.data(), y.data(), 5);
  CHECK(y == std::vector<double>{3, 5, 7, 9, 11});

  // 2x2 design, rows (1,2) and (3,4), weights 1 and 2, targets 1 and -1.
  const std::vector<double> x = {1, 2, 3, 4};
  const std::vector<double> w = {1, 2};
  const std::vector<double> t = {1, -1};
  std::vector<double> gram(4, 0.0), rhs(2, 0.0);
  k::scalar::weighted_gram(x.data(), 2, 2, w.data(), t.data(), gram.data(), rhs.data());
  CHECK(gram[0] == 19.0);
  CHECK(gram[1] == 26.0);
  CHECK(gram[3] == 36.0);
  CHECK(gram[2] == 0.0);  // lower triangle untouched
  CHECK(rhs[0] == -5.0);
  CHECK(rhs[1] == -6.0);

  std::vector<double> out(2);
  const std::vector<double> beta = {0.5, -1};
  k::scalar::gemv_rows(x.data(), 2, 2, beta.data(), 1.0, out.data());
  CHECK(out == std::vector<double>{-0.5, -1.5});
}

#if PSE_HAVE_AVX2_KERNELS
TEST_CASE("avx2 kernels agree with the scalar reference") {
  if (!k::isa_available(k::Isa::avx2)) return;
  // Lengths straddle the vector width and unroll boundaries.
  for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 15u, 16u, 17u, 63u, 64u, 65u, 129u, 1000u}) {
    CAPTURE(n);
    const auto a = randoms(n, 1 + n);
    const auto b = randoms(n, 1000 + n);
    double scale = 0.0;
    for (std::size_t i = 0; i < n; ++i) scale += std::abs(a[i] * b[i]);
    close(k::avx2::dot(a.data(), b.data(), n), k::scalar::dot(a.data(), b.data(), n), scale);
    close(k::avx2::sum(a.data(), n), k::scalar::sum(a.data(), n), scale + n);
    close(k::avx2::weighted_sum(b.data(), a.data(), n), k::scalar::weighted_sum(b.data(), a.data(), n), scale);

    std::vector<double> y1 = b, y2 = b;
    k::avx2::axpy(0.37, a.data(), y1.data(), n);
    k::scalar::axpy(0.37, a.data(), y2.data(), n);
    for (std::size_t i = 0; i < n; ++i) close(y1[i], y2[i], std::abs(a[i]) + std::abs(b[i]));
  }
  for (std::size_t n : {1u, 5u, 64u, 65u, 200u}) {
    for (std::size_t d : {1u, 2u, 3u, 4u, 5u, 9u, 17u}) {
      CAPTURE(n);
      CAPTURE(d);
      const auto x = randoms(n * d, 7 * n + d);
      const auto beta = randoms(d, 99 + d);
      auto w = randoms(n, 5 + n);
      for (auto& v : w) v = std::abs(v);
      const auto t = randoms(n, 11 + n);

      std::vector<double> o1(n), o2(n);
      k::avx2::gemv_rows(x.data(), n, d, beta.data(), 0.25, o1.data());
      k::scalar::gemv_rows(x.data(), n, d, beta.data(), 0.25, o2.data());
      for (std::size_t i = 0; i < n; ++i) close(o1[i], o2[i], 10.0 * d);

      std::vector<double> g1(d * d, -3.0), g2(d * d, -3.0), r1(d, 1.0), r2(d, 1.0);
      k::avx2::weighted_gram(x.data(), n, d, w.data(), t.data(), g1.data(), r1.data());
      k::scalar::weighted_gram(x.data(), n, d, w.data(), t.data(), g2.data(), r2.data());
      for (std::size_t r = 0; r < d; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
          if (c < r) {
            CHECK(g1[r * d + c] == -3.0);
            CHECK(g2[r * d + c] == -3.0);
          } else {
            close(g1[r * d + c], g2[r * d + c], 10.0 * n);
          }
        }
        close(r1[r], r2[r], 10.0 * n);
      }
    }
  }
}

TEST_CASE("dispatch can be forced to either path") {
  const auto a = randoms(33, 3);
  const auto b = randoms(33, 4);
  const k::Isa before = k::active_isa();
  k::force_isa(k::Isa::scalar);
  CHECK(k::active_isa() == k::Isa::scalar);
  CHECK(k::dot(a, b) == k::scalar::dot(a.data(), b.data(), 33));
  if (k::isa_available(k::Isa::avx2)) {
    k::force_isa(k::Isa::avx2);
    CHECK(k::dot(a, b) == k::avx2::dot(a.data(), b.data(), 33));
  }
  k::force_isa(before);
}
#endif
