#include <atomic>
#include <cassert>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "pse/kernels.hpp"

namespace pse::kernels {
namespace {

Isa detect() {
#if PSE_HAVE_AVX2_KERNELS
  if (const char* env = std::getenv("PSE_ISA"); env != nullptr && std::string(env) == "scalar")
    return Isa::scalar;
  __builtin_cpu_init();
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return Isa::avx2;
#endif
  return Isa::scalar;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

bool use_avx2() {
#if PSE_HAVE_AVX2_KERNELS
  return current().load(std::memory_order_relaxed) == Isa::avx2;
#else
  return false;
#endif
}

}  // namespace

Isa active_isa() { return current().load(); }

bool isa_available(Isa isa) {
  if (isa == Isa::scalar) return true;
#if PSE_HAVE_AVX2_KERNELS
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

void force_isa(Isa isa) {
  if (!isa_available(isa))
    throw std::runtime_error("ISA not supported on this CPU: " + std::string(isa_name(isa)));
  current().store(isa);
}

#if PSE_HAVE_AVX2_KERNELS
#define PSE_DISPATCH(fn, ...) (use_avx2() ? avx2::fn(__VA_ARGS__) : scalar::fn(__VA_ARGS__))
#else
#define PSE_DISPATCH(fn, ...) scalar::fn(__VA_ARGS__)
#endif

double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  return PSE_DISPATCH(dot, a.data(), b.data(), a.size());
}

double sum(std::span<const double> a) { return PSE_DISPATCH(sum, a.data(), a.size()); }

double weighted_sum(std::span<const double> w, std::span<const double> a) {
  assert(w.size() == a.size());
  return PSE_DISPATCH(weighted_sum, w.data(), a.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  assert(x.size() == y.size());
  PSE_DISPATCH(axpy, alpha, x.data(), y.data(), x.size());
}

void gemv_rows(std::span<const double> x, std::size_t d, std::span<const double> beta,
               double bias, std::span<double> out) {
  assert(beta.size() == d && x.size() == out.size() * d);
  PSE_DISPATCH(gemv_rows, x.data(), out.size(), d, beta.data(), bias, out.data());
}

void weighted_gram(std::span<const double> x, std::size_t d, std::span<const double> w,
                   std::span<const double> t, std::span<double> gram, std::span<double> rhs) {
  assert(w.size() == t.size() && x.size() == w.size() * d);
  assert(gram.size() == d * d && rhs.size() == d);
  PSE_DISPATCH(weighted_gram, x.data(), w.size(), d, w.data(), t.data(), gram.data(), rhs.data());
}

#undef PSE_DISPATCH

}  // namespace pse::kernels
