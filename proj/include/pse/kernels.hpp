#pragma once

// Dense arithmetic kernels used by the linear learners and the estimators.
//
// Every kernel has a portable scalar reference implementation and, on x86-64,
// an AVX2+FMA variant. The variant is chosen once per process from CPUID; the
// environment variable PSE_ISA=scalar forces the reference path. Results of the
// two paths agree to rounding (reduction order differs), which the kernel
// equivalence tests pin down.

#include <cstddef>
#include <span>
#include <string_view>

namespace pse::kernels {

enum class Isa { scalar, avx2 };

Isa active_isa();
bool isa_available(Isa isa);
std::string_view isa_name(Isa isa);

// Overrides the dispatch choice for the whole process. Throws if the requested
// ISA is not supported by the CPU.
void force_isa(Isa isa);

double dot(std::span<const double> a, std::span<const double> b);
double sum(std::span<const double> a);
// Σ w_i a_i
double weighted_sum(std::span<const double> w, std::span<const double> a);
// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);
// out_i = bias + <row_i(x), beta> for a row-major n×d matrix.
void gemv_rows(std::span<const double> x, std::size_t d, std::span<const double> beta,
               double bias, std::span<double> out);
// Upper triangle (row-major d×d) of gram += Σ_i w_i x_i x_iᵀ and rhs += Σ_i w_i t_i x_i.
// The strictly lower triangle of gram is left untouched.
void weighted_gram(std::span<const double> x, std::size_t d, std::span<const double> w,
                   std::span<const double> t, std::span<double> gram, std::span<double> rhs);

// Per-ISA entry points, exposed for the equivalence tests.
namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
double sum(const double* a, std::size_t n);
double weighted_sum(const double* w, const double* a, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void gemv_rows(const double* x, std::size_t n, std::size_t d, const double* beta, double bias,
               double* out);
void weighted_gram(const double* x, std::size_t n, std::size_t d, const double* w,
                   const double* t, double* gram, double* rhs);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define PSE_HAVE_AVX2_KERNELS 1
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
double sum(const double* a, std::size_t n);
double weighted_sum(const double* w, const double* a, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void gemv_rows(const double* x, std::size_t n, std::size_t d, const double* beta, double bias,
               double* out);
void weighted_gram(const double* x, std::size_t n, std::size_t d, const double* w,
                   const double* t, double* gram, double* rhs);
}  // namespace avx2
#else
#define PSE_HAVE_AVX2_KERNELS 0
#endif

}  // namespace pse::kernels
