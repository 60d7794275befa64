// SPDX-License-Identifier: Apache-2.0
//
// Dense inner-loop kernels. Every kernel has a scalar reference
// implementation and an AVX2+FMA implementation; the active set is chosen
// once at startup from CPUID and can be overridden with SR_SIMD=scalar|avx2
// or set_level(). Within one level, results are bitwise deterministic.

#pragma once

#include <cstddef>
#include <string_view>

namespace sr::simd {

enum class Level { scalar, avx2 };

std::string_view to_string(Level level);

/// Highest level the running CPU supports.
Level best_supported();

/// Level currently used by the dispatching entry points below.
Level active_level();

/// Forces a level. Requesting avx2 on a CPU without it throws.
void set_level(Level level);

/// Row-major GEMM: C = op(A) * op(B), or C += op(A) * op(B) when
/// `accumulate` is set. op(X) is X or its transpose. op(A) is m x k and
/// op(B) is k x n; lda/ldb/ldc are row strides of the stored matrices.
struct GemmShape {
  bool trans_a = false;
  bool trans_b = false;
  std::size_t m = 0, n = 0, k = 0;
  std::size_t lda = 0, ldb = 0, ldc = 0;
  bool accumulate = false;
};

template <class T>
void gemm(const GemmShape& s, const T* a, const T* b, T* c);

template <class T>
T dot(const T* x, const T* y, std::size_t n);

/// y += alpha * x
template <class T>
void axpy(T alpha, const T* x, T* y, std::size_t n);

/// Level-pinned entry points, used by the equivalence tests.
namespace scalar {
template <class T>
void gemm(const GemmShape& s, const T* a, const T* b, T* c);
template <class T>
T dot(const T* x, const T* y, std::size_t n);
template <class T>
void axpy(T alpha, const T* x, T* y, std::size_t n);
}  // namespace scalar

namespace avx2 {
void gemm(const GemmShape& s, const float* a, const float* b, float* c);
void gemm(const GemmShape& s, const double* a, const double* b, double* c);
float dot(const float* x, const float* y, std::size_t n);
double dot(const double* x, const double* y, std::size_t n);
void axpy(float alpha, const float* x, float* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
}  // namespace avx2

}  // namespace sr::simd
