// SPDX-License-Identifier: Apache-2.0

#include "sr/simd/kernels.hpp"

namespace sr::simd::scalar {

template <class T>
void gemm(const GemmShape& s, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < s.m; ++i) {
    for (std::size_t j = 0; j < s.n; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < s.k; ++p) {
        const T av = s.trans_a ? a[p * s.lda + i] : a[i * s.lda + p];
        const T bv = s.trans_b ? b[j * s.ldb + p] : b[p * s.ldb + j];
        acc += av * bv;
      }
      T& out = c[i * s.ldc + j];
      out = s.accumulate ? out + acc : acc;
    }
  }
}

template <class T>
T dot(const T* x, const T* y, std::size_t n) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

template <class T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template void gemm<float>(const GemmShape&, const float*, const float*, float*);
template void gemm<double>(const GemmShape&, const double*, const double*, double*);
template float dot<float>(const float*, const float*, std::size_t);
template double dot<double>(const double*, const double*, std::size_t);
template void axpy<float>(float, const float*, float*, std::size_t);
template void axpy<double>(double, const double*, double*, std::size_t);

}  // namespace sr::simd::scalar
