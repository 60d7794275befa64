// SPDX-License-Identifier: Apache-2.0
//
// AVX2+FMA kernels. Functions carry a target attribute instead of the whole
// translation unit being built with -mavx2, so nothing here leaks AVX2
// instructions into inline code shared with the scalar path.

#include <immintrin.h>

#include <algorithm>
#include <vector>

#include "sr/simd/kernels.hpp"

#define SR_AVX2 __attribute__((target("avx2,fma")))

namespace sr::simd::avx2 {
namespace {

template <class T>
struct Vec;

template <>
struct Vec<float> {
  using type = __m256;
  static constexpr std::size_t width = 8;
  SR_AVX2 static type zero() { return _mm256_setzero_ps(); }
  SR_AVX2 static type set1(float v) { return _mm256_set1_ps(v); }
  SR_AVX2 static type load(const float* p) { return _mm256_loadu_ps(p); }
  SR_AVX2 static void store(float* p, type v) { _mm256_storeu_ps(p, v); }
  SR_AVX2 static type add(type a, type b) { return _mm256_add_ps(a, b); }
  SR_AVX2 static type fma(type a, type b, type c) { return _mm256_fmadd_ps(a, b, c); }
  SR_AVX2 static float hsum(type v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 shuf = _mm_movehdup_ps(lo);
    __m128 sums = _mm_add_ps(lo, shuf);
    shuf = _mm_movehl_ps(shuf, sums);
    sums = _mm_add_ss(sums, shuf);
    return _mm_cvtss_f32(sums);
  }
};

template <>
struct Vec<double> {
  using type = __m256d;
  static constexpr std::size_t width = 4;
  SR_AVX2 static type zero() { return _mm256_setzero_pd(); }
  SR_AVX2 static type set1(double v) { return _mm256_set1_pd(v); }
  SR_AVX2 static type load(const double* p) { return _mm256_loadu_pd(p); }
  SR_AVX2 static void store(double* p, type v) { _mm256_storeu_pd(p, v); }
  SR_AVX2 static type add(type a, type b) { return _mm256_add_pd(a, b); }
  SR_AVX2 static type fma(type a, type b, type c) { return _mm256_fmadd_pd(a, b, c); }
  SR_AVX2 static double hsum(type v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d high64 = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, high64));
  }
};

constexpr std::size_t kRows = 6;

// Packs op(B) into column panels of `nr` values per k-row, zero padded.
template <class T>
void pack_b(const GemmShape& s, const T* b, std::size_t nr, std::vector<T>& out) {
  const std::size_t panels = (s.n + nr - 1) / nr;
  out.assign(panels * s.k * nr, T{0});
  for (std::size_t jp = 0; jp < panels; ++jp) {
    const std::size_t j0 = jp * nr;
    const std::size_t cols = std::min(nr, s.n - j0);
    T* panel = out.data() + jp * s.k * nr;
    for (std::size_t p = 0; p < s.k; ++p) {
      T* row = panel + p * nr;
      if (s.trans_b) {
        for (std::size_t j = 0; j < cols; ++j) row[j] = b[(j0 + j) * s.ldb + p];
      } else {
        const T* src = b + p * s.ldb + j0;
        std::copy(src, src + cols, row);
      }
    }
  }
}

template <class T, std::size_t R>
SR_AVX2 void micro_kernel(std::size_t k, const T* a, std::size_t lda, const T* panel,
                          T* c, std::size_t ldc, std::size_t cols, bool accumulate) {
  using V = Vec<T>;
  constexpr std::size_t w = V::width;
  typename V::type acc0[R];
  typename V::type acc1[R];
  for (std::size_t r = 0; r < R; ++r) {
    acc0[r] = V::zero();
    acc1[r] = V::zero();
  }
  for (std::size_t p = 0; p < k; ++p) {
    const auto b0 = V::load(panel + p * 2 * w);
    const auto b1 = V::load(panel + p * 2 * w + w);
    for (std::size_t r = 0; r < R; ++r) {
      const auto av = V::set1(a[r * lda + p]);
      acc0[r] = V::fma(av, b0, acc0[r]);
      acc1[r] = V::fma(av, b1, acc1[r]);
    }
  }
  if (cols == 2 * w) {
    for (std::size_t r = 0; r < R; ++r) {
      T* crow = c + r * ldc;
      if (accumulate) {
        V::store(crow, V::add(V::load(crow), acc0[r]));
        V::store(crow + w, V::add(V::load(crow + w), acc1[r]));
      } else {
        V::store(crow, acc0[r]);
        V::store(crow + w, acc1[r]);
      }
    }
    return;
  }
  alignas(32) T tmp[2 * w];
  for (std::size_t r = 0; r < R; ++r) {
    V::store(tmp, acc0[r]);
    V::store(tmp + w, acc1[r]);
    T* crow = c + r * ldc;
    for (std::size_t j = 0; j < cols; ++j) crow[j] = accumulate ? crow[j] + tmp[j] : tmp[j];
  }
}

template <class T>
SR_AVX2 void gemm_impl(const GemmShape& s, const T* a, const T* b, T* c) {
  if (s.m == 0 || s.n == 0) return;
  if (s.k == 0) {
    if (!s.accumulate)
      for (std::size_t i = 0; i < s.m; ++i) std::fill(c + i * s.ldc, c + i * s.ldc + s.n, T{0});
    return;
  }
  constexpr std::size_t nr = 2 * Vec<T>::width;
  thread_local std::vector<T> b_packed;
  thread_local std::vector<T> a_packed;
  pack_b(s, b, nr, b_packed);

  const T* a_rows = a;
  std::size_t a_stride = s.lda;
  if (s.trans_a) {
    a_packed.resize(s.m * s.k);
    for (std::size_t p = 0; p < s.k; ++p)
      for (std::size_t i = 0; i < s.m; ++i) a_packed[i * s.k + p] = a[p * s.lda + i];
    a_rows = a_packed.data();
    a_stride = s.k;
  }

  const std::size_t panels = (s.n + nr - 1) / nr;
  for (std::size_t i0 = 0; i0 < s.m; i0 += kRows) {
    const std::size_t rows = std::min(kRows, s.m - i0);
    const T* arow = a_rows + i0 * a_stride;
    for (std::size_t jp = 0; jp < panels; ++jp) {
      const std::size_t j0 = jp * nr;
      const std::size_t cols = std::min(nr, s.n - j0);
      const T* panel = b_packed.data() + jp * s.k * nr;
      T* cblk = c + i0 * s.ldc + j0;
      switch (rows) {
        case 6: micro_kernel<T, 6>(s.k, arow, a_stride, panel, cblk, s.ldc, cols, s.accumulate); break;
        case 5: micro_kernel<T, 5>(s.k, arow, a_stride, panel, cblk, s.ldc, cols, s.accumulate); break;
        case 4: micro_kernel<T, 4>(s.k, arow, a_stride, panel, cblk, s.ldc, cols, s.accumulate); break;
        case 3: micro_kernel<T, 3>(s.k, arow, a_stride, panel, cblk, s.ldc, cols, s.accumulate); break;
        case 2: micro_kernel<T, 2>(s.k, arow, a_stride, panel, cblk, s.ldc, cols, s.accumulate); break;
        default: micro_kernel<T, 1>(s.k, arow, a_stride, panel, cblk, s.ldc, cols, s.accumulate); break;
      }
    }
  }
}

template <class T>
SR_AVX2 T dot_impl(const T* x, const T* y, std::size_t n) {
  using V = Vec<T>;
  constexpr std::size_t w = V::width;
  auto acc0 = V::zero();
  auto acc1 = V::zero();
  std::size_t i = 0;
  for (; i + 2 * w <= n; i += 2 * w) {
    acc0 = V::fma(V::load(x + i), V::load(y + i), acc0);
    acc1 = V::fma(V::load(x + i + w), V::load(y + i + w), acc1);
  }
  for (; i + w <= n; i += w) acc0 = V::fma(V::load(x + i), V::load(y + i), acc0);
  T total = V::hsum(V::add(acc0, acc1));
  for (; i < n; ++i) total += x[i] * y[i];
  return total;
}

template <class T>
SR_AVX2 void axpy_impl(T alpha, const T* x, T* y, std::size_t n) {
  using V = Vec<T>;
  constexpr std::size_t w = V::width;
  const auto av = V::set1(alpha);
  std::size_t i = 0;
  for (; i + w <= n; i += w) V::store(y + i, V::fma(av, V::load(x + i), V::load(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

void gemm(const GemmShape& s, const float* a, const float* b, float* c) { gemm_impl(s, a, b, c); }
void gemm(const GemmShape& s, const double* a, const double* b, double* c) { gemm_impl(s, a, b, c); }
float dot(const float* x, const float* y, std::size_t n) { return dot_impl(x, y, n); }
double dot(const double* x, const double* y, std::size_t n) { return dot_impl(x, y, n); }
void axpy(float alpha, const float* x, float* y, std::size_t n) { axpy_impl(alpha, x, y, n); }
void axpy(double alpha, const double* x, double* y, std::size_t n) { axpy_impl(alpha, x, y, n); }

}  // namespace sr::simd::avx2
