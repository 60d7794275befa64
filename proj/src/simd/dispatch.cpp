// SPDX-License-Identifier: Apache-2.0

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "sr/simd/kernels.hpp"

namespace sr::simd {
namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Level initial_level() {
  const Level best = best_supported();
  if (const char* env = std::getenv("SR_SIMD")) {
    const std::string want = env;
    if (want == "scalar") return Level::scalar;
    if (want == "avx2" && best == Level::avx2) return Level::avx2;
  }
  return best;
}

std::atomic<Level>& level_slot() {
  static std::atomic<Level> slot{initial_level()};
  return slot;
}

}  // namespace

std::string_view to_string(Level level) {
  return level == Level::avx2 ? "avx2" : "scalar";
}

Level best_supported() {
  static const Level best = cpu_has_avx2() ? Level::avx2 : Level::scalar;
  return best;
}

Level active_level() { return level_slot().load(std::memory_order_relaxed); }

void set_level(Level level) {
  if (level == Level::avx2 && best_supported() != Level::avx2)
    throw std::runtime_error("simd: avx2+fma not supported on this CPU");
  level_slot().store(level, std::memory_order_relaxed);
}

template <class T>
void gemm(const GemmShape& s, const T* a, const T* b, T* c) {
  if (active_level() == Level::avx2)
    avx2::gemm(s, a, b, c);
  else
    scalar::gemm(s, a, b, c);
}

template <class T>
T dot(const T* x, const T* y, std::size_t n) {
  return active_level() == Level::avx2 ? avx2::dot(x, y, n) : scalar::dot(x, y, n);
}

template <class T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  if (active_level() == Level::avx2)
    avx2::axpy(alpha, x, y, n);
  else
    scalar::axpy(alpha, x, y, n);
}

template void gemm<float>(const GemmShape&, const float*, const float*, float*);
template void gemm<double>(const GemmShape&, const double*, const double*, double*);
template float dot<float>(const float*, const float*, std::size_t);
template double dot<double>(const double*, const double*, std::size_t);
template void axpy<float>(float, const float*, float*, std::size_t);
template void axpy<double>(double, const double*, double*, std::size_t);

}  // namespace sr::simd
