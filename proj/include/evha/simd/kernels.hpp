#pragma once
// Data-parallel inner loops shared by convolution, dense layers, NL-means
// and the image metrics. Every kernel has a scalar reference; wider variants
// are chosen once at startup and must agree with the reference up to
// floating-point reassociation.

#include <cstddef>
#include <string_view>

namespace evha::simd {

struct KernelTable {
  const char* name;
  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // out[i] = (a[i] - b[i])^2
  void (*squared_diff)(const double* a, const double* b, double* out, std::size_t n);
  // acc[i] += w[i] * x[i]
  void (*mul_acc)(const double* w, const double* x, double* acc, std::size_t n);
  // sum_i (a[i] - b[i])^2
  double (*sum_squared_diff)(const double* a, const double* b, std::size_t n);
};

const KernelTable& scalar_kernels();

// nullptr when the variant was not compiled in or the CPU lacks the feature.
const KernelTable* avx2_kernels();
const KernelTable* neon_kernels();

// Best available table. Honors EVHA_SIMD=scalar|avx2|neon when set.
const KernelTable& active();

// Override for tests and benchmarks; returns false if the variant is unavailable.
bool select(std::string_view name);

inline double dot(const double* a, const double* b, std::size_t n) { return active().dot(a, b, n); }
inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  active().axpy(alpha, x, y, n);
}
inline void squared_diff(const double* a, const double* b, double* out, std::size_t n) {
  active().squared_diff(a, b, out, n);
}
inline void mul_acc(const double* w, const double* x, double* acc, std::size_t n) {
  active().mul_acc(w, x, acc, n);
}
inline double sum_squared_diff(const double* a, const double* b, std::size_t n) {
  return active().sum_squared_diff(a, b, n);
}

}  // namespace evha::simd
