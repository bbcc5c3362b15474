// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.

#include <immintrin.h>

#include "pcal/kernels.hpp"

namespace pcal::kernels::avx2 {
namespace {

template <class T>
struct Vec;

template <>
struct Vec<float> {
  using reg = __m256;
  static constexpr std::size_t width = 8;
  static reg load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, reg v) { _mm256_storeu_ps(p, v); }
  static reg broadcast(float v) { return _mm256_set1_ps(v); }
  static reg fma(reg a, reg b, reg c) { return _mm256_fmadd_ps(a, b, c); }
};

template <>
struct Vec<double> {
  using reg = __m256d;
  static constexpr std::size_t width = 4;
  static reg load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, reg v) { _mm256_storeu_pd(p, v); }
  static reg broadcast(double v) { return _mm256_set1_pd(v); }
  static reg fma(reg a, reg b, reg c) { return _mm256_fmadd_pd(a, b, c); }
};

// crow[0..n) += sum_p a_col[p * a_stride] * b[p * n + 0..n), keeping a strip
// of four accumulators in registers across the whole reduction.
template <class T>
void axpy_rows(const T* a_col, std::size_t a_stride, const T* b, std::size_t n, T* crow,
               std::size_t k) {
  using V = Vec<T>;
  constexpr std::size_t w = V::width;
  std::size_t j = 0;
  for (; j + 4 * w <= n; j += 4 * w) {
    auto c0 = V::load(crow + j);
    auto c1 = V::load(crow + j + w);
    auto c2 = V::load(crow + j + 2 * w);
    auto c3 = V::load(crow + j + 3 * w);
    for (std::size_t p = 0; p < k; ++p) {
      const auto av = V::broadcast(a_col[p * a_stride]);
      const T* brow = b + p * n + j;
      c0 = V::fma(av, V::load(brow), c0);
      c1 = V::fma(av, V::load(brow + w), c1);
      c2 = V::fma(av, V::load(brow + 2 * w), c2);
      c3 = V::fma(av, V::load(brow + 3 * w), c3);
    }
    V::store(crow + j, c0);
    V::store(crow + j + w, c1);
    V::store(crow + j + 2 * w, c2);
    V::store(crow + j + 3 * w, c3);
  }
  for (; j + w <= n; j += w) {
    auto c0 = V::load(crow + j);
    for (std::size_t p = 0; p < k; ++p) {
      c0 = V::fma(V::broadcast(a_col[p * a_stride]), V::load(b + p * n + j), c0);
    }
    V::store(crow + j, c0);
  }
  for (; j < n; ++j) {
    T acc = crow[j];
    for (std::size_t p = 0; p < k; ++p) acc += a_col[p * a_stride] * b[p * n + j];
    crow[j] = acc;
  }
}

template <class T>
void gemm_nn_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) axpy_rows(a + i * k, 1, b, n, c + i * n, k);
}

template <class T>
void gemm_tn_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) axpy_rows(a + i, m, b, n, c + i * n, k);
}

void squared_distances(const float* q, const float* xs, const float* ys,
                       const float* zs, std::size_t n, float* out) {
  const __m256 qx = _mm256_set1_ps(q[0]);
  const __m256 qy = _mm256_set1_ps(q[1]);
  const __m256 qz = _mm256_set1_ps(q[2]);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 dx = _mm256_sub_ps(qx, _mm256_loadu_ps(xs + i));
    const __m256 dy = _mm256_sub_ps(qy, _mm256_loadu_ps(ys + i));
    const __m256 dz = _mm256_sub_ps(qz, _mm256_loadu_ps(zs + i));
    const __m256 xy = _mm256_add_ps(_mm256_mul_ps(dx, dx), _mm256_mul_ps(dy, dy));
    _mm256_storeu_ps(out + i, _mm256_add_ps(xy, _mm256_mul_ps(dz, dz)));
  }
  if (i < n) scalar::squared_distances(q, xs + i, ys + i, zs + i, n - i, out + i);
}

}  // namespace

extern const KernelTable kTable = {Isa::Avx2,
                                   &gemm_nn_acc<float>,
                                   &gemm_tn_acc<float>,
                                   &gemm_nn_acc<double>,
                                   &gemm_tn_acc<double>,
                                   &squared_distances};

}  // namespace pcal::kernels::avx2
