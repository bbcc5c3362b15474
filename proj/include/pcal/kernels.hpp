#pragma once

// Data-parallel inner loops. Every kernel has a scalar reference version and,
// on x86-64, an AVX2+FMA version selected at runtime.

#include <cstddef>
#include <string_view>

namespace pcal::kernels {

enum class Isa { Scalar, Avx2 };

std::string_view isa_name(Isa isa) noexcept;

struct KernelTable {
  Isa isa;
  /// C[m x n] += A[m x k] * B[k x n], all row-major.
  void (*gemm_nn_f32)(const float* a, const float* b, float* c, std::size_t m,
                      std::size_t k, std::size_t n);
  /// C[m x n] += A^T * B where A is [k x m] and B is [k x n].
  void (*gemm_tn_f32)(const float* a, const float* b, float* c, std::size_t m,
                      std::size_t k, std::size_t n);
  void (*gemm_nn_f64)(const double* a, const double* b, double* c, std::size_t m,
                      std::size_t k, std::size_t n);
  void (*gemm_tn_f64)(const double* a, const double* b, double* c, std::size_t m,
                      std::size_t k, std::size_t n);
  /// out[i] = squared distance from q to (xs[i], ys[i], zs[i]). Bit-exact
  /// across variants: both evaluate ((dx*dx + dy*dy) + dz*dz) without fusion.
  void (*squared_distances)(const float* q, const float* xs, const float* ys,
                            const float* zs, std::size_t n, float* out);
};

bool supported(Isa isa) noexcept;

/// Best variant for this CPU, unless PCAL_SIMD=scalar is set in the
/// environment.
Isa detect() noexcept;

const KernelTable& table(Isa isa);

/// Table used by the library. Chosen once from detect(); tests may switch it
/// with set_active (not thread-safe against concurrent kernel calls).
const KernelTable& active() noexcept;
void set_active(Isa isa);

namespace scalar {

template <class T>
void gemm_nn_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
void gemm_tn_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      if (av == T(0)) continue;
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void squared_distances(const float* q, const float* xs, const float* ys,
                       const float* zs, std::size_t n, float* out);

}  // namespace scalar

// Precision-generic entry points through the active table.
inline void gemm_nn_acc(const float* a, const float* b, float* c, std::size_t m,
                        std::size_t k, std::size_t n) {
  active().gemm_nn_f32(a, b, c, m, k, n);
}
inline void gemm_nn_acc(const double* a, const double* b, double* c,
                        std::size_t m, std::size_t k, std::size_t n) {
  active().gemm_nn_f64(a, b, c, m, k, n);
}
inline void gemm_tn_acc(const float* a, const float* b, float* c, std::size_t m,
                        std::size_t k, std::size_t n) {
  active().gemm_tn_f32(a, b, c, m, k, n);
}
inline void gemm_tn_acc(const double* a, const double* b, double* c,
                        std::size_t m, std::size_t k, std::size_t n) {
  active().gemm_tn_f64(a, b, c, m, k, n);
}

}  // namespace pcal::kernels
