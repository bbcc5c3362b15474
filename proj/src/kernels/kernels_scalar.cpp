#include "pcal/kernels.hpp"

namespace pcal::kernels::scalar {

void squared_distances(const float* q, const float* xs, const float* ys,
                       const float* zs, std::size_t n, float* out) {
  for (std::size_t i = 0; i < n; ++i) {
    const float dx = q[0] - xs[i];
    const float dy = q[1] - ys[i];
    const float dz = q[2] - zs[i];
    out[i] = (dx * dx + dy * dy) + dz * dz;
  }
}

extern const KernelTable kTable = {Isa::Scalar,
                                   &gemm_nn_acc<float>,
                                   &gemm_tn_acc<float>,
                                   &gemm_nn_acc<double>,
                                   &gemm_tn_acc<double>,
                                   &squared_distances};

}  // namespace pcal::kernels::scalar
