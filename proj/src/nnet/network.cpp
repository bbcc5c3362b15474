#include <algorithm>
#include <cmath>

#include "pcal/error.hpp"
#include "pcal/kernels.hpp"
#include "pcal/nnet.hpp"

namespace pcal::nnet {
namespace {

template <class T>
std::vector<T> transpose(const std::vector<T>& m, std::size_t rows, std::size_t cols) {
  std::vector<T> t(m.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = m[r * cols + c];
  }
  return t;
}

// y = x w^T + b for n rows; w is [out x in].
template <class T>
std::vector<T> linear(const std::vector<T>& x, std::size_t n, const Tensor<T>& w,
                      const Tensor<T>& b) {
  const std::size_t out = w.shape[0];
  const std::size_t in = w.shape[1];
  std::vector<T> y(n * out);
  for (std::size_t r = 0; r < n; ++r) std::copy(b.data.begin(), b.data.end(), y.begin() + r * out);
  const auto wt = transpose(w.data, out, in);
  kernels::gemm_nn_acc(x.data(), wt.data(), y.data(), n, in, out);
  return y;
}

template <class T>
void relu(std::vector<T>& v) {
  for (T& x : v) x = x > T(0) ? x : T(0);
}

// Column-wise max over rows; ties go to the lowest row.
template <class T>
void max_pool(const std::vector<T>& f, std::size_t n, std::size_t c, std::vector<T>& out,
              std::vector<std::uint32_t>& arg) {
  out.assign(f.begin(), f.begin() + c);
  arg.assign(c, 0);
  for (std::size_t r = 1; r < n; ++r) {
    const T* row = f.data() + r * c;
    for (std::size_t j = 0; j < c; ++j) {
      if (row[j] > out[j]) {
        out[j] = row[j];
        arg[j] = static_cast<std::uint32_t>(r);
      }
    }
  }
}

template <class T>
void relu_mask(std::vector<T>& grad, const std::vector<T>& activation) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(activation[i] > T(0))) grad[i] = T(0);
  }
}

// Accumulates dW += dy^T x and db += colsum(dy); returns dx = dy w if wanted.
template <class T>
std::vector<T> linear_backward(const std::vector<T>& dy, const std::vector<T>& x, std::size_t n,
                               const Tensor<T>& w, Tensor<T>& dw, Tensor<T>& db, bool want_dx) {
  const std::size_t out = w.shape[0];
  const std::size_t in = w.shape[1];
  kernels::gemm_tn_acc(dy.data(), x.data(), dw.data.data(), out, n, in);
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = dy.data() + r * out;
    for (std::size_t j = 0; j < out; ++j) db.data[j] += row[j];
  }
  std::vector<T> dx;
  if (want_dx) {
    dx.assign(n * in, T(0));
    kernels::gemm_nn_acc(dy.data(), w.data.data(), dx.data(), n, out, in);
  }
  return dx;
}

// Splits the segmentation layer weight [seg x (local + global)] into its
// per-point and global column blocks.
template <class T>
void split_seg_weight(const Tensor<T>& w, std::size_t local, std::vector<T>& wl,
                      std::vector<T>& wg) {
  const std::size_t rows = w.shape[0];
  const std::size_t cols = w.shape[1];
  const std::size_t global = cols - local;
  wl.resize(rows * local);
  wg.resize(rows * global);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(w.data.begin() + r * cols, local, wl.begin() + r * local);
    std::copy_n(w.data.begin() + r * cols + local, global, wg.begin() + r * global);
  }
}

}  // namespace

template <class T>
ForwardResult<T> forward(const ModelParamsT<T>& p, const PointCloud& cloud) {
  validate(cloud);
  const std::size_t n = cloud.size();
  const NetWidths& w = p.widths;
  ForwardResult<T> res;
  auto& c = res.cache;

  c.x.resize(n * 3);
  for (std::size_t i = 0; i < n; ++i) {
    for (int d = 0; d < 3; ++d) c.x[i * 3 + d] = static_cast<T>(cloud.positions[i][d]);
  }

  c.h1 = linear(c.x, n, p[kTnet1W], p[kTnet1B]);
  relu(c.h1);
  c.h2 = linear(c.h1, n, p[kTnet2W], p[kTnet2B]);
  relu(c.h2);
  max_pool(c.h2, n, w.tnet2, c.tg, c.tg_arg);

  auto& a = res.transform;
  for (std::size_t j = 0; j < 9; ++j) {
    T s = p[kTnetFcB].data[j];
    const T* wrow = p[kTnetFcW].data.data() + j * w.tnet2;
    for (std::size_t k = 0; k < w.tnet2; ++k) s += wrow[k] * c.tg[k];
    a[j] = s + ((j % 4 == 0) ? T(1) : T(0));
  }

  c.xt.assign(n * 3, T(0));
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < 3; ++j) {
      c.xt[r * 3 + j] = c.x[r * 3] * a[j] + c.x[r * 3 + 1] * a[3 + j] + c.x[r * 3 + 2] * a[6 + j];
    }
  }

  c.f1 = linear(c.xt, n, p[kLocal1W], p[kLocal1B]);
  relu(c.f1);
  c.f2 = linear(c.f1, n, p[kLocal2W], p[kLocal2B]);
  relu(c.f2);
  c.f3 = linear(c.f2, n, p[kGlobalW], p[kGlobalB]);
  relu(c.f3);
  max_pool(c.f3, n, w.global, c.g, c.g_arg);

  std::vector<T> wl, wg;
  split_seg_weight(p[kSegW], w.local2, wl, wg);
  std::vector<T> gs(p[kSegB].data);
  for (std::size_t o = 0; o < w.seg; ++o) {
    const T* wrow = wg.data() + o * w.global;
    for (std::size_t k = 0; k < w.global; ++k) gs[o] += wrow[k] * c.g[k];
  }
  c.s1.resize(n * w.seg);
  for (std::size_t r = 0; r < n; ++r) std::copy(gs.begin(), gs.end(), c.s1.begin() + r * w.seg);
  const auto wlt = transpose(wl, w.seg, w.local2);
  kernels::gemm_nn_acc(c.f2.data(), wlt.data(), c.s1.data(), n, w.local2, w.seg);
  relu(c.s1);

  res.logits.rows = n;
  res.logits.cols = static_cast<std::size_t>(p.num_classes);
  res.logits.values = linear(c.s1, n, p[kHeadW], p[kHeadB]);
  return res;
}

template <class T>
ModelParamsT<T> backward(const ModelParamsT<T>& p, const ForwardResult<T>& fwd,
                         const std::vector<T>& dlogits, const std::array<T, 9>& dtransform) {
  const auto& c = fwd.cache;
  const NetWidths& w = p.widths;
  const std::size_t n = fwd.logits.rows;
  if (dlogits.size() != fwd.logits.values.size()) throw InvalidParameter("dlogits size mismatch");
  ModelParamsT<T> g = p.zeros_like();

  auto ds1 = linear_backward(dlogits, c.s1, n, p[kHeadW], g[kHeadW], g[kHeadB], true);
  relu_mask(ds1, c.s1);

  // Segmentation layer: per-point block and broadcast global block.
  std::vector<T> wl, wg;
  split_seg_weight(p[kSegW], w.local2, wl, wg);
  std::vector<T> dwl(w.seg * w.local2, T(0));
  kernels::gemm_tn_acc(ds1.data(), c.f2.data(), dwl.data(), w.seg, n, w.local2);
  std::vector<T> colsum(w.seg, T(0));
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t o = 0; o < w.seg; ++o) colsum[o] += ds1[r * w.seg + o];
  }
  const std::size_t seg_cols = w.local2 + w.global;
  auto& dseg = g[kSegW].data;
  for (std::size_t o = 0; o < w.seg; ++o) {
    std::copy_n(dwl.begin() + o * w.local2, w.local2, dseg.begin() + o * seg_cols);
    for (std::size_t k = 0; k < w.global; ++k) {
      dseg[o * seg_cols + w.local2 + k] = colsum[o] * c.g[k];
    }
    g[kSegB].data[o] = colsum[o];
  }
  std::vector<T> df2(n * w.local2, T(0));
  kernels::gemm_nn_acc(ds1.data(), wl.data(), df2.data(), n, w.seg, w.local2);
  std::vector<T> dg(w.global, T(0));
  for (std::size_t o = 0; o < w.seg; ++o) {
    const T* wrow = wg.data() + o * w.global;
    for (std::size_t k = 0; k < w.global; ++k) dg[k] += colsum[o] * wrow[k];
  }

  std::vector<T> df3(n * w.global, T(0));
  for (std::size_t k = 0; k < w.global; ++k) df3[c.g_arg[k] * w.global + k] += dg[k];
  relu_mask(df3, c.f3);
  const auto df2_global = linear_backward(df3, c.f2, n, p[kGlobalW], g[kGlobalW], g[kGlobalB], true);
  for (std::size_t i = 0; i < df2.size(); ++i) df2[i] += df2_global[i];
  relu_mask(df2, c.f2);
  auto df1 = linear_backward(df2, c.f1, n, p[kLocal2W], g[kLocal2W], g[kLocal2B], true);
  relu_mask(df1, c.f1);
  const auto dxt = linear_backward(df1, c.xt, n, p[kLocal1W], g[kLocal1W], g[kLocal1B], true);

  // xt = x A
  std::array<T, 9> da = dtransform;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < 3; ++i) {
      const T xv = c.x[r * 3 + i];
      for (std::size_t j = 0; j < 3; ++j) da[i * 3 + j] += xv * dxt[r * 3 + j];
    }
  }

  std::vector<T> dtg(w.tnet2, T(0));
  for (std::size_t j = 0; j < 9; ++j) {
    g[kTnetFcB].data[j] = da[j];
    T* grow = g[kTnetFcW].data.data() + j * w.tnet2;
    const T* wrow = p[kTnetFcW].data.data() + j * w.tnet2;
    for (std::size_t k = 0; k < w.tnet2; ++k) {
      grow[k] = da[j] * c.tg[k];
      dtg[k] += wrow[k] * da[j];
    }
  }
  std::vector<T> dh2(n * w.tnet2, T(0));
  for (std::size_t k = 0; k < w.tnet2; ++k) dh2[c.tg_arg[k] * w.tnet2 + k] += dtg[k];
  relu_mask(dh2, c.h2);
  auto dh1 = linear_backward(dh2, c.h1, n, p[kTnet2W], g[kTnet2W], g[kTnet2B], true);
  relu_mask(dh1, c.h1);
  linear_backward(dh1, c.x, n, p[kTnet1W], g[kTnet1W], g[kTnet1B], false);
  return g;
}

template <class T>
std::vector<T> softmax_rows(const Logits<T>& logits) {
  std::vector<T> out(logits.values.size());
  for (std::size_t r = 0; r < logits.rows; ++r) {
    const T* z = logits.values.data() + r * logits.cols;
    T* p = out.data() + r * logits.cols;
    const T m = *std::max_element(z, z + logits.cols);
    T s = 0;
    for (std::size_t j = 0; j < logits.cols; ++j) s += (p[j] = std::exp(z[j] - m));
    for (std::size_t j = 0; j < logits.cols; ++j) p[j] /= s;
  }
  return out;
}

template <class T>
std::vector<int> argmax_rows(const Logits<T>& logits) {
  std::vector<int> out(logits.rows);
  for (std::size_t r = 0; r < logits.rows; ++r) {
    const T* z = logits.values.data() + r * logits.cols;
    out[r] = static_cast<int>(std::max_element(z, z + logits.cols) - z);
  }
  return out;
}

template ForwardResult<float> forward(const ModelParamsT<float>&, const PointCloud&);
template ForwardResult<double> forward(const ModelParamsT<double>&, const PointCloud&);
template ModelParamsT<float> backward(const ModelParamsT<float>&, const ForwardResult<float>&,
                                      const std::vector<float>&, const std::array<float, 9>&);
template ModelParamsT<double> backward(const ModelParamsT<double>&, const ForwardResult<double>&,
                                       const std::vector<double>&, const std::array<double, 9>&);
template std::vector<float> softmax_rows(const Logits<float>&);
template std::vector<double> softmax_rows(const Logits<double>&);
template std::vector<int> argmax_rows(const Logits<float>&);
template std::vector<int> argmax_rows(const Logits<double>&);

}  // namespace pcal::nnet
