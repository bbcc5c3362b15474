#include <algorithm>
#include <cmath>

#include "pcal/error.hpp"
#include "pcal/nnet.hpp"
#include "pcal/random.hpp"

namespace pcal::nnet {
namespace {

template <class T>
std::vector<T> log_softmax_rows(const Logits<T>& logits) {
  std::vector<T> out(logits.values.size());
  for (std::size_t r = 0; r < logits.rows; ++r) {
    const T* z = logits.values.data() + r * logits.cols;
    const T m = *std::max_element(z, z + logits.cols);
    T s = 0;
    for (std::size_t j = 0; j < logits.cols; ++j) s += std::exp(z[j] - m);
    const T lse = m + std::log(s);
    for (std::size_t j = 0; j < logits.cols; ++j) out[r * logits.cols + j] = z[j] - lse;
  }
  return out;
}

}  // namespace

template <class T>
T segment_loss(const Logits<T>& logits, const LabelMap& labels, std::vector<T>* grad) {
  if (labels.size() != logits.rows) throw InvalidParameter("label count does not match logits");
  if (static_cast<std::size_t>(labels.num_classes) != logits.cols) {
    throw InvalidParameter("class count does not match logits");
  }
  const std::size_t count = labels.labeled_count();
  if (count == 0) throw InvalidParameter("segment loss needs at least one labeled point");

  const auto logp = log_softmax_rows(logits);
  const std::size_t cols = logits.cols;
  if (grad) grad->assign(logits.values.size(), T(0));
  const T inv = T(1) / static_cast<T>(count);
  T loss = 0;
  for (std::size_t r = 0; r < logits.rows; ++r) {
    const int l = labels.labels[r];
    if (l == kUnlabeled) continue;
    loss -= logp[r * cols + static_cast<std::size_t>(l)];
    if (grad) {
      for (std::size_t j = 0; j < cols; ++j) (*grad)[r * cols + j] = std::exp(logp[r * cols + j]) * inv;
      (*grad)[r * cols + static_cast<std::size_t>(l)] -= inv;
    }
  }
  return loss * inv;
}

template <class T>
T transform_reg(const std::array<T, 9>& a, std::array<T, 9>* grad) {
  // m = A A^T - I (symmetric); d||m||^2/dA = 4 m A.
  std::array<T, 9> m{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      T s = 0;
      for (int k = 0; k < 3; ++k) s += a[i * 3 + k] * a[j * 3 + k];
      m[i * 3 + j] = s - (i == j ? T(1) : T(0));
    }
  }
  T loss = 0;
  for (T v : m) loss += v * v;
  if (grad) {
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        T s = 0;
        for (int k = 0; k < 3; ++k) s += m[i * 3 + k] * a[k * 3 + j];
        (*grad)[i * 3 + j] = T(4) * s;
      }
    }
  }
  return loss;
}

template <class T>
T smoothness_loss(const Logits<T>& logits, const PointCloud& cloud, double sigma,
                  std::span<const PointPair> pairs, std::vector<T>* grad) {
  if (!(sigma > 0)) throw InvalidParameter("sigma must be > 0");
  if (pairs.empty()) throw InvalidParameter("smoothness loss needs at least one pair");
  if (cloud.size() != logits.rows) throw InvalidParameter("cloud size does not match logits");

  const std::size_t cols = logits.cols;
  const auto logp = log_softmax_rows(logits);
  if (grad) grad->assign(logits.values.size(), T(0));
  const T inv_pairs = T(1) / static_cast<T>(pairs.size());
  const T inv_sigma = T(1) / static_cast<T>(sigma);
  std::vector<T> p_i(cols), u(cols);

  T loss = 0;
  for (const auto& [i, j] : pairs) {
    if (i >= logits.rows || j >= logits.rows) throw InvalidParameter("pair index out of range");
    if (i == j) continue;
    const auto& a = cloud.positions[i];
    const auto& b = cloud.positions[j];
    T d2 = 0;
    for (int d = 0; d < 3; ++d) {
      const T diff = static_cast<T>(a[d]) - static_cast<T>(b[d]);
      d2 += diff * diff;
    }
    const T weight = std::exp(-std::sqrt(d2) * inv_sigma);
    T kl = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      p_i[c] = std::exp(logp[i * cols + c]);
      u[c] = logp[i * cols + c] - logp[j * cols + c];
      kl += p_i[c] * u[c];
    }
    loss += weight * kl;
    if (grad) {
      const T s = weight * inv_pairs;
      for (std::size_t c = 0; c < cols; ++c) {
        (*grad)[i * cols + c] += s * p_i[c] * (u[c] - kl);
        (*grad)[j * cols + c] += s * (std::exp(logp[j * cols + c]) - p_i[c]);
      }
    }
  }
  return loss * inv_pairs;
}

double estimate_sigma(const PointCloud& cloud, std::size_t sample_pairs, std::uint64_t rng_seed) {
  const std::size_t n = cloud.size();
  if (n < 2) throw InvalidParameter("sigma estimation needs at least two points");
  if (sample_pairs == 0) throw InvalidParameter("sample_pairs must be >= 1");

  // Welford accumulation of the distance variance.
  double mean = 0, m2 = 0;
  std::size_t count = 0;
  auto add = [&](std::size_t i, std::size_t j) {
    const auto& a = cloud.positions[i];
    const auto& b = cloud.positions[j];
    double s = 0;
    for (int d = 0; d < 3; ++d) s += (double(a[d]) - b[d]) * (double(a[d]) - b[d]);
    const double x = std::sqrt(s);
    ++count;
    const double delta = x - mean;
    mean += delta / static_cast<double>(count);
    m2 += delta * (x - mean);
  };

  const double total_pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
  if (total_pairs <= static_cast<double>(sample_pairs)) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) add(i, j);
    }
  } else {
    Rng rng(rng_seed);
    for (std::size_t s = 0; s < sample_pairs; ++s) {
      const std::size_t i = uniform_index(rng, n);
      std::size_t j = uniform_index(rng, n - 1);
      if (j >= i) ++j;
      add(i, j);
    }
  }
  const double variance = m2 / static_cast<double>(count);
  return std::max(variance, kSigmaMin);
}

template <class T>
LossResult<T> total_loss(const ModelParamsT<T>& params, const PointCloud& cloud,
                         const LabelMap& labels, const LossWeights& weights, double sigma,
                         std::span<const PointPair> pairs) {
  if (weights.alpha < 0 || weights.beta < 0 || weights.segment < 0) {
    throw InvalidParameter("loss weights must be >= 0");
  }
  auto fwd = forward(params, cloud);
  LossResult<T> res;
  std::vector<T> dlogits(fwd.logits.values.size(), T(0));
  std::vector<T> g;

  if (weights.segment > 0) {
    res.segment = segment_loss(fwd.logits, labels, &g);
    const T w = static_cast<T>(weights.segment);
    for (std::size_t i = 0; i < g.size(); ++i) dlogits[i] += w * g[i];
  }
  if (weights.beta > 0) {
    res.smooth = smoothness_loss(fwd.logits, cloud, sigma, pairs, &g);
    const T w = static_cast<T>(weights.beta);
    for (std::size_t i = 0; i < g.size(); ++i) dlogits[i] += w * g[i];
  }
  std::array<T, 9> dtransform{};
  res.transform = transform_reg(fwd.transform, &dtransform);
  for (T& v : dtransform) v *= static_cast<T>(weights.alpha);

  res.total = static_cast<T>(weights.segment) * res.segment +
              static_cast<T>(weights.alpha) * res.transform +
              static_cast<T>(weights.beta) * res.smooth;
  res.grads = backward(params, fwd, dlogits, dtransform);
  res.logits = std::move(fwd.logits);
  return res;
}

template float segment_loss(const Logits<float>&, const LabelMap&, std::vector<float>*);
template double segment_loss(const Logits<double>&, const LabelMap&, std::vector<double>*);
template float transform_reg(const std::array<float, 9>&, std::array<float, 9>*);
template double transform_reg(const std::array<double, 9>&, std::array<double, 9>*);
template float smoothness_loss(const Logits<float>&, const PointCloud&, double,
                               std::span<const PointPair>, std::vector<float>*);
template double smoothness_loss(const Logits<double>&, const PointCloud&, double,
                                std::span<const PointPair>, std::vector<double>*);
template LossResult<float> total_loss(const ModelParamsT<float>&, const PointCloud&,
                                      const LabelMap&, const LossWeights&, double,
                                      std::span<const PointPair>);
template LossResult<double> total_loss(const ModelParamsT<double>&, const PointCloud&,
                                       const LabelMap&, const LossWeights&, double,
                                       std::span<const PointPair>);

}  // namespace pcal::nnet
