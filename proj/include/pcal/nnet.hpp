#pragma once

// Point-wise segmentation network: input transform net, shared per-point
// MLP with max-pooled global feature, and a swappable C-way head. Forward
// and reverse passes are written out by hand and templated on precision:
// float for training, double for finite-difference checks.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pcal/geom.hpp"
#include "pcal/labels.hpp"

namespace pcal::nnet {

struct NetWidths {
  std::size_t tnet1 = 32;
  std::size_t tnet2 = 64;
  std::size_t local1 = 64;
  std::size_t local2 = 64;
  std::size_t global = 128;
  std::size_t seg = 128;

  friend bool operator==(const NetWidths&, const NetWidths&) = default;
};

/// Tensor slots in storage (and checkpoint) order.
enum Slot : std::size_t {
  kTnet1W, kTnet1B, kTnet2W, kTnet2B, kTnetFcW, kTnetFcB,
  kLocal1W, kLocal1B, kLocal2W, kLocal2B, kGlobalW, kGlobalB,
  kSegW, kSegB,
  kHeadW, kHeadB,
  kSlotCount
};

inline constexpr bool is_tnet(Slot s) noexcept { return s <= kTnetFcB; }
inline constexpr bool is_head(Slot s) noexcept { return s == kHeadW || s == kHeadB; }

std::string slot_name(Slot s);

template <class T>
struct Tensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<T> data;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

template <class T>
struct ModelParamsT {
  NetWidths widths;
  int num_classes = 0;
  std::uint64_t rng_seed = 0;
  std::vector<Tensor<T>> tensors;

  Tensor<T>& operator[](Slot s) { return tensors[s]; }
  const Tensor<T>& operator[](Slot s) const { return tensors[s]; }
  std::size_t parameter_count() const noexcept;

  /// Same layout, every value zero (used as a gradient accumulator).
  ModelParamsT zeros_like() const;

  friend bool operator==(const ModelParamsT&, const ModelParamsT&) = default;
};

using ModelParams = ModelParamsT<float>;

/// Expected tensor shapes for the given widths and class count.
std::vector<std::vector<std::size_t>> expected_shapes(const NetWidths& widths, int num_classes);

/// With `params == nullptr` every layer is drawn uniformly from
/// [-sqrt(6/(fan_in+fan_out)), +...] (biases zero). Otherwise all tensors but
/// the head are copied and only the head is redrawn with width C; a model
/// that already has C classes comes back unchanged.
ModelParams init_or_resize_head(const ModelParams* params, int num_classes, std::uint64_t rng_seed,
                                const NetWidths& widths = {});

template <class To, class From>
ModelParamsT<To> cast_params(const ModelParamsT<From>& params);

void check_finite(const ModelParams& params);

/// Row-major N x C logits.
template <class T>
struct Logits {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> values;

  std::span<const T> row(std::size_t i) const { return {values.data() + i * cols, cols}; }
};

template <class T>
std::vector<T> softmax_rows(const Logits<T>& logits);

template <class T>
std::vector<int> argmax_rows(const Logits<T>& logits);

using Mat3 = std::array<double, 9>;

/// Intermediate activations kept for the reverse pass.
template <class T>
struct ForwardCache {
  std::vector<T> x;        // N x 3 input
  std::vector<T> h1, h2;   // transform net features
  std::vector<T> tg;       // pooled transform-net feature
  std::vector<std::uint32_t> tg_arg;
  std::vector<T> xt;       // transformed input
  std::vector<T> f1, f2, f3;
  std::vector<T> g;        // pooled global feature
  std::vector<std::uint32_t> g_arg;
  std::vector<T> s1;
};

template <class T>
struct ForwardResult {
  Logits<T> logits;
  std::array<T, 9> transform;  // row-major 3x3, applied as x' = x A
  ForwardCache<T> cache;
};

template <class T>
ForwardResult<T> forward(const ModelParamsT<T>& params, const PointCloud& cloud);

/// Reverse pass given dL/dlogits and an extra dL/dA; returns parameter
/// gradients in the same layout as `params`.
template <class T>
ModelParamsT<T> backward(const ModelParamsT<T>& params, const ForwardResult<T>& fwd,
                         const std::vector<T>& dlogits, const std::array<T, 9>& dtransform);

// Loss terms. Each optionally writes its gradient with respect to its input.

/// Mean over labeled entries of -log softmax(row)[label].
template <class T>
T segment_loss(const Logits<T>& logits, const LabelMap& labels, std::vector<T>* grad = nullptr);

/// ||I - A A^T||_F^2.
template <class T>
T transform_reg(const std::array<T, 9>& a, std::array<T, 9>* grad = nullptr);

using PointPair = std::pair<std::uint32_t, std::uint32_t>;

/// Mean over pairs of KL(p_i || p_j) * exp(-||pos_i - pos_j|| / sigma).
template <class T>
T smoothness_loss(const Logits<T>& logits, const PointCloud& cloud, double sigma,
                  std::span<const PointPair> pairs, std::vector<T>* grad = nullptr);

inline constexpr double kSigmaMin = 1e-4;

/// Population variance of pairwise Euclidean distances (exact when the pair
/// count fits in `sample_pairs`, else sampled), clamped below by kSigmaMin.
double estimate_sigma(const PointCloud& cloud, std::size_t sample_pairs, std::uint64_t rng_seed);

struct LossWeights {
  double alpha = 0.001;  // transform regularizer
  double beta = 1.0;     // smoothness
  double segment = 1.0;  // fixed at 1 in training; zeroed only to isolate terms
};

template <class T>
struct LossResult {
  T total = 0;
  T segment = 0;
  T transform = 0;
  T smooth = 0;
  ModelParamsT<T> grads;
  Logits<T> logits;
};

/// segment + alpha * transform + beta * smooth, with exact gradients.
template <class T>
LossResult<T> total_loss(const ModelParamsT<T>& params, const PointCloud& cloud,
                         const LabelMap& labels, const LossWeights& weights, double sigma,
                         std::span<const PointPair> pairs);

}  // namespace pcal::nnet
