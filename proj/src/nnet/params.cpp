#include <algorithm>
#include <cmath>

#include "pcal/error.hpp"
#include "pcal/nnet.hpp"
#include "pcal/random.hpp"

namespace pcal::nnet {

std::string slot_name(Slot s) {
  static const char* const kNames[kSlotCount] = {
      "tnet.conv1.weight",  "tnet.conv1.bias",  "tnet.conv2.weight",    "tnet.conv2.bias",
      "tnet.fc.weight",     "tnet.fc.bias",     "local.conv1.weight",   "local.conv1.bias",
      "local.conv2.weight", "local.conv2.bias", "global.conv.weight",   "global.conv.bias",
      "seg.fc.weight",      "seg.fc.bias",      "head.weight",          "head.bias"};
  return kNames[s];
}

std::vector<std::vector<std::size_t>> expected_shapes(const NetWidths& w, int num_classes) {
  const auto c = static_cast<std::size_t>(num_classes);
  return {{w.tnet1, 3},  {w.tnet1},  {w.tnet2, w.tnet1},          {w.tnet2},
          {9, w.tnet2},  {9},        {w.local1, 3},               {w.local1},
          {w.local2, w.local1}, {w.local2}, {w.global, w.local2}, {w.global},
          {w.seg, w.local2 + w.global}, {w.seg}, {c, w.seg},      {c}};
}

template <class T>
std::size_t ModelParamsT<T>::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.data.size();
  return n;
}

template <class T>
ModelParamsT<T> ModelParamsT<T>::zeros_like() const {
  ModelParamsT<T> out = *this;
  for (auto& t : out.tensors) std::fill(t.data.begin(), t.data.end(), T(0));
  return out;
}

template struct ModelParamsT<float>;
template struct ModelParamsT<double>;

namespace {

void fill_layer(Tensor<float>& weight, Tensor<float>& bias, Rng& rng) {
  const double fan_out = static_cast<double>(weight.shape[0]);
  const double fan_in = static_cast<double>(weight.shape[1]);
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  for (float& v : weight.data) v = static_cast<float>((2.0 * uniform01(rng) - 1.0) * a);
  std::fill(bias.data.begin(), bias.data.end(), 0.0f);
}

Tensor<float> make_tensor(Slot s, const std::vector<std::size_t>& shape) {
  std::size_t count = 1;
  for (auto d : shape) count *= d;
  return {slot_name(s), shape, std::vector<float>(count, 0.0f)};
}

}  // namespace

ModelParams init_or_resize_head(const ModelParams* params, int num_classes, std::uint64_t rng_seed,
                                const NetWidths& widths) {
  if (num_classes < 2) throw InvalidParameter("num_classes must be >= 2");
  if (params && params->num_classes == num_classes) return *params;
  ModelParams out;
  if (params) {
    out = *params;
  } else {
    out.widths = widths;
  }
  out.num_classes = num_classes;
  out.rng_seed = rng_seed;
  const auto shapes = expected_shapes(out.widths, num_classes);

  if (!params) {
    out.tensors.clear();
    for (std::size_t s = 0; s < kSlotCount; ++s) {
      out.tensors.push_back(make_tensor(static_cast<Slot>(s), shapes[s]));
    }
    Rng rng(mix_seed(rng_seed, 0));
    for (std::size_t s = 0; s < kHeadW; s += 2) {
      fill_layer(out.tensors[s], out.tensors[s + 1], rng);
    }
  }
  out.tensors[kHeadW] = make_tensor(kHeadW, shapes[kHeadW]);
  out.tensors[kHeadB] = make_tensor(kHeadB, shapes[kHeadB]);
  Rng head_rng(mix_seed(rng_seed, 1));
  fill_layer(out.tensors[kHeadW], out.tensors[kHeadB], head_rng);
  return out;
}

template <class To, class From>
ModelParamsT<To> cast_params(const ModelParamsT<From>& params) {
  ModelParamsT<To> out;
  out.widths = params.widths;
  out.num_classes = params.num_classes;
  out.rng_seed = params.rng_seed;
  for (const auto& t : params.tensors) {
    out.tensors.push_back({t.name, t.shape, std::vector<To>(t.data.begin(), t.data.end())});
  }
  return out;
}

template ModelParamsT<double> cast_params<double, float>(const ModelParamsT<float>&);
template ModelParamsT<float> cast_params<float, double>(const ModelParamsT<double>&);
template ModelParamsT<float> cast_params<float, float>(const ModelParamsT<float>&);
template ModelParamsT<double> cast_params<double, double>(const ModelParamsT<double>&);

void check_finite(const ModelParams& params) {
  for (const auto& t : params.tensors) {
    for (float v : t.data) {
      if (!std::isfinite(v)) throw InvalidParameter("non-finite parameter in " + t.name);
    }
  }
}

}  // namespace pcal::nnet
