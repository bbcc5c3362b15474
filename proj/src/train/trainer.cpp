#include "pcal/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include "pcal/checkpoint.hpp"
#include "pcal/error.hpp"
#include "pcal/random.hpp"
#include "pcal/spatial_index.hpp"

namespace pcal::train {

namespace {

// RNG streams off the config seed
constexpr std::uint64_t kPretrainStream = 1;
constexpr std::uint64_t kFinetuneStream = 2;
constexpr std::uint64_t kRetrainStream = 3;

class Adam {
 public:
  Adam(const nnet::ModelParams& like, const TrainConfig& c) : cfg_(c) {
    for (const auto& t : like.tensors) {
      m_.emplace_back(t.data.size(), 0.0f);
      v_.emplace_back(t.data.size(), 0.0f);
    }
  }

  void step(nnet::ModelParams& p, const nnet::ModelParams& g) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.adam_beta1, t_);
    const double c2 = 1.0 - std::pow(cfg_.adam_beta2, t_);
    const float b1 = float(cfg_.adam_beta1), b2 = float(cfg_.adam_beta2);
    const float lr = float(cfg_.learning_rate / c1);
    const float inv_c2 = float(1.0 / c2);
    const float eps = float(cfg_.adam_epsilon);
    for (std::size_t s = 0; s < p.tensors.size(); ++s) {
      auto& w = p.tensors[s].data;
      const auto& gr = g.tensors[s].data;
      auto& m = m_[s];
      auto& v = v_[s];
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = b1 * m[i] + (1 - b1) * gr[i];
        v[i] = b2 * v[i] + (1 - b2) * gr[i] * gr[i];
        w[i] -= lr * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
      }
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<std::vector<float>> m_, v_;
  int t_ = 0;
};

// Neighbor pairs stay fixed for a cloud; random partners are redrawn each step.
class PairSampler {
 public:
  PairSampler(const PointCloud& cloud, const TrainConfig& c) : n_(cloud.size()), extra_(c.smooth_random_partners) {
    if (c.smooth_neighbors > 0 && n_ > 1) {
      SpatialIndex index(cloud);
      for (std::uint32_t i = 0; i < n_; ++i) {
        for (PointId j : index.query(i, Knn{c.smooth_neighbors})) base_.emplace_back(i, j);
      }
    }
  }

  const std::vector<nnet::PointPair>& draw(Rng& rng) {
    pairs_ = base_;
    if (n_ > 1) {
      for (std::uint32_t i = 0; i < n_; ++i) {
        for (std::size_t r = 0; r < extra_; ++r) {
          auto j = static_cast<std::uint32_t>(uniform_index(rng, n_ - 1));
          if (j >= i) ++j;
          pairs_.emplace_back(i, j);
        }
      }
    }
    return pairs_;
  }

 private:
  std::size_t n_;
  std::size_t extra_;
  std::vector<nnet::PointPair> base_, pairs_;
};

void check_compatible(const nnet::ModelParams& params, const PointCloud& cloud, const LabelMap& labels) {
  validate(labels);
  if (labels.size() != cloud.size()) throw InvalidParameter("label count does not match cloud size");
  if (labels.num_classes != params.num_classes) {
    throw InvalidParameter("model has " + std::to_string(params.num_classes) + " classes, labels have " +
                           std::to_string(labels.num_classes));
  }
}

// Runs `steps` optimizer steps on a single cloud.
nnet::ModelParams fit_cloud(const nnet::ModelParams& init, const PointCloud& cloud, const LabelMap& sup,
                            double beta, int steps, std::uint64_t seed, const TrainConfig& cfg,
                            const char* stage, const ProgressFn& progress) {
  nnet::ModelParams p = init;
  Adam adam(p, cfg);
  Rng rng(seed);
  const nnet::LossWeights w{cfg.alpha, beta, 1.0};
  double sigma = 1.0;
  std::optional<PairSampler> sampler;
  if (beta > 0) {
    sigma = nnet::estimate_sigma(cloud, cfg.sigma_sample_pairs, mix_seed(seed, 0));
    sampler.emplace(cloud, cfg);
  }
  static const std::vector<nnet::PointPair> kNoPairs;
  for (int e = 0; e < steps; ++e) {
    const auto& pairs = sampler ? sampler->draw(rng) : kNoPairs;
    const auto res = nnet::total_loss(p, cloud, sup, w, sigma, pairs);
    adam.step(p, res.grads);
    if (progress) progress({stage, e + 1, steps, double(res.total)});
  }
  return p;
}

}  // namespace

void validate(const TrainConfig& c) {
  if (!(c.learning_rate > 0) || !std::isfinite(c.learning_rate)) throw InvalidParameter("learning_rate must be > 0");
  if (c.epochs_per_round < 1) throw InvalidParameter("epochs_per_round must be >= 1");
  if (c.pretrain_epochs < 1) throw InvalidParameter("pretrain_epochs must be >= 1");
  if (!(c.adam_beta1 >= 0 && c.adam_beta1 < 1)) throw InvalidParameter("adam_beta1 must be in [0, 1)");
  if (!(c.adam_beta2 >= 0 && c.adam_beta2 < 1)) throw InvalidParameter("adam_beta2 must be in [0, 1)");
  if (!(c.adam_epsilon > 0)) throw InvalidParameter("adam_epsilon must be > 0");
  if (!(c.alpha >= 0)) throw InvalidParameter("alpha must be >= 0");
  if (c.beta_schedule.empty()) throw InvalidParameter("beta_schedule must not be empty");
  for (double b : c.beta_schedule) {
    if (!(b >= 0) || !std::isfinite(b)) throw InvalidParameter("beta_schedule values must be >= 0");
  }
  if (c.sigma_sample_pairs == 0) throw InvalidParameter("sigma_sample_pairs must be >= 1");
}

double beta_for_round(const TrainConfig& config, int round) {
  if (config.beta_schedule.empty()) throw InvalidParameter("beta_schedule must not be empty");
  if (round < 0) throw InvalidParameter("round must be >= 0");
  const auto r = std::min<std::size_t>(std::size_t(round), config.beta_schedule.size() - 1);
  return config.beta_schedule[r];
}

LabelMap supervision_mask(const LabelMap& labels) {
  LabelMap out = labels;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto p = out.provenance[i];
    if (p != Provenance::Seed && p != Provenance::Grown && p != Provenance::Corrected) {
      out.labels[i] = kUnlabeled;
      out.provenance[i] = Provenance::None;
    }
  }
  return out;
}

PretrainResult pretrain(const std::vector<LabeledCloud>& dataset, const TrainConfig& config,
                        const ProgressFn& progress) {
  validate(config);
  if (dataset.empty()) throw InvalidParameter("pretraining dataset is empty");
  const int C = dataset.front().labels.num_classes;
  for (const auto& item : dataset) {
    validate(item.cloud);
    validate(item.labels);
    if (item.labels.num_classes != C) throw InvalidParameter("dataset mixes class counts");
    if (item.labels.size() != item.cloud.size()) throw InvalidParameter("label count does not match cloud size");
    if (!item.labels.is_full()) throw InvalidParameter("pretraining labels must be full");
  }

  PretrainResult out;
  out.params = nnet::init_or_resize_head(nullptr, C, config.rng_seed);
  Adam adam(out.params, config);
  Rng rng(mix_seed(config.rng_seed, kPretrainStream));
  const nnet::LossWeights w{config.alpha, 0.0, 1.0};
  std::vector<std::size_t> order(dataset.size());
  for (int e = 0; e < config.pretrain_epochs; ++e) {
    std::iota(order.begin(), order.end(), 0);
    shuffle(order.begin(), order.end(), rng);
    double sum = 0;
    for (std::size_t k : order) {
      const auto res = nnet::total_loss(out.params, dataset[k].cloud, dataset[k].labels, w, 1.0, {});
      adam.step(out.params, res.grads);
      sum += res.total;
    }
    if (progress) progress({"pretrain", e + 1, config.pretrain_epochs, sum / double(order.size())});
  }

  double acc = 0;
  for (const auto& item : dataset) acc += accuracy(predict(out.params, item.cloud), item.labels);
  out.accuracy = acc / double(dataset.size());
  return out;
}

nnet::ModelParams finetune_round(const nnet::ModelParams& params, const PointCloud& cloud,
                                 const LabelMap& labels, int round, const TrainConfig& config,
                                 const ProgressFn& progress) {
  validate(config);
  validate(cloud);
  check_compatible(params, cloud, labels);
  const double beta = beta_for_round(config, round);
  const LabelMap sup = supervision_mask(labels);
  if (sup.labeled_count() == 0) throw InvalidParameter("no supervised points (Seed, Grown or Corrected)");
  const auto seed = mix_seed(mix_seed(config.rng_seed, kFinetuneStream), std::uint64_t(round));
  return fit_cloud(params, cloud, sup, beta, config.epochs_per_round, seed, config, "finetune", progress);
}

nnet::ModelParams final_retrain(const nnet::ModelParams& params, const PointCloud& cloud,
                                const LabelMap& labels, const TrainConfig& config,
                                const ProgressFn& progress) {
  validate(config);
  validate(cloud);
  check_compatible(params, cloud, labels);
  if (!labels.is_full()) throw InvalidParameter("final retrain needs every point labeled");
  const auto seed = mix_seed(config.rng_seed, kRetrainStream);
  return fit_cloud(params, cloud, labels, 0.0, 2 * config.epochs_per_round, seed, config, "retrain", progress);
}

nnet::ModelParams checkpoint_roundtrip(const nnet::ModelParams& params) {
  return nnet::load_checkpoint(nnet::save_checkpoint(params));
}

LabelMap predict(const nnet::ModelParams& params, const PointCloud& cloud) {
  const auto fwd = nnet::forward(params, cloud);
  LabelMap out(cloud.size(), params.num_classes);
  out.labels = nnet::argmax_rows(fwd.logits);
  std::fill(out.provenance.begin(), out.provenance.end(), Provenance::Predicted);
  return out;
}

double accuracy(const LabelMap& predicted, const LabelMap& truth) {
  if (predicted.size() != truth.size()) throw InvalidParameter("label maps differ in length");
  if (truth.size() == 0) throw InvalidParameter("empty label map");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += predicted.labels[i] == truth.labels[i];
  return double(hit) / double(truth.size());
}

}  // namespace pcal::train
