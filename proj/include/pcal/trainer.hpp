#pragma once

// Optimization schedules: pretraining on fully labeled clouds, per-round
// fine-tuning on one partially labeled cloud, and the full-cloud retrain
// that closes a session.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pcal/labels.hpp"
#include "pcal/nnet.hpp"

namespace pcal::train {

struct TrainConfig {
  double learning_rate = 1e-3;
  int epochs_per_round = 30;
  int pretrain_epochs = 50;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::vector<double> beta_schedule{1.0, 0.0};  // smoothness weight per round
  double alpha = 0.001;                         // transform regularizer weight
  std::uint64_t rng_seed = 0;
  // smoothness pairs per point per step: graph neighbors plus random partners
  std::size_t smooth_neighbors = 8;
  std::size_t smooth_random_partners = 4;
  std::size_t sigma_sample_pairs = 20000;
};

void validate(const TrainConfig& config);

/// beta_schedule[round], clamped to the last entry.
double beta_for_round(const TrainConfig& config, int round);

struct Progress {
  std::string stage;  // "pretrain", "finetune", "retrain"
  int epoch = 0;      // 1-based
  int epochs = 0;
  double loss = 0;
};
using ProgressFn = std::function<void(const Progress&)>;

struct PretrainResult {
  nnet::ModelParams params;
  double accuracy = 0;  // mean training accuracy after the last epoch
};

/// Full supervision (beta = 0) over every cloud for pretrain_epochs, one
/// cloud per step in an order shuffled from rng_seed each epoch.
PretrainResult pretrain(const std::vector<LabeledCloud>& dataset, const TrainConfig& config,
                        const ProgressFn& progress = {});

/// Entries used as supervision during fine-tuning: Seed, Grown and Corrected.
/// Predicted entries come back unlabeled.
LabelMap supervision_mask(const LabelMap& labels);

/// epochs_per_round steps on one cloud with beta_for_round(round). Returns
/// new parameters; `params` is left untouched.
nnet::ModelParams finetune_round(const nnet::ModelParams& params, const PointCloud& cloud,
                                 const LabelMap& labels, int round, const TrainConfig& config,
                                 const ProgressFn& progress = {});

/// 2 * epochs_per_round steps on every point of a fully labeled cloud, beta = 0.
nnet::ModelParams final_retrain(const nnet::ModelParams& params, const PointCloud& cloud,
                                const LabelMap& labels, const TrainConfig& config,
                                const ProgressFn& progress = {});

/// Save to the checkpoint format and load back.
nnet::ModelParams checkpoint_roundtrip(const nnet::ModelParams& params);

/// Argmax predictions of `params` on `cloud`, returned as a full map with
/// Predicted provenance.
LabelMap predict(const nnet::ModelParams& params, const PointCloud& cloud);

/// Fraction of points whose label matches `truth` (both maps full).
double accuracy(const LabelMap& predicted, const LabelMap& truth);

}  // namespace pcal::train
