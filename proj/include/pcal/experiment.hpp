#pragma once

// Simulated annotation experiments: pretrain a base model, then annotate a
// generated shape stream cloud by cloud with the oracle, once per arm and
// RNG seed, next to the manual painting baseline.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcal/config.hpp"
#include "pcal/datasets.hpp"
#include "pcal/oracle.hpp"

namespace pcal::experiment {

// Arms: "default" uses the configured beta schedule, "no_smooth" zeroes it.
inline const char* const kArmDefault = "default";
inline const char* const kArmNoSmooth = "no_smooth";

struct ExperimentConfig {
  std::string name = "experiment";
  data::Family family = data::Family::Chair;
  std::size_t clouds = 20;
  int part_count = 3;
  std::size_t points = 1024;
  double noise_sigma = 0.01;
  std::vector<std::uint64_t> seeds{1};
  std::vector<std::string> arms{kArmDefault};
  NeighborMode manual_brush = Knn{16};
  bool continual = true;  // finalized model becomes the next cloud's base

  data::Family pretrain_family = data::Family::Table;
  std::size_t pretrain_clouds = 20;
  int pretrain_part_count = 3;
  std::string pretrain_checkpoint;  // load instead of training when set

  oracle::OraclePolicy policy;
  session::SessionConfig session;
};

void validate(const ExperimentConfig& config);
ExperimentConfig from_document(const config::Document& doc);
ExperimentConfig load_config(const std::string& path);

/// Base model for one seed: the checkpoint if configured, else pretraining on
/// the pretrain family. `accuracy` receives the final training accuracy (or
/// -1 for a loaded checkpoint).
nnet::ModelParams base_model(const ExperimentConfig& config, std::uint64_t seed, double* accuracy = nullptr);

/// Shape stream for one seed; identical for every arm.
std::vector<LabeledCloud> shape_stream(const ExperimentConfig& config, std::uint64_t seed);

/// Training config of the session annotating cloud `index` in `arm`.
session::SessionConfig session_config(const ExperimentConfig& config, const std::string& arm,
                                      std::uint64_t seed, std::size_t index);

struct CloudRow {
  std::uint64_t seed = 0;
  std::string arm;
  std::size_t cloud = 0;
  std::size_t points = 0;
  oracle::EvalReport report;
  std::size_t manual_clicks = 0;
  std::size_t cumulative_clicks = 0;  // running sum within (seed, arm)
};

struct CloudTrace {
  session::ModelPtr base;           // model the session started from
  std::vector<std::string> events;  // session event log
  LabelMap final_labels;
};

struct ExperimentResult {
  std::vector<CloudRow> rows;
  std::vector<CloudTrace> traces;  // parallel to rows when kept
  std::vector<double> pretrain_accuracy;  // per seed
};

struct RunOptions {
  bool keep_traces = false;
  std::function<void(const std::string&)> log;
};

ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

struct ArmSummary {
  std::string arm;
  std::size_t clouds = 0;
  double mean_clicks = 0;
  double mean_manual_clicks = 0;
  double click_ratio = 0;  // mean_clicks / mean_manual_clicks
  double mean_round1_error_blobs = 0;
  double mean_round1_corrections = 0;
  double mean_first5_clicks = 0;
  double mean_last5_clicks = 0;
  double mean_rounds = 0;
  bool all_exact = true;  // every cloud finalized equal to ground truth
};

std::vector<ArmSummary> summarize(const ExperimentResult& result);

std::string clouds_csv(const ExperimentResult& result);
std::string rounds_csv(const ExperimentResult& result);
nlohmann::json summary_json(const ExperimentConfig& config, const ExperimentResult& result);
std::string summary_markdown(const ExperimentConfig& config, const ExperimentResult& result);

/// clouds.csv, rounds.csv, summary.json, summary.md under `out_dir`.
void write_outputs(const ExperimentConfig& config, const ExperimentResult& result, const std::string& out_dir);

}  // namespace pcal::experiment
