#pragma once

// Per-cloud annotation state machine. Every label and click write goes
// through the operations below; each returns a new state and leaves the
// input untouched, so a rejected call cannot leave a half-applied change.
//
//   Seeding --seeds--> Growing --train--> Training --done--> Reviewing
//   Reviewing --corrections--> Reviewing,  Reviewing --train--> Training
//   Reviewing --finalize--> Finalized

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "pcal/labels.hpp"
#include "pcal/nnet.hpp"
#include "pcal/region_grow.hpp"
#include "pcal/spatial_index.hpp"
#include "pcal/trainer.hpp"

namespace pcal::session {

enum class Phase { Seeding, Growing, Training, Reviewing, Finalized };
std::string_view phase_name(Phase p) noexcept;

enum class ClickKind { Seed, Correction };

struct Click {
  ClickKind kind = ClickKind::Seed;
  PointId point = 0;
  int class_id = 0;
  int round = 0;
  std::int64_t timestamp_ms = 0;

  friend bool operator==(const Click&, const Click&) = default;
};

struct Assignment {
  PointId point = 0;
  int class_id = 0;
  friend bool operator==(const Assignment&, const Assignment&) = default;
};

struct Correction {
  PointId point = 0;
  int class_id = 0;
  bool grow = false;  // also grow a region from the corrected point
};

struct SessionConfig {
  GrowConfig grow;
  train::TrainConfig train;
  std::size_t normal_k = 24;  // neighbors for normal estimation when the cloud has none
};

void validate(const SessionConfig& config);

nlohmann::json to_json(const SessionConfig& config);
/// Missing keys keep their defaults; `path` prefixes error messages.
SessionConfig session_config_from_json(const nlohmann::json& j, const std::string& path = "config");

using ModelPtr = std::shared_ptr<const nnet::ModelParams>;

struct SessionState {
  std::string session_id;
  std::shared_ptr<const PointCloud> cloud;  // normalized, with normals
  std::shared_ptr<const SpatialIndex> index;
  LabelMap labels;
  ModelPtr model;
  Phase phase = Phase::Seeding;
  int round = 0;
  std::vector<Click> clicks;
  SessionConfig config;
  std::vector<std::string> events;  // NDJSON, one record per accepted operation
};

/// Milliseconds since the epoch; used when an operation is not given a time.
std::int64_t now_ms();

SessionState create_session(const PointCloud& cloud, int num_classes, const ModelPtr& base_model,
                            const SessionConfig& config, const std::string& session_id);

SessionState submit_seeds(const SessionState& state, const std::vector<Assignment>& seeds,
                          std::int64_t timestamp_ms);

/// Result of the compute-heavy half of a training pass.
struct TrainingOutcome {
  ModelPtr model;
  LabelMap predicted;  // full argmax map
};

/// Moves a training-eligible state into Training.
SessionState begin_training(const SessionState& state);
/// Fine-tunes on a Training-phase snapshot; touches no shared state.
TrainingOutcome run_training(const SessionState& training, const train::ProgressFn& progress = {});
/// Applies an outcome: non-human labels become predictions, round += 1,
/// phase Reviewing.
SessionState complete_training(const SessionState& training, const TrainingOutcome& outcome);
/// Reverts a Training state after a failed run.
SessionState abort_training(const SessionState& training, Phase previous);

SessionState train_and_predict(const SessionState& state, const train::ProgressFn& progress = {});

SessionState submit_corrections(const SessionState& state, const std::vector<Correction>& corrections,
                                std::int64_t timestamp_ms);

/// Runs the full-cloud retrain; the returned state's model is the one to
/// publish as the next base model.
SessionState finalize(const SessionState& state, const train::ProgressFn& progress = {});

/// Rebuilds a session from its event log against the same cloud and base model.
SessionState replay(const PointCloud& cloud, const ModelPtr& base_model,
                    const std::vector<std::string>& events);

std::string event_log_ndjson(const SessionState& state);
std::vector<std::string> parse_event_log(std::string_view ndjson);

}  // namespace pcal::session
