#pragma once

// Simulated annotator that drives sessions from ground truth, the manual
// painting baseline, and segmentation metrics.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcal/session.hpp"

namespace pcal::oracle {

struct OraclePolicy {
  std::size_t seeds_per_class = 1;
  std::size_t corrections_per_round = 5;
  double completion_threshold = 1.0;
  std::uint64_t rng_seed = 0;
  // Training rounds before the annotator stops waiting on the network and
  // clicks every remaining wrong point. Must stay below kMaxRounds.
  int max_rounds = 20;
  bool grow_corrections = false;
};

inline constexpr int kMaxRounds = 50;

void validate(const OraclePolicy& policy);

struct Metrics {
  double accuracy = 0;
  double miou = 0;
};

/// Accuracy and mean IoU over classes present in `ground_truth`.
Metrics evaluate(const LabelMap& predicted, const LabelMap& ground_truth);

/// Per class: the medoid, then farthest-point samples within the class.
std::vector<session::Assignment> select_seeds(const PointCloud& cloud, const LabelMap& ground_truth,
                                              const OraclePolicy& policy);

/// Mispredicted points grouped into blobs over the KNN(8) graph (edges join
/// wrong points of the same true class). Returns the medoids of the largest
/// `corrections_per_round` blobs, or nothing once agreement reaches the
/// completion threshold.
std::vector<session::Assignment> select_corrections(const LabelMap& predicted, const LabelMap& ground_truth,
                                                    const PointCloud& cloud, const OraclePolicy& policy);

/// Number of blobs select_corrections would choose from, without the budget.
std::size_t count_error_blobs(const LabelMap& predicted, const LabelMap& ground_truth, const PointCloud& cloud);

struct RoundRecord {
  int round = 0;  // 0 = after seeding and growth
  std::size_t clicks = 0;             // clicks issued after this round's measurement
  std::size_t clicks_cumulative = 0;  // including this round's clicks
  double accuracy = 0;
  double miou = 0;
  std::size_t error_blobs = 0;

  friend bool operator==(const RoundRecord&, const RoundRecord&) = default;
};

struct EvalReport {
  std::vector<RoundRecord> rounds;
  std::size_t seed_clicks = 0;
  std::size_t correction_clicks = 0;
  std::size_t mopup_clicks = 0;  // part of correction_clicks
  std::size_t total_clicks = 0;
  int rounds_to_completion = 0;  // training rounds run
  double final_accuracy = 0;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

struct SimulationResult {
  EvalReport report;
  session::SessionState final_state;
};

/// Seeds, grows, then alternates training and corrections until agreement
/// reaches the threshold (or policy.max_rounds), corrects whatever is still
/// wrong and finalizes. Throws Error past kMaxRounds.
SimulationResult run_simulated_session(const PointCloud& cloud, const LabelMap& ground_truth,
                                       const session::ModelPtr& base_model, const OraclePolicy& policy,
                                       const session::SessionConfig& config,
                                       const std::string& session_id = "sim");

/// Perfect painter: click the lowest-id wrong point, paint it and its brush
/// neighbors of the same true class; repeat until everything is right.
std::size_t manual_baseline_clicks(const PointCloud& cloud, const LabelMap& ground_truth,
                                   const NeighborMode& brush);

/// One row per round: round,clicks_cumulative,accuracy,miou.
std::string report_csv(const EvalReport& report);
nlohmann::json report_json(const EvalReport& report);

}  // namespace pcal::oracle
