#include "pcal/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <limits>

#include "pcal/error.hpp"

namespace pcal::oracle {

namespace {

void check_pair(const LabelMap& predicted, const LabelMap& truth) {
  if (predicted.size() != truth.size()) throw InvalidParameter("label maps differ in length");
  if (predicted.num_classes != truth.num_classes) throw InvalidParameter("label maps differ in class count");
  if (truth.size() == 0) throw InvalidParameter("empty label map");
}

void check_truth(const PointCloud& cloud, const LabelMap& truth) {
  validate(cloud);
  validate(truth);
  if (truth.size() != cloud.size()) throw InvalidParameter("ground truth length differs from cloud");
  if (!truth.is_full()) throw InvalidParameter("ground truth must label every point");
}

// Unlabeled entries count as wrong and belong to no predicted class.
Metrics metrics_of(const LabelMap& predicted, const LabelMap& truth) {
  const int C = truth.num_classes;
  std::vector<std::size_t> inter(C, 0), in_pred(C, 0), in_truth(C, 0);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth.labels[i], p = predicted.labels[i];
    ++in_truth[t];
    if (p != kUnlabeled) ++in_pred[p];
    if (p == t) {
      ++hit;
      ++inter[t];
    }
  }
  Metrics m;
  m.accuracy = double(hit) / double(truth.size());
  int present = 0;
  double sum = 0;
  for (int c = 0; c < C; ++c) {
    if (in_truth[c] == 0) continue;
    ++present;
    sum += double(inter[c]) / double(in_truth[c] + in_pred[c] - inter[c]);
  }
  m.miou = present ? sum / present : 0.0;
  return m;
}

// Lowest-id point minimizing the summed distance to the others.
PointId medoid(const PointCloud& cloud, const std::vector<PointId>& members) {
  PointId best = members.front();
  double best_sum = std::numeric_limits<double>::infinity();
  for (PointId a : members) {
    double sum = 0;
    for (PointId b : members) sum += distance(cloud.positions[a], cloud.positions[b]);
    if (sum < best_sum) {
      best_sum = sum;
      best = a;
    }
  }
  return best;
}

struct Blob {
  std::vector<PointId> members;  // ascending
};

std::vector<Blob> error_blobs(const LabelMap& predicted, const LabelMap& truth, const PointCloud& cloud) {
  const std::size_t n = truth.size();
  std::vector<char> wrong(n, 0);
  bool any = false;
  for (std::size_t i = 0; i < n; ++i) {
    wrong[i] = predicted.labels[i] != truth.labels[i];
    any |= wrong[i] != 0;
  }
  if (!any) return {};
  // symmetric KNN(8) graph restricted to wrong points of equal true class
  SpatialIndex index(cloud);
  std::vector<std::vector<PointId>> adj(n);
  for (PointId i = 0; i < n; ++i) {
    if (!wrong[i]) continue;
    for (PointId j : index.query(i, Knn{8})) {
      if (wrong[j] && truth.labels[j] == truth.labels[i]) {
        adj[i].push_back(j);
        adj[j].push_back(i);
      }
    }
  }
  std::vector<char> seen(n, 0);
  std::vector<Blob> blobs;
  for (PointId i = 0; i < n; ++i) {
    if (!wrong[i] || seen[i]) continue;
    Blob b;
    std::deque<PointId> q{i};
    seen[i] = 1;
    while (!q.empty()) {
      const PointId u = q.front();
      q.pop_front();
      b.members.push_back(u);
      for (PointId v : adj[u]) {
        if (!seen[v]) {
          seen[v] = 1;
          q.push_back(v);
        }
      }
    }
    std::sort(b.members.begin(), b.members.end());
    blobs.push_back(std::move(b));
  }
  // size descending, then smallest member id
  std::stable_sort(blobs.begin(), blobs.end(),
                   [](const Blob& a, const Blob& b) { return a.members.size() > b.members.size(); });
  return blobs;
}

std::size_t total_clicks(const session::SessionState& s) { return s.clicks.size(); }

}  // namespace

void validate(const OraclePolicy& p) {
  if (p.seeds_per_class < 1) throw InvalidParameter("seeds_per_class must be >= 1");
  if (p.corrections_per_round < 1) throw InvalidParameter("corrections_per_round must be >= 1");
  if (!(p.completion_threshold > 0 && p.completion_threshold <= 1)) {
    throw InvalidParameter("completion_threshold must be in (0, 1]");
  }
  if (p.max_rounds < 1 || p.max_rounds >= kMaxRounds) {
    throw InvalidParameter("max_rounds must be in [1, " + std::to_string(kMaxRounds) + ")");
  }
}

Metrics evaluate(const LabelMap& predicted, const LabelMap& ground_truth) {
  check_pair(predicted, ground_truth);
  if (!predicted.is_full() || !ground_truth.is_full()) throw InvalidParameter("evaluate needs full label maps");
  validate(predicted);
  validate(ground_truth);
  return metrics_of(predicted, ground_truth);
}

std::vector<session::Assignment> select_seeds(const PointCloud& cloud, const LabelMap& ground_truth,
                                              const OraclePolicy& policy) {
  validate(policy);
  check_truth(cloud, ground_truth);
  std::vector<session::Assignment> out;
  for (int c = 0; c < ground_truth.num_classes; ++c) {
    std::vector<PointId> members;
    for (PointId i = 0; i < ground_truth.size(); ++i) {
      if (ground_truth.labels[i] == c) members.push_back(i);
    }
    if (members.empty()) throw InvalidParameter("class " + std::to_string(c) + " absent from ground truth");
    std::vector<PointId> chosen{medoid(cloud, members)};
    std::vector<float> gap(members.size(), std::numeric_limits<float>::infinity());
    while (chosen.size() < std::min(policy.seeds_per_class, members.size())) {
      const auto& last = cloud.positions[chosen.back()];
      std::size_t far = 0;
      for (std::size_t k = 0; k < members.size(); ++k) {
        gap[k] = std::min(gap[k], squared_distance(cloud.positions[members[k]], last));
        if (gap[k] > gap[far]) far = k;
      }
      chosen.push_back(members[far]);
    }
    for (PointId p : chosen) out.push_back({p, c});
  }
  return out;
}

std::vector<session::Assignment> select_corrections(const LabelMap& predicted, const LabelMap& ground_truth,
                                                    const PointCloud& cloud, const OraclePolicy& policy) {
  validate(policy);
  check_truth(cloud, ground_truth);
  check_pair(predicted, ground_truth);
  if (!predicted.is_full()) throw InvalidParameter("predicted map must be full");
  if (metrics_of(predicted, ground_truth).accuracy >= policy.completion_threshold) return {};
  const auto blobs = error_blobs(predicted, ground_truth, cloud);
  std::vector<session::Assignment> out;
  for (std::size_t b = 0; b < blobs.size() && out.size() < policy.corrections_per_round; ++b) {
    const PointId m = medoid(cloud, blobs[b].members);
    out.push_back({m, ground_truth.labels[m]});
  }
  return out;
}

std::size_t count_error_blobs(const LabelMap& predicted, const LabelMap& ground_truth, const PointCloud& cloud) {
  check_truth(cloud, ground_truth);
  check_pair(predicted, ground_truth);
  return error_blobs(predicted, ground_truth, cloud).size();
}

SimulationResult run_simulated_session(const PointCloud& cloud, const LabelMap& ground_truth,
                                       const session::ModelPtr& base_model, const OraclePolicy& policy,
                                       const session::SessionConfig& config, const std::string& session_id) {
  validate(policy);
  check_truth(cloud, ground_truth);
  using namespace session;

  SimulationResult res;
  auto& rep = res.report;
  std::int64_t clock = 0;  // logical timestamps keep replays and reports reproducible

  SessionState s = create_session(cloud, ground_truth.num_classes, base_model, config, session_id);
  const auto& geo = *s.cloud;
  const auto seeds = select_seeds(geo, ground_truth, policy);
  s = submit_seeds(s, seeds, clock++);
  rep.seed_clicks = seeds.size();
  {
    const auto m = metrics_of(s.labels, ground_truth);
    rep.rounds.push_back({0, seeds.size(), total_clicks(s), m.accuracy, m.miou, 0});
  }

  auto done = [&] { return metrics_of(s.labels, ground_truth).accuracy >= policy.completion_threshold; };
  for (;;) {
    s = train_and_predict(s);
    if (s.round > kMaxRounds) {
      throw Error("session " + session_id + " did not converge within " + std::to_string(kMaxRounds) + " rounds");
    }
    const auto m = evaluate(s.labels, ground_truth);
    RoundRecord rec{s.round, 0, 0, m.accuracy, m.miou, count_error_blobs(s.labels, ground_truth, geo)};
    if (m.accuracy >= policy.completion_threshold || s.round >= policy.max_rounds) {
      rec.clicks_cumulative = total_clicks(s);
      rep.rounds.push_back(rec);
      break;
    }
    const auto picks = select_corrections(s.labels, ground_truth, geo, policy);
    std::vector<Correction> corr;
    for (const auto& a : picks) corr.push_back({a.point, a.class_id, policy.grow_corrections});
    s = submit_corrections(s, corr, clock++);
    rep.correction_clicks += corr.size();
    rec.clicks = corr.size();
    rec.clicks_cumulative = total_clicks(s);
    rep.rounds.push_back(rec);
    if (done()) break;
  }

  // whatever is still wrong gets clicked one point at a time
  std::vector<Correction> rest;
  for (PointId i = 0; i < s.labels.size(); ++i) {
    if (s.labels.labels[i] != ground_truth.labels[i]) rest.push_back({i, ground_truth.labels[i], false});
  }
  if (!rest.empty()) {
    s = submit_corrections(s, rest, clock++);
    rep.mopup_clicks = rest.size();
    rep.correction_clicks += rest.size();
    rep.rounds.back().clicks += rest.size();
    rep.rounds.back().clicks_cumulative = total_clicks(s);
  }
  s = finalize(s);
  rep.total_clicks = total_clicks(s);
  rep.rounds_to_completion = s.round;
  rep.final_accuracy = evaluate(s.labels, ground_truth).accuracy;
  res.final_state = std::move(s);
  return res;
}

std::size_t manual_baseline_clicks(const PointCloud& cloud, const LabelMap& ground_truth, const NeighborMode& brush) {
  check_truth(cloud, ground_truth);
  const SpatialIndex index(cloud);
  std::vector<char> ok(cloud.size(), 0);
  std::size_t clicks = 0;
  for (PointId i = 0; i < cloud.size(); ++i) {
    if (ok[i]) continue;
    ++clicks;
    ok[i] = 1;
    for (PointId j : index.query(i, brush)) {
      if (ground_truth.labels[j] == ground_truth.labels[i]) ok[j] = 1;
    }
  }
  return clicks;
}

std::string report_csv(const EvalReport& report) {
  std::string out = "round,clicks_cumulative,accuracy,miou\n";
  char line[128];
  for (const auto& r : report.rounds) {
    std::snprintf(line, sizeof line, "%d,%zu,%.6f,%.6f\n", r.round, r.clicks_cumulative, r.accuracy, r.miou);
    out += line;
  }
  return out;
}

nlohmann::json report_json(const EvalReport& report) {
  nlohmann::json rounds = nlohmann::json::array();
  for (const auto& r : report.rounds) {
    rounds.push_back({{"round", r.round},
                      {"clicks", r.clicks},
                      {"clicks_cumulative", r.clicks_cumulative},
                      {"accuracy", r.accuracy},
                      {"miou", r.miou},
                      {"error_blobs", r.error_blobs}});
  }
  return {{"rounds", rounds},
          {"seed_clicks", report.seed_clicks},
          {"correction_clicks", report.correction_clicks},
          {"mopup_clicks", report.mopup_clicks},
          {"total_clicks", report.total_clicks},
          {"rounds_to_completion", report.rounds_to_completion},
          {"final_accuracy", report.final_accuracy}};
}

}  // namespace pcal::oracle
