#include "pcal/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "pcal/checkpoint.hpp"
#include "pcal/error.hpp"
#include "pcal/random.hpp"

namespace pcal::experiment {

namespace {

// per-seed RNG streams
constexpr std::uint64_t kShapeStream = 1;
constexpr std::uint64_t kPretrainShapes = 2;
constexpr std::uint64_t kTrainStream = 3;

void require(bool ok, const std::string& path, const std::string& what) {
  if (!ok) throw InvalidParameter(path + ": " + what);
}

template <class F>
auto with_path(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const InvalidParameter& e) {
    const std::string msg = e.what();
    if (msg.rfind(path, 0) == 0) throw;
    throw InvalidParameter(path + ": " + msg);
  }
}

const std::set<std::string> kKnownKeys = {
    "experiment.name", "experiment.family", "experiment.clouds", "experiment.part_count",
    "experiment.points", "experiment.noise_sigma", "experiment.seeds", "experiment.arms",
    "experiment.manual_brush", "experiment.continual",
    "pretrain.family", "pretrain.clouds", "pretrain.part_count", "pretrain.checkpoint",
    "policy.seeds_per_class", "policy.corrections_per_round", "policy.completion_threshold",
    "policy.max_rounds", "policy.grow_corrections",
    "grow.mode", "grow.connectivity", "grow.angle_threshold_deg", "grow.color_threshold",
    "grow.max_region_fraction",
    "train.learning_rate", "train.epochs_per_round", "train.pretrain_epochs", "train.adam_beta1",
    "train.adam_beta2", "train.adam_epsilon", "train.beta_schedule", "train.alpha",
    "train.smooth_neighbors", "train.smooth_random_partners", "train.sigma_sample_pairs",
    "session.normal_k"};

std::size_t count(const config::Document& d, const std::string& path, std::size_t fallback, std::int64_t min) {
  const auto v = d.integer_or(path, std::int64_t(fallback));
  require(v >= min, path, "must be >= " + std::to_string(min));
  return std::size_t(v);
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0;
  double s = 0;
  for (double x : v) s += x;
  return s / double(v.size());
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

void validate(const ExperimentConfig& c) {
  require(c.clouds >= 1, "experiment.clouds", "must be >= 1");
  require(c.points >= 64, "experiment.points", "must be >= 64");
  require(!c.seeds.empty(), "experiment.seeds", "must not be empty");
  require(!c.arms.empty(), "experiment.arms", "must not be empty");
  for (std::size_t i = 0; i < c.arms.size(); ++i) {
    require(c.arms[i] == kArmDefault || c.arms[i] == kArmNoSmooth, "experiment.arms[" + std::to_string(i) + "]",
            "unknown arm '" + c.arms[i] + "' (default, no_smooth)");
  }
  with_path("experiment", [&] {
    data::ShapeSpec spec;
    spec.family = c.family;
    spec.part_count = c.part_count;
    spec.points_n = c.points;
    spec.noise_sigma = c.noise_sigma;
    data::validate(spec);
    return 0;
  });
  if (c.pretrain_checkpoint.empty()) {
    require(c.pretrain_clouds >= 1, "pretrain.clouds", "must be >= 1");
    with_path("pretrain", [&] {
      data::ShapeSpec spec;
      spec.family = c.pretrain_family;
      spec.part_count = c.pretrain_part_count;
      spec.points_n = c.points;
      data::validate(spec);
      return 0;
    });
  }
  with_path("policy", [&] {
    oracle::validate(c.policy);
    return 0;
  });
  with_path("train", [&] {
    train::validate(c.session.train);
    return 0;
  });
  with_path("grow", [&] {
    validate(c.session.grow);
    return 0;
  });
  require(c.session.normal_k >= 3, "session.normal_k", "must be >= 3");
}

ExperimentConfig from_document(const config::Document& d) {
  d.reject_unknown(kKnownKeys);
  ExperimentConfig c;
  c.name = d.string_or("experiment.name", c.name);
  if (d.has("experiment.family")) c.family = with_path("experiment.family", [&] { return data::parse_family(d.string("experiment.family")); });
  c.clouds = count(d, "experiment.clouds", c.clouds, 1);
  c.part_count = int(count(d, "experiment.part_count", std::size_t(c.part_count), 2));
  c.points = count(d, "experiment.points", c.points, 64);
  c.noise_sigma = d.number_or("experiment.noise_sigma", c.noise_sigma);
  require(c.noise_sigma >= 0, "experiment.noise_sigma", "must be >= 0");
  if (d.has("experiment.seeds")) {
    c.seeds.clear();
    const auto v = d.numbers("experiment.seeds");
    for (std::size_t i = 0; i < v.size(); ++i) {
      require(v[i] >= 0 && v[i] == std::floor(v[i]) && v[i] < 9e15, "experiment.seeds[" + std::to_string(i) + "]",
              "must be a non-negative integer");
      c.seeds.push_back(std::uint64_t(v[i]));
    }
  }
  if (d.has("experiment.arms")) c.arms = d.strings("experiment.arms");
  if (d.has("experiment.manual_brush")) {
    c.manual_brush = with_path("experiment.manual_brush", [&] { return parse_neighbor_mode(d.string("experiment.manual_brush")); });
  }
  c.continual = d.boolean_or("experiment.continual", c.continual);

  if (d.has("pretrain.family")) c.pretrain_family = with_path("pretrain.family", [&] { return data::parse_family(d.string("pretrain.family")); });
  c.pretrain_clouds = count(d, "pretrain.clouds", c.pretrain_clouds, 1);
  c.pretrain_part_count = int(count(d, "pretrain.part_count", std::size_t(c.pretrain_part_count), 2));
  c.pretrain_checkpoint = d.string_or("pretrain.checkpoint", "");

  auto& p = c.policy;
  p.seeds_per_class = count(d, "policy.seeds_per_class", p.seeds_per_class, 1);
  p.corrections_per_round = count(d, "policy.corrections_per_round", p.corrections_per_round, 1);
  p.completion_threshold = d.number_or("policy.completion_threshold", p.completion_threshold);
  require(p.completion_threshold > 0 && p.completion_threshold <= 1, "policy.completion_threshold", "must be in (0, 1]");
  p.max_rounds = int(count(d, "policy.max_rounds", std::size_t(p.max_rounds), 1));
  require(p.max_rounds < oracle::kMaxRounds, "policy.max_rounds", "must be < " + std::to_string(oracle::kMaxRounds));
  p.grow_corrections = d.boolean_or("policy.grow_corrections", p.grow_corrections);

  auto& g = c.session.grow;
  if (d.has("grow.mode")) g.mode = with_path("grow.mode", [&] { return parse_grow_mode(d.string("grow.mode")); });
  if (d.has("grow.connectivity")) {
    g.connectivity = with_path("grow.connectivity", [&] { return parse_neighbor_mode(d.string("grow.connectivity")); });
  }
  g.angle_threshold_deg = d.number_or("grow.angle_threshold_deg", g.angle_threshold_deg);
  require(g.angle_threshold_deg > 0, "grow.angle_threshold_deg", "must be > 0");
  g.color_threshold = d.number_or("grow.color_threshold", g.color_threshold);
  require(g.color_threshold > 0, "grow.color_threshold", "must be > 0");
  g.max_region_fraction = d.number_or("grow.max_region_fraction", g.max_region_fraction);
  require(g.max_region_fraction > 0 && g.max_region_fraction <= 1, "grow.max_region_fraction", "must be in (0, 1]");

  auto& t = c.session.train;
  t.learning_rate = d.number_or("train.learning_rate", t.learning_rate);
  require(t.learning_rate > 0, "train.learning_rate", "must be > 0");
  t.epochs_per_round = int(count(d, "train.epochs_per_round", std::size_t(t.epochs_per_round), 1));
  t.pretrain_epochs = int(count(d, "train.pretrain_epochs", std::size_t(t.pretrain_epochs), 1));
  t.adam_beta1 = d.number_or("train.adam_beta1", t.adam_beta1);
  require(t.adam_beta1 >= 0 && t.adam_beta1 < 1, "train.adam_beta1", "must be in [0, 1)");
  t.adam_beta2 = d.number_or("train.adam_beta2", t.adam_beta2);
  require(t.adam_beta2 >= 0 && t.adam_beta2 < 1, "train.adam_beta2", "must be in [0, 1)");
  t.adam_epsilon = d.number_or("train.adam_epsilon", t.adam_epsilon);
  require(t.adam_epsilon > 0, "train.adam_epsilon", "must be > 0");
  if (d.has("train.beta_schedule")) {
    t.beta_schedule = d.numbers("train.beta_schedule");
    require(!t.beta_schedule.empty(), "train.beta_schedule", "must not be empty");
    for (std::size_t i = 0; i < t.beta_schedule.size(); ++i) {
      require(t.beta_schedule[i] >= 0, "train.beta_schedule[" + std::to_string(i) + "]", "must be >= 0");
    }
  }
  t.alpha = d.number_or("train.alpha", t.alpha);
  require(t.alpha >= 0, "train.alpha", "must be >= 0");
  t.smooth_neighbors = count(d, "train.smooth_neighbors", t.smooth_neighbors, 0);
  t.smooth_random_partners = count(d, "train.smooth_random_partners", t.smooth_random_partners, 0);
  t.sigma_sample_pairs = count(d, "train.sigma_sample_pairs", t.sigma_sample_pairs, 1);
  c.session.normal_k = count(d, "session.normal_k", c.session.normal_k, 3);

  validate(c);
  return c;
}

ExperimentConfig load_config(const std::string& path) { return from_document(config::Document::parse_file(path)); }

nnet::ModelParams base_model(const ExperimentConfig& c, std::uint64_t seed, double* accuracy) {
  if (!c.pretrain_checkpoint.empty()) {
    if (accuracy) *accuracy = -1;
    return nnet::load_checkpoint_file(c.pretrain_checkpoint);
  }
  const auto data = data::generate_dataset(c.pretrain_family, c.pretrain_clouds, c.pretrain_part_count,
                                           mix_seed(seed, kPretrainShapes), c.points, c.noise_sigma);
  auto tc = c.session.train;
  tc.rng_seed = mix_seed(seed, kTrainStream);
  auto res = train::pretrain(data, tc);
  if (accuracy) *accuracy = res.accuracy;
  return std::move(res.params);
}

std::vector<LabeledCloud> shape_stream(const ExperimentConfig& c, std::uint64_t seed) {
  return data::generate_dataset(c.family, c.clouds, c.part_count, mix_seed(seed, kShapeStream), c.points,
                                c.noise_sigma);
}

session::SessionConfig session_config(const ExperimentConfig& c, const std::string& arm, std::uint64_t seed,
                                      std::size_t index) {
  auto sc = c.session;
  sc.train.rng_seed = mix_seed(mix_seed(seed, kTrainStream), index + 1);
  if (arm == kArmNoSmooth) sc.train.beta_schedule = {0.0};
  return sc;
}

ExperimentResult run_experiment(const ExperimentConfig& c, const RunOptions& opt) {
  validate(c);
  ExperimentResult res;
  auto log = [&](const std::string& s) {
    if (opt.log) opt.log(s);
  };
  for (std::uint64_t seed : c.seeds) {
    double acc = 0;
    const auto base0 = std::make_shared<const nnet::ModelParams>(base_model(c, seed, &acc));
    res.pretrain_accuracy.push_back(acc);
    log("seed " + std::to_string(seed) + ": base model ready (train accuracy " + fmt(acc) + ")");
    const auto stream = shape_stream(c, seed);
    std::vector<std::size_t> manual;
    for (const auto& item : stream) manual.push_back(oracle::manual_baseline_clicks(item.cloud, item.labels, c.manual_brush));

    for (const auto& arm : c.arms) {
      auto policy = c.policy;
      policy.rng_seed = seed;
      session::ModelPtr base = base0;
      std::size_t cumulative = 0;
      for (std::size_t i = 0; i < stream.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto id = c.name + "-" + std::to_string(seed) + "-" + arm + "-" + std::to_string(i);
        auto sim = oracle::run_simulated_session(stream[i].cloud, stream[i].labels, base, policy,
                                                 session_config(c, arm, seed, i), id);
        CloudRow row;
        row.seed = seed;
        row.arm = arm;
        row.cloud = i;
        row.points = stream[i].cloud.size();
        row.report = sim.report;
        row.manual_clicks = manual[i];
        cumulative += sim.report.total_clicks;
        row.cumulative_clicks = cumulative;
        if (opt.keep_traces) res.traces.push_back({base, sim.final_state.events, sim.final_state.labels});
        if (c.continual) base = sim.final_state.model;
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        char line[200];
        std::snprintf(line, sizeof line, "seed %llu %s cloud %zu: %zu clicks (manual %zu), %d rounds, %.1fs",
                      static_cast<unsigned long long>(seed), arm.c_str(), i, sim.report.total_clicks, manual[i],
                      sim.report.rounds_to_completion, secs);
        log(line);
        res.rows.push_back(std::move(row));
      }
    }
  }
  return res;
}

std::vector<ArmSummary> summarize(const ExperimentResult& r) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const CloudRow*>> by_arm;
  for (const auto& row : r.rows) {
    if (!by_arm.count(row.arm)) order.push_back(row.arm);
    by_arm[row.arm].push_back(&row);
  }
  std::vector<ArmSummary> out;
  for (const auto& arm : order) {
    const auto& rows = by_arm[arm];
    ArmSummary s;
    s.arm = arm;
    s.clouds = rows.size();
    std::vector<double> clicks, manual, blobs, corr, first, last, rounds;
    std::map<std::uint64_t, std::size_t> per_seed;
    for (const auto* row : rows) per_seed[row->seed] = std::max(per_seed[row->seed], row->cloud + 1);
    for (const auto* row : rows) {
      const auto& rep = row->report;
      clicks.push_back(double(rep.total_clicks));
      manual.push_back(double(row->manual_clicks));
      blobs.push_back(double(rep.rounds.at(1).error_blobs));
      corr.push_back(double(rep.rounds.at(1).clicks));
      rounds.push_back(double(rep.rounds_to_completion));
      const std::size_t n = per_seed[row->seed];
      if (row->cloud < 5) first.push_back(double(rep.total_clicks));
      if (row->cloud + 5 >= n) last.push_back(double(rep.total_clicks));
      s.all_exact = s.all_exact && rep.final_accuracy == 1.0;
    }
    s.mean_clicks = mean_of(clicks);
    s.mean_manual_clicks = mean_of(manual);
    s.click_ratio = s.mean_manual_clicks > 0 ? s.mean_clicks / s.mean_manual_clicks : 0;
    s.mean_round1_error_blobs = mean_of(blobs);
    s.mean_round1_corrections = mean_of(corr);
    s.mean_first5_clicks = mean_of(first);
    s.mean_last5_clicks = mean_of(last);
    s.mean_rounds = mean_of(rounds);
    out.push_back(s);
  }
  return out;
}

std::string clouds_csv(const ExperimentResult& r) {
  std::string out =
      "seed,arm,cloud,points,seed_clicks,correction_clicks,mopup_clicks,total_clicks,cumulative_clicks,rounds,"
      "round1_accuracy,round1_error_blobs,round1_corrections,final_accuracy,manual_clicks\n";
  for (const auto& row : r.rows) {
    const auto& rep = row.report;
    out += std::to_string(row.seed) + "," + row.arm + "," + std::to_string(row.cloud) + "," +
           std::to_string(row.points) + "," + std::to_string(rep.seed_clicks) + "," +
           std::to_string(rep.correction_clicks) + "," + std::to_string(rep.mopup_clicks) + "," +
           std::to_string(rep.total_clicks) + "," + std::to_string(row.cumulative_clicks) + "," +
           std::to_string(rep.rounds_to_completion) + "," + fmt(rep.rounds.at(1).accuracy) + "," +
           std::to_string(rep.rounds.at(1).error_blobs) + "," + std::to_string(rep.rounds.at(1).clicks) + "," +
           fmt(rep.final_accuracy) + "," + std::to_string(row.manual_clicks) + "\n";
  }
  return out;
}

std::string rounds_csv(const ExperimentResult& r) {
  std::string out = "seed,arm,cloud,round,clicks,clicks_cumulative,accuracy,miou,error_blobs\n";
  for (const auto& row : r.rows) {
    for (const auto& rr : row.report.rounds) {
      out += std::to_string(row.seed) + "," + row.arm + "," + std::to_string(row.cloud) + "," +
             std::to_string(rr.round) + "," + std::to_string(rr.clicks) + "," + std::to_string(rr.clicks_cumulative) +
             "," + fmt(rr.accuracy) + "," + fmt(rr.miou) + "," + std::to_string(rr.error_blobs) + "\n";
    }
  }
  return out;
}

nlohmann::json summary_json(const ExperimentConfig& c, const ExperimentResult& r) {
  nlohmann::json arms = nlohmann::json::array();
  for (const auto& s : summarize(r)) {
    arms.push_back({{"arm", s.arm},
                    {"clouds", s.clouds},
                    {"mean_clicks", s.mean_clicks},
                    {"mean_manual_clicks", s.mean_manual_clicks},
                    {"click_ratio", s.click_ratio},
                    {"mean_round1_error_blobs", s.mean_round1_error_blobs},
                    {"mean_round1_corrections", s.mean_round1_corrections},
                    {"mean_first5_clicks", s.mean_first5_clicks},
                    {"mean_last5_clicks", s.mean_last5_clicks},
                    {"mean_rounds", s.mean_rounds},
                    {"all_exact", s.all_exact}});
  }
  return {{"name", c.name},
          {"family", data::family_name(c.family)},
          {"clouds", c.clouds},
          {"part_count", c.part_count},
          {"seeds", c.seeds},
          {"pretrain_accuracy", r.pretrain_accuracy},
          {"arms", arms}};
}

std::string summary_markdown(const ExperimentConfig& c, const ExperimentResult& r) {
  std::string md = "# " + c.name + "\n\n";
  md += std::string(data::family_name(c.family)) + ", " + std::to_string(c.part_count) + " classes, " +
        std::to_string(c.clouds) + " clouds of " + std::to_string(c.points) + " points, " +
        std::to_string(c.seeds.size()) + " seed(s). Manual baseline brush: " + neighbor_mode_string(c.manual_brush) +
        ".\n\n";
  md += "| arm | clouds | mean clicks | manual clicks | ratio | round-1 error blobs | first 5 | last 5 | rounds | exact |\n";
  md += "|---|---|---|---|---|---|---|---|---|---|\n";
  char line[256];
  for (const auto& s : summarize(r)) {
    std::snprintf(line, sizeof line, "| %s | %zu | %.2f | %.2f | %.3f | %.2f | %.2f | %.2f | %.2f | %s |\n",
                  s.arm.c_str(), s.clouds, s.mean_clicks, s.mean_manual_clicks, s.click_ratio,
                  s.mean_round1_error_blobs, s.mean_first5_clicks, s.mean_last5_clicks, s.mean_rounds,
                  s.all_exact ? "yes" : "no");
    md += line;
  }
  return md;
}

void write_outputs(const ExperimentConfig& c, const ExperimentResult& r, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  auto put = [&](const std::string& name, const std::string& body) {
    const auto path = (fs::path(out_dir) / name).string();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write " + path);
    f << body;
  };
  put("clouds.csv", clouds_csv(r));
  put("rounds.csv", rounds_csv(r));
  put("summary.json", summary_json(c, r).dump(2) + "\n");
  put("summary.md", summary_markdown(c, r));
}

}  // namespace pcal::experiment
