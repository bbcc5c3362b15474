// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// fails. Criteria can be picked by name on the command line.
//
// The experiment criteria share one run of configs/chairs.toml (3 seeds,
// 20 chairs, both smoothness arms), which takes most of the time.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pcal/datasets.hpp"
#include "pcal/experiment.hpp"
#include "pcal/nnet.hpp"
#include "pcal/oracle.hpp"
#include "pcal/region_grow.hpp"
#include "pcal/session.hpp"
#include "support/gradcheck.hpp"
#include "support/test_util.hpp"

using namespace pcal;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[1024];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void note(const std::string& s) {
  std::fprintf(stderr, "  %s\n", s.c_str());
  std::fflush(stderr);
}

// ---- gradients --------------------------------------------------------------

// Every parameter, central differences at h=1e-3, in two settings:
//  - a reduced-width net on the first draw where no probe crosses a ReLU or
//    max-pool kink, so every difference quotient is meaningful;
//  - the full-size net on a fixed draw, judged over the probes that stay on
//    one linear piece (the raw fraction is printed as well).
Outcome gradient() {
  const auto t0 = std::chrono::steady_clock::now();
  const char* names[3] = {"segment", "transform", "smooth"};
  bool ok = true;
  std::string d = "reduced net: ";
  const auto [small, rs] = tu::kink_free_instance(17, 32, 3, {4, 8, 8, 8, 16, 8}, 1e-3, 1e-3);
  for (int t = 0; t < 3; ++t) {
    ok = ok && rs.terms[t].checked == small.params.parameter_count() && rs.terms[t].pass_fraction() >= 0.99;
    d += fmt("%s %.4f, ", names[t], rs.terms[t].pass_fraction());
  }
  d += fmt("%zu params (seed %llu); full net: ", small.params.parameter_count(), (unsigned long long)small.seed);

  const auto inst = tu::make_grad_instance(2024, 32, 3, {}, 0.2);
  const auto r = tu::finite_difference_check(inst.params, inst.cloud, inst.labels, inst.sigma, inst.pairs, 1e-3, 1e-3);
  for (int t = 0; t < 3; ++t) {
    const auto& tc = r.terms[t];
    ok = ok && tc.clean_pass_fraction() >= 0.99;
    d += fmt("%s %.4f (raw %.4f), ", names[t], tc.clean_pass_fraction(), tc.pass_fraction());
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 60;
  d += fmt("%zu params, %zu probes crossed a kink; %.1f s", inst.params.parameter_count(), r.kink_crossings, secs);
  return {ok, d};
}

// ---- smoothness oracle ------------------------------------------------------

std::vector<double> softmax_row(const nnet::Logits<double>& l, std::size_t i) {
  std::vector<double> p(l.cols);
  double m = -INFINITY, z = 0;
  for (std::size_t c = 0; c < l.cols; ++c) m = std::max(m, l.values[i * l.cols + c]);
  for (std::size_t c = 0; c < l.cols; ++c) z += p[c] = std::exp(l.values[i * l.cols + c] - m);
  for (double& v : p) v /= z;
  return p;
}

// Mean over all pairs j >= i of KL(p_i || p_j) exp(-d_ij / sigma), written
// out directly rather than through the library.
double exact_smoothness(const nnet::Logits<double>& l, const PointCloud& cloud, double sigma) {
  const std::size_t n = l.rows;
  std::vector<std::vector<double>> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = softmax_row(l, i);
  long double sum = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j, ++count) {
      double kl = 0;
      for (std::size_t c = 0; c < l.cols; ++c) kl += p[i][c] * (std::log(p[i][c]) - std::log(p[j][c]));
      const auto& a = cloud.positions[i];
      const auto& b = cloud.positions[j];
      const double dx = double(a[0]) - b[0], dy = double(a[1]) - b[1], dz = double(a[2]) - b[2];
      sum += kl * std::exp(-std::sqrt(dx * dx + dy * dy + dz * dz) / sigma);
    }
  }
  return double(sum / count);
}

Outcome smoothness_oracle() {
  bool ok = true;
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto cloud = normalize_cloud(tu::random_cloud(128, 100 + seed));
    const auto params = tu::random_model(3, 100 + seed, {}, 0.5);
    const auto logits = nnet::forward(params, cloud).logits;
    const double sigma = nnet::estimate_sigma(cloud, 128 * 128, 0);
    // 8192 distinct pairs drawn uniformly from the n(n+1)/2 with j >= i
    std::vector<nnet::PointPair> all;
    for (std::uint32_t i = 0; i < 128; ++i)
      for (std::uint32_t j = i; j < 128; ++j) all.emplace_back(i, j);
    Rng rng(mix_seed(seed, 7));
    pcal::shuffle(all.begin(), all.end(), rng);
    const std::vector<nnet::PointPair> pairs(all.begin(), all.begin() + 8192);
    const double est = nnet::smoothness_loss(logits, cloud, sigma, pairs);
    const double exact = exact_smoothness(logits, cloud, sigma);
    const double rel = std::abs(est - exact) / exact;
    worst = std::max(worst, rel);
    ok = ok && rel < 0.05;
  }
  // two points at distance sigma, logits (1,0) and (0,1)
  const double sigma = 0.5;
  PointCloud two;
  two.positions = {{0, 0, 0}, {float(sigma), 0, 0}};
  const nnet::Logits<double> l{2, 2, {1, 0, 0, 1}};
  const std::vector<nnet::PointPair> one{{0, 1}};
  const double v = nnet::smoothness_loss(l, two, sigma, one);
  ok = ok && std::abs(v - 0.17002) < 1e-4;
  return {ok, fmt("worst relative error over 10 seeds %.4f (limit 0.05); two-point %.6f vs 0.17002", worst, v)};
}

// ---- spatial index ----------------------------------------------------------

Outcome spatial_index() {
  std::size_t queries = 0, mismatches = 0;
  for (std::size_t n : {16u, 128u, 1024u}) {
    const auto cloud = tu::random_cloud(n, 500 + n);
    SpatialIndex index(cloud);
    Rng rng(n);
    for (int q = 0; q < 100; ++q) {
      const PointId id = PointId(uniform_index(rng, n));
      const Point3 free{float(2 * uniform01(rng) - 1), float(2 * uniform01(rng) - 1), float(2 * uniform01(rng) - 1)};
      for (std::size_t k : {1u, 4u, 8u, 16u}) {
        mismatches += index.query(id, Knn{k}) != tu::brute_force(cloud, cloud.positions[id], Knn{k}, id);
        mismatches += index.query(free, Knn{k}) != tu::brute_force(cloud, free, Knn{k});
        queries += 2;
      }
      for (float r : {0.05f, 0.1f, 0.25f}) {
        mismatches += index.query(id, Fdn{r}) != tu::brute_force(cloud, cloud.positions[id], Fdn{r}, id);
        mismatches += index.query(free, Fdn{r}) != tu::brute_force(cloud, free, Fdn{r});
        queries += 2;
      }
    }
  }
  return {mismatches == 0, fmt("%zu mismatches in %zu queries (N up to 1024, k in {1,4,8,16}, 3 radii)", mismatches, queries)};
}

// ---- region growing ---------------------------------------------------------

LabelMap one_seed(std::size_t n, PointId id) {
  LabelMap m(n, 2);
  m.labels[id] = 1;
  m.provenance[id] = Provenance::Seed;
  return m;
}

Outcome region_growing() {
  GrowConfig cfg;
  cfg.max_region_fraction = 1.0;

  const auto plane = estimate_normals(tu::plane_cloud(400, 3), 8);
  const auto flood = grow_regions(plane, one_seed(plane.size(), 0), cfg, SpatialIndex(plane));
  const std::size_t plane_missed = plane.size() - flood.labeled_count();

  const auto cube = tu::cube_cloud(16);
  PointCloud cloud = cube.cloud;
  cloud.normals.reset();
  cloud = estimate_normals(cloud, 8);
  const SpatialIndex index(cloud);
  PointId seed = 0;
  float best = 1e9f;
  for (PointId i = 0; i < cloud.size(); ++i) {
    const float d = squared_distance(cloud.positions[i], {0, 0, 1});
    if (cube.face[i] == 0 && d < best) best = d, seed = i;
  }
  std::size_t foreign = 0, on_face = 0, monotone_breaks = 0;
  std::vector<bool> prev(cloud.size(), false);
  std::string sizes;
  for (double theta : {4.0, 8.0, 16.0, 32.0}) {
    cfg.angle_threshold_deg = theta;
    const auto out = grow_regions(cloud, one_seed(cloud.size(), seed), cfg, index);
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (theta == 8.0 && out.is_labeled(i)) (cube.face[i] == 0 ? on_face : foreign) += 1;
      if (prev[i] && !out.is_labeled(i)) ++monotone_breaks;
      prev[i] = out.is_labeled(i);
    }
    sizes += fmt("%s%zu", sizes.empty() ? "" : "/", out.labeled_count());
  }
  const bool ok = plane_missed == 0 && foreign == 0 && on_face > 1 && monotone_breaks == 0;
  return {ok, fmt("plane missed %zu; cube at 8 deg: %zu on face, %zu foreign; region sizes at 4/8/16/32 deg %s, "
                  "%zu monotonicity breaks",
                  plane_missed, on_face, foreign, sizes.c_str(), monotone_breaks)};
}

// ---- experiment criteria ----------------------------------------------------

const std::string kChairs = PCAL_SOURCE_DIR "/configs/chairs.toml";
const std::string kSmoke = PCAL_SOURCE_DIR "/configs/smoke.toml";

struct Runs {
  experiment::ExperimentConfig config;
  experiment::ExperimentResult full;
  std::vector<experiment::ArmSummary> summary;
  double full_secs = 0;
};

const Runs& runs() {
  static std::optional<Runs> r;
  if (!r) {
    r.emplace();
    r->config = experiment::load_config(kChairs);
    experiment::RunOptions opt;
    opt.keep_traces = true;
    opt.log = note;
    const auto t0 = std::chrono::steady_clock::now();
    r->full = experiment::run_experiment(r->config, opt);
    r->full_secs = seconds_since(t0);
    r->summary = experiment::summarize(r->full);
    note(fmt("full run: %.0f s", r->full_secs));
  }
  return *r;
}

const experiment::ArmSummary* arm(const Runs& r, const std::string& name) {
  for (const auto& s : r.summary)
    if (s.arm == name) return &s;
  return nullptr;
}

std::vector<std::string> lines_with_prefix(const std::string& csv, const std::string& prefix) {
  std::vector<std::string> out;
  std::istringstream in(csv);
  for (std::string line; std::getline(in, line);)
    if (line.rfind(prefix, 0) == 0) out.push_back(line);
  return out;
}

// Seed 1, default arm, alone and timed (pretraining included). Also checked
// against the same rows of the full run.
struct E2E {
  experiment::ExperimentConfig config;
  experiment::ExperimentResult result;
  double secs = 0;
};

const E2E& e2e() {
  static std::optional<E2E> e;
  if (!e) {
    e.emplace();
    e->config = experiment::load_config(kChairs);
    e->config.seeds = {1};
    e->config.arms = {experiment::kArmDefault};
    experiment::RunOptions opt;
    opt.keep_traces = true;
    opt.log = note;
    const auto t0 = std::chrono::steady_clock::now();
    e->result = experiment::run_experiment(e->config, opt);
    e->secs = seconds_since(t0);
  }
  return *e;
}

Outcome end_to_end() {
  const auto& e = e2e();
  const auto stream = experiment::shape_stream(e.config, 1);
  std::size_t exact = 0;
  int worst_rounds = 0;
  for (std::size_t i = 0; i < e.result.rows.size(); ++i) {
    const auto& row = e.result.rows[i];
    const auto& got = e.result.traces[i].final_labels;
    if (got.labels == stream[i].labels.labels && row.report.final_accuracy == 1.0) ++exact;
    worst_rounds = std::max(worst_rounds, row.report.rounds_to_completion);
  }
  const std::size_t n = e.result.rows.size();
  const bool ok = n == 20 && exact == n && worst_rounds <= oracle::kMaxRounds && e.secs < 1800;
  return {ok, fmt("%zu/%zu clouds identical to ground truth, most rounds %d (limit %d), %.0f s (limit 1800)", exact,
                  n, worst_rounds, oracle::kMaxRounds, e.secs)};
}

Outcome click_efficiency() {
  const auto* d = arm(runs(), experiment::kArmDefault);
  if (!d) return {false, "default arm missing"};
  const bool ok = d->click_ratio <= 0.7;
  return {ok, fmt("mean clicks %.2f vs manual %.2f over %zu clouds: ratio %.3f (limit 0.7)", d->mean_clicks,
                  d->mean_manual_clicks, d->clouds, d->click_ratio)};
}

Outcome smoothness_ablation() {
  const auto* d = arm(runs(), experiment::kArmDefault);
  const auto* z = arm(runs(), experiment::kArmNoSmooth);
  if (!d || !z) return {false, "an arm is missing"};
  // round-1 correction clicks, and the unbudgeted count of wrong regions behind them
  const bool clicks_ok = d->mean_round1_corrections <= 1.05 * z->mean_round1_corrections;
  const bool blobs_ok = d->mean_round1_error_blobs <= 1.05 * z->mean_round1_error_blobs;
  const bool ok = clicks_ok && blobs_ok && d->clouds >= 30 && z->clouds >= 30;
  return {ok, fmt("round-1 correction clicks %.3f (smooth) vs %.3f (beta=0); round-1 error regions %.3f vs %.3f; "
                  "%zu clouds per arm",
                  d->mean_round1_corrections, z->mean_round1_corrections, d->mean_round1_error_blobs,
                  z->mean_round1_error_blobs, d->clouds)};
}

Outcome sequence_improvement() {
  const auto* d = arm(runs(), experiment::kArmDefault);
  if (!d) return {false, "default arm missing"};
  const bool ok = d->mean_last5_clicks <= d->mean_first5_clicks;
  return {ok, fmt("clouds 1-5: %.2f clicks, clouds 16-20: %.2f clicks (3 seeds)", d->mean_first5_clicks,
                  d->mean_last5_clicks)};
}

Outcome granularity() {
  const auto& r = runs();
  const auto base = r.full.traces.at(0).base;  // pretrained, 3 classes
  const auto& c = r.config;
  bool ok = true;
  std::string d;
  const auto fine = data::generate_shape({data::Family::Chair, 3, c.noise_sigma, c.points, 777});
  for (int parts : {2, 3}) {
    const auto shape = data::generate_shape({data::Family::Chair, parts, c.noise_sigma, c.points, 777});
    if (shape.cloud.positions != fine.cloud.positions) {
      ok = false;
      d += fmt("%d-class chair has different geometry; ", parts);
      continue;
    }
    const auto sim = oracle::run_simulated_session(shape.cloud, shape.labels, base, c.policy,
                                                   experiment::session_config(c, experiment::kArmDefault, 1, 0),
                                                   fmt("granularity-%d", parts));
    const bool exact = sim.final_state.labels.labels == shape.labels.labels;
    ok = ok && exact;
    d += fmt("%d classes: %s, %zu clicks, %d rounds; ", parts, exact ? "exact" : "NOT exact", sim.report.total_clicks,
             sim.report.rounds_to_completion);
  }
  // backbone bytes after resizing the head to 2 classes
  const auto resized = nnet::init_or_resize_head(base.get(), 2, 5);
  const auto session2 = session::create_session(fine.cloud, 2, base, c.session, "g2");
  std::size_t differing = 0;
  for (std::size_t k = 0; k < nnet::kSlotCount; ++k) {
    if (nnet::is_head(nnet::Slot(k))) continue;
    for (const auto* m : {&resized, session2.model.get()}) {
      const auto& a = m->tensors[k].data;
      const auto& b = base->tensors[k].data;
      differing += a.size() != b.size() || std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) != 0;
    }
  }
  ok = ok && differing == 0 && resized.num_classes == 2;
  d += fmt("backbone tensors changed by head resize: %zu", differing);
  return {ok, d};
}

Outcome determinism_replay() {
  // whole small config twice
  const auto smoke = experiment::load_config(kSmoke);
  const auto a = experiment::run_experiment(smoke);
  const auto b = experiment::run_experiment(smoke);
  const bool smoke_same = experiment::clouds_csv(a) == experiment::clouds_csv(b) &&
                          experiment::rounds_csv(a) == experiment::rounds_csv(b);
  // seed 1 of the full config run on its own reproduces the same rows
  const auto& e = e2e();
  const auto& r = runs();
  const std::string prefix = "1,default,";
  const bool clouds_same = lines_with_prefix(experiment::clouds_csv(e.result), prefix) ==
                           lines_with_prefix(experiment::clouds_csv(r.full), prefix);
  const bool rounds_same = lines_with_prefix(experiment::rounds_csv(e.result), prefix) ==
                           lines_with_prefix(experiment::rounds_csv(r.full), prefix);
  // replay the last cloud of every (seed, arm): its base is an earlier session's model
  std::size_t replayed = 0, reproduced = 0;
  for (std::size_t i = 0; i < r.full.rows.size(); ++i) {
    const auto& row = r.full.rows[i];
    if (row.cloud + 1 != r.config.clouds) continue;
    const auto stream = experiment::shape_stream(r.config, row.seed);
    const auto& t = r.full.traces[i];
    const auto back = session::replay(stream[row.cloud].cloud, t.base, t.events);
    ++replayed;
    reproduced += back.labels == t.final_labels;
  }
  const bool ok = smoke_same && clouds_same && rounds_same && replayed > 0 && reproduced == replayed;
  return {ok, fmt("smoke config twice: %s; seed 1 alone vs full run: clouds %s, rounds %s; replay %zu/%zu exact",
                  smoke_same ? "identical" : "DIFFERENT", clouds_same ? "identical" : "DIFFERENT",
                  rounds_same ? "identical" : "DIFFERENT", reproduced, replayed)};
}

struct Criterion {
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {"gradient_correctness", gradient},
      {"smoothness_oracle", smoothness_oracle},
      {"spatial_index_exactness", spatial_index},
      {"region_growing_geometry", region_growing},
      {"end_to_end_loop", end_to_end},
      {"click_efficiency", click_efficiency},
      {"smoothness_ablation", smoothness_ablation},
      {"sequence_improvement", sequence_improvement},
      {"granularity", granularity},
      {"determinism_and_replay", determinism_replay},
  };
  std::set<std::string> pick(argv + 1, argv + argc);
  int failed = 0, ran = 0;
  for (const auto& c : all) {
    if (!pick.empty() && !pick.count(c.name)) continue;
    ++ran;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  if (ran == 0) {
    std::fprintf(stderr, "no such criterion\n");
    return 2;
  }
  std::printf("%d/%d criteria passed\n", ran - failed, ran);
  return failed ? 1 : 0;
}
