// pcal: pretraining, simulated experiments, dataset generation and the
// annotation server.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "pcal/checkpoint.hpp"
#include "pcal/datasets.hpp"
#include "pcal/error.hpp"
#include "pcal/experiment.hpp"
#include "pcal/server.hpp"

using namespace pcal;

namespace {

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

experiment::ExperimentConfig config_or_default(const std::string& path) {
  return path.empty() ? experiment::ExperimentConfig{} : experiment::load_config(path);
}

void log_line(const std::string& s) { std::cerr << s << "\n"; }

int cmd_pretrain(const std::string& config_path, const std::string& out_dir, std::uint64_t seed) {
  auto c = config_or_default(config_path);
  c.pretrain_checkpoint.clear();
  std::filesystem::create_directories(out_dir);
  double acc = 0;
  const auto t0 = std::chrono::steady_clock::now();
  const auto model = experiment::base_model(c, seed, &acc);
  const auto path = (std::filesystem::path(out_dir) / "base.ckpt").string();
  nnet::save_checkpoint_file(model, path);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("pretrained on %zu %s clouds: train accuracy %.4f (%.1f s) -> %s\n", c.pretrain_clouds,
              std::string(data::family_name(c.pretrain_family)).c_str(), acc, secs, path.c_str());
  return 0;
}

int cmd_experiment(const std::string& config_path, const std::string& out_dir, std::optional<std::uint64_t> seed,
                   bool quiet) {
  auto c = config_or_default(config_path);
  if (seed) c.seeds = {*seed};
  experiment::RunOptions opt;
  if (!quiet) opt.log = log_line;
  const auto r = experiment::run_experiment(c, opt);
  experiment::write_outputs(c, r, out_dir);
  std::cout << experiment::summary_markdown(c, r);
  return 0;
}

int cmd_gen_dataset(const std::string& config_path, const std::string& out_dir, std::uint64_t seed,
                    const std::string& family, std::size_t count, int parts, std::size_t points) {
  std::vector<LabeledCloud> items;
  if (!config_path.empty()) {
    // exactly the stream an experiment with this seed annotates
    items = experiment::shape_stream(experiment::load_config(config_path), seed);
  } else {
    items = data::generate_dataset(data::parse_family(family), count, parts, seed, points);
  }
  const auto manifest = data::write_dataset(items, out_dir, family.empty() ? "shape" : family);
  std::printf("wrote %zu clouds -> %s\n", items.size(), manifest.c_str());
  return 0;
}

int cmd_serve(const std::string& config_path, const std::string& checkpoint, const std::string& host, int flag_port,
              std::uint64_t seed, std::size_t demo) {
  const auto c = config_or_default(config_path);
  server::StoreOptions opt;
  opt.default_config = c.session;
  if (!checkpoint.empty()) {
    opt.base_model = std::make_shared<const nnet::ModelParams>(nnet::load_checkpoint_file(checkpoint));
  }
  server::SessionStore store(opt);
  if (demo > 0) {
    auto stream = experiment::shape_stream(c, seed);
    if (stream.size() > demo) stream.resize(demo);
    for (std::size_t i = 0; i < stream.size(); ++i) {
      store.add_cloud({"demo" + std::to_string(i), std::move(stream[i].cloud), std::move(stream[i].labels)});
    }
  }
  server::HttpServer http(store);
  const int port = http.bind(host, server::resolve_port(flag_port, std::getenv("PCAL_PORT")));
  if (port < 0) {
    std::fprintf(stderr, "error: cannot bind %s\n", host.c_str());
    return 1;
  }
  std::printf("listening on http://%s:%d\n", host.c_str(), port);
  std::fflush(stdout);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::thread loop([&] { http.serve(); });
  while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  http.stop();
  loop.join();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"point cloud annotation with a network in the loop"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out";
  std::uint64_t seed = 1;

  auto* pre = app.add_subcommand("pretrain", "train a base model on the pretraining family, write base.ckpt");
  pre->add_option("--config", config_path, "experiment config (TOML)")->check(CLI::ExistingFile);
  pre->add_option("--out-dir", out_dir, "output directory")->capture_default_str();
  pre->add_option("--seed", seed, "experiment seed")->capture_default_str();

  bool quiet = false;
  std::optional<std::uint64_t> exp_seed;
  auto* exp = app.add_subcommand("experiment", "simulated annotation runs; writes CSV, JSON and markdown reports");
  exp->add_option("--config", config_path, "experiment config (TOML)")->required()->check(CLI::ExistingFile);
  exp->add_option("--out-dir", out_dir, "output directory")->capture_default_str();
  exp->add_option("--seed", exp_seed, "run only this seed instead of the config's list");
  exp->add_flag("--quiet", quiet, "no per-cloud progress on stderr");

  std::string family = "chair";
  std::size_t count = 20, points = 1024;
  int parts = 3;
  auto* gen = app.add_subcommand("gen-dataset", "write generated shapes as PLY + labels + manifest.json");
  gen->add_option("--config", config_path, "write the shape stream of this experiment config")
      ->check(CLI::ExistingFile);
  gen->add_option("--out-dir", out_dir, "output directory")->capture_default_str();
  gen->add_option("--seed", seed, "rng seed")->capture_default_str();
  gen->add_option("--family", family, "chair, table, lamp or plant")->capture_default_str();
  gen->add_option("--count", count, "number of shapes")->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--parts", parts, "part count (granularity)")->capture_default_str();
  gen->add_option("--points", points, "points per shape")->capture_default_str();

  std::string host = "127.0.0.1", checkpoint;
  int port = 8080;
  std::size_t demo = 0;
  auto* srv = app.add_subcommand("serve", "run the annotation HTTP server");
  srv->add_option("--config", config_path, "session defaults from [grow], [train], [session]")
      ->check(CLI::ExistingFile);
  srv->add_option("--checkpoint", checkpoint, "base model for new sessions")->check(CLI::ExistingFile);
  srv->add_option("--host", host)->capture_default_str();
  srv->add_option("--port", port, "port; PCAL_PORT overrides")->capture_default_str();
  srv->add_option("--seed", seed, "seed of the demo shape stream")->capture_default_str();
  srv->add_option("--demo", demo, "register this many generated clouds with ground truth")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*pre) return cmd_pretrain(config_path, out_dir, seed);
    if (*exp) return cmd_experiment(config_path, out_dir, exp_seed, quiet);
    if (*gen) return cmd_gen_dataset(config_path, out_dir, seed, family, count, parts, points);
    if (*srv) return cmd_serve(config_path, checkpoint, host, port, seed, demo);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
