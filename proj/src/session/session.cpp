#include "pcal/session.hpp"

#include <algorithm>
#include <chrono>
#include <map>
#include <sstream>

#include "pcal/error.hpp"

namespace pcal::session {

using nlohmann::json;

namespace {

[[noreturn]] void wrong_phase(const SessionState& s, std::string_view op) {
  if (s.phase == Phase::Training) throw BusyError("session " + s.session_id + " is training");
  throw StateError(std::string(op) + " not allowed in phase " + std::string(phase_name(s.phase)));
}

void require_phase(const SessionState& s, std::initializer_list<Phase> allowed, std::string_view op) {
  if (std::find(allowed.begin(), allowed.end(), s.phase) == allowed.end()) wrong_phase(s, op);
}

void check_point(const SessionState& s, PointId id) {
  if (id >= s.cloud->size()) {
    throw InvalidParameter("point id " + std::to_string(id) + " out of range (N=" +
                           std::to_string(s.cloud->size()) + ")");
  }
}

void check_class(const SessionState& s, int c) {
  if (c < 0 || c >= s.labels.num_classes) {
    throw InvalidParameter("class " + std::to_string(c) + " out of range (C=" +
                           std::to_string(s.labels.num_classes) + ")");
  }
}

bool human(Provenance p) { return p == Provenance::Seed || p == Provenance::Corrected; }

template <class T>
T get_or(const json& j, const char* key, const T& fallback, const std::string& path) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw InvalidParameter(path + "." + key + ": wrong type");
  }
}

}  // namespace

std::string_view phase_name(Phase p) noexcept {
  switch (p) {
    case Phase::Seeding: return "seeding";
    case Phase::Growing: return "growing";
    case Phase::Training: return "training";
    case Phase::Reviewing: return "reviewing";
    case Phase::Finalized: return "finalized";
  }
  return "?";
}

std::int64_t now_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

void validate(const SessionConfig& config) {
  validate(config.grow);
  train::validate(config.train);
  if (config.normal_k < 3) throw InvalidParameter("normal_k must be >= 3");
}

json to_json(const SessionConfig& c) {
  const auto& t = c.train;
  return json{
      {"grow",
       {{"mode", grow_mode_name(c.grow.mode)},
        {"connectivity", neighbor_mode_string(c.grow.connectivity)},
        {"angle_threshold_deg", c.grow.angle_threshold_deg},
        {"color_threshold", c.grow.color_threshold},
        {"max_region_fraction", c.grow.max_region_fraction}}},
      {"train",
       {{"learning_rate", t.learning_rate},
        {"epochs_per_round", t.epochs_per_round},
        {"pretrain_epochs", t.pretrain_epochs},
        {"adam_beta1", t.adam_beta1},
        {"adam_beta2", t.adam_beta2},
        {"adam_epsilon", t.adam_epsilon},
        {"beta_schedule", t.beta_schedule},
        {"alpha", t.alpha},
        {"rng_seed", t.rng_seed},
        {"smooth_neighbors", t.smooth_neighbors},
        {"smooth_random_partners", t.smooth_random_partners},
        {"sigma_sample_pairs", t.sigma_sample_pairs}}},
      {"normal_k", c.normal_k}};
}

SessionConfig session_config_from_json(const json& j, const std::string& path) {
  if (!j.is_object()) throw InvalidParameter(path + ": expected an object");
  SessionConfig c;
  if (j.contains("grow")) {
    const auto& g = j.at("grow");
    const auto gp = path + ".grow";
    if (!g.is_object()) throw InvalidParameter(gp + ": expected an object");
    try {
      if (g.contains("mode")) c.grow.mode = parse_grow_mode(get_or<std::string>(g, "mode", "", gp));
      if (g.contains("connectivity")) {
        c.grow.connectivity = parse_neighbor_mode(get_or<std::string>(g, "connectivity", "", gp));
      }
    } catch (const InvalidParameter& e) {
      throw InvalidParameter(gp + ": " + e.what());
    }
    c.grow.angle_threshold_deg = get_or(g, "angle_threshold_deg", c.grow.angle_threshold_deg, gp);
    c.grow.color_threshold = get_or(g, "color_threshold", c.grow.color_threshold, gp);
    c.grow.max_region_fraction = get_or(g, "max_region_fraction", c.grow.max_region_fraction, gp);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    const auto tp = path + ".train";
    if (!t.is_object()) throw InvalidParameter(tp + ": expected an object");
    auto& o = c.train;
    o.learning_rate = get_or(t, "learning_rate", o.learning_rate, tp);
    o.epochs_per_round = get_or(t, "epochs_per_round", o.epochs_per_round, tp);
    o.pretrain_epochs = get_or(t, "pretrain_epochs", o.pretrain_epochs, tp);
    o.adam_beta1 = get_or(t, "adam_beta1", o.adam_beta1, tp);
    o.adam_beta2 = get_or(t, "adam_beta2", o.adam_beta2, tp);
    o.adam_epsilon = get_or(t, "adam_epsilon", o.adam_epsilon, tp);
    o.beta_schedule = get_or(t, "beta_schedule", o.beta_schedule, tp);
    o.alpha = get_or(t, "alpha", o.alpha, tp);
    o.rng_seed = get_or(t, "rng_seed", o.rng_seed, tp);
    o.smooth_neighbors = get_or(t, "smooth_neighbors", o.smooth_neighbors, tp);
    o.smooth_random_partners = get_or(t, "smooth_random_partners", o.smooth_random_partners, tp);
    o.sigma_sample_pairs = get_or(t, "sigma_sample_pairs", o.sigma_sample_pairs, tp);
  }
  c.normal_k = get_or(j, "normal_k", c.normal_k, path);
  auto checked = [&](const std::string& where, auto&& f) {
    try {
      f();
    } catch (const InvalidParameter& e) {
      throw InvalidParameter(where + ": " + e.what());
    }
  };
  checked(path + ".grow", [&] { validate(c.grow); });
  checked(path + ".train", [&] { train::validate(c.train); });
  checked(path, [&] { validate(c); });
  return c;
}

SessionState create_session(const PointCloud& cloud, int num_classes, const ModelPtr& base_model,
                            const SessionConfig& config, const std::string& session_id) {
  if (num_classes < 2) throw InvalidParameter("num_classes must be >= 2");
  validate(config);
  validate(cloud);
  if (base_model && base_model->num_classes < 2) throw InvalidParameter("base model is malformed");

  SessionState s;
  s.session_id = session_id;
  s.config = config;
  auto norm = normalize_cloud(cloud);
  auto index = std::make_shared<SpatialIndex>(norm);
  if (!norm.normals) {
    if (norm.size() <= config.normal_k) throw InvalidParameter("cloud too small to estimate normals");
    norm = estimate_normals(norm, *index, config.normal_k);
  }
  s.cloud = std::make_shared<const PointCloud>(std::move(norm));
  s.index = std::move(index);
  s.labels = LabelMap(s.cloud->size(), num_classes);
  s.model = std::make_shared<const nnet::ModelParams>(
      nnet::init_or_resize_head(base_model.get(), num_classes, config.train.rng_seed));
  s.phase = Phase::Seeding;
  s.events.push_back(json{{"op", "create"},
                          {"session_id", session_id},
                          {"num_classes", num_classes},
                          {"cloud_id", cloud.id},
                          {"points", cloud.size()},
                          {"config", to_json(config)}}
                         .dump());
  return s;
}

SessionState submit_seeds(const SessionState& state, const std::vector<Assignment>& seeds,
                          std::int64_t timestamp_ms) {
  require_phase(state, {Phase::Seeding}, "submit_seeds");
  if (seeds.empty()) throw InvalidParameter("no seeds given");
  std::map<PointId, int> seen;
  std::vector<bool> covered(state.labels.num_classes, false);
  for (const auto& a : seeds) {
    check_point(state, a.point);
    check_class(state, a.class_id);
    auto [it, fresh] = seen.emplace(a.point, a.class_id);
    if (!fresh && it->second != a.class_id) {
      throw InvalidParameter("point " + std::to_string(a.point) + " seeded with two classes");
    }
    covered[a.class_id] = true;
  }
  for (int c = 0; c < state.labels.num_classes; ++c) {
    if (!covered[c]) throw InvalidParameter("class " + std::to_string(c) + " has no seed");
  }

  SessionState s = state;
  json items = json::array();
  for (const auto& a : seeds) {
    s.labels.labels[a.point] = a.class_id;
    s.labels.provenance[a.point] = Provenance::Seed;
    s.clicks.push_back({ClickKind::Seed, a.point, a.class_id, s.round, timestamp_ms});
    items.push_back({a.point, a.class_id});
  }
  s.labels = grow_regions(*s.cloud, s.labels, s.config.grow, *s.index);
  s.phase = Phase::Growing;
  s.events.push_back(json{{"op", "seeds"}, {"t", timestamp_ms}, {"seeds", items}}.dump());
  return s;
}

SessionState begin_training(const SessionState& state) {
  require_phase(state, {Phase::Growing, Phase::Reviewing}, "train");
  if (train::supervision_mask(state.labels).labeled_count() == 0) {
    throw InvalidParameter("no labeled points to train on");
  }
  SessionState s = state;
  s.phase = Phase::Training;
  return s;
}

TrainingOutcome run_training(const SessionState& training, const train::ProgressFn& progress) {
  if (training.phase != Phase::Training) throw StateError("run_training needs a Training state");
  TrainingOutcome out;
  out.model = std::make_shared<const nnet::ModelParams>(train::finetune_round(
      *training.model, *training.cloud, training.labels, training.round, training.config.train, progress));
  out.predicted = train::predict(*out.model, *training.cloud);
  return out;
}

SessionState complete_training(const SessionState& training, const TrainingOutcome& outcome) {
  if (training.phase != Phase::Training) throw StateError("complete_training needs a Training state");
  if (!outcome.model || outcome.predicted.size() != training.labels.size()) {
    throw InvalidParameter("training outcome does not match the session");
  }
  SessionState s = training;
  for (std::size_t i = 0; i < s.labels.size(); ++i) {
    if (human(s.labels.provenance[i])) continue;
    s.labels.labels[i] = outcome.predicted.labels[i];
    s.labels.provenance[i] = Provenance::Predicted;
  }
  s.model = outcome.model;
  s.round += 1;
  s.phase = Phase::Reviewing;
  s.events.push_back(json{{"op", "train"}, {"round", s.round}}.dump());
  return s;
}

SessionState abort_training(const SessionState& training, Phase previous) {
  if (training.phase != Phase::Training) throw StateError("abort_training needs a Training state");
  SessionState s = training;
  s.phase = previous;
  return s;
}

SessionState train_and_predict(const SessionState& state, const train::ProgressFn& progress) {
  const auto training = begin_training(state);
  return complete_training(training, run_training(training, progress));
}

SessionState submit_corrections(const SessionState& state, const std::vector<Correction>& corrections,
                                std::int64_t timestamp_ms) {
  require_phase(state, {Phase::Reviewing}, "submit_corrections");
  if (corrections.empty()) throw InvalidParameter("no corrections given (finalize instead)");
  std::map<PointId, int> seen;
  for (const auto& c : corrections) {
    check_point(state, c.point);
    check_class(state, c.class_id);
    if (state.labels.provenance[c.point] == Provenance::Seed && state.labels.labels[c.point] != c.class_id) {
      throw InvalidParameter("point " + std::to_string(c.point) + " is a seed of another class");
    }
    auto [it, fresh] = seen.emplace(c.point, c.class_id);
    if (!fresh && it->second != c.class_id) {
      throw InvalidParameter("point " + std::to_string(c.point) + " corrected to two classes");
    }
  }

  SessionState s = state;
  json items = json::array();
  std::vector<PointId> sources;
  for (const auto& c : corrections) {
    if (s.labels.provenance[c.point] != Provenance::Seed) {
      s.labels.labels[c.point] = c.class_id;
      s.labels.provenance[c.point] = Provenance::Corrected;
    }
    s.clicks.push_back({ClickKind::Correction, c.point, c.class_id, s.round, timestamp_ms});
    items.push_back({c.point, c.class_id, c.grow});
    if (c.grow) sources.push_back(c.point);
  }
  if (!sources.empty()) {
    // predictions are open ground for growth; human and grown labels are not
    LabelMap open = s.labels;
    for (std::size_t i = 0; i < open.size(); ++i) {
      if (open.provenance[i] == Provenance::Predicted) {
        open.labels[i] = kUnlabeled;
        open.provenance[i] = Provenance::None;
      }
    }
    const auto grown = grow_regions(*s.cloud, open, s.config.grow, *s.index, sources);
    for (std::size_t i = 0; i < open.size(); ++i) {
      if (!open.is_labeled(i) && grown.is_labeled(i)) {
        s.labels.labels[i] = grown.labels[i];
        s.labels.provenance[i] = Provenance::Grown;
      }
    }
  }
  s.phase = Phase::Reviewing;
  s.events.push_back(json{{"op", "corrections"}, {"t", timestamp_ms}, {"items", items}}.dump());
  return s;
}

SessionState finalize(const SessionState& state, const train::ProgressFn& progress) {
  require_phase(state, {Phase::Reviewing}, "finalize");
  if (!state.labels.is_full()) throw StateError("unlabeled points remain");
  SessionState s = state;
  s.model = std::make_shared<const nnet::ModelParams>(
      train::final_retrain(*state.model, *state.cloud, state.labels, state.config.train, progress));
  s.phase = Phase::Finalized;
  s.events.push_back(json{{"op", "finalize"}}.dump());
  return s;
}

SessionState replay(const PointCloud& cloud, const ModelPtr& base_model, const std::vector<std::string>& events) {
  if (events.empty()) throw FormatError("empty event log");
  SessionState s;
  for (std::size_t k = 0; k < events.size(); ++k) {
    const auto where = "event " + std::to_string(k + 1);
    json e;
    try {
      e = json::parse(events[k]);
    } catch (const json::exception& ex) {
      throw FormatError(where + ": " + ex.what());
    }
    try {
      const auto op = e.at("op").get<std::string>();
      if (k == 0) {
        if (op != "create") throw FormatError(where + ": log must start with create");
        s = create_session(cloud, e.at("num_classes").get<int>(), base_model,
                           session_config_from_json(e.at("config")), e.at("session_id").get<std::string>());
      } else if (op == "seeds") {
        std::vector<Assignment> seeds;
        for (const auto& it : e.at("seeds")) seeds.push_back({it.at(0).get<PointId>(), it.at(1).get<int>()});
        s = submit_seeds(s, seeds, e.at("t").get<std::int64_t>());
      } else if (op == "train") {
        s = train_and_predict(s);
        if (s.round != e.at("round").get<int>()) throw FormatError(where + ": round mismatch");
      } else if (op == "corrections") {
        std::vector<Correction> items;
        for (const auto& it : e.at("items")) {
          items.push_back({it.at(0).get<PointId>(), it.at(1).get<int>(), it.at(2).get<bool>()});
        }
        s = submit_corrections(s, items, e.at("t").get<std::int64_t>());
      } else if (op == "finalize") {
        s = finalize(s);
      } else {
        throw FormatError(where + ": unknown op '" + op + "'");
      }
    } catch (const json::exception& ex) {
      throw FormatError(where + ": " + ex.what());
    }
  }
  return s;
}

std::string event_log_ndjson(const SessionState& state) {
  std::string out;
  for (const auto& e : state.events) {
    out += e;
    out += '\n';
  }
  return out;
}

std::vector<std::string> parse_event_log(std::string_view ndjson) {
  std::vector<std::string> out;
  std::istringstream in{std::string(ndjson)};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

}  // namespace pcal::session
