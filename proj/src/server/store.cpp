#include <chrono>
#include <cstring>

#include "pcal/error.hpp"
#include "pcal/server.hpp"

namespace pcal::server {

using nlohmann::json;

// ---- snapshot ----

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(char((v >> (8 * k)) & 0xff));
}

void put_f32(std::string& out, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(out, v);
}

std::uint32_t get_u32(std::string_view b, std::size_t at) {
  std::uint32_t v = 0;
  for (int k = 0; k < 4; ++k) v |= std::uint32_t(std::uint8_t(b[at + k])) << (8 * k);
  return v;
}

}  // namespace

Snapshot make_snapshot(const session::SessionState& s, const json& extra) {
  Snapshot snap;
  snap.meta = {{"session_id", s.session_id},
               {"phase", std::string(session::phase_name(s.phase))},
               {"round", s.round},
               {"num_classes", s.labels.num_classes},
               {"points", s.cloud->size()},
               {"clicks_total", s.clicks.size()}};
  for (auto it = extra.begin(); it != extra.end(); ++it) snap.meta[it.key()] = it.value();
  snap.positions = s.cloud->positions;
  snap.labels.resize(s.labels.size());
  snap.provenance.resize(s.labels.size());
  for (std::size_t i = 0; i < s.labels.size(); ++i) {
    snap.labels[i] = s.labels.is_labeled(i) ? std::uint8_t(s.labels.labels[i]) : kUnlabeledByte;
    snap.provenance[i] = std::uint8_t(s.labels.provenance[i]);
  }
  return snap;
}

std::string encode_snapshot(const Snapshot& snap) {
  const std::size_t n = snap.positions.size();
  if (snap.labels.size() != n || snap.provenance.size() != n) {
    throw InvalidParameter("snapshot arrays differ in length");
  }
  const std::string meta = snap.meta.dump();
  std::string out;
  out.reserve(4 + meta.size() + 14 * n);
  put_u32(out, std::uint32_t(meta.size()));
  out += meta;
  for (const auto& p : snap.positions)
    for (float v : p) put_f32(out, v);
  out.append(reinterpret_cast<const char*>(snap.labels.data()), n);
  out.append(reinterpret_cast<const char*>(snap.provenance.data()), n);
  return out;
}

Snapshot decode_snapshot(std::string_view b) {
  if (b.size() < 4) throw FormatError("snapshot: truncated header");
  const std::size_t len = get_u32(b, 0);
  if (b.size() < 4 + len) throw FormatError("snapshot: truncated metadata");
  Snapshot snap;
  try {
    snap.meta = json::parse(b.substr(4, len));
  } catch (const json::exception& e) {
    throw FormatError(std::string("snapshot: bad metadata: ") + e.what());
  }
  if (!snap.meta.is_object() || !snap.meta.contains("points")) throw FormatError("snapshot: metadata lacks points");
  const std::size_t n = snap.meta.at("points").get<std::size_t>();
  std::size_t at = 4 + len;
  if (b.size() != at + 14 * n) throw FormatError("snapshot: payload length does not match points");
  snap.positions.resize(n);
  for (auto& p : snap.positions) {
    for (float& v : p) {
      const std::uint32_t u = get_u32(b, at);
      std::memcpy(&v, &u, 4);
      at += 4;
    }
  }
  snap.labels.assign(b.begin() + at, b.begin() + at + n);
  at += n;
  snap.provenance.assign(b.begin() + at, b.begin() + at + n);
  return snap;
}

// ---- events ----

std::uint64_t EventHub::publish(const std::string& type, json data) {
  std::lock_guard lk(mu_);
  const std::uint64_t seq = events_.size();
  events_.push_back({seq, type, std::move(data)});
  cv_.notify_all();
  return seq;
}

std::vector<Event> EventHub::wait_from(std::uint64_t from, int timeout_ms) const {
  std::unique_lock lk(mu_);
  cv_.wait_for(lk, std::chrono::milliseconds(timeout_ms), [&] { return closed_ || events_.size() > from; });
  if (events_.size() <= from) return {};
  return {events_.begin() + std::ptrdiff_t(from), events_.end()};
}

std::uint64_t EventHub::next_seq() const {
  std::lock_guard lk(mu_);
  return events_.size();
}

void EventHub::close() {
  std::lock_guard lk(mu_);
  closed_ = true;
  cv_.notify_all();
}

bool EventHub::closed() const {
  std::lock_guard lk(mu_);
  return closed_;
}

// ---- store ----

struct SessionStore::Entry {
  mutable std::mutex mu;
  mutable std::condition_variable idle;
  session::SessionState state;
  std::string cloud_id;
  std::optional<LabelMap> truth;
  bool training = false;
  std::thread worker;
  std::shared_ptr<EventHub> hub = std::make_shared<EventHub>();
  json progress;
  std::vector<oracle::RoundRecord> rounds;
};

namespace {

std::int64_t timestamp_of(const json& body) {
  if (body.contains("t")) {
    if (!body.at("t").is_number_integer()) throw InvalidParameter("t: expected an integer");
    return body.at("t").get<std::int64_t>();
  }
  return session::now_ms();
}

const json& list_field(const json& body, const char* key) {
  if (!body.is_object() || !body.contains(key) || !body.at(key).is_array()) {
    throw InvalidParameter(std::string(key) + ": expected a list");
  }
  return body.at(key);
}

template <class T>
T field(const json& item, const char* key, const std::string& path) {
  if (!item.is_object() || !item.contains(key)) throw InvalidParameter(path + "." + key + ": missing");
  try {
    return item.at(key).get<T>();
  } catch (const json::exception&) {
    throw InvalidParameter(path + "." + key + ": wrong type");
  }
}

}  // namespace

SessionStore::SessionStore(StoreOptions options) : options_(std::move(options)), base_(options_.base_model) {
  session::validate(options_.default_config);
}

SessionStore::~SessionStore() {
  std::vector<std::shared_ptr<Entry>> all;
  {
    std::lock_guard lk(mu_);
    for (auto& [id, e] : sessions_) all.push_back(e);
  }
  for (auto& e : all) {
    std::thread t;
    {
      std::lock_guard lk(e->mu);
      t = std::move(e->worker);
    }
    if (t.joinable()) t.join();
    e->hub->close();
  }
}

std::string SessionStore::add_cloud(CloudEntry entry) {
  validate(entry.cloud);
  if (entry.ground_truth) {
    validate(*entry.ground_truth);
    if (entry.ground_truth->size() != entry.cloud.size()) {
      throw InvalidParameter("labels: length differs from cloud");
    }
  }
  std::lock_guard lk(mu_);
  if (entry.id.empty()) {
    do entry.id = "c" + std::to_string(next_cloud_++);
    while (clouds_.count(entry.id));
  }
  if (clouds_.count(entry.id)) throw StateError("cloud '" + entry.id + "' already exists");
  const auto id = entry.id;
  clouds_.emplace(id, std::move(entry));
  return id;
}

json SessionStore::list_clouds() const {
  std::lock_guard lk(mu_);
  json out = json::array();
  for (const auto& [id, c] : clouds_) {
    out.push_back({{"cloud_id", id},
                   {"points", c.cloud.size()},
                   {"has_ground_truth", c.ground_truth.has_value()},
                   {"num_classes", c.ground_truth ? c.ground_truth->num_classes : 0}});
  }
  return out;
}

CloudEntry SessionStore::cloud(const std::string& id) const {
  std::lock_guard lk(mu_);
  const auto it = clouds_.find(id);
  if (it == clouds_.end()) throw NotFound("unknown cloud '" + id + "'");
  return it->second;
}

std::shared_ptr<SessionStore::Entry> SessionStore::find(const std::string& id) const {
  std::lock_guard lk(mu_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFound("unknown session '" + id + "'");
  return it->second;
}

json SessionStore::summary(const Entry& e) const {
  const auto& s = e.state;
  return {{"session_id", s.session_id},
          {"cloud_id", e.cloud_id},
          {"phase", std::string(session::phase_name(s.phase))},
          {"round", s.round},
          {"num_classes", s.labels.num_classes},
          {"points", s.cloud->size()},
          {"clicks_total", s.clicks.size()},
          {"has_ground_truth", e.truth.has_value()}};
}

void SessionStore::record_round(Entry& e) {
  if (!e.truth || !e.state.labels.is_full()) return;
  const auto m = oracle::evaluate(e.state.labels, *e.truth);
  oracle::RoundRecord r;
  r.round = e.state.round;
  r.clicks_cumulative = e.state.clicks.size();
  r.accuracy = m.accuracy;
  r.miou = m.miou;
  r.error_blobs = oracle::count_error_blobs(e.state.labels, *e.truth, *e.state.cloud);
  e.rounds.push_back(r);
}

json SessionStore::create(const json& body) {
  if (!body.is_object()) throw InvalidParameter("body: expected an object");
  const auto cloud_id = field<std::string>(body, "cloud_id", "body");
  const int classes = field<int>(body, "num_classes", "body");
  const auto entry = cloud(cloud_id);
  auto config = options_.default_config;
  if (body.contains("config")) config = session::session_config_from_json(body.at("config"), "config");
  bool use_base = true;
  if (body.contains("use_base_model")) use_base = field<bool>(body, "use_base_model", "body");
  std::string id;
  if (body.contains("session_id")) {
    id = field<std::string>(body, "session_id", "body");
    if (id.empty() || id.find('/') != std::string::npos) throw InvalidParameter("session_id: not a valid id");
  }
  const auto base = use_base ? base_model() : nullptr;

  auto e = std::make_shared<Entry>();
  e->cloud_id = cloud_id;
  if (entry.ground_truth && entry.ground_truth->num_classes == classes) e->truth = entry.ground_truth;
  {
    std::lock_guard lk(mu_);
    if (id.empty()) {
      do id = "s" + std::to_string(next_session_++);
      while (sessions_.count(id));
    }
    if (sessions_.count(id)) throw StateError("session '" + id + "' already exists");
    sessions_[id] = e;  // reserve the id; filled below
  }
  try {
    std::lock_guard lk(e->mu);
    e->state = session::create_session(entry.cloud, classes, base, config, id);
  } catch (...) {
    std::lock_guard lk(mu_);
    sessions_.erase(id);
    throw;
  }
  std::lock_guard lk(e->mu);
  e->hub->publish("created", summary(*e));
  return summary(*e);
}

json SessionStore::list_sessions() const {
  std::vector<std::shared_ptr<Entry>> all;
  {
    std::lock_guard lk(mu_);
    for (const auto& [id, e] : sessions_) all.push_back(e);
  }
  json out = json::array();
  for (const auto& e : all) {
    std::lock_guard lk(e->mu);
    if (e->state.cloud) out.push_back(summary(*e));
  }
  return out;
}

json SessionStore::submit_seeds(const std::string& id, const json& body) {
  const auto& items = list_field(body, "seeds");
  std::vector<session::Assignment> seeds;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto path = "seeds[" + std::to_string(i) + "]";
    seeds.push_back({field<PointId>(items[i], "point", path), field<int>(items[i], "class_id", path)});
  }
  const auto t = timestamp_of(body);
  auto e = find(id);
  std::lock_guard lk(e->mu);
  e->state = session::submit_seeds(e->state, seeds, t);
  const auto out = summary(*e);
  e->hub->publish("seeds", out);
  return out;
}

json SessionStore::start_training(const std::string& id) {
  auto e = find(id);
  std::unique_lock lk(e->mu);
  const auto previous = e->state.phase;
  auto training = session::begin_training(e->state);
  if (e->worker.joinable()) e->worker.join();  // finished: it cleared `training` before exiting
  e->state = training;
  e->training = true;
  e->progress = json::object();
  const auto out = summary(*e);
  e->hub->publish("phase", out);

  e->worker = std::thread([this, e, training = std::move(training), previous] {
    auto last = std::chrono::steady_clock::now() - std::chrono::seconds(10);
    auto progress = [&](const train::Progress& p) {
      const json j = {{"stage", p.stage}, {"epoch", p.epoch}, {"epochs", p.epochs}, {"loss", p.loss}};
      {
        std::lock_guard plk(e->mu);
        e->progress = j;
      }
      const auto now = std::chrono::steady_clock::now();
      if (p.epoch == 1 || p.epoch == p.epochs || now - last >= std::chrono::milliseconds(250)) {
        last = now;
        e->hub->publish("progress", j);
      }
    };
    try {
      const auto outcome = session::run_training(training, progress);
      std::lock_guard wlk(e->mu);
      e->state = session::complete_training(e->state, outcome);
      record_round(*e);
      e->training = false;
      e->hub->publish("trained", summary(*e));
    } catch (const std::exception& ex) {
      std::lock_guard wlk(e->mu);
      e->state = session::abort_training(e->state, previous);
      e->training = false;
      e->hub->publish("error", {{"error", ex.what()}, {"phase", std::string(session::phase_name(previous))}});
    }
    e->idle.notify_all();
  });
  return out;
}

json SessionStore::submit_corrections(const std::string& id, const json& body) {
  const auto& items = list_field(body, "corrections");
  std::vector<session::Correction> cs;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto path = "corrections[" + std::to_string(i) + "]";
    session::Correction c;
    c.point = field<PointId>(items[i], "point", path);
    c.class_id = field<int>(items[i], "class_id", path);
    if (items[i].contains("grow")) c.grow = field<bool>(items[i], "grow", path);
    cs.push_back(c);
  }
  const auto t = timestamp_of(body);
  auto e = find(id);
  std::lock_guard lk(e->mu);
  e->state = session::submit_corrections(e->state, cs, t);
  const auto out = summary(*e);
  e->hub->publish("corrections", out);
  return out;
}

json SessionStore::finalize(const std::string& id) {
  auto e = find(id);
  std::lock_guard lk(e->mu);
  e->state = session::finalize(e->state);
  {
    std::lock_guard slk(mu_);
    base_ = e->state.model;  // last writer wins
  }
  const auto out = summary(*e);
  e->hub->publish("finalized", out);
  return out;
}

Snapshot SessionStore::snapshot(const std::string& id) const {
  auto e = find(id);
  std::lock_guard lk(e->mu);
  json extra = {{"cloud_id", e->cloud_id}};
  if (e->truth && e->state.labels.is_full()) {
    const auto m = oracle::evaluate(e->state.labels, *e->truth);
    extra["metrics"] = {{"accuracy", m.accuracy}, {"miou", m.miou}};
  }
  return make_snapshot(e->state, extra);
}

std::string SessionStore::event_log(const std::string& id) const {
  auto e = find(id);
  std::lock_guard lk(e->mu);
  return session::event_log_ndjson(e->state);
}

json SessionStore::metrics(const std::string& id) const {
  auto e = find(id);
  std::lock_guard lk(e->mu);
  if (!e->truth) throw NotFound("session '" + id + "' has no ground truth attached");
  oracle::EvalReport r;
  r.rounds = e->rounds;
  for (std::size_t k = 0; k < r.rounds.size(); ++k) {
    const std::size_t next = k + 1 < r.rounds.size() ? r.rounds[k + 1].clicks_cumulative : e->state.clicks.size();
    r.rounds[k].clicks = next - r.rounds[k].clicks_cumulative;
  }
  for (const auto& c : e->state.clicks) {
    (c.kind == session::ClickKind::Seed ? r.seed_clicks : r.correction_clicks) += 1;
  }
  r.total_clicks = e->state.clicks.size();
  r.rounds_to_completion = e->state.round;
  if (e->state.labels.is_full()) r.final_accuracy = oracle::evaluate(e->state.labels, *e->truth).accuracy;
  auto j = oracle::report_json(r);
  j["session_id"] = id;
  j["phase"] = std::string(session::phase_name(e->state.phase));
  return j;
}

std::shared_ptr<const EventHub> SessionStore::events(const std::string& id) const { return find(id)->hub; }

json SessionStore::status(const std::string& id) const {
  auto e = find(id);
  std::lock_guard lk(e->mu);
  auto j = summary(*e);
  if (e->training) j["progress"] = e->progress;
  return j;
}

session::ModelPtr SessionStore::base_model() const {
  std::lock_guard lk(mu_);
  return base_;
}

void SessionStore::wait_idle(const std::string& id) const {
  auto e = find(id);
  std::unique_lock lk(e->mu);
  e->idle.wait(lk, [&] { return !e->training; });
}

}  // namespace pcal::server
