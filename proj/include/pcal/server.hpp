#pragma once

// HTTP front end for annotation sessions.
//
//   POST /sessions                  create (JSON body)
//   GET  /sessions                  list
//   GET  /sessions/{id}             binary snapshot, see encode_snapshot
//   GET  /sessions/{id}/log         event log (NDJSON)
//   POST /sessions/{id}/seeds       {"seeds": [{"point": p, "class_id": c}, ...]}
//   POST /sessions/{id}/train       starts a training pass, 202
//   POST /sessions/{id}/corrections {"corrections": [{"point", "class_id", "grow"}, ...]}
//   POST /sessions/{id}/finalize
//   GET  /sessions/{id}/events      server-sent events
//   GET  /clouds, POST /clouds      registered clouds
//   GET  /metrics/{id}              per-round accuracy, needs ground truth
//
// Errors come back as {"error": ...} with 400 (bad request), 404 (unknown
// id) or 409 (wrong phase, or training in flight).

#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "pcal/oracle.hpp"
#include "pcal/session.hpp"

namespace pcal::server {

// ---- snapshot framing ----------------------------------------------------
//
// u32 little-endian JSON length, the JSON metadata, then N float32 xyz
// triples (little-endian), N label bytes (255 = unlabeled) and N provenance
// bytes.

inline constexpr std::uint8_t kUnlabeledByte = 255;

struct Snapshot {
  nlohmann::json meta;  // session_id, phase, round, num_classes, points, clicks_total[, metrics]
  std::vector<Point3> positions;
  std::vector<std::uint8_t> labels;
  std::vector<std::uint8_t> provenance;

  friend bool operator==(const Snapshot&, const Snapshot&) = default;
};

Snapshot make_snapshot(const session::SessionState& state, const nlohmann::json& extra = nlohmann::json::object());
std::string encode_snapshot(const Snapshot& snapshot);
/// Throws FormatError on truncated or inconsistent payloads.
Snapshot decode_snapshot(std::string_view bytes);

// ---- event fan-out -------------------------------------------------------

struct Event {
  std::uint64_t seq = 0;
  std::string type;
  nlohmann::json data;
};

/// Append-only per-session event list with blocking reads; any number of
/// readers, each keeping its own cursor.
class EventHub {
 public:
  std::uint64_t publish(const std::string& type, nlohmann::json data);
  /// Events with seq >= from. Waits up to `timeout_ms` when there are none;
  /// returns empty on timeout or close.
  std::vector<Event> wait_from(std::uint64_t from, int timeout_ms) const;
  std::uint64_t next_seq() const;
  void close();
  bool closed() const;

 private:
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  std::vector<Event> events_;
  bool closed_ = false;
};

// ---- store ---------------------------------------------------------------

struct CloudEntry {
  std::string id;
  PointCloud cloud;
  std::optional<LabelMap> ground_truth;
};

class NotFound : public Error {
 public:
  using Error::Error;
};

struct StoreOptions {
  session::SessionConfig default_config;
  session::ModelPtr base_model;  // may be null: sessions start from scratch
};

/// Owns sessions, clouds and the shared base model. Every method is safe to
/// call from any thread; per-session operations are serialized.
class SessionStore {
 public:
  explicit SessionStore(StoreOptions options = {});
  ~SessionStore();
  SessionStore(const SessionStore&) = delete;
  SessionStore& operator=(const SessionStore&) = delete;

  std::string add_cloud(CloudEntry entry);
  nlohmann::json list_clouds() const;
  CloudEntry cloud(const std::string& id) const;

  /// Body fields: cloud_id, num_classes, optional session_id, config
  /// (session_config_from_json form), use_base_model (default true).
  nlohmann::json create(const nlohmann::json& body);
  nlohmann::json list_sessions() const;

  nlohmann::json submit_seeds(const std::string& id, const nlohmann::json& body);
  /// Starts training on a background thread and returns immediately.
  nlohmann::json start_training(const std::string& id);
  nlohmann::json submit_corrections(const std::string& id, const nlohmann::json& body);
  nlohmann::json finalize(const std::string& id);

  Snapshot snapshot(const std::string& id) const;
  std::string event_log(const std::string& id) const;
  nlohmann::json metrics(const std::string& id) const;
  std::shared_ptr<const EventHub> events(const std::string& id) const;
  /// Phase and latest training progress, for stream heartbeats.
  nlohmann::json status(const std::string& id) const;

  session::ModelPtr base_model() const;
  /// Blocks until no training job is running in the given session.
  void wait_idle(const std::string& id) const;

 private:
  struct Entry;
  std::shared_ptr<Entry> find(const std::string& id) const;
  nlohmann::json summary(const Entry& e) const;
  void record_round(Entry& e);

  StoreOptions options_;
  mutable std::mutex mu_;  // guards the maps and base model
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::map<std::string, CloudEntry> clouds_;
  session::ModelPtr base_;
  std::uint64_t next_session_ = 1;
  std::uint64_t next_cloud_ = 1;
};

// ---- HTTP ----------------------------------------------------------------

class HttpServer {
 public:
  explicit HttpServer(SessionStore& store);
  ~HttpServer();

  /// Binds to host:port (port 0 picks a free one) and returns the port, or
  /// -1 if binding failed.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  bool serve();
  void stop();

  /// Heartbeat interval of the event stream while nothing else is sent.
  void set_heartbeat_ms(int ms);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// PCAL_PORT, when set to a valid port, takes precedence over `flag_port`.
int resolve_port(int flag_port, const char* env_value);

}  // namespace pcal::server
