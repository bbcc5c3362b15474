#include <atomic>
#include <cstdlib>
#include <string>

#include "httplib.h"
#include "pcal/datasets.hpp"
#include "pcal/error.hpp"
#include "pcal/server.hpp"

namespace pcal::server {

using nlohmann::json;

namespace {

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

// Runs a handler and maps library errors onto status codes.
template <class F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const NotFound& e) {
    reply(res, 404, {{"error", e.what()}});
  } catch (const StateError& e) {  // BusyError included
    reply(res, 409, {{"error", e.what()}});
  } catch (const Error& e) {
    reply(res, 400, {{"error", e.what()}});
  } catch (const json::exception& e) {
    reply(res, 400, {{"error", e.what()}});
  } catch (const std::exception& e) {
    reply(res, 500, {{"error", e.what()}});
  }
}

json body_of(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::exception& e) {
    throw InvalidParameter(std::string("body: ") + e.what());
  }
}

std::string sse(std::uint64_t seq, const std::string& type, const json& data) {
  return "id: " + std::to_string(seq) + "\nevent: " + type + "\ndata: " + data.dump() + "\n\n";
}

CloudEntry cloud_from_body(const json& body) {
  if (!body.is_object()) throw InvalidParameter("body: expected an object");
  CloudEntry entry;
  if (body.contains("id")) entry.id = body.at("id").get<std::string>();
  if (body.contains("ply")) {
    entry.cloud = load_ply(body.at("ply").get<std::string>());
    if (body.contains("labels")) entry.ground_truth = read_labels(body.at("labels").get<std::string>());
  } else if (body.contains("generate")) {
    const auto& g = body.at("generate");
    data::ShapeSpec spec;
    if (g.contains("family")) spec.family = data::parse_family(g.at("family").get<std::string>());
    spec.part_count = g.value("part_count", spec.part_count);
    spec.points_n = g.value("points", spec.points_n);
    spec.rng_seed = g.value("seed", spec.rng_seed);
    spec.noise_sigma = g.value("noise_sigma", spec.noise_sigma);
    auto shape = data::generate_shape(spec);
    entry.cloud = std::move(shape.cloud);
    entry.ground_truth = std::move(shape.labels);
  } else {
    throw InvalidParameter("body: needs \"ply\" or \"generate\"");
  }
  return entry;
}

}  // namespace

struct HttpServer::Impl {
  explicit Impl(SessionStore& s) : store(s) {}

  SessionStore& store;
  httplib::Server http;
  std::atomic<bool> stopping{false};
  std::atomic<int> heartbeat_ms{1000};

  void routes();
  void stream(const std::string& id, std::uint64_t from, httplib::Response& res);
};

void HttpServer::Impl::routes() {
  http.new_task_queue = [] { return new httplib::ThreadPool(8); };

  http.Get("/clouds", [this](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, store.list_clouds()); });
  });
  http.Post("/clouds", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto id = store.add_cloud(cloud_from_body(body_of(req)));
      const auto c = store.cloud(id);
      reply(res, 201, {{"cloud_id", id}, {"points", c.cloud.size()}, {"has_ground_truth", c.ground_truth.has_value()}});
    });
  });

  http.Get("/sessions", [this](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, store.list_sessions()); });
  });
  http.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, 201, store.create(body_of(req))); });
  });
  http.Get(R"(/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      res.set_content(encode_snapshot(store.snapshot(req.matches[1])), "application/octet-stream");
    });
  });
  http.Get(R"(/sessions/([^/]+)/log)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { res.set_content(store.event_log(req.matches[1]), "application/x-ndjson"); });
  });
  http.Post(R"(/sessions/([^/]+)/seeds)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, store.submit_seeds(req.matches[1], body_of(req))); });
  });
  http.Post(R"(/sessions/([^/]+)/train)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, 202, store.start_training(req.matches[1])); });
  });
  http.Post(R"(/sessions/([^/]+)/corrections)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, store.submit_corrections(req.matches[1], body_of(req))); });
  });
  http.Post(R"(/sessions/([^/]+)/finalize)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, store.finalize(req.matches[1])); });
  });
  http.Get(R"(/sessions/([^/]+)/events)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      std::uint64_t from = 0;
      if (req.has_param("from")) from = std::stoull(req.get_param_value("from"));
      else if (req.has_header("Last-Event-ID")) from = std::stoull(req.get_header_value("Last-Event-ID")) + 1;
      stream(req.matches[1], from, res);
    });
  });
  http.Get(R"(/metrics/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, store.metrics(req.matches[1])); });
  });
}

void HttpServer::Impl::stream(const std::string& id, std::uint64_t from, httplib::Response& res) {
  auto hub = store.events(id);  // throws NotFound before any bytes go out
  auto cursor = std::make_shared<std::uint64_t>(from);
  res.set_header("Cache-Control", "no-cache");
  res.set_chunked_content_provider(
      "text/event-stream", [this, hub, cursor, id](std::size_t, httplib::DataSink& sink) {
        if (stopping) return false;
        const auto events = hub->wait_from(*cursor, heartbeat_ms);
        if (stopping) return false;
        std::string out;
        for (const auto& e : events) out += sse(e.seq, e.type, e.data);
        if (!events.empty()) {
          *cursor = events.back().seq + 1;
        } else if (hub->closed()) {
          sink.done();
          return true;
        } else {
          // nothing new: tell the client where training stands
          const auto st = store.status(id);
          out = st.contains("progress") ? "event: progress\ndata: " + st.at("progress").dump() + "\n\n"
                                        : ": keepalive\n\n";
        }
        return sink.write(out.data(), out.size());
      });
}

HttpServer::HttpServer(SessionStore& store) : impl_(std::make_unique<Impl>(store)) { impl_->routes(); }

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) return impl_->http.bind_to_any_port(host);
  return impl_->http.bind_to_port(host, port) ? port : -1;
}

bool HttpServer::serve() { return impl_->http.listen_after_bind(); }

void HttpServer::stop() {
  impl_->stopping = true;
  impl_->http.stop();
}

void HttpServer::set_heartbeat_ms(int ms) { impl_->heartbeat_ms = ms; }

int resolve_port(int flag_port, const char* env_value) {
  if (env_value && *env_value) {
    char* end = nullptr;
    const long v = std::strtol(env_value, &end, 10);
    if (*end == '\0' && v >= 0 && v <= 65535) return int(v);
  }
  return flag_port;
}

}  // namespace pcal::server
