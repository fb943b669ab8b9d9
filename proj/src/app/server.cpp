#include "eaxl/server.hpp"

#include <chrono>

#include <httplib.h>

#include "eaxl/error.hpp"

namespace eaxl {

namespace {

HttpResult bad_request(const std::string& message) { return {400, {{"error", message}}}; }

std::vector<std::string> coarse_label_strings() {
  const auto& labels = EmotionTaxonomy::standard().coarse_labels();
  return {labels.begin(), labels.end()};
}

}  // namespace

ChatService::ChatService(const Pipeline& pipeline, bool sessions)
    : pipeline_(pipeline), sessions_(sessions) {}

HttpResult ChatService::health() const { return {200, {{"status", "ok"}}}; }

HttpResult ChatService::model_info() const {
  const auto& c = pipeline_.chatbot().config;
  return {200,
          {{"vocab_size", c.vocab_size},
           {"d_model", c.d_model},
           {"n_heads", c.n_heads},
           {"emotions", coarse_label_strings()}}};
}

std::shared_ptr<ChatService::Session> ChatService::session(const std::string& id) {
  std::lock_guard lock(sessions_mutex_);
  auto& slot = session_map_[id];
  if (!slot) slot = std::make_shared<Session>();
  return slot;
}

std::size_t ChatService::session_count() const {
  std::lock_guard lock(sessions_mutex_);
  return session_map_.size();
}

HttpResult ChatService::chat(const std::string& request_body) {
  const auto start = std::chrono::steady_clock::now();
  nlohmann::json req;
  try {
    req = nlohmann::json::parse(request_body);
  } catch (const nlohmann::json::parse_error&) {
    return bad_request("body is not valid JSON");
  }
  if (!req.is_object()) return bad_request("body must be a JSON object");
  if (!req.contains("text") || !req["text"].is_string()) return bad_request("missing string field 'text'");

  std::optional<std::size_t> override_id;
  if (req.contains("emotion_override") && !req["emotion_override"].is_null()) {
    if (!req["emotion_override"].is_string()) return bad_request("'emotion_override' must be a string");
    const auto label = req["emotion_override"].get<std::string>();
    override_id = EmotionTaxonomy::standard().find_coarse(label);
    if (!override_id) return bad_request("unknown emotion label '" + label + "'");
  }
  std::string session_id;
  if (req.contains("session_id") && !req["session_id"].is_null()) {
    if (!req["session_id"].is_string()) return bad_request("'session_id' must be a string");
    session_id = req["session_id"].get<std::string>();
  }

  ChatReply reply;
  try {
    const std::string text = req["text"].get<std::string>();
    if (sessions_ && !session_id.empty()) {
      auto s = session(session_id);
      std::lock_guard lock(s->mutex);
      reply = pipeline_.respond(text, override_id, &s->memory);
    } else {
      reply = pipeline_.respond(text, override_id);
    }
  } catch (const DataError& e) {
    return bad_request(e.what());
  }

  const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::steady_clock::now() - start);
  return {200,
          {{"emotion_coarse", coarse_label_strings()[reply.emotion_id]},
           {"emotion_probs", reply.emotion.probs},
           {"response", reply.response},
           {"token_count", reply.token_count},
           {"latency_ms", elapsed.count()}}};
}

void install_routes(httplib::Server& server, ChatService& service) {
  auto send = [](httplib::Response& res, const HttpResult& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  server.Get("/health", [&service, send](const httplib::Request&, httplib::Response& res) {
    send(res, service.health());
  });
  server.Get("/model-info", [&service, send](const httplib::Request&, httplib::Response& res) {
    send(res, service.model_info());
  });
  server.Post("/chat", [&service, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service.chat(req.body));
  });
  server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string message = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      message = e.what();
    } catch (...) {
    }
    res.status = 500;
    res.set_content(nlohmann::json{{"error", message}}.dump(), "application/json");
  });
}

bool serve_http(ChatService& service, const std::string& host, int port,
                const std::function<void(int)>& on_ready) {
  httplib::Server server;
  // httplib's default also sets SO_REUSEPORT, which lets a second server
  // share a busy port.
  server.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
  });
  install_routes(server, service);
  int bound = port;
  if (port == 0) {
    bound = server.bind_to_any_port(host);
    if (bound <= 0) return false;
  } else if (!server.bind_to_port(host, port)) {
    return false;
  }
  if (on_ready) on_ready(bound);
  return server.listen_after_bind();
}

}  // namespace eaxl
