#pragma once

#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>

#include <json.hpp>

#include "eaxl/pipeline.hpp"

namespace httplib {
class Server;
}

namespace eaxl {

struct HttpResult {
  int status = 200;
  nlohmann::json body;
};

/// The JSON endpoints, independent of any transport.
class ChatService {
 public:
  /// With `sessions`, requests carrying a session_id continue that session's
  /// encoder memory; otherwise every request starts fresh.
  ChatService(const Pipeline& pipeline, bool sessions);

  HttpResult health() const;
  HttpResult model_info() const;
  HttpResult chat(const std::string& request_body);

  std::size_t session_count() const;

 private:
  struct Session {
    std::mutex mutex;
    MemoryState memory;
  };
  std::shared_ptr<Session> session(const std::string& id);

  const Pipeline& pipeline_;
  bool sessions_;
  mutable std::mutex sessions_mutex_;
  std::unordered_map<std::string, std::shared_ptr<Session>> session_map_;
};

/// Registers the endpoints (and CORS headers) on an httplib server.
void install_routes(httplib::Server& server, ChatService& service);

/// Blocks serving on host:port. Returns false when the port cannot be bound.
/// `on_ready` runs once the socket is listening.
bool serve_http(ChatService& service, const std::string& host, int port,
                const std::function<void(int bound_port)>& on_ready = {});

}  // namespace eaxl
