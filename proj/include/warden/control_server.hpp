#pragma once

// Loopback control API for the consent console and for extension clients:
//   GET  /api/targets | /api/sessions | /api/extensions | /api/policy | /api/consent | /api/audit
//   PUT  /api/policy
//   POST /api/consent/{requestId}   {"decision": "allow" | "deny"}
//   WS   /api/events                audit, consent and infobar frames
//   WS   /client/{extensionId}      getTargets / attach / sendCommand / detach
// One thread per connection; blocking consent waits only stall their own
// connection.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "json.hpp"
#include "warden/debugger_broker.hpp"

namespace warden::server {

struct HttpReply {
  int status = 200;
  std::string body;  // JSON
};

// Transport-free request handling, shared by the socket server and tests.
HttpReply handle_http(broker::Broker& broker, std::string_view method, std::string_view target,
                      std::string_view body, const std::filesystem::path& policy_base_dir = {});

// Per-connection state of an extension client.
struct ClientState {
  identity::ExtensionId extension_id;
  std::map<std::string, broker::SessionKey> sessions;  // targetId -> key
};

// One op in, one reply out; queued session events are appended as
// {"op":"event"} frames after the reply.
std::vector<nlohmann::ordered_json> handle_client_op(broker::Broker& broker, ClientState& state,
                                                     const nlohmann::json& op);

struct ServerOptions {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;  // 0 picks an ephemeral port
  std::filesystem::path policy_base_dir;
};

class ControlServer {
 public:
  ControlServer(broker::Broker& broker, ServerOptions options);
  ~ControlServer();
  ControlServer(const ControlServer&) = delete;
  ControlServer& operator=(const ControlServer&) = delete;

  // Binds and starts accepting; throws std::system_error when the address
  // is unavailable.
  void start();
  void stop();
  std::uint16_t port() const { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::uint16_t port_ = 0;
};

// "host:port" -> parts; throws std::invalid_argument.
std::pair<std::string, std::uint16_t> parse_listen(std::string_view text);

}  // namespace warden::server
