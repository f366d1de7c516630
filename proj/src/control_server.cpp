#include "warden/control_server.hpp"

#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <charconv>
#include <condition_variable>
#include <deque>
#include <set>

namespace warden::server {

namespace {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace asio = boost::asio;
using tcp = asio::ip::tcp;
using nlohmann::json;
using nlohmann::ordered_json;

HttpReply reply(int status, const ordered_json& body) { return {status, body.dump()}; }

HttpReply error_reply(int status, std::string_view message) {
  return reply(status, ordered_json{{"error", std::string(message)}});
}

ordered_json session_json(const broker::DebugSession& s) {
  ordered_json j;
  j["extensionId"] = s.key.extension_id.str();
  j["targetId"] = s.key.target_id;
  j["state"] = s.state == broker::SessionState::kActive ? "active" : "detached";
  j["protocolVersion"] = s.protocol_version;
  j["openedAt"] = s.opened_at;
  j["detachReason"] = s.detach_reason;
  j["browserTarget"] = s.browser_target;
  j["queuedEvents"] = s.events.size();
  return j;
}

ordered_json event_frame(const mock::SourcedEvent& ev) {
  return {{"op", "event"}, {"targetId", ev.source_target}, {"message", cdp::to_json(ev.event)}};
}

}  // namespace

HttpReply handle_http(broker::Broker& broker, std::string_view method, std::string_view target,
                      std::string_view body, const std::filesystem::path& policy_base_dir) {
  if (auto q = target.find('?'); q != std::string_view::npos) target = target.substr(0, q);
  const bool get = method == "GET";

  auto list = [](const auto& items, auto&& fn) {
    ordered_json out = ordered_json::array();
    for (const auto& item : items) out.push_back(fn(item));
    return out;
  };

  if (target == "/api/targets") {
    if (!get) return error_reply(405, "method not allowed");
    return reply(200, list(broker.snapshot(), [](const auto& t) { return target::to_json(t); }));
  }
  if (target == "/api/sessions") {
    if (!get) return error_reply(405, "method not allowed");
    return reply(200, list(broker.sessions(), session_json));
  }
  if (target == "/api/extensions") {
    if (!get) return error_reply(405, "method not allowed");
    return reply(200, list(broker.extensions(), [](const auto& e) { return ordered_json(identity::to_json(e)); }));
  }
  if (target == "/api/audit") {
    if (!get) return error_reply(405, "method not allowed");
    return reply(200, list(broker.audit(), [](const auto& r) { return broker::to_json(r); }));
  }
  if (target == "/api/policy") {
    if (get) return reply(200, policy::to_json(broker.policy()));
    if (method != "PUT") return error_reply(405, "method not allowed");
    try {
      broker.set_policy(policy::policy_from_json(json::parse(body), policy_base_dir));
    } catch (const std::exception& e) {
      return error_reply(400, e.what());
    }
    return reply(200, policy::to_json(broker.policy()));
  }
  if (target == "/api/consent") {
    if (!get) return error_reply(405, "method not allowed");
    return reply(200, list(broker.consents(), [](const auto& c) { return broker::to_json(c); }));
  }
  constexpr std::string_view kConsentPrefix = "/api/consent/";
  if (target.starts_with(kConsentPrefix)) {
    if (method != "POST") return error_reply(405, "method not allowed");
    const std::string id(target.substr(kConsentPrefix.size()));
    std::string decision;
    try {
      const json doc = json::parse(body);
      decision = doc.at("decision").get<std::string>();
    } catch (const std::exception&) {
      return error_reply(400, "body must be {\"decision\": \"allow\" | \"deny\"}");
    }
    if (decision != "allow" && decision != "deny") return error_reply(400, "decision must be allow or deny");
    if (!broker.resolve_consent(id, decision == "allow")) return error_reply(404, "no pending consent request " + id);
    for (const auto& c : broker.consents()) {
      if (c.request_id == id) return reply(200, broker::to_json(c));
    }
    return error_reply(404, "no consent request " + id);
  }
  return error_reply(404, "not found");
}

std::vector<ordered_json> handle_client_op(broker::Broker& broker, ClientState& state, const json& op) {
  std::vector<ordered_json> out;
  ordered_json id = op.is_object() && op.contains("id") ? ordered_json(op["id"]) : ordered_json(nullptr);
  auto error = [&](std::string_view reason, const std::string& message) {
    out.push_back({{"op", "error"}, {"id", id}, {"reason", std::string(reason)}, {"message", message}});
  };

  try {
    if (!op.is_object() || !op.contains("op") || !op["op"].is_string()) {
      error("PROTOCOL_ERROR", "expected {\"op\": ...}");
      return out;
    }
    const std::string name = op["op"].get<std::string>();
    if (name == "getTargets") {
      ordered_json targets = ordered_json::array();
      for (const auto& t : broker.get_targets(state.extension_id)) targets.push_back(target::to_json(t));
      out.push_back({{"op", "result"}, {"id", id}, {"targets", targets}});
    } else if (name == "attach") {
      policy::TargetRef ref;
      if (op.contains("tabId") && op["tabId"].is_number_integer())
        ref = policy::TargetRef::by_tab(op["tabId"].get<int>());
      else if (op.contains("targetId") && op["targetId"].is_string())
        ref = policy::TargetRef::by_target(op["targetId"].get<std::string>());
      else {
        error("PROTOCOL_ERROR", "attach needs targetId or tabId");
        return out;
      }
      auto key = broker.attach(state.extension_id, ref, op.value("version", std::string(broker::kProtocolVersion)));
      state.sessions.insert_or_assign(key.target_id, key);
      out.push_back({{"op", "result"}, {"id", id}, {"targetId", key.target_id}});
    } else if (name == "sendCommand") {
      const std::string target_id = op.value("targetId", "");
      auto it = state.sessions.find(target_id);
      const broker::SessionKey key = it != state.sessions.end()
                                         ? it->second
                                         : broker::SessionKey{state.extension_id, target_id};
      if (!op.contains("message")) {
        error("PROTOCOL_ERROR", "sendCommand needs a message");
        return out;
      }
      const cdp::CdpMessage msg = cdp::parse_message(op["message"].dump());
      if (msg.kind != cdp::MessageKind::kCommand) {
        error("PROTOCOL_ERROR", "message must be a command");
        return out;
      }
      try {
        auto result = broker.send_command(key, msg.method, msg.params.value_or(cdp::Json::object()), msg.session_id);
        out.push_back({{"op", "result"},
                       {"id", id},
                       {"message", cdp::to_json(cdp::CdpMessage::success(*msg.id, std::move(result)))}});
      } catch (const broker::BrokerError& e) {
        if (e.protocol_code() == 0) throw;
        out.push_back({{"op", "result"},
                       {"id", id},
                       {"message", cdp::to_json(cdp::CdpMessage::failure(*msg.id, e.protocol_code(), e.what()))}});
      }
    } else if (name == "detach") {
      const std::string target_id = op.value("targetId", "");
      auto it = state.sessions.find(target_id);
      broker.detach(it != state.sessions.end() ? it->second : broker::SessionKey{state.extension_id, target_id});
      out.push_back({{"op", "result"}, {"id", id}});
    } else {
      error("PROTOCOL_ERROR", "unknown op " + name);
      return out;
    }
  } catch (const broker::BrokerError& e) {
    error(policy::to_string(e.reason()), e.what());
  } catch (const cdp::CodecError& e) {
    error("PROTOCOL_ERROR", e.what());
  }

  for (const auto& [target_id, key] : state.sessions) {
    try {
      for (const auto& ev : broker.take_events(key)) out.push_back(event_frame(ev));
    } catch (const broker::BrokerError&) {
    }
  }
  return out;
}

std::pair<std::string, std::uint16_t> parse_listen(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon == 0) throw std::invalid_argument("expected host:port");
  const std::string_view port_text = text.substr(colon + 1);
  unsigned value = 0;
  auto [ptr, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), value);
  if (ec != std::errc() || ptr != port_text.data() + port_text.size() || value > 65535 || port_text.empty())
    throw std::invalid_argument("bad port in " + std::string(text));
  return {std::string(text.substr(0, colon)), static_cast<std::uint16_t>(value)};
}

// --- socket server -----------------------------------------------------------

struct ControlServer::Impl {
  broker::Broker& broker;
  ServerOptions options;
  asio::io_context io;
  tcp::acceptor acceptor{io};
  std::thread accept_thread;
  std::mutex mu;
  std::vector<std::thread> workers;
  std::set<std::shared_ptr<tcp::socket>> live;
  std::atomic<bool> stopping{false};

  Impl(broker::Broker& b, ServerOptions o) : broker(b), options(std::move(o)) {}

  void accept_loop() {
    while (!stopping) {
      auto socket = std::make_shared<tcp::socket>(io);
      beast::error_code ec;
      acceptor.accept(*socket, ec);
      if (ec) {
        if (stopping) return;
        continue;
      }
      std::lock_guard lock(mu);
      if (stopping) return;
      live.insert(socket);
      workers.emplace_back([this, socket] {
        serve(*socket);
        std::lock_guard l(mu);
        live.erase(socket);
      });
    }
  }

  void serve(tcp::socket& socket) {
    try {
      beast::flat_buffer buffer;
      http::request<http::string_body> req;
      http::read(socket, buffer, req);
      const std::string target(req.target());
      if (websocket::is_upgrade(req)) {
        if (target == "/api/events") return serve_events(socket, req);
        constexpr std::string_view kClient = "/client/";
        if (target.starts_with(kClient)) {
          auto ext = identity::ExtensionId::parse(std::string_view(target).substr(kClient.size()));
          if (ext) return serve_client(socket, req, *ext);
        }
        return write_http(socket, req, error_reply(404, "no such socket"));
      }
      for (;;) {
        write_http(socket, req, handle_http(broker, std::string(req.method_string()), target, req.body(),
                                            options.policy_base_dir));
        if (!req.keep_alive()) break;
        req = {};
        http::read(socket, buffer, req);
      }
    } catch (const std::exception&) {
      // peer went away or the server is stopping
    }
    beast::error_code ec;
    socket.shutdown(tcp::socket::shutdown_both, ec);
  }

  static void write_http(tcp::socket& socket, const http::request<http::string_body>& req, const HttpReply& r) {
    http::response<http::string_body> res{static_cast<http::status>(r.status), req.version()};
    res.set(http::field::content_type, "application/json");
    res.keep_alive(req.keep_alive());
    res.body() = r.body;
    res.prepare_payload();
    http::write(socket, res);
  }

  void serve_events(tcp::socket& socket, const http::request<http::string_body>& req) {
    websocket::stream<tcp::socket&> ws(socket);
    ws.accept(req);
    ws.text(true);

    // Listeners run under the broker lock, so frames are only queued there.
    std::mutex qmu;
    std::condition_variable qcv;
    std::deque<std::string> queue;
    bool closed = false;
    const int token = broker.subscribe([&](const ordered_json& frame) {
      std::lock_guard l(qmu);
      queue.push_back(frame.dump());
      qcv.notify_one();
    });

    std::thread reader([&] {
      beast::flat_buffer buf;
      beast::error_code ec;
      while (!ec) ws.read(buf, ec), buf.clear();
      std::lock_guard l(qmu);
      closed = true;
      qcv.notify_one();
    });

    for (;;) {
      std::unique_lock l(qmu);
      qcv.wait(l, [&] { return closed || !queue.empty() || stopping; });
      if (closed || stopping) break;
      std::string frame = std::move(queue.front());
      queue.pop_front();
      l.unlock();
      beast::error_code ec;
      ws.write(asio::buffer(frame), ec);
      if (ec) break;
    }
    broker.unsubscribe(token);
    beast::error_code ec;
    socket.shutdown(tcp::socket::shutdown_both, ec);
    reader.join();
  }

  void serve_client(tcp::socket& socket, const http::request<http::string_body>& req, identity::ExtensionId ext) {
    websocket::stream<tcp::socket&> ws(socket);
    ws.accept(req);
    ws.text(true);
    ClientState state{std::move(ext), {}};
    beast::flat_buffer buf;
    for (;;) {
      beast::error_code ec;
      ws.read(buf, ec);
      if (ec) return;
      const std::string text = beast::buffers_to_string(buf.data());
      buf.clear();
      json op;
      try {
        op = json::parse(text);
      } catch (const json::parse_error& e) {
        op = json();  // handled as a protocol error below
      }
      for (const auto& frame : handle_client_op(broker, state, op)) {
        ws.write(asio::buffer(frame.dump()), ec);
        if (ec) return;
      }
    }
  }

  void shutdown() {
    stopping = true;
    beast::error_code ec;
    if (accept_thread.joinable()) {
      // A blocking accept() is not interrupted by close(); poke it instead.
      tcp::socket poke(io);
      auto endpoint = acceptor.local_endpoint(ec);
      if (!ec) {
        if (endpoint.address().is_unspecified()) endpoint.address(asio::ip::make_address("127.0.0.1"));
        poke.connect(endpoint, ec);
      }
      accept_thread.join();
    }
    acceptor.close(ec);
    std::vector<std::thread> threads;
    {
      std::lock_guard lock(mu);
      for (const auto& s : live) s->shutdown(tcp::socket::shutdown_both, ec);
    }
    {
      std::lock_guard lock(mu);
      threads.swap(workers);
    }
    for (auto& t : threads) t.join();
  }
};

ControlServer::ControlServer(broker::Broker& broker, ServerOptions options)
    : impl_(std::make_unique<Impl>(broker, std::move(options))) {}

ControlServer::~ControlServer() { stop(); }

void ControlServer::start() {
  const auto address = asio::ip::make_address(impl_->options.host);
  const tcp::endpoint endpoint(address, impl_->options.port);
  try {
    impl_->acceptor.open(endpoint.protocol());
    impl_->acceptor.set_option(asio::socket_base::reuse_address(true));
    impl_->acceptor.bind(endpoint);
    impl_->acceptor.listen();
  } catch (const boost::system::system_error& e) {
    beast::error_code ignored;
    impl_->acceptor.close(ignored);
    throw std::system_error(e.code().value(), std::generic_category(), "bind " + endpoint.address().to_string());
  }
  port_ = impl_->acceptor.local_endpoint().port();
  impl_->accept_thread = std::thread([this] { impl_->accept_loop(); });
}

void ControlServer::stop() {
  if (impl_ && !impl_->stopping) impl_->shutdown();
}

}  // namespace warden::server
