#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "warden/cdp_codec.hpp"
#include "warden/world.hpp"

namespace warden::mock {

enum class BrowserErrc {
  kMethodNotFound,
  kInvalidParams,
  kNoSuchTarget,
  kParseError,
  kNotFound,
  kNoSuchElement,
  kProceedNotApplicable,
};

std::string_view to_string(BrowserErrc code);

class BrowserError : public std::runtime_error {
 public:
  BrowserError(BrowserErrc code, const std::string& message) : std::runtime_error(message), code_(code) {}
  BrowserErrc code() const { return code_; }
  // JSON-RPC style code carried in protocol error responses.
  std::int64_t protocol_code() const;

 private:
  BrowserErrc code_;
};

// Where a command is executed.
struct Route {
  enum class Kind { kSession, kBrowser, kBindingRoot };
  Kind kind = Kind::kSession;
  std::string target_id;  // kSession
  std::string channel;    // kBindingRoot, or the channel a session command came through

  static Route session(std::string target_id) { return {Kind::kSession, std::move(target_id), {}}; }
  static Route browser() { return {Kind::kBrowser, {}, {}}; }
  static Route binding_root(std::string channel) { return {Kind::kBindingRoot, {}, std::move(channel)}; }
};

// An event together with the target it originated from.
struct SourcedEvent {
  std::string source_target;
  cdp::CdpMessage event;
};

struct CommandResult {
  cdp::Json result = cdp::Json::object();
  std::vector<SourcedEvent> events;
};

struct BindingReply {
  cdp::CdpMessage response;
  std::vector<SourcedEvent> events;
  std::optional<std::string> routed_target;  // target reached via sessionId
};

// The simulated browser backend. Not thread-safe; the broker serializes
// access.
class MockBrowser {
 public:
  explicit MockBrowser(world::BrowserWorld world);

  const world::BrowserWorld& world() const { return world_; }
  world::BrowserWorld& mutable_world() { return world_; }

  CommandResult handle_command(const Route& route, const cdp::CdpMessage& msg);

  // Grammar: get <key> | set <key> = <value> | click <id> | proceed | list
  std::string eval_expression(const std::string& target_id, std::string_view expression);

  // Raw text arriving on a binding installed in |proxy_target|. Transport
  // problems (no such binding, unparsable text) throw; command failures come
  // back as error responses.
  BindingReply binding_send(const std::string& proxy_target, const std::string& binding,
                            std::string_view text);

  bool has_binding(const std::string& proxy_target, const std::string& binding) const;
  // Target attached on |channel| under |session_id|.
  std::optional<std::string> channel_session_target(const std::string& channel,
                                                    const std::string& session_id) const;

  std::int64_t command_count() const { return command_count_; }
  bool tracing() const { return tracing_; }

 private:
  world::PageNode& page_for(const Route& route, const std::string& method);
  std::vector<SourcedEvent> traffic_events(const world::PageNode& page) const;

  world::BrowserWorld world_;
  std::int64_t command_count_ = 0;
  bool tracing_ = false;
  int next_channel_ = 1;
  int next_binding_session_ = 1;
  int next_fetch_request_ = 1;
  // channel -> (sessionId -> targetId)
  std::map<std::string, std::map<std::string, std::string>> channel_sessions_;
};

}  // namespace warden::mock
