#pragma once

// The Debugger-API surface: target listing, attach/detach, command
// mediation, infobars, runtime consent and the audit log. Every public call
// is serialized through one lock; manual consent waits release it.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "warden/cdp_codec.hpp"
#include "warden/clock.hpp"
#include "warden/extension_identity.hpp"
#include "warden/mock_browser.hpp"
#include "warden/policy_engine.hpp"
#include "warden/target_model.hpp"
#include "warden/world.hpp"

namespace warden::broker {

inline constexpr const char* kProtocolVersion = "1.3";

struct SessionKey {
  identity::ExtensionId extension_id;
  std::string target_id;

  auto operator<=>(const SessionKey&) const = default;
};

enum class SessionState { kActive, kDetached };

struct DebugSession {
  explicit DebugSession(SessionKey k) : key(std::move(k)) {}

  SessionKey key;
  std::string protocol_version;
  SessionState state = SessionState::kActive;
  std::string detach_reason;
  std::int64_t opened_at = 0;
  bool browser_target = false;
  std::deque<mock::SourcedEvent> events;
};

struct InfobarState {
  bool visible = false;
  std::set<std::string> attached_targets;
  std::optional<std::int64_t> last_cancel_at;
};

struct AuditRecord {
  std::int64_t seq = 0;
  std::int64_t ts = 0;
  std::string extension_id;
  std::string action;
  std::optional<std::string> target_id;
  std::optional<std::string> method;
  policy::Verdict decision = policy::Verdict::kAllow;
  policy::Reason reason = policy::Reason::kNone;
  std::string message;
  policy::SrSet violated;
  std::string policy_mode;
  std::vector<std::string> tags;

  bool operator==(const AuditRecord&) const = default;
};

nlohmann::ordered_json to_json(const AuditRecord& record);
AuditRecord audit_from_json(const nlohmann::json& doc);

enum class ConsentMode { kManual, kAutoAllow, kAutoDeny };
std::string_view to_string(ConsentMode mode);
std::optional<ConsentMode> parse_consent_mode(std::string_view text);

enum class ConsentState { kPending, kApproved, kDenied, kTimedOut };
std::string_view to_string(ConsentState state);

struct ConsentRequest {
  std::string request_id;
  std::string extension_id;
  std::string target_id;
  std::int64_t created_at = 0;
  ConsentState state = ConsentState::kPending;
};

nlohmann::ordered_json to_json(const ConsentRequest& request);

class BrokerError : public std::runtime_error {
 public:
  BrokerError(policy::Reason reason, const std::string& message, std::int64_t protocol_code = 0)
      : std::runtime_error(message), reason_(reason), protocol_code_(protocol_code) {}
  policy::Reason reason() const { return reason_; }
  // Non-zero when the mock browser rejected the command itself.
  std::int64_t protocol_code() const { return protocol_code_; }

 private:
  policy::Reason reason_;
  std::int64_t protocol_code_;
};

struct BrokerOptions {
  ConsentMode consent = ConsentMode::kAutoDeny;
  std::chrono::milliseconds consent_timeout{30'000};
  std::optional<std::filesystem::path> audit_log;
  // Not owned; defaults to a process-wide SystemClock.
  const Clock* clock = nullptr;
};

using FrameListener = std::function<void(const nlohmann::ordered_json&)>;

class Broker {
 public:
  Broker(world::BrowserWorld world, policy::PolicyConfig policy, BrokerOptions options = {});
  Broker(const Broker&) = delete;
  Broker& operator=(const Broker&) = delete;

  // Installs an extension into the running browser and records the
  // install-time annotation. Returns the extension's background targetId.
  std::string install(identity::ExtensionRecord record,
                      const nlohmann::json& target = nlohmann::json::object());

  std::vector<target::TargetInfo> get_targets(const identity::ExtensionId& ext);
  SessionKey attach(const identity::ExtensionId& ext, const policy::TargetRef& ref,
                    const std::string& version);
  std::size_t cancel_infobar(const identity::ExtensionId& ext);
  cdp::Json send_command(const SessionKey& key, const std::string& method,
                         const cdp::Json& params = cdp::Json::object(),
                         const std::optional<std::string>& session_id = std::nullopt);
  void detach(const SessionKey& key);
  // Pending events for a session in FIFO order; drains the queue.
  std::vector<mock::SourcedEvent> take_events(const SessionKey& key);

  // chrome.scripting-style injection into any page.
  std::string run_script(const identity::ExtensionId& ext, const std::string& target_id,
                         const std::string& expression);
  // Posts |text| to window.<binding> inside the tab behind |proxy|; the
  // response and any events come back through the proxy session.
  cdp::CdpMessage binding_send(const SessionKey& proxy, const std::string& binding,
                               const std::string& text);

  // Control surface.
  std::vector<target::TargetInfo> snapshot() const;
  std::vector<DebugSession> sessions() const;
  std::vector<identity::ExtensionRecord> extensions() const;
  policy::PolicyConfig policy() const;
  void set_policy(policy::PolicyConfig policy);
  std::vector<ConsentRequest> consents() const;
  // False when the request does not exist or is no longer pending.
  bool resolve_consent(const std::string& request_id, bool allow);
  std::vector<AuditRecord> audit() const;
  InfobarState infobar(const identity::ExtensionId& ext) const;
  world::BrowserWorld world() const;
  ConsentMode consent_mode() const { return options_.consent; }

  int subscribe(FrameListener listener);
  void unsubscribe(int token);

 private:
  using Lock = std::unique_lock<std::mutex>;

  const identity::ExtensionRecord& extension_or_throw(const identity::ExtensionId& ext,
                                                      const std::string& action,
                                                      const std::optional<std::string>& target);
  void append_audit(AuditRecord record);
  [[noreturn]] void deny(const std::string& ext, const std::string& action, const std::optional<std::string>& target,
            const std::optional<std::string>& method, const policy::Decision& decision);
  void emit(const nlohmann::ordered_json& frame);
  void emit_infobar(const identity::ExtensionId& ext);
  void refresh_infobar(const identity::ExtensionId& ext);
  void close_session(DebugSession& session, const std::string& reason);
  void sync_flag_mirrors_to_world();
  void sync_flags_from_world();
  void revalidate_sessions();
  DebugSession* active_session(const SessionKey& key);
  bool discloses_incognito(const identity::ExtensionRecord& ext,
                           const std::vector<mock::SourcedEvent>& events) const;
  bool await_consent(Lock& lock, const std::string& ext, const std::string& target_id);
  std::map<std::string, int> attached_counts() const;

  mutable std::mutex mu_;
  std::condition_variable consent_cv_;
  mock::MockBrowser browser_;
  policy::PolicyConfig policy_;
  BrokerOptions options_;
  const Clock* clock_;
  std::map<SessionKey, DebugSession> sessions_;
  std::map<std::string, InfobarState> infobars_;
  std::vector<AuditRecord> audit_;
  std::ofstream audit_file_;
  std::vector<ConsentRequest> consents_;
  std::map<int, FrameListener> listeners_;
  int next_listener_ = 1;
  int next_consent_ = 1;
  std::int64_t next_command_id_ = 1;
};

}  // namespace warden::broker
