#pragma once

// Reference monitor for the Debugger API. Legacy mode reproduces the studied
// Chromium checks (including their holes); Hardened mode applies per-domain
// grants, trusted origins, runtime consent and a re-attach cooldown.
//
// All decision functions are pure.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"
#include "warden/cdp_codec.hpp"
#include "warden/extension_identity.hpp"
#include "warden/target_model.hpp"
#include "warden/world.hpp"

namespace warden::policy {

enum class Mode { kLegacy, kHardened };

std::string_view to_string(Mode mode);
std::optional<Mode> parse_mode(std::string_view text);

// Security requirements; SR01 is split into install-time and run-time.
enum class Sr { kSr01Install, kSr01Runtime, kSr02, kSr03, kSr04 };
using SrSet = std::set<Sr>;

std::string_view to_string(Sr sr);
std::optional<Sr> parse_sr(std::string_view text);
nlohmann::json to_json(const SrSet& set);
SrSet sr_set_from_json(const nlohmann::json& doc);

struct Flags {
  bool extensions_on_chrome_urls = false;
  bool silent_debugger_extension_api = false;
};

struct Fixes {
  bool fix_incognito_targets = false;
  bool fix_interstitial_attach = false;
};

struct HardenedConfig {
  std::map<std::string, std::set<std::string>> domain_grants;  // extension id -> domains
  std::int64_t reattach_cooldown_ms = 5000;
  bool consent_required = true;
  bool trusted_origins_only = true;
};

struct PolicyConfig {
  Mode mode = Mode::kLegacy;
  Flags flags;
  identity::AllowlistConfig allow;
  Fixes fixes;
  HardenedConfig hardened;
};

// Throws std::invalid_argument on schema problems. A string "allow" value is
// a path to an allowlist file, resolved against |base_dir|.
PolicyConfig policy_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
PolicyConfig load_policy(const std::filesystem::path& path);
nlohmann::ordered_json to_json(const PolicyConfig& policy);

// Names accepted by --fix.
bool apply_fix(Fixes& fixes, std::string_view name);

enum class Verdict { kAllow, kAllowPendingConsent, kDeny };

enum class Reason {
  kNone,
  kMissingPermission,
  kRestrictedUrl,
  kIncognitoDenied,
  kBrowserTargetDenied,
  kDomainNotGranted,
  kSessionIdForbidden,
  kUntrustedOrigin,
  kUnknownTarget,
  kSessionClosed,
  kReattachCooldown,
  kConsentDenied,
  kAlreadyAttached,
  kBadVersion,
  kProtocolError,
};

std::string_view to_string(Verdict verdict);
std::string_view to_string(Reason reason);
std::optional<Reason> parse_reason(std::string_view text);

struct Decision {
  Verdict verdict = Verdict::kAllow;
  Reason reason = Reason::kNone;
  std::string message;
  SrSet violated;
  std::vector<std::string> tags;

  static Decision allow(SrSet violated = {}, std::vector<std::string> tags = {});
  static Decision pending();
  static Decision deny(Reason reason, std::string message);

  bool denied() const { return verdict == Verdict::kDeny; }
};

struct TargetRef {
  std::variant<int, std::string> value;  // tab id or target id

  static TargetRef by_tab(int tab_id) { return {tab_id}; }
  static TargetRef by_target(std::string target_id) { return {std::move(target_id)}; }
  bool is_tab() const { return std::holds_alternative<int>(value); }
  std::string describe() const;
};

// What may_send_command needs to know about a session.
struct SessionContext {
  identity::ExtensionId extension_id;
  std::string target_id;
  bool browser_target = false;
};

// Domains reachable on the limited browser target handed to extensions.
const std::set<std::string>& legacy_browser_domains();

Decision may_attach(const identity::ExtensionRecord& ext, const TargetRef& ref,
                    const world::BrowserWorld& world, const PolicyConfig& policy);
Decision may_send_command(const SessionContext& session, const cdp::CdpMessage& msg,
                          const PolicyConfig& policy);
Decision may_run_script(const identity::ExtensionRecord& ext, std::string_view url,
                        const PolicyConfig& policy);
Decision annotate_install(const identity::ExtensionRecord& ext);

// SRs broken by traffic that reached |cls| through a proxy binding.
SrSet annotate_escalation(const target::PrivilegeClass& cls, bool undisclosed_incognito);

// Targets an extension could legitimately reach without any of the studied
// flaws: its own targets, plus regular (or opted-in file) tabs in contexts it
// may run in.
bool in_legitimate_scope(const identity::ExtensionRecord& ext, const world::PageNode& page,
                         const world::BrowserWorld& world);

}  // namespace warden::policy
