#include "warden/policy_engine.hpp"

#include <fstream>
#include <stdexcept>

namespace warden::policy {

namespace {

using identity::ExtensionOrigin;
using identity::ExtensionRecord;
using nlohmann::json;
using nlohmann::ordered_json;
using target::ClassKind;
using target::PrivilegeClass;

constexpr const char* kNoTab = "No tab with given id.";

[[noreturn]] void bad_config(const std::string& message) {
  throw std::invalid_argument("policy: " + message);
}

bool read_bool(const json& obj, const char* key, bool fallback) {
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  if (!it->is_boolean()) bad_config(std::string(key) + " must be a boolean");
  return it->get<bool>();
}

// Simplified match patterns: "<all_urls>" or "scheme://host/path" where the
// scheme may be "*" (http/https) and the host "*" or "*.suffix".
bool pattern_matches(const std::string& pattern, std::string_view url) {
  const std::string scheme = target::url_scheme(url);
  if (pattern == "<all_urls>") return scheme == "http" || scheme == "https" || scheme == "file";

  auto sep = pattern.find("://");
  if (sep == std::string::npos) return false;
  const std::string p_scheme = pattern.substr(0, sep);
  std::string p_host = pattern.substr(sep + 3);
  p_host = p_host.substr(0, p_host.find('/'));

  if (p_scheme == "*") {
    if (scheme != "http" && scheme != "https") return false;
  } else if (p_scheme != scheme) {
    return false;
  }
  if (scheme == "file") return true;
  const std::string host = target::url_host(url);
  if (p_host == "*") return !host.empty();
  if (p_host.rfind("*.", 0) == 0) {
    const std::string suffix = p_host.substr(1);  // ".example.com"
    return host == p_host.substr(2) ||
           (host.size() > suffix.size() && host.compare(host.size() - suffix.size(), suffix.size(), suffix) == 0);
  }
  return host == p_host;
}

bool host_permission_allows(const ExtensionRecord& ext, std::string_view url) {
  for (const auto& pattern : ext.host_permissions) {
    if (pattern_matches(pattern, url)) return true;
  }
  return false;
}

bool can_execute_script_everywhere(const ExtensionRecord& ext, const PolicyConfig& policy) {
  if (ext.origin == ExtensionOrigin::kComponent) return true;
  return policy.allow.scripting_allowlist.contains(ext.id);
}

// Legacy scripting checks below the CanExecuteScriptEverywhere early return.
Decision legacy_script_chain(const ExtensionRecord& ext, std::string_view url, const PolicyConfig& policy) {
  const auto cls = target::classify_url(url, "script");
  const bool flag = policy.flags.extensions_on_chrome_urls;
  if (cls.kind == ClassKind::kWebUI && !flag)
    return Decision::deny(Reason::kRestrictedUrl, "Cannot access contents of the page: chrome:// URL");
  if (cls.kind == ClassKind::kExtension && cls.owner != ext.id.str() && !flag)
    return Decision::deny(Reason::kRestrictedUrl, "Cannot access a chrome-extension:// URL of a different extension");
  if (cls.kind == ClassKind::kExtension && cls.owner == ext.id.str()) return Decision::allow();
  if (cls.kind == ClassKind::kFile && !ext.file_access)
    return Decision::deny(Reason::kMissingPermission, "File access is not enabled for this extension");
  if (!host_permission_allows(ext, url))
    return Decision::deny(Reason::kMissingPermission, "Extension manifest must request permission to access this host");
  if (cls.kind == ClassKind::kWebUI) return Decision::allow({Sr::kSr03, Sr::kSr04});
  return Decision::allow();
}

Decision hardened_script_chain(const ExtensionRecord& ext, std::string_view url, const PolicyConfig& policy) {
  if (ext.origin == ExtensionOrigin::kComponent) return Decision::allow();
  if (identity::is_trusted(ext.origin) && policy.allow.scripting_allowlist.contains(ext.id))
    return Decision::allow();
  const auto cls = target::classify_url(url, "script");
  switch (cls.kind) {
    case ClassKind::kWebUI:
    case ClassKind::kInterstitial:
      return Decision::deny(Reason::kRestrictedUrl, "Cannot access contents of a browser-internal page");
    case ClassKind::kExtension:
      if (cls.owner != ext.id.str())
        return Decision::deny(Reason::kRestrictedUrl, "Cannot access a chrome-extension:// URL of a different extension");
      return Decision::allow();
    case ClassKind::kFile:
      if (!ext.file_access)
        return Decision::deny(Reason::kMissingPermission, "File access is not enabled for this extension");
      break;
    default:
      break;
  }
  if (!host_permission_allows(ext, url))
    return Decision::deny(Reason::kMissingPermission, "Extension manifest must request permission to access this host");
  return Decision::allow();
}

struct Resolved {
  const world::PageNode* page = nullptr;  // null for the browser target
  PrivilegeClass cls;
  bool incognito = false;
};

std::optional<Resolved> resolve(const TargetRef& ref, const world::BrowserWorld& world) {
  Resolved r;
  if (ref.is_tab()) {
    r.page = world.find_tab(std::get<int>(ref.value));
  } else {
    const auto& id = std::get<std::string>(ref.value);
    if (id == target::kBrowserTargetId) {
      r.cls = {ClassKind::kBrowserTarget, {}};
      return r;
    }
    r.page = world.find_page(id);
  }
  if (!r.page) return std::nullopt;
  r.cls = target::classify_url(r.page->url, r.page->target_id);
  r.incognito = world.is_incognito(r.page->context_id);
  return r;
}

Decision legacy_attach(const ExtensionRecord& ext, const TargetRef& ref, const Resolved& t,
                       const PolicyConfig& policy) {
  SrSet srs;
  if (t.incognito && !ext.incognito_allowed) {
    // The tabId path validates the context; the targetId path did not.
    if (ref.is_tab()) return Decision::deny(Reason::kUnknownTarget, kNoTab);
    if (policy.fixes.fix_incognito_targets)
      return Decision::deny(Reason::kIncognitoDenied, "Target belongs to an incognito context");
    srs.insert(Sr::kSr02);
  }

  switch (t.cls.kind) {
    case ClassKind::kRegular:
      return Decision::allow(srs);
    case ClassKind::kFile:
      if (!ext.file_access)
        return Decision::deny(Reason::kRestrictedUrl, "File access is not enabled for this extension");
      return Decision::allow(srs);
    case ClassKind::kInterstitial:
      if (policy.fixes.fix_interstitial_attach)
        return Decision::deny(Reason::kRestrictedUrl, "Cannot attach to an interstitial page");
      srs.insert({Sr::kSr03, Sr::kSr04});
      return Decision::allow(srs);
    case ClassKind::kWebUI:
      return Decision::deny(Reason::kRestrictedUrl, "Cannot attach to a chrome:// URL");
    case ClassKind::kExtension:
      if (t.cls.owner == ext.id.str()) return Decision::allow(srs);
      // IsRestrictedUrl(): script-everywhere extensions and the flag both
      // lift the restriction on other extensions.
      if (policy.flags.extensions_on_chrome_urls || can_execute_script_everywhere(ext, policy)) {
        srs.insert(Sr::kSr03);
        return Decision::allow(srs);
      }
      return Decision::deny(Reason::kRestrictedUrl, "Cannot access a chrome-extension:// URL of a different extension");
    case ClassKind::kBrowserTarget:
      if (!policy.allow.browser_target_allowlist.contains(ext.id))
        return Decision::deny(Reason::kBrowserTargetDenied, "Extension may not attach to the browser target");
      if (!identity::is_trusted(ext.origin)) srs.insert(Sr::kSr03);
      return Decision::allow(srs);
    case ClassKind::kUnknown:
      break;
  }
  return Decision::deny(Reason::kRestrictedUrl, "Cannot attach to this URL");
}

Decision hardened_attach(const ExtensionRecord& ext, const Resolved& t, const PolicyConfig& policy) {
  const auto& h = policy.hardened;
  if (h.trusted_origins_only && identity::is_sideloaded(ext.origin))
    return Decision::deny(Reason::kUntrustedOrigin, "debugger is restricted to trusted install origins");
  if (t.incognito && !ext.incognito_allowed)
    return Decision::deny(Reason::kIncognitoDenied, "Target belongs to an incognito context");

  bool ok = false;
  switch (t.cls.kind) {
    case ClassKind::kRegular: ok = true; break;
    case ClassKind::kExtension: ok = t.cls.owner == ext.id.str(); break;
    case ClassKind::kFile: ok = ext.file_access; break;
    case ClassKind::kBrowserTarget:
      return Decision::deny(Reason::kBrowserTargetDenied, "Extension may not attach to the browser target");
    default: break;
  }
  if (!ok) return Decision::deny(Reason::kRestrictedUrl, "Target is outside the extension's scope");
  return h.consent_required ? Decision::pending() : Decision::allow();
}

}  // namespace

std::string_view to_string(Mode mode) { return mode == Mode::kLegacy ? "legacy" : "hardened"; }

std::optional<Mode> parse_mode(std::string_view text) {
  if (text == "legacy") return Mode::kLegacy;
  if (text == "hardened") return Mode::kHardened;
  return std::nullopt;
}

std::string_view to_string(Sr sr) {
  switch (sr) {
    case Sr::kSr01Install: return "SR01_INSTALL";
    case Sr::kSr01Runtime: return "SR01_RUNTIME";
    case Sr::kSr02: return "SR02";
    case Sr::kSr03: return "SR03";
    case Sr::kSr04: return "SR04";
  }
  return "?";
}

std::optional<Sr> parse_sr(std::string_view text) {
  for (auto sr : {Sr::kSr01Install, Sr::kSr01Runtime, Sr::kSr02, Sr::kSr03, Sr::kSr04}) {
    if (to_string(sr) == text) return sr;
  }
  return std::nullopt;
}

json to_json(const SrSet& set) {
  json out = json::array();
  for (auto sr : set) out.push_back(to_string(sr));
  return out;
}

SrSet sr_set_from_json(const json& doc) {
  if (!doc.is_array()) throw std::invalid_argument("SR set must be an array");
  SrSet out;
  for (const auto& v : doc) {
    auto sr = v.is_string() ? parse_sr(v.get<std::string>()) : std::nullopt;
    if (!sr) throw std::invalid_argument("unknown SR " + v.dump());
    out.insert(*sr);
  }
  return out;
}

PolicyConfig policy_from_json(const json& doc, const std::filesystem::path& base_dir) {
  if (!doc.is_object()) bad_config("document must be an object");
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    static const std::set<std::string> known = {"mode", "flags", "allow", "fixes", "hardened"};
    if (!known.contains(it.key())) bad_config("unknown key '" + it.key() + "'");
  }
  PolicyConfig p;
  if (auto it = doc.find("mode"); it != doc.end()) {
    auto mode = it->is_string() ? parse_mode(it->get<std::string>()) : std::nullopt;
    if (!mode) bad_config("mode must be \"legacy\" or \"hardened\"");
    p.mode = *mode;
  }
  if (auto it = doc.find("flags"); it != doc.end()) {
    if (!it->is_object()) bad_config("flags must be an object");
    p.flags.extensions_on_chrome_urls = read_bool(*it, "extensionsOnChromeUrls", false);
    p.flags.silent_debugger_extension_api = read_bool(*it, "silentDebuggerExtensionApi", false);
  }
  if (auto it = doc.find("allow"); it != doc.end()) {
    try {
      if (it->is_string()) {
        std::filesystem::path path = it->get<std::string>();
        if (path.is_relative() && !base_dir.empty()) path = base_dir / path;
        p.allow = identity::load_allowlist(path);
      } else {
        p.allow = identity::allowlist_from_json(*it);
      }
    } catch (const identity::IdentityError& e) {
      bad_config(std::string("allow: ") + e.what());
    }
  }
  if (auto it = doc.find("fixes"); it != doc.end()) {
    if (!it->is_object()) bad_config("fixes must be an object");
    p.fixes.fix_incognito_targets = read_bool(*it, "fixIncognitoTargets", false);
    p.fixes.fix_interstitial_attach = read_bool(*it, "fixInterstitialAttach", false);
  }
  if (auto it = doc.find("hardened"); it != doc.end()) {
    if (!it->is_object()) bad_config("hardened must be an object");
    auto& h = p.hardened;
    if (auto g = it->find("domainGrants"); g != it->end()) {
      if (!g->is_object()) bad_config("domainGrants must be an object");
      for (auto e = g->begin(); e != g->end(); ++e) {
        if (!identity::ExtensionId::parse(e.key())) bad_config("domainGrants key is not an extension id");
        if (!e.value().is_array()) bad_config("domainGrants values must be arrays");
        auto& set = h.domain_grants[e.key()];
        for (const auto& d : e.value()) {
          if (!d.is_string()) bad_config("domain names must be strings");
          set.insert(d.get<std::string>());
        }
      }
    }
    if (auto c = it->find("reattachCooldownMs"); c != it->end()) {
      if (!c->is_number_integer() || c->get<std::int64_t>() < 0)
        bad_config("reattachCooldownMs must be a non-negative integer");
      h.reattach_cooldown_ms = c->get<std::int64_t>();
    }
    h.consent_required = read_bool(*it, "consentRequired", h.consent_required);
    h.trusted_origins_only = read_bool(*it, "trustedOriginsOnly", h.trusted_origins_only);
  }
  return p;
}

PolicyConfig load_policy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("policy: cannot read " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument("policy: " + path.string() + ": " + e.what());
  }
  return policy_from_json(doc, path.parent_path());
}

ordered_json to_json(const PolicyConfig& p) {
  ordered_json out;
  out["mode"] = to_string(p.mode);
  out["flags"] = {{"extensionsOnChromeUrls", p.flags.extensions_on_chrome_urls},
                  {"silentDebuggerExtensionApi", p.flags.silent_debugger_extension_api}};
  out["allow"] = identity::to_json(p.allow);
  out["fixes"] = {{"fixIncognitoTargets", p.fixes.fix_incognito_targets},
                  {"fixInterstitialAttach", p.fixes.fix_interstitial_attach}};
  ordered_json grants = ordered_json::object();
  for (const auto& [id, domains] : p.hardened.domain_grants) grants[id] = domains;
  out["hardened"] = {{"domainGrants", grants},
                     {"reattachCooldownMs", p.hardened.reattach_cooldown_ms},
                     {"consentRequired", p.hardened.consent_required},
                     {"trustedOriginsOnly", p.hardened.trusted_origins_only}};
  return out;
}

bool apply_fix(Fixes& fixes, std::string_view name) {
  if (name == "fixIncognitoTargets" || name == "incognito-targets") {
    fixes.fix_incognito_targets = true;
    return true;
  }
  if (name == "fixInterstitialAttach" || name == "interstitial-attach") {
    fixes.fix_interstitial_attach = true;
    return true;
  }
  return false;
}

std::string_view to_string(Verdict verdict) {
  switch (verdict) {
    case Verdict::kAllow: return "Allow";
    case Verdict::kAllowPendingConsent: return "AllowPendingConsent";
    case Verdict::kDeny: return "Deny";
  }
  return "Deny";
}

namespace {
constexpr std::pair<Reason, std::string_view> kReasonNames[] = {
    {Reason::kNone, ""},
    {Reason::kMissingPermission, "MISSING_PERMISSION"},
    {Reason::kRestrictedUrl, "RESTRICTED_URL"},
    {Reason::kIncognitoDenied, "INCOGNITO_DENIED"},
    {Reason::kBrowserTargetDenied, "BROWSER_TARGET_DENIED"},
    {Reason::kDomainNotGranted, "DOMAIN_NOT_GRANTED"},
    {Reason::kSessionIdForbidden, "SESSIONID_FORBIDDEN"},
    {Reason::kUntrustedOrigin, "UNTRUSTED_ORIGIN"},
    {Reason::kUnknownTarget, "UNKNOWN_TARGET"},
    {Reason::kSessionClosed, "SESSION_CLOSED"},
    {Reason::kReattachCooldown, "REATTACH_COOLDOWN"},
    {Reason::kConsentDenied, "CONSENT_DENIED"},
    {Reason::kAlreadyAttached, "ALREADY_ATTACHED"},
    {Reason::kBadVersion, "BAD_VERSION"},
    {Reason::kProtocolError, "PROTOCOL_ERROR"},
};
}  // namespace

std::string_view to_string(Reason reason) {
  for (const auto& [r, name] : kReasonNames) {
    if (r == reason) return name;
  }
  return "";
}

std::optional<Reason> parse_reason(std::string_view text) {
  for (const auto& [r, name] : kReasonNames) {
    if (name == text) return r;
  }
  return std::nullopt;
}

Decision Decision::allow(SrSet violated, std::vector<std::string> tags) {
  Decision d;
  d.violated = std::move(violated);
  d.tags = std::move(tags);
  return d;
}

Decision Decision::pending() {
  Decision d;
  d.verdict = Verdict::kAllowPendingConsent;
  return d;
}

Decision Decision::deny(Reason reason, std::string message) {
  Decision d;
  d.verdict = Verdict::kDeny;
  d.reason = reason;
  d.message = std::move(message);
  return d;
}

std::string TargetRef::describe() const {
  if (is_tab()) return "tabId=" + std::to_string(std::get<int>(value));
  return "targetId=" + std::get<std::string>(value);
}

const std::set<std::string>& legacy_browser_domains() {
  static const std::set<std::string> domains = {"Browser", "Fetch", "Target", "Tracing"};
  return domains;
}

Decision may_attach(const ExtensionRecord& ext, const TargetRef& ref, const world::BrowserWorld& world,
                    const PolicyConfig& policy) {
  if (!ext.has_permission("debugger"))
    return Decision::deny(Reason::kMissingPermission, "Extension lacks the debugger permission");
  auto resolved = resolve(ref, world);
  if (!resolved) {
    return Decision::deny(Reason::kUnknownTarget,
                          ref.is_tab() ? kNoTab : "No target with given id " + std::get<std::string>(ref.value));
  }
  if (policy.mode == Mode::kLegacy) return legacy_attach(ext, ref, *resolved, policy);
  return hardened_attach(ext, *resolved, policy);
}

Decision may_send_command(const SessionContext& session, const cdp::CdpMessage& msg, const PolicyConfig& policy) {
  if (msg.session_id)
    return Decision::deny(Reason::kSessionIdForbidden, "sessionId cannot be sent through the debugger API");
  if (!cdp::is_valid_method(msg.method))
    return Decision::deny(Reason::kProtocolError, "invalid method name '" + msg.method + "'");
  const auto [domain, command] = cdp::split_method(msg.method);

  if (policy.mode == Mode::kHardened) {
    auto it = policy.hardened.domain_grants.find(session.extension_id.str());
    if (it == policy.hardened.domain_grants.end() || !it->second.contains(domain))
      return Decision::deny(Reason::kDomainNotGranted, "Domain " + domain + " is not granted to this extension");
    return Decision::allow();
  }

  SrSet srs;
  if (session.browser_target) {
    if (!legacy_browser_domains().contains(domain))
      return Decision::deny(Reason::kDomainNotGranted, "'" + msg.method + "' wasn't found");
    if (msg.method == "Target.getTargets" || msg.method == "Target.exposeDevToolsProtocol" ||
        msg.method == "Fetch.enable" || msg.method == "Tracing.start")
      srs.insert(Sr::kSr03);
  } else if (domain == "Target") {
    return Decision::deny(Reason::kDomainNotGranted, "Target domain is not available to extension sessions");
  }
  if (msg.method == "Network.getAllCookies" || msg.method == "Browser.grantPermissions") srs.insert(Sr::kSr03);
  return Decision::allow(srs);
}

Decision may_run_script(const ExtensionRecord& ext, std::string_view url, const PolicyConfig& policy) {
  if (policy.mode == Mode::kHardened) return hardened_script_chain(ext, url, policy);

  if (!can_execute_script_everywhere(ext, policy)) return legacy_script_chain(ext, url, policy);
  if (identity::is_trusted(ext.origin)) return Decision::allow();
  // A clone inherits the exemption; report what the exemption bypassed.
  Decision rest = legacy_script_chain(ext, url, policy);
  if (!rest.denied()) return Decision::allow(rest.violated, {"scripting-allowlist"});
  SrSet srs{Sr::kSr03};
  const auto kind = target::classify_url(url, "script").kind;
  if (kind == ClassKind::kWebUI || kind == ClassKind::kInterstitial) srs.insert(Sr::kSr04);
  return Decision::allow(srs, {"scripting-allowlist"});
}

Decision annotate_install(const ExtensionRecord& ext) {
  if (!ext.has_permission("debugger")) return Decision::allow();
  return Decision::allow({Sr::kSr01Install}, {"vague-install-warning"});
}

SrSet annotate_escalation(const PrivilegeClass& cls, bool undisclosed_incognito) {
  SrSet srs{Sr::kSr03};
  if (cls.kind == ClassKind::kWebUI || cls.kind == ClassKind::kInterstitial) srs.insert(Sr::kSr04);
  if (undisclosed_incognito) srs.insert(Sr::kSr02);
  return srs;
}

bool in_legitimate_scope(const ExtensionRecord& ext, const world::PageNode& page,
                         const world::BrowserWorld& world) {
  const auto cls = target::classify_url(page.url, page.target_id);
  if (cls.kind == ClassKind::kExtension) return cls.owner == ext.id.str();
  if (world.is_incognito(page.context_id) && !ext.incognito_allowed) return false;
  if (cls.kind == ClassKind::kRegular) return true;
  return cls.kind == ClassKind::kFile && ext.file_access;
}

}  // namespace warden::policy
