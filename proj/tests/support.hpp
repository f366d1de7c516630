#pragma once

// Fixtures shared by the unit suite and the acceptance binary.

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "warden/clock.hpp"
#include "warden/debugger_broker.hpp"
#include "warden/policy_engine.hpp"
#include "warden/scenario_harness.hpp"
#include "warden/world.hpp"

namespace warden::testing {

inline std::filesystem::path source_dir() { return WARDEN_SOURCE_DIR; }
inline std::filesystem::path scenarios_dir() { return source_dir() / "scenarios"; }

inline policy::PolicyConfig repo_policy() { return policy::load_policy(source_dir() / "config" / "policy.json"); }

inline std::string describe(const policy::Decision& d) {
  switch (d.verdict) {
    case policy::Verdict::kDeny: return std::string(policy::to_string(d.reason));
    case policy::Verdict::kAllowPendingConsent: return "Pending";
    case policy::Verdict::kAllow: break;
  }
  std::string out = "Allow";
  if (d.violated.empty()) return out;
  out += "{";
  bool first = true;
  for (auto sr : d.violated) {
    if (!first) out += ",";
    out += policy::to_string(sr);
    first = false;
  }
  return out + "}";
}

// --- Legacy decision table ----------------------------------------------------

enum class Listed { kNone, kScripting, kBrowserTarget };

struct DecisionRow {
  target::ClassKind cls;
  bool flag;  // extensions-on-chrome-urls
  Listed listed;
  const char* attach;
  const char* script;  // "-" where scripting has no meaning
};

using target::ClassKind;
constexpr const char* kAllow = "Allow";
constexpr const char* kRestricted = "RESTRICTED_URL";
constexpr const char* kMissing = "MISSING_PERMISSION";

// Attacker: sideloaded, debugger + scripting, <all_urls> and chrome://*/*,
// no file access, no incognito access.
inline const std::vector<DecisionRow>& decision_table() {
  static const std::vector<DecisionRow> rows = {
      {ClassKind::kRegular, false, Listed::kNone, kAllow, kAllow},
      {ClassKind::kRegular, false, Listed::kScripting, kAllow, kAllow},
      {ClassKind::kRegular, false, Listed::kBrowserTarget, kAllow, kAllow},
      {ClassKind::kRegular, true, Listed::kNone, kAllow, kAllow},
      {ClassKind::kRegular, true, Listed::kScripting, kAllow, kAllow},
      {ClassKind::kRegular, true, Listed::kBrowserTarget, kAllow, kAllow},

      {ClassKind::kFile, false, Listed::kNone, kRestricted, kMissing},
      {ClassKind::kFile, false, Listed::kScripting, kRestricted, "Allow{SR03}"},
      {ClassKind::kFile, false, Listed::kBrowserTarget, kRestricted, kMissing},
      {ClassKind::kFile, true, Listed::kNone, kRestricted, kMissing},
      {ClassKind::kFile, true, Listed::kScripting, kRestricted, "Allow{SR03}"},
      {ClassKind::kFile, true, Listed::kBrowserTarget, kRestricted, kMissing},

      {ClassKind::kInterstitial, false, Listed::kNone, "Allow{SR03,SR04}", kMissing},
      {ClassKind::kInterstitial, false, Listed::kScripting, "Allow{SR03,SR04}", "Allow{SR03,SR04}"},
      {ClassKind::kInterstitial, false, Listed::kBrowserTarget, "Allow{SR03,SR04}", kMissing},
      {ClassKind::kInterstitial, true, Listed::kNone, "Allow{SR03,SR04}", kMissing},
      {ClassKind::kInterstitial, true, Listed::kScripting, "Allow{SR03,SR04}", "Allow{SR03,SR04}"},
      {ClassKind::kInterstitial, true, Listed::kBrowserTarget, "Allow{SR03,SR04}", kMissing},

      {ClassKind::kWebUI, false, Listed::kNone, kRestricted, kRestricted},
      {ClassKind::kWebUI, false, Listed::kScripting, kRestricted, "Allow{SR03,SR04}"},
      {ClassKind::kWebUI, false, Listed::kBrowserTarget, kRestricted, kRestricted},
      {ClassKind::kWebUI, true, Listed::kNone, kRestricted, "Allow{SR03,SR04}"},
      {ClassKind::kWebUI, true, Listed::kScripting, kRestricted, "Allow{SR03,SR04}"},
      {ClassKind::kWebUI, true, Listed::kBrowserTarget, kRestricted, "Allow{SR03,SR04}"},

      {ClassKind::kExtension, false, Listed::kNone, kRestricted, kRestricted},
      {ClassKind::kExtension, false, Listed::kScripting, "Allow{SR03}", "Allow{SR03}"},
      {ClassKind::kExtension, false, Listed::kBrowserTarget, kRestricted, kRestricted},
      {ClassKind::kExtension, true, Listed::kNone, "Allow{SR03}", kMissing},
      {ClassKind::kExtension, true, Listed::kScripting, "Allow{SR03}", "Allow{SR03}"},
      {ClassKind::kExtension, true, Listed::kBrowserTarget, "Allow{SR03}", kMissing},

      {ClassKind::kBrowserTarget, false, Listed::kNone, "BROWSER_TARGET_DENIED", "-"},
      {ClassKind::kBrowserTarget, false, Listed::kScripting, "BROWSER_TARGET_DENIED", "-"},
      {ClassKind::kBrowserTarget, false, Listed::kBrowserTarget, "Allow{SR03}", "-"},
      {ClassKind::kBrowserTarget, true, Listed::kNone, "BROWSER_TARGET_DENIED", "-"},
      {ClassKind::kBrowserTarget, true, Listed::kScripting, "BROWSER_TARGET_DENIED", "-"},
      {ClassKind::kBrowserTarget, true, Listed::kBrowserTarget, "Allow{SR03}", "-"},

      {ClassKind::kUnknown, false, Listed::kNone, kRestricted, kMissing},
      {ClassKind::kUnknown, false, Listed::kScripting, kRestricted, "Allow{SR03}"},
      {ClassKind::kUnknown, false, Listed::kBrowserTarget, kRestricted, kMissing},
      {ClassKind::kUnknown, true, Listed::kNone, kRestricted, kMissing},
      {ClassKind::kUnknown, true, Listed::kScripting, kRestricted, "Allow{SR03}"},
      {ClassKind::kUnknown, true, Listed::kBrowserTarget, kRestricted, kMissing},
  };
  return rows;
}

// One tab per class, a foreign extension, and an incognito tab.
inline world::BrowserWorld decision_world() {
  return world::build_world(nlohmann::json::parse(R"({
    "contexts": [{"id": "default"}, {"id": "incognito-1", "incognito": true}],
    "tabs": [
      {"url": "https://news.example/"},
      {"url": "file:///home/u/notes.txt"},
      {"url": "chrome-error://chromewebdata/", "pendingUrl": "https://expired.example/", "interstitialKind": "tls"},
      {"url": "chrome://settings/"},
      {"url": "ftp://files.example/pub"},
      {"url": "https://private.example/", "context": "incognito-1"}
    ],
    "extensions": [
      {"name": "Victim", "origin": "sideloaded-unpacked", "installPath": "/home/u/victim"}
    ]
  })"));
}

inline std::string decision_target(ClassKind cls) {
  switch (cls) {
    case ClassKind::kRegular: return "t1";
    case ClassKind::kFile: return "t2";
    case ClassKind::kInterstitial: return "t3";
    case ClassKind::kWebUI: return "t4";
    case ClassKind::kUnknown: return "t5";
    case ClassKind::kExtension: return "t7";
    case ClassKind::kBrowserTarget: return std::string(target::kBrowserTargetId);
  }
  return {};
}

inline identity::ExtensionRecord decision_attacker() {
  return identity::record_from_description(nlohmann::json::parse(R"({
    "name": "Probe", "origin": "sideloaded-unpacked", "installPath": "/home/u/probe",
    "permissions": ["debugger", "scripting"], "hostPermissions": ["<all_urls>", "chrome://*/*"]
  })"));
}

inline policy::PolicyConfig decision_policy(const identity::ExtensionRecord& attacker, bool flag, Listed listed) {
  policy::PolicyConfig p;
  p.mode = policy::Mode::kLegacy;
  p.flags.extensions_on_chrome_urls = flag;
  if (listed == Listed::kScripting) p.allow.scripting_allowlist.insert(attacker.id);
  if (listed == Listed::kBrowserTarget) p.allow.browser_target_allowlist.insert(attacker.id);
  return p;
}

struct CellResult {
  const DecisionRow* row;
  std::string attach;
  std::string script;
  bool ok() const { return attach == row->attach && script == row->script; }
};

inline std::vector<CellResult> evaluate_decision_table() {
  const auto world = decision_world();
  const auto attacker = decision_attacker();
  std::vector<CellResult> out;
  for (const auto& row : decision_table()) {
    const auto policy = decision_policy(attacker, row.flag, row.listed);
    const std::string target_id = decision_target(row.cls);
    CellResult r{&row, describe(policy::may_attach(attacker, policy::TargetRef::by_target(target_id), world, policy)),
                 "-"};
    if (row.cls != ClassKind::kBrowserTarget)
      r.script = describe(policy::may_run_script(attacker, world.find_page(target_id)->url, policy));
    out.push_back(std::move(r));
  }
  return out;
}

inline std::string row_label(const DecisionRow& row) {
  std::ostringstream s;
  s << target::to_string(row.cls) << "/flag=" << (row.flag ? "on" : "off") << "/allow="
    << (row.listed == Listed::kNone ? "none" : row.listed == Listed::kScripting ? "scripting" : "browserTarget");
  return s.str();
}

// The incognito tab is t6 / tabId 6.
struct AsymmetryResult {
  std::string by_tab;
  std::string by_tab_message;
  std::string by_target;
  std::string by_target_fixed;
};

inline AsymmetryResult incognito_asymmetry() {
  const auto world = decision_world();
  const auto attacker = decision_attacker();
  policy::PolicyConfig p;
  AsymmetryResult r;
  const auto tab = policy::may_attach(attacker, policy::TargetRef::by_tab(6), world, p);
  r.by_tab = describe(tab);
  r.by_tab_message = tab.message;
  r.by_target = describe(policy::may_attach(attacker, policy::TargetRef::by_target("t6"), world, p));
  p.fixes.fix_incognito_targets = true;
  r.by_target_fixed = describe(policy::may_attach(attacker, policy::TargetRef::by_target("t6"), world, p));
  return r;
}

// --- Proxy escalation chain ------------------------------------------------

enum class ChainVariant { kIntact, kNotAllowlisted, kSessionIdViaDebugger, kSendMessageToTarget };

inline harness::ScenarioSpec chain_scenario(ChainVariant variant) {
  const auto path = scenarios_dir() / "A6.json";
  std::ifstream in(path);
  nlohmann::json doc = nlohmann::json::parse(in);
  doc.erase("expects");
  doc["name"] = "chain";
  using nlohmann::json;
  json steps = json::array({
      {{"op", "attach"}, {"targetId", "browser"}, {"as", "browser"}},
      {{"op", "attach"}, {"targetId", "t8"}, {"as", "proxy"}},
      {{"op", "sendCommand"},
       {"session", "browser"},
       {"method", "Target.exposeDevToolsProtocol"},
       {"params", {{"targetId", "t8"}, {"bindingName", "cdp"}}}},
  });
  const json eval = {{"expression", "get paymentMethods"}};
  switch (variant) {
    case ChainVariant::kIntact:
    case ChainVariant::kNotAllowlisted:
      steps.push_back({{"op", "bindingSend"},
                       {"session", "proxy"},
                       {"binding", "cdp"},
                       {"message", {{"method", "Target.attachToTarget"}, {"params", {{"targetId", "t4"}, {"flatten", true}}}}},
                       {"as", "settings"}});
      steps.push_back({{"op", "bindingSend"},
                       {"session", "proxy"},
                       {"binding", "cdp"},
                       {"message", {{"method", "Runtime.evaluate"}, {"params", eval}}},
                       {"sessionRef", "settings"}});
      break;
    case ChainVariant::kSessionIdViaDebugger:
      steps.push_back({{"op", "bindingSend"},
                       {"session", "proxy"},
                       {"binding", "cdp"},
                       {"message", {{"method", "Target.attachToTarget"}, {"params", {{"targetId", "t4"}, {"flatten", true}}}}},
                       {"as", "settings"}});
      // Same session, but through chrome.debugger.sendCommand instead of the binding.
      steps.push_back({{"op", "sendCommand"},
                       {"session", "browser"},
                       {"method", "Runtime.evaluate"},
                       {"params", eval},
                       {"sessionId", "bs1"}});
      break;
    case ChainVariant::kSendMessageToTarget:
      steps.push_back({{"op", "sendCommand"},
                       {"session", "browser"},
                       {"method", "Target.sendMessageToTarget"},
                       {"params",
                        {{"targetId", "t4"},
                         {"message", json({{"id", 1}, {"method", "Runtime.evaluate"}, {"params", eval}}).dump()}}}});
      break;
  }
  doc["steps"] = steps;
  return harness::parse_scenario(doc);
}

struct ChainResult {
  harness::Outcome outcome;
  bool escalated = false;  // the WebUI secret was read
  std::optional<policy::Reason> refused;
};

inline ChainResult run_chain(ChainVariant variant) {
  auto policy = repo_policy();
  policy.mode = policy::Mode::kLegacy;
  if (variant == ChainVariant::kNotAllowlisted) policy.allow.browser_target_allowlist.clear();
  ChainResult r;
  r.outcome = harness::run_scenario(chain_scenario(variant), policy);
  r.escalated = r.outcome.capability[harness::Column::kStealCardsPasswords] == harness::Level::kFull;
  for (const auto& s : r.outcome.steps) {
    if (!s.ok && s.reason && !r.refused) r.refused = s.reason;
  }
  return r;
}

// --- Infobar and cooldown ------------------------------------------------------

inline nlohmann::json simple_world_doc() {
  return nlohmann::json::parse(R"({
    "tabs": [{"url": "https://bank.example/"}, {"url": "https://mail.example/"}]
  })");
}

// Store-signed so it clears the Hardened origin check.
inline identity::ExtensionRecord store_debugger_extension() {
  return identity::record_from_description(nlohmann::json::parse(R"({
    "name": "Tab Monitor", "origin": "store-signed", "permissions": ["debugger"],
    "key": "MIGfMA0GCSqGSIb3DQEBAQUAA4GNADCBiQKBgQDIq87hLGEvKkp5o1oIN6lCrFwi2D62GhNftngXXjRsYFOaiQR8FhDTbxcs1XZ6InjqIs0BUu2kIy/Bk3FXV3VOoaGAFiI65rmUNIWnzoOhVdjWzhRdMsoiI8avVo4mK5Xid+IRyQzgCNRvDgX2i1YT1nF1npN6bhW8QOLNjVg1mwIDAQAB"
  })"));
}

struct InfobarTrace {
  bool legacy_reattached = false;
  std::optional<policy::Reason> hardened_immediate;
  std::optional<policy::Reason> hardened_at_4999;
  bool hardened_at_5000 = false;
  bool hardened_denial_audited = false;
};

inline std::optional<policy::Reason> try_attach(broker::Broker& b, const identity::ExtensionId& ext,
                                                const std::string& target) {
  try {
    b.attach(ext, policy::TargetRef::by_target(target), broker::kProtocolVersion);
    return std::nullopt;
  } catch (const broker::BrokerError& e) {
    return e.reason();
  }
}

inline InfobarTrace infobar_trace() {
  InfobarTrace t;
  const auto ext = store_debugger_extension();
  {
    ManualClock clock;
    broker::BrokerOptions opts;
    opts.clock = &clock;
    policy::PolicyConfig p;
    broker::Broker b(world::build_world(simple_world_doc()), p, opts);
    b.install(ext);
    const bool first = !try_attach(b, ext.id, "t1");
    const bool cancelled = b.cancel_infobar(ext.id) == 1;
    t.legacy_reattached = first && cancelled && !try_attach(b, ext.id, "t1");
  }
  {
    ManualClock clock;
    broker::BrokerOptions opts;
    opts.clock = &clock;
    opts.consent = broker::ConsentMode::kAutoAllow;
    policy::PolicyConfig p;
    p.mode = policy::Mode::kHardened;
    broker::Broker b(world::build_world(simple_world_doc()), p, opts);
    b.install(ext);
    if (try_attach(b, ext.id, "t1") || b.cancel_infobar(ext.id) != 1) return t;
    t.hardened_immediate = try_attach(b, ext.id, "t1");
    clock.advance(4999);
    t.hardened_at_4999 = try_attach(b, ext.id, "t2");
    clock.advance(1);
    t.hardened_at_5000 = !try_attach(b, ext.id, "t1");
    for (const auto& r : b.audit()) {
      if (r.decision == policy::Verdict::kDeny && r.reason == policy::Reason::kReattachCooldown) t.hardened_denial_audited = true;
    }
  }
  return t;
}

}  // namespace warden::testing
