#include "warden/scenario_harness.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "warden/clock.hpp"
#include "warden/world.hpp"

namespace warden::harness {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;
using policy::Mode;
using policy::Reason;
using policy::Sr;
using policy::SrSet;
using world::SchemaError;

[[noreturn]] void schema(const std::string& message) { throw SchemaError(message); }

const std::set<std::string> kOps = {"getTargets", "attach",  "sendCommand", "evalViaScriptingApi", "bindingSend",
                                    "cancelInfobarAsUser", "sleep", "detach"};

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) schema("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    schema(path.string() + ": " + e.what());
  }
}

const json& require(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) schema(where + ": missing \"" + key + "\"");
  return *it;
}

std::string require_string(const json& obj, const char* key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_string() || v.get_ref<const std::string&>().empty())
    schema(where + ": \"" + key + "\" must be a non-empty string");
  return v.get<std::string>();
}

SrSet parse_srs(const json& doc, const std::string& where) {
  try {
    return policy::sr_set_from_json(doc);
  } catch (const std::exception& e) {
    schema(where + ": " + e.what());
  }
}

Expectation parse_expectation(const json& doc, const std::string& where) {
  if (!doc.is_object()) schema(where + " must be an object");
  Expectation e;
  e.capability = capability_from_json(require(doc, "capability", where));
  e.violated = parse_srs(require(doc, "violatedSRs", where), where + ".violatedSRs");
  e.violated_silent = doc.contains("violatedSRsSilent")
                          ? parse_srs(doc["violatedSRsSilent"], where + ".violatedSRsSilent")
                          : e.violated;
  if (auto it = doc.find("firstDenied"); it != doc.end()) {
    if (!it->is_object() || !(*it)["step"].is_number_integer())
      schema(where + ".firstDenied needs an integer step");
    auto reason = policy::parse_reason(require_string(*it, "reason", where + ".firstDenied"));
    if (!reason) schema(where + ".firstDenied: unknown reason");
    e.first_denied = FirstDenied{(*it)["step"].get<int>(), *reason};
  }
  return e;
}

// Steps are validated up front so a typo cannot silently skip an attack stage.
void validate_steps(const std::vector<json>& steps) {
  std::set<std::string> sessions;
  std::set<std::string> binding_sessions;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const json& s = steps[i];
    const std::string where = "steps[" + std::to_string(i) + "]";
    if (!s.is_object()) schema(where + " must be an object");
    const std::string op = require_string(s, "op", where);
    if (!kOps.contains(op)) schema(where + ": unknown op " + op);
    auto need_session = [&](const char* key) {
      const std::string alias = require_string(s, key, where);
      if (!sessions.contains(alias)) schema(where + ": session alias " + alias + " is not attached earlier");
    };
    if (op == "getTargets") {
      if (s.contains("repeat") && (!s["repeat"].is_number_integer() || s["repeat"].get<int>() < 1))
        schema(where + ": repeat must be a positive integer");
      if (s.contains("intervalMs") && (!s["intervalMs"].is_number_integer() || s["intervalMs"].get<int>() < 0))
        schema(where + ": intervalMs must be a non-negative integer");
    } else if (op == "attach") {
      const bool by_target = s.contains("targetId");
      const bool by_tab = s.contains("tabId");
      if (by_target == by_tab) schema(where + ": attach needs exactly one of targetId, tabId");
      if (by_target) require_string(s, "targetId", where);
      if (by_tab && !s["tabId"].is_number_integer()) schema(where + ": tabId must be an integer");
      sessions.insert(require_string(s, "as", where));
    } else if (op == "sendCommand") {
      need_session("session");
      if (!cdp::is_valid_method(require_string(s, "method", where))) schema(where + ": invalid method name");
      if (s.contains("params") && !s["params"].is_object()) schema(where + ": params must be an object");
    } else if (op == "evalViaScriptingApi") {
      require_string(s, "targetId", where);
      require_string(s, "expression", where);
    } else if (op == "bindingSend") {
      need_session("session");
      require_string(s, "binding", where);
      const json& msg = require(s, "message", where);
      if (!msg.is_object() || !msg.contains("method")) schema(where + ": message must be a command object");
      if (s.contains("sessionRef") && !binding_sessions.contains(require_string(s, "sessionRef", where)))
        schema(where + ": unknown sessionRef");
      if (s.contains("as")) binding_sessions.insert(require_string(s, "as", where));
    } else if (op == "sleep") {
      if (!s.contains("ms") || !s["ms"].is_number_integer() || s["ms"].get<std::int64_t>() < 0)
        schema(where + ": sleep needs non-negative integer ms");
    } else if (op == "detach") {
      need_session("session");
    }
  }
}

bool cookie_matches_host(const std::string& domain, const std::string& host) {
  std::string d = lower(domain);
  if (!d.empty() && d.front() == '.') d.erase(0, 1);
  if (d.empty() || host.empty()) return false;
  return host == d || (host.size() > d.size() && host.ends_with("." + d));
}

std::string expression_key(std::string_view expr, std::string_view verb) {
  while (!expr.empty() && std::isspace(static_cast<unsigned char>(expr.front()))) expr.remove_prefix(1);
  if (!expr.starts_with(verb) || expr.size() <= verb.size() || expr[verb.size()] != ' ') return {};
  expr.remove_prefix(verb.size() + 1);
  const auto end = expr.find_first_of(" =");
  return std::string(expr.substr(0, end));
}

// Drives one scenario against a broker and collects evidence of reach
// beyond the attacker's legitimate scope.
class Runner {
 public:
  Runner(broker::Broker& broker, ManualClock& clock, identity::ExtensionRecord attacker, Outcome& out)
      : broker_(broker), clock_(clock), attacker_(std::move(attacker)), out_(out) {}

  void run(const json& step, int index) {
    pre_ = broker_.world();
    StepResult r;
    r.index = index;
    r.op = step["op"].get<std::string>();
    r.audit_begin = static_cast<std::int64_t>(broker_.audit().size()) + 1;
    try {
      r.detail = execute(step, r);
    } catch (const broker::BrokerError& e) {
      r.ok = false;
      r.reason = e.reason();
      r.error = e.what();
    } catch (const std::exception& e) {
      r.ok = false;
      r.error = e.what();
    }
    drain_events();
    r.audit_end = static_cast<std::int64_t>(broker_.audit().size());
    out_.steps.push_back(std::move(r));
  }

 private:
  struct Scope {
    const world::PageNode* page;
    target::ClassKind kind;
    bool in_scope;
  };

  std::optional<Scope> scope_of(const std::string& target_id) const {
    const world::PageNode* page = pre_.find_page(target_id);
    if (!page) return std::nullopt;
    return Scope{page, target::classify_url(page->url, page->target_id).kind,
                 policy::in_legitimate_scope(attacker_, *page, pre_)};
  }

  void note_listing(const json& infos) {
    if (!infos.is_array()) return;
    for (const auto& info : infos) {
      auto s = scope_of(info.value("targetId", ""));
      if (!s || s->in_scope) continue;
      out_.capability.raise(s->page->is_tab() ? Column::kListTabs : Column::kListExtensions, Level::kFull);
    }
  }

  void note_eval(const std::string& target_id, const std::string& expression) {
    auto s = scope_of(target_id);
    if (!s) return;
    const bool webui = s->kind == target::ClassKind::kWebUI;
    if (!s->in_scope) {
      if (s->page->is_tab())
        out_.capability.raise(Column::kEvalTabs, webui ? Level::kFull : Level::kPartial);
      else
        out_.capability.raise(Column::kEvalExtensions, Level::kFull);
    }
    if (!webui) return;
    const std::string got = lower(expression_key(expression, "get"));
    if (got.find("password") != std::string::npos || got.find("payment") != std::string::npos)
      out_.capability.raise(Column::kStealCardsPasswords, Level::kFull);
    if (!expression_key(expression, "set").empty()) out_.capability.raise(Column::kChangeSettingsFlags, Level::kFull);
  }

  void note_cookies(const json& cookies, const std::optional<std::string>& routed) {
    if (!cookies.is_array() || cookies.empty()) return;
    if (!routed) {
      out_.capability.raise(Column::kStealCookies, Level::kFull);
      return;
    }
    auto s = scope_of(*routed);
    const std::string host = s ? target::url_host(s->page->url) : std::string();
    for (const auto& c : cookies) {
      if (!s || !s->in_scope || !cookie_matches_host(c.value("domain", ""), host)) {
        out_.capability.raise(Column::kStealCookies, Level::kFull);
        return;
      }
    }
  }

  void note_result(const std::string& method, const json& params, const json& result,
                   const std::optional<std::string>& routed) {
    if (method == "Runtime.evaluate" && routed) note_eval(*routed, params.value("expression", ""));
    if (method == "Network.getAllCookies") note_cookies(result.value("cookies", json::array()), routed);
    if (method == "Target.getTargets") note_listing(result.value("targetInfos", json::array()));
    if (method == "Tracing.end" && result.contains("trace")) out_.capability.raise(Column::kRecordTraces, Level::kFull);
  }

  void note_events(const std::vector<mock::SourcedEvent>& events) {
    for (const auto& ev : events) {
      auto s = scope_of(ev.source_target);
      if (!s || s->in_scope) continue;
      if (s->page->is_tab())
        out_.capability.raise(Column::kInterceptTabs,
                              s->kind == target::ClassKind::kWebUI ? Level::kFull : Level::kPartial);
      else
        out_.capability.raise(Column::kInterceptExtensions, Level::kFull);
    }
  }

  void drain_events() {
    std::set<broker::SessionKey> seen;
    for (const auto& [alias, key] : sessions_) {
      if (!seen.insert(key).second) continue;
      try {
        note_events(broker_.take_events(key));
      } catch (const broker::BrokerError&) {
        // never opened
      }
    }
  }

  json execute(const json& step, StepResult& r) {
    const std::string& op = r.op;
    const identity::ExtensionId& id = attacker_.id;

    if (op == "getTargets") {
      const int repeat = step.value("repeat", 1);
      const int interval = step.value("intervalMs", 0);
      json ids = json::array();
      for (int i = 0; i < repeat; ++i) {
        if (i > 0) clock_.advance(interval);
        auto infos = broker_.get_targets(id);
        json listed = json::array();
        for (const auto& info : infos) listed.push_back(json(target::to_json(info)));
        note_listing(listed);
        ids = json::array();
        for (const auto& info : infos) ids.push_back(info.target_id);
      }
      return {{"calls", repeat}, {"targetIds", ids}};
    }
    if (op == "attach") {
      const std::string alias = step["as"].get<std::string>();
      policy::TargetRef ref;
      std::string fallback;
      if (step.contains("tabId")) {
        const int tab = step["tabId"].get<int>();
        ref = policy::TargetRef::by_tab(tab);
        const world::PageNode* page = pre_.find_tab(tab);
        fallback = page ? page->target_id : "tab:" + std::to_string(tab);
      } else {
        fallback = step["targetId"].get<std::string>();
        ref = policy::TargetRef::by_target(fallback);
      }
      // Register the alias first: later steps on a refused attach must be
      // refused by the broker too, not skipped.
      sessions_.insert_or_assign(alias, broker::SessionKey{id, fallback});
      auto key = broker_.attach(id, ref, step.value("version", std::string(broker::kProtocolVersion)));
      sessions_.insert_or_assign(alias, key);
      return {{"targetId", key.target_id}};
    }
    if (op == "sendCommand") {
      const auto& key = sessions_.at(step["session"].get<std::string>());
      const std::string method = step["method"].get<std::string>();
      const json params = step.value("params", json::object());
      std::optional<std::string> sid;
      if (step.contains("sessionId")) sid = step["sessionId"].get<std::string>();
      json result = broker_.send_command(key, method, params, sid);
      const bool browser = key.target_id == target::kBrowserTargetId;
      note_result(method, params, result, browser ? std::nullopt : std::optional<std::string>(key.target_id));
      return result;
    }
    if (op == "evalViaScriptingApi") {
      const std::string target_id = step["targetId"].get<std::string>();
      const std::string expr = step["expression"].get<std::string>();
      std::string value = broker_.run_script(id, target_id, expr);
      note_eval(target_id, expr);
      return {{"value", value}};
    }
    if (op == "bindingSend") {
      const auto& key = sessions_.at(step["session"].get<std::string>());
      json message = step["message"];
      if (!message.contains("id")) message["id"] = next_message_id_++;
      if (step.contains("sessionRef")) message["sessionId"] = binding_aliases_.at(step["sessionRef"].get<std::string>());
      const cdp::CdpMessage reply = broker_.binding_send(key, step["binding"].get<std::string>(), message.dump());
      json response = cdp::to_json(reply);
      if (reply.error) {
        r.ok = false;
        r.error = reply.error->message;
        return response;
      }
      const std::string method = message.value("method", "");
      const json params = message.value("params", json::object());
      const json result = reply.result.value_or(json::object());
      std::optional<std::string> routed;
      if (message.contains("sessionId")) {
        auto it = binding_targets_.find(message["sessionId"].get<std::string>());
        if (it != binding_targets_.end()) routed = it->second;
      }
      if (method == "Target.attachToTarget" && result.contains("sessionId")) {
        const std::string sid = result["sessionId"].get<std::string>();
        binding_targets_[sid] = params.value("targetId", "");
        if (step.contains("as")) binding_aliases_[step["as"].get<std::string>()] = sid;
      }
      note_result(method, params, result, routed);
      return response;
    }
    if (op == "cancelInfobarAsUser") {
      return {{"detached", broker_.cancel_infobar(id)}};
    }
    if (op == "sleep") {
      clock_.advance(step["ms"].get<std::int64_t>());
      return {{"now", clock_.now_ms()}};
    }
    if (op == "detach") {
      broker_.detach(sessions_.at(step["session"].get<std::string>()));
      return json::object();
    }
    throw std::logic_error("unhandled op " + op);
  }

  broker::Broker& broker_;
  ManualClock& clock_;
  identity::ExtensionRecord attacker_;
  Outcome& out_;
  world::BrowserWorld pre_;
  std::map<std::string, broker::SessionKey> sessions_;
  std::map<std::string, std::string> binding_aliases_;  // alias -> binding sessionId
  std::map<std::string, std::string> binding_targets_;  // binding sessionId -> targetId
  std::int64_t next_message_id_ = 1;
};

identity::ExtensionRecord attacker_record(const ScenarioSpec& spec, json* target) {
  json desc = spec.attacker;
  if (target) *target = desc.value("target", json::object());
  desc.erase("target");
  try {
    return identity::record_from_description(desc);
  } catch (const identity::IdentityError& e) {
    schema("attacker: " + std::string(e.what()));
  }
}

}  // namespace

std::string_view to_string(Level level) {
  switch (level) {
    case Level::kNone: return "None";
    case Level::kPartial: return "Partial";
    case Level::kFull: return "Full";
  }
  return "None";
}

std::string_view symbol(Level level) {
  switch (level) {
    case Level::kNone: return "○";
    case Level::kPartial: return "◐";
    case Level::kFull: return "●";
  }
  return "○";
}

std::optional<Level> parse_level(std::string_view text) {
  if (text == "None" || text == "○") return Level::kNone;
  if (text == "Partial" || text == "◐") return Level::kPartial;
  if (text == "Full" || text == "●") return Level::kFull;
  return std::nullopt;
}

void CapabilityVector::raise(Column c, Level level) {
  Level& cell = (*this)[c];
  if (static_cast<int>(level) > static_cast<int>(cell)) cell = level;
}

bool CapabilityVector::all_none() const {
  return std::all_of(cells.begin(), cells.end(), [](Level l) { return l == Level::kNone; });
}

ordered_json to_json(const CapabilityVector& v) {
  ordered_json out = ordered_json::object();
  for (std::size_t i = 0; i < kColumnCount; ++i) out[std::string(kColumnNames[i])] = std::string(to_string(v.cells[i]));
  return out;
}

CapabilityVector capability_from_json(const json& doc) {
  if (!doc.is_object()) schema("capability must be an object");
  CapabilityVector v;
  for (const auto& [key, value] : doc.items()) {
    auto col = std::find(kColumnNames.begin(), kColumnNames.end(), key);
    if (col == kColumnNames.end()) schema("unknown capability column " + key);
    auto level = value.is_string() ? parse_level(value.get<std::string>()) : std::nullopt;
    if (!level) schema("bad level for " + key + ": " + value.dump());
    v.cells[static_cast<std::size_t>(col - kColumnNames.begin())] = *level;
  }
  return v;
}

ScenarioSpec parse_scenario(const json& doc) {
  if (!doc.is_object()) schema("scenario must be a JSON object");
  static const std::set<std::string> kKeys = {"name", "description", "threatModel", "world",
                                              "attacker", "flags",    "steps",       "expects"};
  for (const auto& [key, value] : doc.items()) {
    if (!kKeys.contains(key)) schema("unknown scenario key " + key);
  }
  ScenarioSpec spec;
  spec.name = require_string(doc, "name", "scenario");
  const std::string where = spec.name;
  spec.threat_model = require_string(doc, "threatModel", where);
  if (spec.threat_model != "TMA" && spec.threat_model != "TMB") schema(where + ": threatModel must be TMA or TMB");
  spec.world = require(doc, "world", where);
  if (!spec.world.is_object()) schema(where + ": world must be an object");
  spec.attacker = require(doc, "attacker", where);
  if (!spec.attacker.is_object()) schema(where + ": attacker must be an object");

  if (auto it = doc.find("flags"); it != doc.end()) {
    if (!it->is_object()) schema(where + ": flags must be an object");
    for (const auto& [key, value] : it->items()) {
      if (!value.is_boolean()) schema(where + ": flag " + key + " must be boolean");
      if (key == "extensionsOnChromeUrls")
        spec.flags.extensions_on_chrome_urls = value.get<bool>();
      else if (key == "silentDebuggerExtensionApi")
        spec.flags.silent_debugger_extension_api = value.get<bool>();
      else
        schema(where + ": unknown flag " + key);
    }
  }

  const json& steps = require(doc, "steps", where);
  if (!steps.is_array()) schema(where + ": steps must be an array");
  spec.steps.assign(steps.begin(), steps.end());
  validate_steps(spec.steps);

  if (auto it = doc.find("expects"); it != doc.end()) {
    if (!it->is_object()) schema(where + ": expects must be an object");
    for (const auto& [key, value] : it->items()) {
      auto mode = policy::parse_mode(key);
      if (!mode) schema(where + ": unknown policy mode " + key);
      spec.expects[*mode] = parse_expectation(value, where + ".expects." + key);
    }
  }

  // Fail early on a malformed world or attacker.
  world::build_world(spec.world);
  attacker_record(spec, nullptr);
  return spec;
}

ScenarioSpec load_scenario(const std::filesystem::path& path) { return parse_scenario(read_json_file(path)); }

std::vector<ScenarioSpec> load_scenarios(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<ScenarioSpec> out;
  for (const auto& f : files) out.push_back(load_scenario(f));
  return out;
}

void validate_attacker(const ScenarioSpec& spec, const identity::AllowlistConfig& allow) {
  const auto rec = attacker_record(spec, nullptr);
  if (spec.threat_model == "TMA") {
    if (!identity::is_trusted(rec.origin))
      schema(spec.name + ": a TMA attacker must come from the store");
    if (allow.scripting_allowlist.contains(rec.id) || allow.browser_target_allowlist.contains(rec.id))
      schema(spec.name + ": a store-signed TMA attacker cannot hold an allowlisted ID (" + rec.id.str() + ")");
  } else if (!identity::is_sideloaded(rec.origin)) {
    schema(spec.name + ": a TMB attacker must be sideloaded");
  }
}

bool Outcome::operator==(const Outcome& o) const {
  return scenario == o.scenario && mode == o.mode &&
         flags.extensions_on_chrome_urls == o.flags.extensions_on_chrome_urls &&
         flags.silent_debugger_extension_api == o.flags.silent_debugger_extension_api &&
         capability == o.capability && violated == o.violated && audit == o.audit && steps == o.steps;
}

ordered_json to_json(const Outcome& outcome) {
  ordered_json out;
  out["scenario"] = outcome.scenario;
  out["policyMode"] = std::string(policy::to_string(outcome.mode));
  out["flags"] = {{"extensionsOnChromeUrls", outcome.flags.extensions_on_chrome_urls},
                  {"silentDebuggerExtensionApi", outcome.flags.silent_debugger_extension_api}};
  out["capability"] = to_json(outcome.capability);
  out["violatedSRs"] = policy::to_json(outcome.violated);
  ordered_json steps = ordered_json::array();
  for (const auto& s : outcome.steps) {
    ordered_json j;
    j["index"] = s.index;
    j["op"] = s.op;
    j["ok"] = s.ok;
    j["reason"] = s.reason ? ordered_json(std::string(policy::to_string(*s.reason))) : ordered_json(nullptr);
    j["error"] = s.error;
    j["detail"] = s.detail;
    j["auditBegin"] = s.audit_begin;
    j["auditEnd"] = s.audit_end;
    steps.push_back(std::move(j));
  }
  out["steps"] = std::move(steps);
  ordered_json audit = ordered_json::array();
  for (const auto& r : outcome.audit) audit.push_back(broker::to_json(r));
  out["audit"] = std::move(audit);
  return out;
}

Outcome outcome_from_json(const json& doc) {
  Outcome o;
  o.scenario = doc.at("scenario").get<std::string>();
  auto mode = policy::parse_mode(doc.at("policyMode").get<std::string>());
  if (!mode) schema("unknown policyMode");
  o.mode = *mode;
  o.flags.extensions_on_chrome_urls = doc.at("flags").at("extensionsOnChromeUrls").get<bool>();
  o.flags.silent_debugger_extension_api = doc.at("flags").at("silentDebuggerExtensionApi").get<bool>();
  o.capability = capability_from_json(doc.at("capability"));
  o.violated = policy::sr_set_from_json(doc.at("violatedSRs"));
  for (const auto& j : doc.at("steps")) {
    StepResult s;
    s.index = j.at("index").get<int>();
    s.op = j.at("op").get<std::string>();
    s.ok = j.at("ok").get<bool>();
    if (!j.at("reason").is_null()) s.reason = policy::parse_reason(j["reason"].get<std::string>());
    s.error = j.at("error").get<std::string>();
    s.detail = j.at("detail");
    s.audit_begin = j.at("auditBegin").get<std::int64_t>();
    s.audit_end = j.at("auditEnd").get<std::int64_t>();
    o.steps.push_back(std::move(s));
  }
  for (const auto& j : doc.at("audit")) o.audit.push_back(broker::audit_from_json(j));
  return o;
}

policy::PolicyConfig scenario_policy(const ScenarioSpec& spec, policy::PolicyConfig base, bool silent) {
  base.flags.extensions_on_chrome_urls = spec.flags.extensions_on_chrome_urls;
  base.flags.silent_debugger_extension_api = spec.flags.silent_debugger_extension_api || silent;
  return base;
}

Outcome run_scenario(const ScenarioSpec& spec, const policy::PolicyConfig& policy, RunOptions options) {
  if (options.consent == broker::ConsentMode::kManual)
    throw std::invalid_argument("scenario runs cannot wait for manual consent");
  validate_attacker(spec, policy.allow);

  json target;
  identity::ExtensionRecord attacker = attacker_record(spec, &target);

  ManualClock clock;
  broker::BrokerOptions bopts;
  bopts.consent = options.consent;
  bopts.clock = &clock;
  broker::Broker broker(world::build_world(spec.world), policy, bopts);
  try {
    broker.install(attacker, target);
  } catch (const std::exception& e) {
    schema(spec.name + ": cannot install attacker: " + e.what());
  }

  Outcome out;
  out.scenario = spec.name;
  out.mode = policy.mode;
  out.flags = policy.flags;
  Runner runner(broker, clock, attacker, out);
  for (std::size_t i = 0; i < spec.steps.size(); ++i) runner.run(spec.steps[i], static_cast<int>(i));
  out.audit = broker.audit();
  out.violated = sr_report(out.audit, attacker.id.str());
  return out;
}

SrSet sr_report(const std::vector<broker::AuditRecord>& audit, const std::string& attacker) {
  SrSet out;
  bool attached = false;
  bool listing_runtime = false;
  for (const auto& r : audit) {
    if (r.extension_id != attacker || r.decision == policy::Verdict::kDeny) continue;
    if (r.action == "install") {
      if (r.violated.contains(Sr::kSr01Install)) out.insert(Sr::kSr01Install);
      continue;
    }
    if (r.action == "attach") {
      attached = true;
      if (r.violated.contains(Sr::kSr01Runtime)) out.insert(Sr::kSr01Runtime);
    }
    if (r.action == "getTargets" && r.violated.contains(Sr::kSr01Runtime)) listing_runtime = true;
    for (Sr sr : {Sr::kSr02, Sr::kSr03, Sr::kSr04}) {
      if (r.violated.contains(sr)) out.insert(sr);
    }
  }
  // Listing without any infobar only counts when no session was ever shown.
  if (!attached && listing_runtime) out.insert(Sr::kSr01Runtime);
  return out;
}

std::optional<FirstDenied> first_denied(const Outcome& outcome) {
  for (const auto& s : outcome.steps) {
    if (s.reason && *s.reason != Reason::kProtocolError) return FirstDenied{s.index, *s.reason};
  }
  return std::nullopt;
}

ExpectationCheck check_expectation(const Outcome& outcome, const ScenarioSpec& spec) {
  ExpectationCheck check;
  auto it = spec.expects.find(outcome.mode);
  if (it == spec.expects.end()) {
    check.matches = false;
    check.problems.push_back("no expectation for policy mode " + std::string(policy::to_string(outcome.mode)));
    return check;
  }
  const Expectation& e = it->second;
  for (std::size_t i = 0; i < kColumnCount; ++i) {
    if (e.capability.cells[i] != outcome.capability.cells[i]) {
      check.problems.push_back(std::string(kColumnNames[i]) + ": expected " +
                               std::string(to_string(e.capability.cells[i])) + ", got " +
                               std::string(to_string(outcome.capability.cells[i])));
    }
  }
  const SrSet& want = outcome.flags.silent_debugger_extension_api ? e.violated_silent : e.violated;
  if (want != outcome.violated) {
    check.problems.push_back("violated SRs: expected " + policy::to_json(want).dump() + ", got " +
                             policy::to_json(outcome.violated).dump());
  }
  if (e.first_denied) {
    auto got = first_denied(outcome);
    if (!got || got->step != e.first_denied->step || got->reason != e.first_denied->reason) {
      check.problems.push_back("first denied step: expected " + std::to_string(e.first_denied->step) + " " +
                               std::string(policy::to_string(e.first_denied->reason)) + ", got " +
                               (got ? std::to_string(got->step) + " " + std::string(policy::to_string(got->reason))
                                    : std::string("none")));
    }
  }
  check.matches = check.problems.empty();
  return check;
}

CapabilityFixture load_capability_fixture(const std::filesystem::path& path) {
  const json doc = read_json_file(path);
  CapabilityFixture f;
  f.caption = doc.value("caption", "");
  const json& columns = require(doc, "columns", path.string());
  if (!columns.is_array() || columns.size() != kColumnCount) schema(path.string() + ": expected 10 columns");
  for (const auto& [name, row] : require(doc, "rows", path.string()).items()) {
    f.threat_models[name] = require_string(row, "threatModel", name);
    const json& cells = require(row, "cells", name);
    if (!cells.is_array() || cells.size() != kColumnCount) schema(name + ": expected 10 cells");
    CapabilityVector v;
    for (std::size_t i = 0; i < kColumnCount; ++i) {
      std::string text = cells[i].get<std::string>();
      // "●†" carries a footnote marker; the level is the leading symbol.
      if (text.ends_with("†")) text.resize(text.size() - std::string_view("†").size());
      auto level = parse_level(text);
      if (!level) schema(name + ": bad cell " + cells[i].dump());
      v.cells[i] = *level;
    }
    f.rows[name] = v;
  }
  return f;
}

ViolationFixture load_violation_fixture(const std::filesystem::path& path) {
  const json doc = read_json_file(path);
  ViolationFixture f;
  f.caption = doc.value("caption", "");
  for (const auto& [name, row] : require(doc, "rows", path.string()).items()) {
    const json& cells = require(row, "cells", name);
    if (!cells.is_array() || cells.size() != 5) schema(name + ": expected 5 cells");
    std::array<std::string, 5> a;
    for (std::size_t i = 0; i < 5; ++i) a[i] = cells[i].get<std::string>();
    f.rows[name] = a;
  }
  return f;
}

SrSet ViolationFixture::expected(const std::string& scenario, bool silent) const {
  static constexpr std::array<Sr, 5> kOrder = {Sr::kSr01Install, Sr::kSr01Runtime, Sr::kSr02, Sr::kSr03, Sr::kSr04};
  SrSet out;
  const auto& row = rows.at(scenario);
  for (std::size_t i = 0; i < 5; ++i) {
    if (row[i] == "×" || (silent && row[i] == "×‡")) out.insert(kOrder[i]);
  }
  return out;
}

MatrixResult capability_matrix(const std::vector<ScenarioSpec>& scenarios, const policy::PolicyConfig& base,
                               bool silent, const CapabilityFixture* expected) {
  MatrixResult m;
  for (const auto& spec : scenarios) {
    const Outcome o = run_scenario(spec, scenario_policy(spec, base, silent));
    m.rows[spec.name] = o.capability;
    m.threat_models[spec.name] = spec.threat_model;
    CapabilityVector want;
    if (expected) {
      auto it = expected->rows.find(spec.name);
      if (it != expected->rows.end()) want = it->second;
    }
    for (std::size_t i = 0; i < kColumnCount; ++i) {
      if (want.cells[i] != o.capability.cells[i])
        m.mismatches.push_back({spec.name, std::string(kColumnNames[i]), want.cells[i], o.capability.cells[i]});
    }
  }
  return m;
}

std::string render_matrix(const MatrixResult& matrix) {
  static constexpr std::array<std::string_view, kColumnCount> kShort = {
      "listTabs", "evalTabs", "icptTabs", "listExt", "evalExt", "icptExt", "cookies", "cards/pw", "settings", "traces"};
  std::ostringstream out;
  out << "attack  tm  ";
  for (auto h : kShort) out << " " << h;
  out << "\n";
  for (const auto& [name, row] : matrix.rows) {
    std::string tm = matrix.threat_models.count(name) ? matrix.threat_models.at(name) : "";
    out << name << std::string(name.size() < 8 ? 8 - name.size() : 1, ' ') << tm << " ";
    for (std::size_t i = 0; i < kColumnCount; ++i) {
      out << " " << symbol(row.cells[i]) << std::string(kShort[i].size() - 1, ' ');
    }
    out << "\n";
  }
  for (const auto& mm : matrix.mismatches) {
    out << "MISMATCH " << mm.scenario << " " << mm.column << ": expected " << to_string(mm.expected) << ", got "
        << to_string(mm.actual) << "\n";
  }
  return out.str();
}

ordered_json to_json(const MatrixResult& matrix) {
  ordered_json out;
  ordered_json rows = ordered_json::object();
  for (const auto& [name, row] : matrix.rows) {
    ordered_json r;
    r["threatModel"] = matrix.threat_models.count(name) ? matrix.threat_models.at(name) : "";
    r["capability"] = to_json(row);
    rows[name] = std::move(r);
  }
  out["rows"] = std::move(rows);
  ordered_json mm = ordered_json::array();
  for (const auto& m : matrix.mismatches) {
    mm.push_back({{"scenario", m.scenario},
                  {"column", m.column},
                  {"expected", std::string(to_string(m.expected))},
                  {"actual", std::string(to_string(m.actual))}});
  }
  out["mismatches"] = std::move(mm);
  return out;
}

}  // namespace warden::harness
