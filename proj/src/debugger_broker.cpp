#include "warden/debugger_broker.hpp"

#include <algorithm>

namespace warden::broker {

namespace {

using identity::ExtensionId;
using identity::ExtensionRecord;
using nlohmann::json;
using nlohmann::ordered_json;
using policy::Decision;
using policy::Reason;
using policy::Sr;
using policy::SrSet;

const SystemClock& system_clock() {
  static const SystemClock clock;
  return clock;
}

bool cookie_matches_host(const std::string& domain, const std::string& host) {
  std::string d = domain;
  if (!d.empty() && d.front() == '.') d.erase(0, 1);
  if (d.empty() || host.empty()) return false;
  if (host == d) return true;
  return host.size() > d.size() && host.compare(host.size() - d.size(), d.size(), d) == 0 &&
         host[host.size() - d.size() - 1] == '.';
}

}  // namespace

ordered_json to_json(const AuditRecord& r) {
  ordered_json out;
  out["seq"] = r.seq;
  out["ts"] = r.ts;
  out["extensionId"] = r.extension_id;
  out["action"] = r.action;
  out["targetId"] = r.target_id ? ordered_json(*r.target_id) : ordered_json(nullptr);
  out["method"] = r.method ? ordered_json(*r.method) : ordered_json(nullptr);
  out["decision"] = policy::to_string(r.decision);
  out["reason"] = policy::to_string(r.reason);
  out["message"] = r.message;
  out["violatedSRs"] = policy::to_json(r.violated);
  out["policyMode"] = r.policy_mode;
  out["tags"] = r.tags;
  return out;
}

AuditRecord audit_from_json(const json& doc) {
  AuditRecord r;
  r.seq = doc.at("seq").get<std::int64_t>();
  r.ts = doc.at("ts").get<std::int64_t>();
  r.extension_id = doc.at("extensionId").get<std::string>();
  r.action = doc.at("action").get<std::string>();
  if (!doc.at("targetId").is_null()) r.target_id = doc["targetId"].get<std::string>();
  if (!doc.at("method").is_null()) r.method = doc["method"].get<std::string>();
  const std::string decision = doc.at("decision").get<std::string>();
  r.decision = decision == "Deny" ? policy::Verdict::kDeny : policy::Verdict::kAllow;
  r.reason = policy::parse_reason(doc.at("reason").get<std::string>()).value_or(Reason::kNone);
  r.message = doc.at("message").get<std::string>();
  r.violated = policy::sr_set_from_json(doc.at("violatedSRs"));
  r.policy_mode = doc.at("policyMode").get<std::string>();
  r.tags = doc.at("tags").get<std::vector<std::string>>();
  return r;
}

std::string_view to_string(ConsentMode mode) {
  switch (mode) {
    case ConsentMode::kManual: return "manual";
    case ConsentMode::kAutoAllow: return "auto-allow";
    case ConsentMode::kAutoDeny: return "auto-deny";
  }
  return "auto-deny";
}

std::optional<ConsentMode> parse_consent_mode(std::string_view text) {
  for (auto m : {ConsentMode::kManual, ConsentMode::kAutoAllow, ConsentMode::kAutoDeny}) {
    if (to_string(m) == text) return m;
  }
  return std::nullopt;
}

std::string_view to_string(ConsentState state) {
  switch (state) {
    case ConsentState::kPending: return "Pending";
    case ConsentState::kApproved: return "Approved";
    case ConsentState::kDenied: return "Denied";
    case ConsentState::kTimedOut: return "TimedOut";
  }
  return "Pending";
}

ordered_json to_json(const ConsentRequest& c) {
  ordered_json out;
  out["requestId"] = c.request_id;
  out["extensionId"] = c.extension_id;
  out["targetId"] = c.target_id;
  out["createdAt"] = c.created_at;
  out["state"] = to_string(c.state);
  return out;
}

Broker::Broker(world::BrowserWorld world, policy::PolicyConfig policy, BrokerOptions options)
    : browser_(std::move(world)),
      policy_(std::move(policy)),
      options_(std::move(options)),
      clock_(options_.clock ? options_.clock : &system_clock()) {
  if (options_.audit_log) {
    audit_file_.open(*options_.audit_log, std::ios::out | std::ios::trunc);
    if (!audit_file_) throw std::runtime_error("cannot open audit log " + options_.audit_log->string());
  }
  sync_flag_mirrors_to_world();
}

// --- internal helpers (caller holds mu_) -----------------------------------

void Broker::emit(const ordered_json& frame) {
  for (const auto& [token, listener] : listeners_) listener(frame);
}

void Broker::append_audit(AuditRecord record) {
  record.seq = static_cast<std::int64_t>(audit_.size()) + 1;
  record.ts = clock_->now_ms();
  record.policy_mode = std::string(policy::to_string(policy_.mode));
  if (record.decision == policy::Verdict::kDeny) record.violated.clear();
  const ordered_json j = to_json(record);
  if (audit_file_.is_open()) {
    audit_file_ << j.dump() << '\n';
    audit_file_.flush();
  }
  audit_.push_back(std::move(record));
  emit({{"kind", "audit"}, {"record", j}});
}

[[noreturn]] void Broker::deny(const std::string& ext, const std::string& action, const std::optional<std::string>& target,
                  const std::optional<std::string>& method, const Decision& decision) {
  AuditRecord r;
  r.extension_id = ext;
  r.action = action;
  r.target_id = target;
  r.method = method;
  r.decision = policy::Verdict::kDeny;
  r.reason = decision.reason;
  r.message = decision.message;
  append_audit(std::move(r));
  throw BrokerError(decision.reason, decision.message);
}

const ExtensionRecord& Broker::extension_or_throw(const ExtensionId& ext, const std::string& action,
                                                  const std::optional<std::string>& target) {
  const ExtensionRecord* rec = browser_.world().find_extension(ext);
  if (!rec) deny(ext.str(), action, target, std::nullopt,
                 Decision::deny(Reason::kMissingPermission, "Unknown extension " + ext.str()));
  return *rec;
}

void Broker::refresh_infobar(const ExtensionId& ext) {
  auto& st = infobars_[ext.str()];
  st.visible = !st.attached_targets.empty() && !policy_.flags.silent_debugger_extension_api;
}

void Broker::emit_infobar(const ExtensionId& ext) {
  const auto& st = infobars_[ext.str()];
  ordered_json frame;
  frame["kind"] = "infobar";
  frame["extensionId"] = ext.str();
  frame["visible"] = st.visible;
  frame["attachedTargets"] = st.attached_targets;
  frame["lastCancelAt"] = st.last_cancel_at ? ordered_json(*st.last_cancel_at) : ordered_json(nullptr);
  emit(frame);
}

void Broker::close_session(DebugSession& session, const std::string& reason) {
  session.state = SessionState::kDetached;
  session.detach_reason = reason;
  infobars_[session.key.extension_id.str()].attached_targets.erase(session.key.target_id);
  refresh_infobar(session.key.extension_id);
}

DebugSession* Broker::active_session(const SessionKey& key) {
  auto it = sessions_.find(key);
  if (it == sessions_.end() || it->second.state != SessionState::kActive) return nullptr;
  return &it->second;
}

void Broker::sync_flag_mirrors_to_world() {
  auto& settings = browser_.mutable_world().settings;
  settings["flags.extensions-on-chrome-urls"] = policy_.flags.extensions_on_chrome_urls ? "true" : "false";
  settings["flags.silent-debugger-extension-api"] = policy_.flags.silent_debugger_extension_api ? "true" : "false";
}

void Broker::sync_flags_from_world() {
  const auto& settings = browser_.world().settings;
  auto read = [&](const char* key, bool current) {
    auto it = settings.find(key);
    if (it == settings.end()) return current;
    return it->second == "true";
  };
  policy_.flags.extensions_on_chrome_urls = read("flags.extensions-on-chrome-urls", policy_.flags.extensions_on_chrome_urls);
  const bool silent = read("flags.silent-debugger-extension-api", policy_.flags.silent_debugger_extension_api);
  if (silent != policy_.flags.silent_debugger_extension_api) {
    policy_.flags.silent_debugger_extension_api = silent;
    for (auto& [ext, st] : infobars_) refresh_infobar(ExtensionId::from_string(ext));
  }
}

void Broker::revalidate_sessions() {
  const auto& world = browser_.world();
  for (auto& [key, session] : sessions_) {
    if (session.state != SessionState::kActive) continue;
    const ExtensionRecord* rec = world.find_extension(key.extension_id);
    Decision d = rec ? policy::may_attach(*rec, policy::TargetRef::by_target(key.target_id), world, policy_)
                     : Decision::deny(Reason::kMissingPermission, "extension removed");
    if (!d.denied()) continue;
    close_session(session, world.find_page(key.target_id) || session.browser_target ? "TargetNavigated" : "TargetClosed");
    AuditRecord r;
    r.extension_id = key.extension_id.str();
    r.action = "sessionClosed";
    r.target_id = key.target_id;
    r.decision = policy::Verdict::kDeny;
    r.reason = d.reason;
    r.message = d.message;
    append_audit(std::move(r));
    emit_infobar(key.extension_id);
  }
}

bool Broker::discloses_incognito(const ExtensionRecord& ext, const std::vector<mock::SourcedEvent>& events) const {
  if (ext.incognito_allowed) return false;
  const auto& world = browser_.world();
  return std::any_of(events.begin(), events.end(), [&](const mock::SourcedEvent& ev) {
    const world::PageNode* page = world.find_page(ev.source_target);
    return page && world.is_incognito(page->context_id);
  });
}

std::map<std::string, int> Broker::attached_counts() const {
  std::map<std::string, int> counts;
  for (const auto& [key, s] : sessions_) {
    if (s.state == SessionState::kActive) ++counts[key.target_id];
  }
  return counts;
}

bool Broker::await_consent(Lock& lock, const std::string& ext, const std::string& target_id) {
  const std::string id = "c" + std::to_string(next_consent_++);
  consents_.push_back({id, ext, target_id, clock_->now_ms(), ConsentState::kPending});
  auto find = [this, &id]() -> ConsentRequest& {
    return *std::find_if(consents_.begin(), consents_.end(),
                         [&](const ConsentRequest& c) { return c.request_id == id; });
  };
  emit({{"kind", "consent"}, {"request", to_json(find())}});

  switch (options_.consent) {
    case ConsentMode::kAutoAllow:
      find().state = ConsentState::kApproved;
      break;
    case ConsentMode::kAutoDeny:
      find().state = ConsentState::kDenied;
      break;
    case ConsentMode::kManual:
      if (!consent_cv_.wait_for(lock, options_.consent_timeout,
                                [&] { return find().state != ConsentState::kPending; })) {
        find().state = ConsentState::kTimedOut;
      }
      break;
  }
  const ConsentRequest& done = find();
  if (options_.consent != ConsentMode::kManual || done.state == ConsentState::kTimedOut)
    emit({{"kind", "consent"}, {"request", to_json(done)}});
  return done.state == ConsentState::kApproved;
}

// --- Debugger API ------------------------------------------------------------

std::string Broker::install(ExtensionRecord record, const json& target) {
  Lock lock(mu_);
  const Decision d = policy::annotate_install(record);
  const std::string ext = record.id.str();
  const std::string target_id = browser_.mutable_world().install_extension(std::move(record), target);
  AuditRecord r;
  r.extension_id = ext;
  r.action = "install";
  r.target_id = target_id;
  r.violated = d.violated;
  r.tags = d.tags;
  append_audit(std::move(r));
  return target_id;
}

std::vector<target::TargetInfo> Broker::get_targets(const ExtensionId& ext) {
  Lock lock(mu_);
  const ExtensionRecord rec = extension_or_throw(ext, "getTargets", std::nullopt);
  if (!rec.has_permission("debugger"))
    deny(ext.str(), "getTargets", std::nullopt, std::nullopt,
         Decision::deny(Reason::kMissingPermission, "Extension lacks the debugger permission"));

  const auto& world = browser_.world();
  auto all = target::snapshot_targets(world, attached_counts());
  std::vector<target::TargetInfo> listed;
  SrSet srs;
  if (policy_.mode == policy::Mode::kLegacy) {
    srs.insert(Sr::kSr01Runtime);  // no infobar for listing
    for (auto& info : all) {
      const bool hidden_incognito = info.incognito && !rec.incognito_allowed;
      if (hidden_incognito && policy_.fixes.fix_incognito_targets) continue;
      if (hidden_incognito) srs.insert(Sr::kSr02);
      const world::PageNode* page = world.find_page(info.target_id);
      if (page && !policy::in_legitimate_scope(rec, *page, world)) srs.insert(Sr::kSr03);
      listed.push_back(std::move(info));
    }
  } else {
    for (auto& info : all) {
      auto d = policy::may_attach(rec, policy::TargetRef::by_target(info.target_id), world, policy_);
      if (!d.denied()) listed.push_back(std::move(info));
    }
  }
  AuditRecord r;
  r.extension_id = ext.str();
  r.action = "getTargets";
  r.violated = srs;
  r.tags = {"listed=" + std::to_string(listed.size()) + "/" + std::to_string(all.size())};
  append_audit(std::move(r));
  return listed;
}

SessionKey Broker::attach(const ExtensionId& ext, const policy::TargetRef& ref, const std::string& version) {
  Lock lock(mu_);
  const std::string label = ref.is_tab() ? ref.describe() : std::get<std::string>(ref.value);
  const ExtensionRecord rec = extension_or_throw(ext, "attach", label);
  if (version != kProtocolVersion)
    deny(ext.str(), "attach", label, std::nullopt,
         Decision::deny(Reason::kBadVersion, "Requested protocol version is not supported: " + version));

  const Decision d = policy::may_attach(rec, ref, browser_.world(), policy_);
  if (d.denied()) deny(ext.str(), "attach", label, std::nullopt, d);

  std::string target_id = label;
  if (ref.is_tab()) target_id = browser_.world().find_tab(std::get<int>(ref.value))->target_id;
  const SessionKey key{ext, target_id};
  const Decision already = Decision::deny(Reason::kAlreadyAttached, "Another debugger is already attached to the target");
  if (active_session(key)) deny(ext.str(), "attach", target_id, std::nullopt, already);

  auto& bar = infobars_[ext.str()];
  if (policy_.mode == policy::Mode::kHardened && policy_.hardened.reattach_cooldown_ms > 0 && bar.last_cancel_at &&
      clock_->now_ms() - *bar.last_cancel_at < policy_.hardened.reattach_cooldown_ms) {
    deny(ext.str(), "attach", target_id, std::nullopt,
         Decision::deny(Reason::kReattachCooldown, "Re-attach is blocked for " +
                                                       std::to_string(policy_.hardened.reattach_cooldown_ms) +
                                                       " ms after the user cancelled the infobar"));
  }

  std::vector<std::string> tags;
  if (d.verdict == policy::Verdict::kAllowPendingConsent) {
    if (!await_consent(lock, ext.str(), target_id))
      deny(ext.str(), "attach", target_id, std::nullopt,
           Decision::deny(Reason::kConsentDenied, "The user did not allow the debugger to attach"));
    if (active_session(key)) deny(ext.str(), "attach", target_id, std::nullopt, already);
    tags.push_back("consent=approved");
  }

  DebugSession session(key);
  session.protocol_version = version;
  session.opened_at = clock_->now_ms();
  session.browser_target = target_id == target::kBrowserTargetId;
  sessions_.insert_or_assign(key, std::move(session));
  infobars_[ext.str()].attached_targets.insert(target_id);
  refresh_infobar(ext);

  AuditRecord r;
  r.extension_id = ext.str();
  r.action = "attach";
  r.target_id = target_id;
  r.violated = d.violated;
  if (policy_.flags.silent_debugger_extension_api) {
    r.violated.insert(Sr::kSr01Runtime);
    tags.push_back("infobar-suppressed");
  } else {
    tags.push_back("infobar-visible");
  }
  r.tags = std::move(tags);
  append_audit(std::move(r));
  emit_infobar(ext);
  return key;
}

std::size_t Broker::cancel_infobar(const ExtensionId& ext) {
  Lock lock(mu_);
  std::size_t count = 0;
  for (auto& [key, session] : sessions_) {
    if (key.extension_id == ext && session.state == SessionState::kActive) {
      close_session(session, "UserCanceled");
      ++count;
    }
  }
  auto& bar = infobars_[ext.str()];
  if (count > 0) bar.last_cancel_at = clock_->now_ms();
  refresh_infobar(ext);
  AuditRecord r;
  r.extension_id = ext.str();
  r.action = "cancelInfobar";
  r.tags = {"detached=" + std::to_string(count)};
  append_audit(std::move(r));
  emit_infobar(ext);
  return count;
}

cdp::Json Broker::send_command(const SessionKey& key, const std::string& method, const cdp::Json& params,
                               const std::optional<std::string>& session_id) {
  Lock lock(mu_);
  const ExtensionRecord rec = extension_or_throw(key.extension_id, "sendCommand", key.target_id);
  DebugSession* session = active_session(key);
  if (!session)
    deny(key.extension_id.str(), "sendCommand", key.target_id, method,
         Decision::deny(Reason::kSessionClosed, "Debugger is not attached to the target"));

  const auto msg = cdp::CdpMessage::command(next_command_id_++, method, params, session_id);
  const policy::SessionContext ctx{key.extension_id, key.target_id, session->browser_target};
  const Decision d = policy::may_send_command(ctx, msg, policy_);
  if (d.denied()) deny(key.extension_id.str(), "sendCommand", key.target_id, method, d);

  const auto route = session->browser_target ? mock::Route::browser() : mock::Route::session(key.target_id);
  mock::CommandResult result;
  try {
    result = browser_.handle_command(route, msg);
  } catch (const mock::BrowserError& e) {
    AuditRecord r;
    r.extension_id = key.extension_id.str();
    r.action = "sendCommand";
    r.target_id = key.target_id;
    r.method = method;
    r.message = e.what();
    r.tags = {"error=" + std::string(mock::to_string(e.code()))};
    append_audit(std::move(r));
    sync_flags_from_world();
    revalidate_sessions();
    throw BrokerError(Reason::kProtocolError, e.what(), e.protocol_code());
  }

  const auto& world = browser_.world();
  const world::PageNode* page = world.find_page(key.target_id);
  if (policy_.mode == policy::Mode::kHardened && method == "Network.getAllCookies" && page) {
    const std::string host = target::url_host(page->url);
    cdp::Json kept = cdp::Json::array();
    for (const auto& c : result.result["cookies"]) {
      if (cookie_matches_host(c.value("domain", ""), host)) kept.push_back(c);
    }
    result.result["cookies"] = kept;
  }

  SrSet srs = d.violated;
  if (page && world.is_incognito(page->context_id) && !rec.incognito_allowed) srs.insert(Sr::kSr02);
  if (discloses_incognito(rec, result.events)) srs.insert(Sr::kSr02);
  if (method == "Target.getTargets" && !rec.incognito_allowed) {
    for (const auto& info : result.result.value("targetInfos", cdp::Json::array())) {
      if (info.value("incognito", false)) srs.insert(Sr::kSr02);
    }
  }

  for (auto& ev : result.events) session->events.push_back(std::move(ev));
  AuditRecord r;
  r.extension_id = key.extension_id.str();
  r.action = "sendCommand";
  r.target_id = key.target_id;
  r.method = method;
  r.violated = policy_.mode == policy::Mode::kLegacy ? srs : SrSet{};
  r.tags = d.tags;
  append_audit(std::move(r));

  sync_flags_from_world();
  revalidate_sessions();
  return result.result;
}

void Broker::detach(const SessionKey& key) {
  Lock lock(mu_);
  DebugSession* session = active_session(key);
  if (!session)
    deny(key.extension_id.str(), "detach", key.target_id, std::nullopt,
         Decision::deny(Reason::kSessionClosed, "Debugger is not attached to the target"));
  close_session(*session, "ClientDetached");
  AuditRecord r;
  r.extension_id = key.extension_id.str();
  r.action = "detach";
  r.target_id = key.target_id;
  append_audit(std::move(r));
  emit_infobar(key.extension_id);
}

std::vector<mock::SourcedEvent> Broker::take_events(const SessionKey& key) {
  Lock lock(mu_);
  auto it = sessions_.find(key);
  if (it == sessions_.end()) throw BrokerError(Reason::kSessionClosed, "No such session");
  std::vector<mock::SourcedEvent> out(std::make_move_iterator(it->second.events.begin()),
                                      std::make_move_iterator(it->second.events.end()));
  it->second.events.clear();
  return out;
}

std::string Broker::run_script(const ExtensionId& ext, const std::string& target_id, const std::string& expression) {
  Lock lock(mu_);
  const ExtensionRecord rec = extension_or_throw(ext, "runScript", target_id);
  if (!rec.has_permission("scripting"))
    deny(ext.str(), "runScript", target_id, std::nullopt,
         Decision::deny(Reason::kMissingPermission, "Extension lacks the scripting permission"));
  const world::PageNode* page = browser_.world().find_page(target_id);
  if (!page || (browser_.world().is_incognito(page->context_id) && !rec.incognito_allowed))
    deny(ext.str(), "runScript", target_id, std::nullopt, Decision::deny(Reason::kUnknownTarget, "No tab with given id."));

  const Decision d = policy::may_run_script(rec, page->url, policy_);
  if (d.denied()) deny(ext.str(), "runScript", target_id, std::nullopt, d);

  std::string value;
  try {
    value = browser_.eval_expression(target_id, expression);
  } catch (const mock::BrowserError& e) {
    AuditRecord r;
    r.extension_id = ext.str();
    r.action = "runScript";
    r.target_id = target_id;
    r.message = e.what();
    r.tags = {"error=" + std::string(mock::to_string(e.code()))};
    append_audit(std::move(r));
    throw BrokerError(Reason::kProtocolError, e.what(), e.protocol_code());
  }
  AuditRecord r;
  r.extension_id = ext.str();
  r.action = "runScript";
  r.target_id = target_id;
  r.violated = d.violated;
  r.tags = d.tags;
  append_audit(std::move(r));
  sync_flags_from_world();
  revalidate_sessions();
  return value;
}

cdp::CdpMessage Broker::binding_send(const SessionKey& proxy, const std::string& binding, const std::string& text) {
  Lock lock(mu_);
  const ExtensionRecord rec = extension_or_throw(proxy.extension_id, "bindingSend", proxy.target_id);
  const std::string ext = proxy.extension_id.str();
  DebugSession* session = active_session(proxy);
  if (!session)
    deny(ext, "bindingSend", proxy.target_id, std::nullopt,
         Decision::deny(Reason::kSessionClosed, "Debugger is not attached to the target"));
  if (policy_.mode == policy::Mode::kHardened)
    deny(ext, "bindingSend", proxy.target_id, std::nullopt,
         Decision::deny(Reason::kBrowserTargetDenied, "Protocol bindings are disabled"));

  const auto& world = browser_.world();
  const world::PageNode* proxy_page = world.find_page(proxy.target_id);
  if (!proxy_page || !proxy_page->bindings.contains(binding))
    deny(ext, "bindingSend", proxy.target_id, std::nullopt,
         Decision::deny(Reason::kProtocolError, "window." + binding + " is not defined"));
  const std::string channel = proxy_page->bindings.at(binding);

  cdp::CdpMessage msg;
  try {
    msg = cdp::parse_message(text);
  } catch (const cdp::CodecError& e) {
    deny(ext, "bindingSend", proxy.target_id, std::nullopt, Decision::deny(Reason::kProtocolError, e.what()));
  }
  if (msg.kind != cdp::MessageKind::kCommand)
    deny(ext, "bindingSend", proxy.target_id, std::nullopt,
         Decision::deny(Reason::kProtocolError, "Expected a command message"));

  // The target this message acts on, if any.
  std::optional<std::string> acted_on;
  if (msg.session_id) acted_on = browser_.channel_session_target(channel, *msg.session_id);
  if (msg.method == "Target.attachToTarget" && msg.params && (*msg.params)["targetId"].is_string())
    acted_on = (*msg.params)["targetId"].get<std::string>();

  mock::BindingReply reply = browser_.binding_send(proxy.target_id, binding, text);

  SrSet srs;
  if (!reply.response.error) {
    srs.insert(Sr::kSr03);  // full browser-target capability, unmediated
    if (acted_on) {
      if (const world::PageNode* page = world.find_page(*acted_on)) {
        const bool hidden = world.is_incognito(page->context_id) && !rec.incognito_allowed;
        srs = policy::annotate_escalation(target::classify_url(page->url, page->target_id), hidden);
      }
    }
    if (discloses_incognito(rec, reply.events)) srs.insert(Sr::kSr02);
    if (msg.method == "Target.getTargets" && reply.response.result && !rec.incognito_allowed) {
      for (const auto& info : reply.response.result->value("targetInfos", cdp::Json::array())) {
        if (info.value("incognito", false)) srs.insert(Sr::kSr02);
      }
    }
  }
  for (auto& ev : reply.events) session->events.push_back(std::move(ev));

  AuditRecord r;
  r.extension_id = ext;
  r.action = "bindingSend";
  r.target_id = acted_on.value_or(proxy.target_id);
  r.method = msg.method;
  r.violated = srs;
  r.tags = {"via=" + proxy.target_id + "/" + binding};
  if (reply.response.error) {
    r.message = reply.response.error->message;
    r.tags.push_back("error");
  }
  append_audit(std::move(r));
  sync_flags_from_world();
  revalidate_sessions();
  return reply.response;
}

// --- control surface ---------------------------------------------------------

std::vector<target::TargetInfo> Broker::snapshot() const {
  Lock lock(mu_);
  return target::snapshot_targets(browser_.world(), attached_counts());
}

std::vector<DebugSession> Broker::sessions() const {
  Lock lock(mu_);
  std::vector<DebugSession> out;
  for (const auto& [key, s] : sessions_) out.push_back(s);
  return out;
}

std::vector<ExtensionRecord> Broker::extensions() const {
  Lock lock(mu_);
  return browser_.world().extensions;
}

policy::PolicyConfig Broker::policy() const {
  Lock lock(mu_);
  return policy_;
}

void Broker::set_policy(policy::PolicyConfig policy) {
  Lock lock(mu_);
  policy_ = std::move(policy);
  sync_flag_mirrors_to_world();
  for (auto& [ext, st] : infobars_) refresh_infobar(ExtensionId::from_string(ext));
  revalidate_sessions();
}

std::vector<ConsentRequest> Broker::consents() const {
  Lock lock(mu_);
  return consents_;
}

bool Broker::resolve_consent(const std::string& request_id, bool allow) {
  Lock lock(mu_);
  auto it = std::find_if(consents_.begin(), consents_.end(),
                         [&](const ConsentRequest& c) { return c.request_id == request_id; });
  if (it == consents_.end() || it->state != ConsentState::kPending) return false;
  it->state = allow ? ConsentState::kApproved : ConsentState::kDenied;
  emit({{"kind", "consent"}, {"request", to_json(*it)}});
  consent_cv_.notify_all();
  return true;
}

std::vector<AuditRecord> Broker::audit() const {
  Lock lock(mu_);
  return audit_;
}

InfobarState Broker::infobar(const ExtensionId& ext) const {
  Lock lock(mu_);
  auto it = infobars_.find(ext.str());
  return it == infobars_.end() ? InfobarState{} : it->second;
}

world::BrowserWorld Broker::world() const {
  Lock lock(mu_);
  return browser_.world();
}

int Broker::subscribe(FrameListener listener) {
  Lock lock(mu_);
  const int token = next_listener_++;
  listeners_[token] = std::move(listener);
  return token;
}

void Broker::unsubscribe(int token) {
  Lock lock(mu_);
  listeners_.erase(token);
}

}  // namespace warden::broker
