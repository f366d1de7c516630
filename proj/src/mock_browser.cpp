#include "warden/mock_browser.hpp"

#include <algorithm>
#include <set>

namespace warden::mock {

namespace {

using cdp::CdpMessage;
using cdp::Json;
using target::ClassKind;

[[noreturn]] void fail(BrowserErrc code, const std::string& message) { throw BrowserError(code, message); }

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\n')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\n')) s.remove_suffix(1);
  return s;
}

bool is_single_token(std::string_view s) {
  return !s.empty() && s.find_first_of(" \t\n=") == std::string_view::npos;
}

bool is_settings_key(std::string_view key) {
  return key.rfind("flags.", 0) == 0 || key.rfind("settings.", 0) == 0;
}

const std::string& string_param(const CdpMessage& msg, const char* key) {
  if (!msg.params) fail(BrowserErrc::kInvalidParams, std::string("missing params.") + key);
  auto it = msg.params->find(key);
  if (it == msg.params->end() || !it->is_string())
    fail(BrowserErrc::kInvalidParams, std::string("params.") + key + " must be a string");
  return it->get_ref<const std::string&>();
}

Json headers_json(const std::map<std::string, std::string>& headers) {
  Json out = Json::object();
  for (const auto& [k, v] : headers) out[k] = v;
  return out;
}

}  // namespace

std::string_view to_string(BrowserErrc code) {
  switch (code) {
    case BrowserErrc::kMethodNotFound: return "MethodNotFound";
    case BrowserErrc::kInvalidParams: return "InvalidParams";
    case BrowserErrc::kNoSuchTarget: return "NoSuchTarget";
    case BrowserErrc::kParseError: return "ParseError";
    case BrowserErrc::kNotFound: return "NotFound";
    case BrowserErrc::kNoSuchElement: return "NoSuchElement";
    case BrowserErrc::kProceedNotApplicable: return "ProceedNotApplicable";
  }
  return "Unknown";
}

std::int64_t BrowserError::protocol_code() const {
  switch (code_) {
    case BrowserErrc::kMethodNotFound: return -32601;
    case BrowserErrc::kInvalidParams: return -32602;
    case BrowserErrc::kParseError: return -32700;
    default: return -32000;
  }
}

MockBrowser::MockBrowser(world::BrowserWorld world) : world_(std::move(world)) {}

world::PageNode& MockBrowser::page_for(const Route& route, const std::string& method) {
  if (route.kind != Route::Kind::kSession) fail(BrowserErrc::kMethodNotFound, "'" + method + "' wasn't found");
  world::PageNode* page = world_.find_page(route.target_id);
  if (!page) fail(BrowserErrc::kNoSuchTarget, "No target with given id " + route.target_id);
  return *page;
}

std::vector<SourcedEvent> MockBrowser::traffic_events(const world::PageNode& page) const {
  std::vector<SourcedEvent> events;
  for (const auto& ex : page.traffic) {
    Json request = {{"url", ex.url}, {"method", "GET"}, {"headers", headers_json(ex.request_headers)}};
    Json req_params = {{"requestId", ex.request_id}, {"request", request}};
    events.push_back({page.target_id, CdpMessage::event("Fetch.requestPaused", req_params)});

    Json resp_params = req_params;
    resp_params["responseStatusCode"] = ex.response_status_code;
    resp_params["responseHeaders"] = headers_json(ex.response_headers);
    events.push_back({page.target_id, CdpMessage::event("Fetch.requestPaused", resp_params)});
  }
  return events;
}

CommandResult MockBrowser::handle_command(const Route& route, const CdpMessage& msg) {
  ++command_count_;
  const std::string& m = msg.method;
  const bool root = route.kind != Route::Kind::kSession;
  CommandResult out;

  if (m == "Runtime.evaluate") {
    auto& page = page_for(route, m);
    const std::string value = eval_expression(page.target_id, string_param(msg, "expression"));
    out.result = {{"result", {{"type", "string"}, {"value", value}}}};
  } else if (m == "Network.getAllCookies") {
    std::string store = world::kDefaultStore;
    if (!root) store = world_.store_key(page_for(route, m).context_id);
    Json cookies = Json::array();
    for (const auto& c : world_.cookie_stores[store]) cookies.push_back(world::to_json(c));
    out.result = {{"cookies", cookies}};
  } else if (m == "Browser.grantPermissions") {
    const std::string& origin = string_param(msg, "origin");
    auto perms = msg.params->find("permissions");
    if (perms == msg.params->end() || !perms->is_array())
      fail(BrowserErrc::kInvalidParams, "params.permissions must be an array");
    for (const auto& p : *perms) {
      if (!p.is_string()) fail(BrowserErrc::kInvalidParams, "permission names must be strings");
    }
    // Deliberately no consent log entry.
    for (const auto& p : *perms) world_.site_permissions[{origin, p.get<std::string>()}] = world::PermissionState::kGranted;
  } else if (m == "Page.navigate") {
    auto& page = page_for(route, m);
    const std::string& url = string_param(msg, "url");
    if (target::classify_url(url, page.target_id).kind == ClassKind::kInterstitial)
      fail(BrowserErrc::kInvalidParams, "Cannot navigate to an error page");
    page.url = url;
    page.title = url;
    page.pending_url.reset();
    page.interstitial_kind.reset();
    out.result = {{"frameId", page.target_id}};
  } else if (m == "Fetch.enable") {
    if (root) {
      for (const auto& page : world_.pages) {
        auto events = traffic_events(page);
        out.events.insert(out.events.end(), events.begin(), events.end());
      }
    } else {
      out.events = traffic_events(page_for(route, m));
    }
  } else if (m == "Tracing.start") {
    if (!root) fail(BrowserErrc::kMethodNotFound, "'" + m + "' wasn't found");
    tracing_ = true;
  } else if (m == "Tracing.end") {
    if (!root) fail(BrowserErrc::kMethodNotFound, "'" + m + "' wasn't found");
    if (!tracing_) fail(BrowserErrc::kInvalidParams, "Tracing is not started");
    tracing_ = false;
    const auto tabs = std::count_if(world_.pages.begin(), world_.pages.end(),
                                    [](const world::PageNode& p) { return p.is_tab(); });
    out.result = {{"trace",
                   {{"tabCount", tabs},
                    {"extensionCount", world_.extensions.size()},
                    {"commandCount", command_count_}}}};
  } else if (m == "Target.getTargets") {
    if (!root) fail(BrowserErrc::kMethodNotFound, "'" + m + "' wasn't found");
    Json infos = Json::array();
    for (const auto& info : target::snapshot_targets(world_)) infos.push_back(target::to_json(info));
    target::TargetInfo browser;
    browser.target_id = std::string(target::kBrowserTargetId);
    browser.type = target::TargetType::kBrowser;
    browser.browser_context_id = world::kDefaultContext;
    infos.push_back(target::to_json(browser));
    out.result = {{"targetInfos", infos}};
  } else if (m == "Target.sendMessageToTarget") {
    // Accepted and dropped: nothing reaches the destination.
  } else if (m == "Target.exposeDevToolsProtocol") {
    if (!root) fail(BrowserErrc::kMethodNotFound, "'" + m + "' wasn't found");
    const std::string& target_id = string_param(msg, "targetId");
    world::PageNode* page = world_.find_page(target_id);
    if (!page) fail(BrowserErrc::kNoSuchTarget, "No target with given id " + target_id);
    std::string name = "cdp";
    if (auto it = msg.params->find("bindingName"); it != msg.params->end()) {
      if (!it->is_string() || it->get<std::string>().empty())
        fail(BrowserErrc::kInvalidParams, "params.bindingName must be a non-empty string");
      name = it->get<std::string>();
    }
    page->bindings[name] = "ch" + std::to_string(next_channel_++);
  } else if (m == "Target.attachToTarget") {
    if (route.kind != Route::Kind::kBindingRoot)
      fail(BrowserErrc::kInvalidParams, "Flattened sessions are not available on this connection");
    const std::string& target_id = string_param(msg, "targetId");
    if (!world_.find_page(target_id)) fail(BrowserErrc::kNoSuchTarget, "No target with given id " + target_id);
    auto flatten = msg.params->find("flatten");
    if (flatten == msg.params->end() || !flatten->is_boolean() || !flatten->get<bool>())
      fail(BrowserErrc::kInvalidParams, "Only flattened sessions are supported");
    const std::string session_id = "bs" + std::to_string(next_binding_session_++);
    channel_sessions_[route.channel][session_id] = target_id;
    out.result = {{"sessionId", session_id}};
  } else {
    fail(BrowserErrc::kMethodNotFound, "'" + m + "' wasn't found");
  }
  return out;
}

std::string MockBrowser::eval_expression(const std::string& target_id, std::string_view expression) {
  world::PageNode* page = world_.find_page(target_id);
  if (!page) fail(BrowserErrc::kNoSuchTarget, "No target with given id " + target_id);
  const bool webui = target::classify_url(page->url, page->target_id).kind == ClassKind::kWebUI;
  auto store_for = [&](std::string_view key) -> std::map<std::string, std::string>& {
    return webui && is_settings_key(key) ? world_.settings : page->data;
  };

  auto proceed = [&]() -> std::string {
    if (!page->pending_url) fail(BrowserErrc::kProceedNotApplicable, "Not an interstitial page");
    page->url = *page->pending_url;
    page->title = page->url;
    page->pending_url.reset();
    page->interstitial_kind.reset();
    return page->url;
  };

  const std::string_view expr = trim(expression);
  if (expr == "list") {
    std::set<std::string> keys;
    for (const auto& [k, v] : page->data) keys.insert(k);
    if (webui) {
      for (const auto& [k, v] : world_.settings) {
        if (is_settings_key(k)) keys.insert(k);
      }
    }
    std::string out;
    for (const auto& k : keys) {
      if (!out.empty()) out.push_back('\n');
      out += k;
    }
    return out;
  }
  if (expr == "proceed") return proceed();

  const auto space = expr.find(' ');
  if (space == std::string_view::npos) fail(BrowserErrc::kParseError, "Unrecognized expression: " + std::string(expr));
  const std::string_view verb = expr.substr(0, space);
  const std::string_view rest = trim(expr.substr(space + 1));

  if (verb == "get" && is_single_token(rest)) {
    const std::string key(rest);
    auto& store = store_for(key);
    auto it = store.find(key);
    if (it == store.end()) fail(BrowserErrc::kNotFound, "No value for key " + key);
    return it->second;
  }
  if (verb == "set") {
    const auto eq = rest.find('=');
    if (eq != std::string_view::npos) {
      const std::string_view key = trim(rest.substr(0, eq));
      if (is_single_token(key)) {
        auto& store = store_for(key);
        std::string previous;
        if (auto it = store.find(std::string(key)); it != store.end()) previous = it->second;
        store[std::string(key)] = std::string(trim(rest.substr(eq + 1)));
        return previous;
      }
    }
  }
  if (verb == "click" && is_single_token(rest)) {
    const std::string id(rest);
    auto it = page->elements.find(id);
    if (it == page->elements.end()) fail(BrowserErrc::kNoSuchElement, "No element with id " + id);
    if (id == "proceed-button") return proceed();
    return "clicked " + it->second;
  }
  fail(BrowserErrc::kParseError, "Unrecognized expression: " + std::string(expr));
}

BindingReply MockBrowser::binding_send(const std::string& proxy_target, const std::string& binding,
                                       std::string_view text) {
  const world::PageNode* proxy = world_.find_page(proxy_target);
  if (!proxy) fail(BrowserErrc::kNoSuchTarget, "No target with given id " + proxy_target);
  auto b = proxy->bindings.find(binding);
  if (b == proxy->bindings.end()) fail(BrowserErrc::kNotFound, "window." + binding + " is not defined");
  const std::string channel = b->second;

  CdpMessage msg;
  try {
    msg = cdp::parse_message(text);
  } catch (const cdp::CodecError& e) {
    fail(BrowserErrc::kParseError, e.what());
  }
  if (msg.kind != cdp::MessageKind::kCommand) fail(BrowserErrc::kParseError, "Expected a command message");

  BindingReply reply;
  Route route = Route::binding_root(channel);
  if (msg.session_id) {
    auto target = channel_session_target(channel, *msg.session_id);
    if (!target) {
      reply.response = CdpMessage::failure(*msg.id, -32001, "Session with given id not found.", msg.session_id);
      return reply;
    }
    route = Route::session(*target);
    route.channel = channel;
    reply.routed_target = *target;
  }
  try {
    auto result = handle_command(route, msg);
    reply.response = CdpMessage::success(*msg.id, std::move(result.result), msg.session_id);
    reply.events = std::move(result.events);
    for (auto& ev : reply.events) ev.event.session_id = msg.session_id;
  } catch (const BrowserError& e) {
    reply.response = CdpMessage::failure(*msg.id, e.protocol_code(), e.what(), msg.session_id);
  }
  return reply;
}

bool MockBrowser::has_binding(const std::string& proxy_target, const std::string& binding) const {
  const world::PageNode* page = world_.find_page(proxy_target);
  return page && page->bindings.contains(binding);
}

std::optional<std::string> MockBrowser::channel_session_target(const std::string& channel,
                                                               const std::string& session_id) const {
  auto ch = channel_sessions_.find(channel);
  if (ch == channel_sessions_.end()) return std::nullopt;
  auto it = ch->second.find(session_id);
  if (it == ch->second.end()) return std::nullopt;
  return it->second;
}

}  // namespace warden::mock
