#include "warden/world.hpp"

#include <algorithm>
#include <set>

namespace warden::world {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

[[noreturn]] void schema_fail(const std::string& message) { throw SchemaError(message); }

void check_keys(const json& obj, std::initializer_list<std::string_view> allowed,
                const std::string& where) {
  if (!obj.is_object()) schema_fail(where + " must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      schema_fail(where + ": unknown key '" + it.key() + "'");
  }
}

std::string str_field(const json& obj, const char* key, const std::string& where,
                      std::optional<std::string> fallback = std::nullopt) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    if (fallback) return *fallback;
    schema_fail(where + ": missing '" + key + "'");
  }
  if (!it->is_string()) schema_fail(where + ": '" + key + "' must be a string");
  return it->get<std::string>();
}

bool bool_field(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) return false;
  if (!it->is_boolean()) schema_fail(where + ": '" + key + "' must be a boolean");
  return it->get<bool>();
}

std::map<std::string, std::string> string_map(const json& obj, const char* key,
                                              const std::string& where) {
  std::map<std::string, std::string> out;
  auto it = obj.find(key);
  if (it == obj.end()) return out;
  if (!it->is_object()) schema_fail(where + ": '" + key + "' must be an object");
  for (auto kv = it->begin(); kv != it->end(); ++kv) {
    if (!kv.value().is_string())
      schema_fail(where + ": '" + key + "." + kv.key() + "' must be a string");
    out[kv.key()] = kv.value().get<std::string>();
  }
  return out;
}

std::vector<NetworkExchange> parse_traffic(const json& obj, const std::string& where) {
  std::vector<NetworkExchange> out;
  auto it = obj.find("traffic");
  if (it == obj.end()) return out;
  if (!it->is_array()) schema_fail(where + ": 'traffic' must be an array");
  std::set<std::string> seen;
  for (const auto& ex : *it) {
    const std::string at = where + ".traffic";
    check_keys(ex, {"requestId", "url", "requestHeaders", "responseStatusCode", "responseHeaders"}, at);
    NetworkExchange n;
    n.request_id = str_field(ex, "requestId", at);
    if (!seen.insert(n.request_id).second) schema_fail(at + ": duplicate requestId " + n.request_id);
    n.url = str_field(ex, "url", at);
    n.request_headers = string_map(ex, "requestHeaders", at);
    if (auto code = ex.find("responseStatusCode"); code != ex.end()) {
      if (!code->is_number_integer()) schema_fail(at + ": responseStatusCode must be an integer");
      n.response_status_code = code->get<int>();
    }
    n.response_headers = string_map(ex, "responseHeaders", at);
    out.push_back(std::move(n));
  }
  return out;
}

std::optional<InterstitialKind> parse_interstitial_kind(const std::string& text) {
  for (auto k : {InterstitialKind::kTls, InterstitialKind::kSafeBrowsing, InterstitialKind::kCaptivePortal}) {
    if (to_string(k) == text) return k;
  }
  return std::nullopt;
}

std::optional<PermissionState> parse_permission_state(const std::string& text) {
  for (auto s : {PermissionState::kGranted, PermissionState::kDenied, PermissionState::kPrompt}) {
    if (to_string(s) == text) return s;
  }
  return std::nullopt;
}

std::string next_target_id(BrowserWorld& w, const json& desc, const std::string& where) {
  const int ordinal = w.next_target++;
  if (auto it = desc.find("targetId"); it != desc.end()) {
    if (!it->is_string() || it->get<std::string>().empty())
      schema_fail(where + ": targetId must be a non-empty string");
    return it->get<std::string>();
  }
  return "t" + std::to_string(ordinal);
}

void check_unique_target(const BrowserWorld& w, const std::string& id) {
  if (id == target::kBrowserTargetId) schema_fail("targetId 'browser' is reserved");
  if (w.find_page(id)) schema_fail("duplicate targetId " + id);
}

void add_tab(BrowserWorld& w, const json& desc, std::size_t index) {
  const std::string where = "world.tabs[" + std::to_string(index) + "]";
  check_keys(desc, {"targetId", "type", "url", "title", "faviconUrl", "context", "data", "elements",
                    "pendingUrl", "interstitialKind", "traffic"},
             where);
  PageNode page;
  page.target_id = next_target_id(w, desc, where);
  check_unique_target(w, page.target_id);
  page.tab_id = w.next_tab++;
  if (desc.contains("type")) {
    auto type = target::parse_target_type(str_field(desc, "type", where));
    if (!type) schema_fail(where + ": unknown target type");
    page.type = *type;
  }
  page.url = str_field(desc, "url", where);
  page.title = str_field(desc, "title", where, page.url);
  page.favicon_url = str_field(desc, "faviconUrl", where, std::string());
  page.context_id = str_field(desc, "context", where, std::string(kDefaultContext));
  if (!w.find_context(page.context_id)) schema_fail(where + ": unknown context " + page.context_id);
  page.data = string_map(desc, "data", where);
  page.elements = string_map(desc, "elements", where);
  page.traffic = parse_traffic(desc, where);

  const bool interstitial =
      target::classify_url(page.url, page.target_id).kind == target::ClassKind::kInterstitial;
  if (desc.contains("pendingUrl")) page.pending_url = str_field(desc, "pendingUrl", where);
  if (interstitial != page.pending_url.has_value())
    schema_fail(where + ": pendingUrl is required exactly for interstitial pages");
  if (interstitial) {
    auto kind = parse_interstitial_kind(str_field(desc, "interstitialKind", where, std::string("tls")));
    if (!kind) schema_fail(where + ": unknown interstitialKind");
    page.interstitial_kind = kind;
  } else if (desc.contains("interstitialKind")) {
    schema_fail(where + ": interstitialKind on a non-interstitial page");
  }
  w.pages.push_back(std::move(page));
}

}  // namespace

std::string_view to_string(InterstitialKind kind) {
  switch (kind) {
    case InterstitialKind::kTls: return "tls";
    case InterstitialKind::kSafeBrowsing: return "safeBrowsing";
    case InterstitialKind::kCaptivePortal: return "captivePortal";
  }
  return "tls";
}

std::string_view to_string(PermissionState state) {
  switch (state) {
    case PermissionState::kGranted: return "granted";
    case PermissionState::kDenied: return "denied";
    case PermissionState::kPrompt: return "prompt";
  }
  return "prompt";
}

PageNode* BrowserWorld::find_page(const std::string& target_id) {
  for (auto& p : pages) {
    if (p.target_id == target_id) return &p;
  }
  return nullptr;
}

const PageNode* BrowserWorld::find_page(const std::string& target_id) const {
  return const_cast<BrowserWorld*>(this)->find_page(target_id);
}

const PageNode* BrowserWorld::find_tab(int tab_id) const {
  for (const auto& p : pages) {
    if (p.is_tab() && p.tab_id == tab_id) return &p;
  }
  return nullptr;
}

const Context* BrowserWorld::find_context(const std::string& id) const {
  for (const auto& c : contexts) {
    if (c.id == id) return &c;
  }
  return nullptr;
}

bool BrowserWorld::is_incognito(const std::string& context_id) const {
  const Context* c = find_context(context_id);
  return c && c->incognito;
}

std::string BrowserWorld::store_key(const std::string& context_id) const {
  return is_incognito(context_id) ? context_id : std::string(kDefaultStore);
}

const identity::ExtensionRecord* BrowserWorld::find_extension(const identity::ExtensionId& id) const {
  for (const auto& e : extensions) {
    if (e.id == id) return &e;
  }
  return nullptr;
}

std::string BrowserWorld::install_extension(identity::ExtensionRecord record, const json& target) {
  if (find_extension(record.id)) schema_fail("extension " + record.id.str() + " is already installed");
  const std::string where = "extension " + record.name;
  if (!target.is_object()) schema_fail(where + ": target must be an object");
  check_keys(target, {"targetId", "type", "path", "title", "data", "traffic"}, where + ".target");

  PageNode page;
  page.target_id = next_target_id(*this, target, where);
  check_unique_target(*this, page.target_id);
  page.type = target::TargetType::kServiceWorker;
  if (target.contains("type")) {
    auto type = target::parse_target_type(str_field(target, "type", where));
    if (!type || *type == target::TargetType::kBrowser) schema_fail(where + ": bad target type");
    page.type = *type;
  }
  const std::string path = str_field(target, "path", where, std::string("background.js"));
  page.url = "chrome-extension://" + record.id.str() + "/" + path;
  page.title = str_field(target, "title", where, record.name);
  page.data = string_map(target, "data", where);
  page.traffic = parse_traffic(target, where);
  std::string id = page.target_id;
  pages.push_back(std::move(page));
  extensions.push_back(std::move(record));
  return id;
}

BrowserWorld build_world(const json& spec) {
  check_keys(spec, {"contexts", "tabs", "extensions", "cookies", "settings", "sitePermissions"}, "world");
  BrowserWorld w;

  if (auto it = spec.find("contexts"); it != spec.end()) {
    if (!it->is_array()) schema_fail("world.contexts must be an array");
    for (const auto& c : *it) {
      check_keys(c, {"id", "incognito"}, "world.contexts");
      Context ctx{str_field(c, "id", "world.contexts"), bool_field(c, "incognito", "world.contexts")};
      if (w.find_context(ctx.id)) schema_fail("duplicate context " + ctx.id);
      if (ctx.incognito && ctx.id == kDefaultStore)
        schema_fail("the default context cannot be incognito");
      w.contexts.push_back(std::move(ctx));
    }
  } else {
    w.contexts.push_back({kDefaultContext, false});
  }
  w.cookie_stores[kDefaultStore];
  for (const auto& c : w.contexts) {
    if (c.incognito) w.cookie_stores[c.id];
  }

  if (auto it = spec.find("tabs"); it != spec.end()) {
    if (!it->is_array()) schema_fail("world.tabs must be an array");
    for (std::size_t i = 0; i < it->size(); ++i) add_tab(w, (*it)[i], i);
  }

  if (auto it = spec.find("extensions"); it != spec.end()) {
    if (!it->is_array()) schema_fail("world.extensions must be an array");
    for (const auto& desc : *it) {
      if (!desc.is_object()) schema_fail("world.extensions entries must be objects");
      json manifest = desc;
      json target = json::object();
      if (auto t = manifest.find("target"); t != manifest.end()) {
        target = *t;
        manifest.erase("target");
      }
      try {
        w.install_extension(identity::record_from_description(manifest), target);
      } catch (const identity::IdentityError& e) {
        schema_fail(std::string("world.extensions: ") + e.what());
      }
    }
  }

  if (auto it = spec.find("cookies"); it != spec.end()) {
    if (!it->is_array()) schema_fail("world.cookies must be an array");
    for (const auto& c : *it) {
      const std::string where = "world.cookies";
      check_keys(c, {"name", "value", "domain", "path", "secure", "httpOnly", "context"}, where);
      Cookie cookie;
      cookie.name = str_field(c, "name", where);
      cookie.value = str_field(c, "value", where);
      cookie.domain = str_field(c, "domain", where);
      cookie.path = str_field(c, "path", where, std::string("/"));
      cookie.secure = bool_field(c, "secure", where);
      cookie.http_only = bool_field(c, "httpOnly", where);
      const std::string ctx = str_field(c, "context", where, std::string(kDefaultContext));
      if (!w.find_context(ctx)) schema_fail(where + ": unknown context " + ctx);
      auto& store = w.cookie_stores[w.store_key(ctx)];
      for (const auto& other : store) {
        if (other.name == cookie.name && other.domain == cookie.domain && other.path == cookie.path)
          schema_fail(where + ": duplicate cookie " + cookie.name + "@" + cookie.domain);
      }
      store.push_back(std::move(cookie));
    }
  }

  w.settings = string_map(spec, "settings", "world");

  if (auto it = spec.find("sitePermissions"); it != spec.end()) {
    if (!it->is_array()) schema_fail("world.sitePermissions must be an array");
    for (const auto& p : *it) {
      const std::string where = "world.sitePermissions";
      check_keys(p, {"origin", "permission", "state"}, where);
      auto state = parse_permission_state(str_field(p, "state", where));
      if (!state) schema_fail(where + ": unknown state");
      w.site_permissions[{str_field(p, "origin", where), str_field(p, "permission", where)}] = *state;
    }
  }
  return w;
}

ordered_json to_json(const Cookie& c) {
  ordered_json out;
  out["name"] = c.name;
  out["value"] = c.value;
  out["domain"] = c.domain;
  out["path"] = c.path;
  out["secure"] = c.secure;
  out["httpOnly"] = c.http_only;
  return out;
}

ordered_json to_json(const BrowserWorld& w) {
  ordered_json out;
  ordered_json contexts = ordered_json::array();
  for (const auto& c : w.contexts) contexts.push_back({{"id", c.id}, {"incognito", c.incognito}});
  out["contexts"] = contexts;

  ordered_json pages = ordered_json::array();
  for (const auto& p : w.pages) {
    ordered_json page;
    page["targetId"] = p.target_id;
    page["tabId"] = p.tab_id;
    page["type"] = target::to_string(p.type);
    page["url"] = p.url;
    page["title"] = p.title;
    page["context"] = p.context_id;
    page["data"] = p.data;
    page["elements"] = p.elements;
    if (p.pending_url) page["pendingUrl"] = *p.pending_url;
    if (p.interstitial_kind) page["interstitialKind"] = to_string(*p.interstitial_kind);
    page["bindings"] = p.bindings;
    pages.push_back(std::move(page));
  }
  out["pages"] = pages;

  ordered_json extensions = ordered_json::array();
  for (const auto& e : w.extensions) extensions.push_back(ordered_json(identity::to_json(e)));
  out["extensions"] = extensions;

  ordered_json stores = ordered_json::object();
  for (const auto& [key, cookies] : w.cookie_stores) {
    ordered_json list = ordered_json::array();
    for (const auto& c : cookies) list.push_back(to_json(c));
    stores[key] = list;
  }
  out["cookieStores"] = stores;

  ordered_json perms = ordered_json::array();
  for (const auto& [key, state] : w.site_permissions) {
    perms.push_back({{"origin", key.first}, {"permission", key.second}, {"state", to_string(state)}});
  }
  out["sitePermissions"] = perms;
  out["settings"] = w.settings;
  out["consentLog"] = w.consent_log;
  return out;
}

}  // namespace warden::world
