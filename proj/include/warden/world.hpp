#pragma once

// State of the simulated browser: contexts, tabs, extension targets, cookie
// stores, site permissions and settings. Built from the "world" object of a
// scenario file.

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "warden/extension_identity.hpp"
#include "warden/target_model.hpp"

namespace warden::world {

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kDefaultContext = "default";
inline constexpr const char* kDefaultStore = "default";

struct Context {
  std::string id;
  bool incognito = false;
};

enum class InterstitialKind { kTls, kSafeBrowsing, kCaptivePortal };

struct NetworkExchange {
  std::string request_id;
  std::string url;
  std::map<std::string, std::string> request_headers;
  int response_status_code = 200;
  std::map<std::string, std::string> response_headers;
};

struct PageNode {
  std::string target_id;
  int tab_id = 0;  // 0 for extension targets
  target::TargetType type = target::TargetType::kPage;
  std::string url;
  std::string title;
  std::string favicon_url;
  std::string context_id = kDefaultContext;
  std::map<std::string, std::string> elements;
  std::map<std::string, std::string> data;
  std::optional<std::string> pending_url;
  std::optional<InterstitialKind> interstitial_kind;
  std::vector<NetworkExchange> traffic;
  std::map<std::string, std::string> bindings;  // name -> channel id

  bool is_tab() const { return tab_id > 0; }
};

struct Cookie {
  std::string name;
  std::string value;
  std::string domain;
  std::string path = "/";
  bool secure = false;
  bool http_only = false;
};

enum class PermissionState { kGranted, kDenied, kPrompt };

struct BrowserWorld {
  std::vector<Context> contexts;
  std::vector<PageNode> pages;  // tabs and extension targets, creation order
  std::vector<identity::ExtensionRecord> extensions;
  // "default" is shared by every regular context; incognito contexts are
  // keyed by their own id.
  std::map<std::string, std::vector<Cookie>> cookie_stores;
  std::map<std::pair<std::string, std::string>, PermissionState> site_permissions;
  std::map<std::string, std::string> settings;
  std::vector<nlohmann::json> consent_log;
  int next_target = 1;
  int next_tab = 1;

  PageNode* find_page(const std::string& target_id);
  const PageNode* find_page(const std::string& target_id) const;
  const PageNode* find_tab(int tab_id) const;
  const Context* find_context(const std::string& id) const;
  bool is_incognito(const std::string& context_id) const;
  std::string store_key(const std::string& context_id) const;
  const identity::ExtensionRecord* find_extension(const identity::ExtensionId& id) const;

  // Registers |record| and creates its background target. |target| may set
  // type, path, title, data and traffic. Returns the new targetId.
  std::string install_extension(identity::ExtensionRecord record,
                                const nlohmann::json& target = nlohmann::json::object());
};

// Target ids are "t1", "t2", ... in declaration order: tabs first, then
// extension targets. Throws SchemaError.
BrowserWorld build_world(const nlohmann::json& spec);

std::string_view to_string(InterstitialKind kind);
std::string_view to_string(PermissionState state);

nlohmann::ordered_json to_json(const Cookie& cookie);
// Full dump used for determinism checks and the control API.
nlohmann::ordered_json to_json(const BrowserWorld& world);

}  // namespace warden::world
