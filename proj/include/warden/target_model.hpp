#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace warden::world {
struct BrowserWorld;
}

namespace warden::target {

inline constexpr std::string_view kBrowserTargetId = "browser";

enum class ClassKind { kRegular, kFile, kInterstitial, kWebUI, kExtension, kBrowserTarget, kUnknown };

std::string_view to_string(ClassKind kind);

struct PrivilegeClass {
  ClassKind kind = ClassKind::kUnknown;
  std::string owner;  // extension id, only for kExtension

  bool operator==(const PrivilegeClass&) const = default;
};

// Total: every (url, targetId) pair maps to exactly one class.
PrivilegeClass classify_url(std::string_view url, std::string_view target_id);

// Lower-cased scheme without ':' and the host component ("" when absent).
std::string url_scheme(std::string_view url);
std::string url_host(std::string_view url);

enum class TargetType { kPage, kBackgroundPage, kServiceWorker, kBrowser, kOther };

std::string_view to_string(TargetType type);
std::optional<TargetType> parse_target_type(std::string_view text);

struct TargetInfo {
  std::string target_id;
  TargetType type = TargetType::kPage;
  std::string url;
  std::string title;
  std::string favicon_url;
  int attached_count = 0;
  std::string browser_context_id;
  bool incognito = false;
  std::optional<std::string> owner_extension_id;

  bool operator==(const TargetInfo&) const = default;
};

nlohmann::ordered_json to_json(const TargetInfo& info);
TargetInfo target_info_from_json(const nlohmann::json& doc);

// "t2" < "t10": digit runs compare numerically.
bool natural_less(std::string_view a, std::string_view b);

// Every tab and extension target across all contexts, incognito included,
// sorted by targetId. Never contains the browser pseudo-target.
// |attached| maps targetId to the number of active sessions.
std::vector<TargetInfo> snapshot_targets(const world::BrowserWorld& world,
                                         const std::map<std::string, int>& attached = {});

}  // namespace warden::target
