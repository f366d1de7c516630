#include "warden/target_model.hpp"

#include <algorithm>
#include <cctype>

#include "warden/world.hpp"

namespace warden::target {

namespace {

bool is_digit(char c) { return c >= '0' && c <= '9'; }

}  // namespace

std::string_view to_string(ClassKind kind) {
  switch (kind) {
    case ClassKind::kRegular: return "Regular";
    case ClassKind::kFile: return "File";
    case ClassKind::kInterstitial: return "Interstitial";
    case ClassKind::kWebUI: return "WebUI";
    case ClassKind::kExtension: return "Extension";
    case ClassKind::kBrowserTarget: return "BrowserTarget";
    case ClassKind::kUnknown: return "Unknown";
  }
  return "Unknown";
}

std::string url_scheme(std::string_view url) {
  auto colon = url.find(':');
  if (colon == std::string_view::npos || colon == 0) return {};
  std::string scheme;
  for (std::size_t i = 0; i < colon; ++i) {
    const auto c = static_cast<unsigned char>(url[i]);
    const bool ok = std::isalpha(c) || (i > 0 && (std::isdigit(c) || c == '+' || c == '-' || c == '.'));
    if (!ok) return {};
    scheme.push_back(static_cast<char>(std::tolower(c)));
  }
  return scheme;
}

std::string url_host(std::string_view url) {
  auto sep = url.find("://");
  if (sep == std::string_view::npos) return {};
  auto rest = url.substr(sep + 3);
  rest = rest.substr(0, rest.find_first_of("/?#"));
  if (auto at = rest.rfind('@'); at != std::string_view::npos) rest = rest.substr(at + 1);
  if (auto colon = rest.find(':'); colon != std::string_view::npos) rest = rest.substr(0, colon);
  std::string host(rest);
  std::transform(host.begin(), host.end(), host.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return host;
}

PrivilegeClass classify_url(std::string_view url, std::string_view target_id) {
  if (target_id == kBrowserTargetId) return {ClassKind::kBrowserTarget, {}};
  // Proxy tabs need to be attachable.
  if (url == "about:blank") return {ClassKind::kRegular, {}};

  const std::string scheme = url_scheme(url);
  if (scheme == "http" || scheme == "https") return {ClassKind::kRegular, {}};
  if (scheme == "file") return {ClassKind::kFile, {}};
  if (scheme == "chrome-error") return {ClassKind::kInterstitial, {}};
  if (scheme == "chrome") return {ClassKind::kWebUI, {}};
  if (scheme == "chrome-extension") {
    std::string host = url_host(url);
    if (host.empty()) return {ClassKind::kUnknown, {}};
    return {ClassKind::kExtension, std::move(host)};
  }
  return {ClassKind::kUnknown, {}};
}

std::string_view to_string(TargetType type) {
  switch (type) {
    case TargetType::kPage: return "page";
    case TargetType::kBackgroundPage: return "background_page";
    case TargetType::kServiceWorker: return "service_worker";
    case TargetType::kBrowser: return "browser";
    case TargetType::kOther: return "other";
  }
  return "other";
}

std::optional<TargetType> parse_target_type(std::string_view text) {
  for (auto t : {TargetType::kPage, TargetType::kBackgroundPage, TargetType::kServiceWorker,
                 TargetType::kBrowser, TargetType::kOther}) {
    if (to_string(t) == text) return t;
  }
  return std::nullopt;
}

nlohmann::ordered_json to_json(const TargetInfo& info) {
  nlohmann::ordered_json out;
  out["targetId"] = info.target_id;
  out["type"] = to_string(info.type);
  out["url"] = info.url;
  out["title"] = info.title;
  out["faviconUrl"] = info.favicon_url;
  out["attached"] = info.attached_count > 0;
  out["browserContextId"] = info.browser_context_id;
  out["incognito"] = info.incognito;
  return out;
}

TargetInfo target_info_from_json(const nlohmann::json& doc) {
  TargetInfo info;
  info.target_id = doc.at("targetId").get<std::string>();
  info.type = parse_target_type(doc.at("type").get<std::string>()).value_or(TargetType::kOther);
  info.url = doc.value("url", "");
  info.title = doc.value("title", "");
  info.favicon_url = doc.value("faviconUrl", "");
  info.attached_count = doc.value("attached", false) ? 1 : 0;
  info.browser_context_id = doc.value("browserContextId", "");
  info.incognito = doc.value("incognito", false);
  auto cls = classify_url(info.url, info.target_id);
  if (cls.kind == ClassKind::kExtension) info.owner_extension_id = cls.owner;
  return info;
}

bool natural_less(std::string_view a, std::string_view b) {
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < a.size() && j < b.size()) {
    if (is_digit(a[i]) && is_digit(b[j])) {
      std::size_t i_end = i;
      std::size_t j_end = j;
      while (i_end < a.size() && is_digit(a[i_end])) ++i_end;
      while (j_end < b.size() && is_digit(b[j_end])) ++j_end;
      auto na = a.substr(i, i_end - i);
      auto nb = b.substr(j, j_end - j);
      // Strip leading zeros, then longer run is larger.
      while (na.size() > 1 && na.front() == '0') na.remove_prefix(1);
      while (nb.size() > 1 && nb.front() == '0') nb.remove_prefix(1);
      if (na.size() != nb.size()) return na.size() < nb.size();
      if (na != nb) return na < nb;
      i = i_end;
      j = j_end;
      continue;
    }
    if (a[i] != b[j]) return a[i] < b[j];
    ++i;
    ++j;
  }
  if ((a.size() - i) != (b.size() - j)) return (a.size() - i) < (b.size() - j);
  return a < b;
}

std::vector<TargetInfo> snapshot_targets(const world::BrowserWorld& world,
                                         const std::map<std::string, int>& attached) {
  std::vector<TargetInfo> out;
  out.reserve(world.pages.size());
  for (const auto& page : world.pages) {
    TargetInfo info;
    info.target_id = page.target_id;
    info.type = page.type;
    info.url = page.url;
    info.title = page.title;
    info.favicon_url = page.favicon_url;
    if (auto it = attached.find(page.target_id); it != attached.end()) info.attached_count = it->second;
    info.browser_context_id = page.context_id;
    info.incognito = world.is_incognito(page.context_id);
    auto cls = classify_url(page.url, page.target_id);
    if (cls.kind == ClassKind::kExtension) info.owner_extension_id = cls.owner;
    out.push_back(std::move(info));
  }
  std::sort(out.begin(), out.end(), [](const TargetInfo& x, const TargetInfo& y) {
    return natural_less(x.target_id, y.target_id);
  });
  return out;
}

}  // namespace warden::target
