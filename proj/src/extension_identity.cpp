#include "warden/extension_identity.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <sstream>

#include "zip_reader.hpp"

namespace warden::identity {

namespace {

using nlohmann::json;

constexpr std::size_t kMaxManifestBytes = 1u << 20;

[[noreturn]] void fail(IdentityErrc code, const std::string& message) {
  throw IdentityError(code, message);
}

ExtensionId id_from_digest_input(std::span<const std::uint8_t> bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int digest_len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &digest_len, EVP_sha256(),
                 nullptr) != 1) {
    throw std::runtime_error("SHA-256 failed");
  }
  // Each hex nibble becomes one letter, so 16 digest bytes give 32 chars.
  std::string id;
  id.reserve(ExtensionId::kLength);
  for (std::size_t i = 0; i < ExtensionId::kLength / 2; ++i) {
    id.push_back(static_cast<char>('a' + (digest[i] >> 4)));
    id.push_back(static_cast<char>('a' + (digest[i] & 0x0f)));
  }
  return ExtensionId::from_string(id);
}

std::set<std::string> string_set(const json& manifest, const char* key) {
  std::set<std::string> out;
  auto it = manifest.find(key);
  if (it == manifest.end()) return out;
  if (!it->is_array()) fail(IdentityErrc::kMalformedManifest, std::string(key) + " must be an array");
  for (const auto& v : *it) {
    if (!v.is_string())
      fail(IdentityErrc::kMalformedManifest, std::string(key) + " entries must be strings");
    out.insert(v.get<std::string>());
  }
  return out;
}

bool looks_like_host_pattern(const std::string& permission) {
  return permission == "<all_urls>" || permission.find("://") != std::string::npos;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(IdentityErrc::kMissingManifest, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

json parse_manifest_text(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(IdentityErrc::kMalformedManifest, std::string("manifest.json: ") + e.what());
  }
}

std::set<ExtensionId> id_set(const json& doc, const char* key) {
  std::set<ExtensionId> out;
  auto it = doc.find(key);
  if (it == doc.end()) return out;
  if (!it->is_array()) fail(IdentityErrc::kInvalidId, std::string(key) + " must be an array");
  for (const auto& v : *it) {
    if (!v.is_string()) fail(IdentityErrc::kInvalidId, std::string(key) + " entries must be strings");
    out.insert(ExtensionId::from_string(v.get<std::string>()));
  }
  return out;
}

}  // namespace

std::string_view to_string(IdentityErrc code) {
  switch (code) {
    case IdentityErrc::kEmptyInput: return "EmptyInput";
    case IdentityErrc::kRelativePath: return "RelativePath";
    case IdentityErrc::kInvalidId: return "InvalidId";
    case IdentityErrc::kMissingManifest: return "MissingManifest";
    case IdentityErrc::kMalformedManifest: return "MalformedManifest";
    case IdentityErrc::kBadKey: return "BadKey";
    case IdentityErrc::kBadArchive: return "BadArchive";
  }
  return "Unknown";
}

std::optional<ExtensionId> ExtensionId::parse(std::string_view text) {
  if (text.size() != kLength) return std::nullopt;
  for (char c : text) {
    if (c < 'a' || c > 'p') return std::nullopt;
  }
  return ExtensionId(std::string(text));
}

ExtensionId ExtensionId::from_string(std::string_view text) {
  auto id = parse(text);
  if (!id) fail(IdentityErrc::kInvalidId, "not an extension id: '" + std::string(text) + "'");
  return *id;
}

std::string_view to_string(ExtensionOrigin origin) {
  switch (origin) {
    case ExtensionOrigin::kStoreSigned: return "store-signed";
    case ExtensionOrigin::kSideloadedUnpacked: return "sideloaded-unpacked";
    case ExtensionOrigin::kSideloadedZip: return "sideloaded-zip";
    case ExtensionOrigin::kComponent: return "component";
  }
  return "unknown";
}

std::optional<ExtensionOrigin> parse_origin(std::string_view text) {
  for (auto origin : {ExtensionOrigin::kStoreSigned, ExtensionOrigin::kSideloadedUnpacked,
                      ExtensionOrigin::kSideloadedZip, ExtensionOrigin::kComponent}) {
    if (text == to_string(origin)) return origin;
  }
  return std::nullopt;
}

bool is_trusted(ExtensionOrigin origin) {
  return origin == ExtensionOrigin::kStoreSigned || origin == ExtensionOrigin::kComponent;
}

bool is_sideloaded(ExtensionOrigin origin) {
  return origin == ExtensionOrigin::kSideloadedUnpacked || origin == ExtensionOrigin::kSideloadedZip;
}

ExtensionId derive_id_from_key(std::span<const std::uint8_t> der_key) {
  if (der_key.empty()) fail(IdentityErrc::kEmptyInput, "empty public key");
  return id_from_digest_input(der_key);
}

ExtensionId derive_id_from_path(std::string_view absolute_path) {
  if (absolute_path.empty()) fail(IdentityErrc::kRelativePath, "empty install path");
  if (!std::filesystem::path(absolute_path).is_absolute())
    fail(IdentityErrc::kRelativePath, "install path must be absolute: " + std::string(absolute_path));
  return id_from_digest_input(std::span(reinterpret_cast<const std::uint8_t*>(absolute_path.data()),
                                        absolute_path.size()));
}

std::vector<std::uint8_t> decode_base64(std::string_view text) {
  if (text.empty() || text.size() % 4 != 0) fail(IdentityErrc::kBadKey, "key is not valid Base64");
  std::size_t padding = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    const bool alpha = (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') ||
                       (c >= '0' && c <= '9') || c == '+' || c == '/';
    if (c == '=') {
      if (i + 2 < text.size()) fail(IdentityErrc::kBadKey, "key is not valid Base64");
      ++padding;
    } else if (!alpha || padding > 0) {
      fail(IdentityErrc::kBadKey, "key is not valid Base64");
    }
  }
  std::vector<std::uint8_t> out(text.size() / 4 * 3);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) fail(IdentityErrc::kBadKey, "key is not valid Base64");
  out.resize(static_cast<std::size_t>(n) - padding);
  return out;
}

ExtensionRecord make_record(const json& manifest, ExtensionOrigin origin,
                            std::optional<std::string> install_path) {
  if (!manifest.is_object()) fail(IdentityErrc::kMalformedManifest, "manifest must be an object");
  auto mv = manifest.find("manifest_version");
  if (mv == manifest.end() || !mv->is_number_integer())
    fail(IdentityErrc::kMalformedManifest, "manifest_version missing or not an integer");
  for (const char* key : {"name", "version"}) {
    auto it = manifest.find(key);
    if (it == manifest.end() || !it->is_string())
      fail(IdentityErrc::kMalformedManifest, std::string(key) + " missing or not a string");
  }

  std::optional<std::string> key;
  if (auto it = manifest.find("key"); it != manifest.end()) {
    if (!it->is_string()) fail(IdentityErrc::kBadKey, "key must be a string");
    key = it->get<std::string>();
  }

  std::optional<ExtensionId> id;
  if (key) {
    id = derive_id_from_key(decode_base64(*key));
  } else if (origin == ExtensionOrigin::kStoreSigned) {
    fail(IdentityErrc::kMalformedManifest, "store-signed extension requires a public key");
  } else {
    if (!install_path) fail(IdentityErrc::kRelativePath, "keyless extension requires an install path");
    id = derive_id_from_path(*install_path);
  }

  ExtensionRecord rec{.id = *id,
                      .name = manifest["name"].get<std::string>(),
                      .version = manifest["version"].get<std::string>(),
                      .permissions = {},
                      .host_permissions = {},
                      .manifest_key = key,
                      .origin = origin,
                      .incognito_allowed = false,
                      .file_access = false,
                      .install_path = std::move(install_path)};
  for (auto& p : string_set(manifest, "permissions")) {
    if (looks_like_host_pattern(p)) {
      rec.host_permissions.insert(p);
    } else {
      rec.permissions.insert(p);
    }
  }
  for (auto& p : string_set(manifest, "host_permissions")) rec.host_permissions.insert(p);
  return rec;
}

ExtensionRecord load_extension(const std::filesystem::path& source, ExtensionOrigin origin) {
  std::error_code ec;
  const auto absolute = std::filesystem::weakly_canonical(std::filesystem::absolute(source), ec);
  const std::string install_path = (ec ? std::filesystem::absolute(source) : absolute).string();

  if (std::filesystem::is_directory(source)) {
    const auto manifest_path = source / "manifest.json";
    if (!std::filesystem::is_regular_file(manifest_path))
      fail(IdentityErrc::kMissingManifest, "no manifest.json in " + source.string());
    return make_record(parse_manifest_text(read_file(manifest_path)), origin, install_path);
  }
  if (!std::filesystem::is_regular_file(source))
    fail(IdentityErrc::kMissingManifest, "no such extension source: " + source.string());

  try {
    auto archive = zip::Archive::open(source);
    auto entry = archive.find("manifest.json");
    if (!entry)
      fail(IdentityErrc::kMissingManifest, "archive has no manifest.json at its root");
    return make_record(parse_manifest_text(archive.read(*entry, kMaxManifestBytes)), origin,
                       install_path);
  } catch (const zip::ZipError& e) {
    fail(IdentityErrc::kBadArchive, e.what());
  }
}

ExtensionRecord record_from_description(const json& description) {
  if (!description.is_object()) fail(IdentityErrc::kMalformedManifest, "extension description must be an object");
  json manifest = description;
  if (!manifest.contains("manifest_version")) manifest["manifest_version"] = 3;
  if (!manifest.contains("version")) manifest["version"] = "1.0";
  if (auto hp = description.find("hostPermissions"); hp != description.end())
    manifest["host_permissions"] = *hp;

  auto origin = ExtensionOrigin::kSideloadedUnpacked;
  if (auto it = description.find("origin"); it != description.end()) {
    auto parsed = it->is_string() ? parse_origin(it->get<std::string>()) : std::nullopt;
    if (!parsed) fail(IdentityErrc::kMalformedManifest, "unknown origin " + it->dump());
    origin = *parsed;
  }
  std::optional<std::string> path;
  if (auto it = description.find("installPath"); it != description.end() && it->is_string())
    path = it->get<std::string>();

  auto rec = make_record(manifest, origin, path);
  rec.incognito_allowed = description.value("incognitoAllowed", false);
  rec.file_access = description.value("fileAccess", false);
  return rec;
}

json to_json(const ExtensionRecord& r) {
  json out = {
      {"id", r.id.str()},
      {"name", r.name},
      {"version", r.version},
      {"permissions", r.permissions},
      {"hostPermissions", r.host_permissions},
      {"origin", to_string(r.origin)},
      {"incognitoAllowed", r.incognito_allowed},
      {"fileAccess", r.file_access},
  };
  if (r.manifest_key) out["key"] = *r.manifest_key;
  if (r.install_path) out["installPath"] = *r.install_path;
  return out;
}

AllowlistConfig allowlist_from_json(const json& doc) {
  if (!doc.is_object()) fail(IdentityErrc::kInvalidId, "allowlist config must be an object");
  return AllowlistConfig{id_set(doc, "scriptingAllowlist"), id_set(doc, "browserTargetAllowlist")};
}

AllowlistConfig load_allowlist(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(IdentityErrc::kMissingManifest, "cannot read allowlist " + path.string());
  try {
    return allowlist_from_json(json::parse(in));
  } catch (const json::exception& e) {
    fail(IdentityErrc::kMalformedManifest, std::string("allowlist: ") + e.what());
  }
}

json to_json(const AllowlistConfig& allow) {
  json scripting = json::array();
  json browser = json::array();
  for (const auto& id : allow.scripting_allowlist) scripting.push_back(id.str());
  for (const auto& id : allow.browser_target_allowlist) browser.push_back(id.str());
  return {{"scriptingAllowlist", scripting}, {"browserTargetAllowlist", browser}};
}

json to_json(const Finding& f) {
  return {{"code", f.code},
          {"severity", f.severity == Severity::kHigh ? "high" : "info"},
          {"extensionId", f.extension_id},
          {"message", f.message}};
}

std::vector<Finding> detect_impersonation(const ExtensionRecord& rec, const AllowlistConfig& allow) {
  std::vector<Finding> findings;
  const bool untrusted = !is_trusted(rec.origin);
  if (untrusted && allow.scripting_allowlist.contains(rec.id)) {
    findings.push_back({"CLONE_SCRIPTING_ALLOWLIST", Severity::kHigh, rec.id.str(),
                        std::string(to_string(rec.origin)) +
                            " extension reuses an ID granted script-everywhere access"});
  }
  if (untrusted && allow.browser_target_allowlist.contains(rec.id)) {
    findings.push_back({"CLONE_BROWSER_TARGET", Severity::kHigh, rec.id.str(),
                        std::string(to_string(rec.origin)) +
                            " extension reuses an ID allowed to attach to the browser target"});
  }
  if (rec.has_permission("debugger")) {
    findings.push_back({"DEBUGGER_PERMISSION", Severity::kInfo, rec.id.str(),
                        "declares the debugger permission; install prompt only mentions the "
                        "page debugger backend"});
  }
  return findings;
}

}  // namespace warden::identity
