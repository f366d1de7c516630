#pragma once

// Extension identity: ID derivation from public keys and install paths,
// manifest loading (unpacked directories and ZIP archives), and detection of
// sideloaded clones that reuse an allowlisted ID.

#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace warden::identity {

enum class IdentityErrc {
  kEmptyInput,
  kRelativePath,
  kInvalidId,
  kMissingManifest,
  kMalformedManifest,
  kBadKey,
  kBadArchive,
};

std::string_view to_string(IdentityErrc code);

class IdentityError : public std::runtime_error {
 public:
  IdentityError(IdentityErrc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}
  IdentityErrc code() const { return code_; }

 private:
  IdentityErrc code_;
};

// 32 characters over the alphabet a..p.
class ExtensionId {
 public:
  static constexpr std::size_t kLength = 32;

  static std::optional<ExtensionId> parse(std::string_view text);
  // Throws IdentityError(kInvalidId).
  static ExtensionId from_string(std::string_view text);

  const std::string& str() const { return value_; }

  auto operator<=>(const ExtensionId&) const = default;

 private:
  explicit ExtensionId(std::string value) : value_(std::move(value)) {}
  std::string value_;
};

enum class ExtensionOrigin { kStoreSigned, kSideloadedUnpacked, kSideloadedZip, kComponent };

std::string_view to_string(ExtensionOrigin origin);
std::optional<ExtensionOrigin> parse_origin(std::string_view text);
bool is_trusted(ExtensionOrigin origin);  // store-signed or component
bool is_sideloaded(ExtensionOrigin origin);

struct ExtensionRecord {
  ExtensionId id;
  std::string name;
  std::string version;
  std::set<std::string> permissions;
  std::set<std::string> host_permissions;
  std::optional<std::string> manifest_key;
  ExtensionOrigin origin = ExtensionOrigin::kSideloadedUnpacked;
  bool incognito_allowed = false;
  bool file_access = false;
  std::optional<std::string> install_path;

  bool has_permission(std::string_view permission) const {
    return permissions.contains(std::string(permission));
  }
};

struct AllowlistConfig {
  std::set<ExtensionId> scripting_allowlist;
  std::set<ExtensionId> browser_target_allowlist;
};

// SHA-256 over the bytes, hex digest mapped 0-9a-f -> a-p, first 32 chars.
ExtensionId derive_id_from_key(std::span<const std::uint8_t> der_key);
ExtensionId derive_id_from_path(std::string_view absolute_path);

// Strict RFC 4648 decoding; throws IdentityError(kBadKey).
std::vector<std::uint8_t> decode_base64(std::string_view text);

// Builds a record from manifest JSON plus install metadata, applying the ID
// rules: a manifest key always wins, otherwise sideloaded and component
// installs derive from the path. Store-signed installs must carry a key.
ExtensionRecord make_record(const nlohmann::json& manifest, ExtensionOrigin origin,
                            std::optional<std::string> install_path);

// |source| is an unpacked directory or a ZIP archive with manifest.json at its
// root.
ExtensionRecord load_extension(const std::filesystem::path& source, ExtensionOrigin origin);

// Scenario/world description form: manifest-like keys plus origin,
// installPath, incognitoAllowed and fileAccess.
ExtensionRecord record_from_description(const nlohmann::json& description);
nlohmann::json to_json(const ExtensionRecord& record);

AllowlistConfig allowlist_from_json(const nlohmann::json& doc);
AllowlistConfig load_allowlist(const std::filesystem::path& path);
nlohmann::json to_json(const AllowlistConfig& allow);

enum class Severity { kInfo, kHigh };

struct Finding {
  std::string code;
  Severity severity = Severity::kInfo;
  std::string extension_id;
  std::string message;
};

nlohmann::json to_json(const Finding& finding);

std::vector<Finding> detect_impersonation(const ExtensionRecord& record,
                                          const AllowlistConfig& allow);

}  // namespace warden::identity
