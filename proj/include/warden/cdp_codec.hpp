#pragma once

// DevTools-protocol message envelope: parsing, validation and canonical
// serialization of command / response / event frames.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "json.hpp"

namespace warden::cdp {

using Json = nlohmann::ordered_json;

inline constexpr std::size_t kMaxMessageBytes = 1u << 20;

enum class MessageKind { kCommand, kResponse, kEvent };

enum class CodecErrc { kMalformedJson, kAmbiguousShape, kBadMethod, kNonPositiveId };

std::string_view to_string(CodecErrc code);

class CodecError : public std::runtime_error {
 public:
  CodecError(CodecErrc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}
  CodecErrc code() const { return code_; }

 private:
  CodecErrc code_;
};

struct ProtocolError {
  std::int64_t code = 0;
  std::string message;
  std::optional<Json> data;

  bool operator==(const ProtocolError&) const = default;
};

// One frame on the wire. Which optional members are populated depends on
// |kind|: commands carry id+method, responses id+(result xor error), events
// method only. |extras| keeps unrecognised top-level keys in arrival order so
// they survive a parse/serialize round trip.
struct CdpMessage {
  MessageKind kind = MessageKind::kCommand;
  std::optional<std::int64_t> id;
  std::string method;
  std::optional<Json> params;
  std::optional<Json> result;
  std::optional<ProtocolError> error;
  std::optional<std::string> session_id;
  Json extras = Json::object();

  static CdpMessage command(std::int64_t id, std::string method,
                            Json params = Json::object(),
                            std::optional<std::string> session_id = std::nullopt);
  static CdpMessage event(std::string method, Json params = Json::object(),
                          std::optional<std::string> session_id = std::nullopt);
  static CdpMessage success(std::int64_t id, Json result = Json::object(),
                            std::optional<std::string> session_id = std::nullopt);
  static CdpMessage failure(std::int64_t id, std::int64_t code, std::string message,
                            std::optional<std::string> session_id = std::nullopt);

  bool operator==(const CdpMessage&) const = default;
};

// Throws CodecError. Input larger than kMaxMessageBytes is MalformedJson.
CdpMessage parse_message(std::string_view text);

// Keys are emitted in the fixed order id, method, params, result, error,
// sessionId, followed by any preserved extras.
std::string serialize_message(const CdpMessage& message);

Json to_json(const CdpMessage& message);

struct MethodName {
  std::string domain;
  std::string command;

  bool operator==(const MethodName&) const = default;
};

bool is_valid_method(std::string_view method);

// "Domain.command" -> {Domain, command}. Throws CodecError(kBadMethod).
MethodName split_method(std::string_view method);

}  // namespace warden::cdp
