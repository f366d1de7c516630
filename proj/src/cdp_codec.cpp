#include "warden/cdp_codec.hpp"

#include <array>
#include <cctype>
#include <utility>

namespace warden::cdp {

namespace {

constexpr std::array<std::string_view, 6> kKnownKeys = {
    "id", "method", "params", "result", "error", "sessionId"};

bool is_known_key(std::string_view key) {
  for (auto known : kKnownKeys) {
    if (key == known) return true;
  }
  return false;
}

bool is_ascii_alpha(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) != 0;
}

bool is_ascii_alnum(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0;
}

[[noreturn]] void fail(CodecErrc code, const std::string& message) {
  throw CodecError(code, message);
}

std::int64_t read_id(const Json& value) {
  if (value.is_number_unsigned()) {
    auto raw = value.get<std::uint64_t>();
    if (raw == 0 || raw > static_cast<std::uint64_t>(INT64_MAX))
      fail(CodecErrc::kNonPositiveId, "id must be a positive integer");
    return static_cast<std::int64_t>(raw);
  }
  if (value.is_number_integer()) {
    auto raw = value.get<std::int64_t>();
    if (raw <= 0) fail(CodecErrc::kNonPositiveId, "id must be a positive integer");
    return raw;
  }
  fail(CodecErrc::kNonPositiveId, "id must be a positive integer");
}

ProtocolError read_error(const Json& value) {
  if (!value.is_object()) fail(CodecErrc::kAmbiguousShape, "error must be an object");
  auto code = value.find("code");
  auto message = value.find("message");
  if (code == value.end() || !code->is_number_integer())
    fail(CodecErrc::kAmbiguousShape, "error.code must be an integer");
  if (message == value.end() || !message->is_string())
    fail(CodecErrc::kAmbiguousShape, "error.message must be a string");
  ProtocolError error;
  error.code = code->get<std::int64_t>();
  error.message = message->get<std::string>();
  if (auto data = value.find("data"); data != value.end()) error.data = *data;
  return error;
}

}  // namespace

std::string_view to_string(CodecErrc code) {
  switch (code) {
    case CodecErrc::kMalformedJson: return "MalformedJson";
    case CodecErrc::kAmbiguousShape: return "AmbiguousShape";
    case CodecErrc::kBadMethod: return "BadMethod";
    case CodecErrc::kNonPositiveId: return "NonPositiveId";
  }
  return "Unknown";
}

CdpMessage CdpMessage::command(std::int64_t id, std::string method, Json params,
                               std::optional<std::string> session_id) {
  CdpMessage m;
  m.kind = MessageKind::kCommand;
  m.id = id;
  m.method = std::move(method);
  m.params = std::move(params);
  m.session_id = std::move(session_id);
  return m;
}

CdpMessage CdpMessage::event(std::string method, Json params,
                             std::optional<std::string> session_id) {
  CdpMessage m;
  m.kind = MessageKind::kEvent;
  m.method = std::move(method);
  m.params = std::move(params);
  m.session_id = std::move(session_id);
  return m;
}

CdpMessage CdpMessage::success(std::int64_t id, Json result,
                               std::optional<std::string> session_id) {
  CdpMessage m;
  m.kind = MessageKind::kResponse;
  m.id = id;
  m.result = std::move(result);
  m.session_id = std::move(session_id);
  return m;
}

CdpMessage CdpMessage::failure(std::int64_t id, std::int64_t code, std::string message,
                               std::optional<std::string> session_id) {
  CdpMessage m;
  m.kind = MessageKind::kResponse;
  m.id = id;
  m.error = ProtocolError{code, std::move(message), std::nullopt};
  m.session_id = std::move(session_id);
  return m;
}

bool is_valid_method(std::string_view method) {
  auto dot = method.find('.');
  if (dot == std::string_view::npos || dot == 0 || dot + 1 == method.size()) return false;
  for (std::size_t i = 0; i < dot; ++i) {
    if (!is_ascii_alpha(method[i])) return false;
  }
  for (std::size_t i = dot + 1; i < method.size(); ++i) {
    if (!is_ascii_alnum(method[i])) return false;
  }
  return true;
}

MethodName split_method(std::string_view method) {
  if (!is_valid_method(method))
    fail(CodecErrc::kBadMethod, "invalid method name '" + std::string(method) + "'");
  auto dot = method.find('.');
  return {std::string(method.substr(0, dot)), std::string(method.substr(dot + 1))};
}

CdpMessage parse_message(std::string_view text) {
  if (text.size() > kMaxMessageBytes)
    fail(CodecErrc::kMalformedJson, "message exceeds 1 MiB limit");

  Json doc;
  try {
    doc = Json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::exception& e) {
    fail(CodecErrc::kMalformedJson, e.what());
  }
  if (!doc.is_object()) fail(CodecErrc::kAmbiguousShape, "message must be a JSON object");

  const bool has_id = doc.contains("id");
  const bool has_method = doc.contains("method");
  const bool has_params = doc.contains("params");
  const bool has_result = doc.contains("result");
  const bool has_error = doc.contains("error");

  CdpMessage m;
  if (has_method) {
    if (has_result || has_error)
      fail(CodecErrc::kAmbiguousShape, "message carries both method and result/error");
    m.kind = has_id ? MessageKind::kCommand : MessageKind::kEvent;
  } else if (has_result || has_error) {
    if (has_result && has_error)
      fail(CodecErrc::kAmbiguousShape, "response carries both result and error");
    if (!has_id) fail(CodecErrc::kAmbiguousShape, "response without id");
    if (has_params) fail(CodecErrc::kAmbiguousShape, "response carries params");
    m.kind = MessageKind::kResponse;
  } else {
    fail(CodecErrc::kAmbiguousShape, "message is neither command, response nor event");
  }

  if (has_id) m.id = read_id(doc["id"]);

  if (has_method) {
    const Json& method = doc["method"];
    if (!method.is_string()) fail(CodecErrc::kBadMethod, "method must be a string");
    m.method = method.get<std::string>();
    if (!is_valid_method(m.method))
      fail(CodecErrc::kBadMethod, "invalid method name '" + m.method + "'");
  }

  if (has_params) {
    if (!doc["params"].is_object()) fail(CodecErrc::kAmbiguousShape, "params must be an object");
    m.params = doc["params"];
  }
  if (has_result) {
    if (!doc["result"].is_object()) fail(CodecErrc::kAmbiguousShape, "result must be an object");
    m.result = doc["result"];
  }
  if (has_error) m.error = read_error(doc["error"]);

  if (auto session = doc.find("sessionId"); session != doc.end()) {
    if (!session->is_string()) fail(CodecErrc::kAmbiguousShape, "sessionId must be a string");
    m.session_id = session->get<std::string>();
  }

  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (!is_known_key(it.key())) m.extras[it.key()] = it.value();
  }
  return m;
}

Json to_json(const CdpMessage& m) {
  Json out = Json::object();
  if (m.id) out["id"] = *m.id;
  if (m.kind != MessageKind::kResponse) out["method"] = m.method;
  if (m.params) out["params"] = *m.params;
  if (m.result) out["result"] = *m.result;
  if (m.error) {
    Json error = Json::object();
    error["code"] = m.error->code;
    error["message"] = m.error->message;
    if (m.error->data) error["data"] = *m.error->data;
    out["error"] = std::move(error);
  }
  if (m.session_id) out["sessionId"] = *m.session_id;
  for (auto it = m.extras.begin(); it != m.extras.end(); ++it) {
    if (!is_known_key(it.key())) out[it.key()] = it.value();
  }
  return out;
}

std::string serialize_message(const CdpMessage& m) { return to_json(m).dump(); }

}  // namespace warden::cdp
