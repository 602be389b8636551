#pragma once

// Messages exchanged between the engine and frontends.

#include <optional>
#include <string>
#include <string_view>

#include "vidflow/error.hpp"
#include "vidflow/expr.hpp"

namespace vidflow {

inline constexpr const char* kBusTypes[] = {"event",    "signal_update", "seek",        "set_playing",    "presented",
                                            "ready",    "ended",         "spec_loaded", "manifest_epoch", "error",
                                            "playing"};

inline bool is_bus_type(std::string_view t) {
  for (const char* k : kBusTypes)
    if (t == k) return true;
  return false;
}

/// A bus frame. On the wire the payload fields sit beside "type" and
/// "player" in one JSON object.
struct BusMessage {
  std::string type;
  std::optional<std::string> player;
  Value payload = Value::object();

  Value to_json() const {
    Value j = payload.is_object() ? payload : Value::object();
    j["type"] = type;
    if (player) j["player"] = *player;
    return j;
  }
  std::string dump() const { return to_json().dump(); }

  /// Throws SchemaError for unknown types, missing fields, or seek/presented
  /// frames without an integer epoch.
  static BusMessage from_json(const Value& j) {
    if (!j.is_object()) throw SchemaError("message", "expected a JSON object");
    if (!j.contains("type") || !j["type"].is_string()) throw SchemaError("message.type", "missing field");
    BusMessage m;
    m.type = j["type"].get<std::string>();
    if (!is_bus_type(m.type)) throw SchemaError("message.type", "unknown message type '" + m.type + "'");
    if (j.contains("player")) {
      if (!j["player"].is_string()) throw SchemaError("message.player", "expected a string");
      m.player = j["player"].get<std::string>();
    }
    for (auto it = j.begin(); it != j.end(); ++it)
      if (it.key() != "type" && it.key() != "player") m.payload[it.key()] = it.value();
    if (m.type == "seek" || m.type == "presented") {
      if (!m.payload.contains("epoch") || !m.payload["epoch"].is_number_unsigned())
        throw SchemaError("message.epoch", m.type + " messages carry an integer epoch");
      if (!m.payload.contains("time") || !m.payload["time"].is_number())
        throw SchemaError("message.time", m.type + " messages carry a time");
    }
    if (m.type == "seek") {
      std::string mode = m.payload.value("mode", "");
      if (mode != "exact" && mode != "keyframe") throw SchemaError("message.mode", "seek mode must be exact or keyframe");
    }
    return m;
  }

  static BusMessage parse(std::string_view text) {
    try {
      return from_json(Value::parse(text));
    } catch (const nlohmann::json::parse_error& e) {
      throw SyntaxError(e.what());
    }
  }

  bool operator==(const BusMessage&) const = default;
};

inline BusMessage bus_message(std::string type, std::optional<std::string> player, Value payload) {
  return {std::move(type), std::move(player), std::move(payload)};
}

}  // namespace vidflow
