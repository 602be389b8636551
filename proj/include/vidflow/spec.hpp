#pragma once

// Visualization documents with video players: parsing, validation and
// canonical serialization.

#include <algorithm>
#include <map>
#include <set>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "vidflow/error.hpp"
#include "vidflow/expr.hpp"

namespace vidflow {

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// Player signal table
// ---------------------------------------------------------------------------

struct PlayerSignalInfo {
  const char* name;
  bool writable;
};

inline constexpr PlayerSignalInfo kPlayerSignals[] = {
    {"time", true},    {"itime", true},  {"playing", true}, {"duration", false},
    {"ready", false},  {"ended", false}, {"frame", false},  {"iframe", false},
};

inline const PlayerSignalInfo* find_player_signal(std::string_view name) {
  for (const auto& s : kPlayerSignals)
    if (name == s.name) return &s;
  return nullptr;
}

/// Splits "@player.signal" into its parts; nullopt when `ref` is not of that shape.
inline std::optional<std::pair<std::string, std::string>> split_player_ref(std::string_view ref) {
  if (ref.size() < 4 || ref[0] != '@') return std::nullopt;
  auto dot = ref.find('.');
  if (dot == std::string_view::npos || dot == 1 || dot + 1 == ref.size()) return std::nullopt;
  return std::make_pair(std::string(ref.substr(1, dot - 1)), std::string(ref.substr(dot + 1)));
}

inline std::string proxy_name(const std::string& player, const std::string& signal) {
  return "@" + player + "." + signal;
}

/// Maps a player signal read to the node that carries it: reads of time,
/// itime and playing go to the presented-state proxies.
inline std::string rewrite_read(const std::string& name) {
  if (auto parts = split_player_ref(name)) {
    const auto& [player, signal] = *parts;
    if (signal == "time") return proxy_name(player, "current_time");
    if (signal == "itime") return proxy_name(player, "intent_time");
    if (signal == "playing") return proxy_name(player, "playing_state");
  }
  return name;
}

// ---------------------------------------------------------------------------
// Event selectors: "pointermove", "@surface:click", "window:pointerup",
// "[@hist:pointerdown, window:pointerup] > window:pointermove"
// ---------------------------------------------------------------------------

struct SimpleSelector {
  std::string source;  // "" (any), "window", "view", "@mark", or a mark type
  std::string type;
  bool operator==(const SimpleSelector&) const = default;
};

struct EventSelector {
  SimpleSelector stream;
  std::optional<SimpleSelector> between_start;
  std::optional<SimpleSelector> between_end;
  bool operator==(const EventSelector&) const = default;
};

namespace detail {
inline std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\n");
  return std::string(s.substr(b, e - b + 1));
}

inline SimpleSelector parse_simple_selector(std::string_view text) {
  std::string t = trim(text);
  if (t.empty()) throw SchemaError("", "empty event selector");
  SimpleSelector sel;
  auto colon = t.find(':');
  if (colon != std::string::npos) {
    sel.source = trim(t.substr(0, colon));
    sel.type = trim(t.substr(colon + 1));
  } else {
    sel.type = t;
  }
  auto valid = [](const std::string& s, bool allow_at) {
    if (s.empty()) return false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      char c = s[i];
      if (i == 0 && allow_at && c == '@') continue;
      if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') return false;
    }
    return true;
  };
  if (!valid(sel.type, false) || (colon != std::string::npos && !valid(sel.source, true)))
    throw SchemaError("", "malformed event selector '" + t + "'");
  return sel;
}

inline std::vector<std::string> split_top_level(std::string_view text, char sep) {
  std::vector<std::string> out;
  int depth = 0;
  std::string cur;
  for (char c : text) {
    if (c == '[') ++depth;
    if (c == ']') --depth;
    if (c == sep && depth == 0) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}
}  // namespace detail

/// Parses a comma-separated list of event selectors. Throws SchemaError.
inline std::vector<EventSelector> parse_event_selectors(std::string_view text) {
  std::vector<EventSelector> out;
  for (const auto& part : detail::split_top_level(text, ',')) {
    std::string t = detail::trim(part);
    EventSelector sel;
    if (!t.empty() && t[0] == '[') {
      auto close = t.find(']');
      auto gt = t.find('>', close == std::string::npos ? 0 : close);
      if (close == std::string::npos || gt == std::string::npos)
        throw SchemaError("", "malformed between selector '" + t + "'");
      auto inner = detail::split_top_level(std::string_view(t).substr(1, close - 1), ',');
      if (inner.size() != 2) throw SchemaError("", "between selector needs two events: '" + t + "'");
      sel.between_start = detail::parse_simple_selector(inner[0]);
      sel.between_end = detail::parse_simple_selector(inner[1]);
      sel.stream = detail::parse_simple_selector(std::string_view(t).substr(gt + 1));
    } else {
      sel.stream = detail::parse_simple_selector(t);
    }
    out.push_back(std::move(sel));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Document types
// ---------------------------------------------------------------------------

struct EventHandler {
  std::string events;
  std::string update;
  bool operator==(const EventHandler&) const = default;
};

struct SignalDecl {
  std::string name;
  Json value;  // initial value, null when absent
  std::optional<std::string> update;
  std::vector<EventHandler> on;
  Json bind;  // UI binding, passed through
  bool operator==(const SignalDecl&) const = default;
};

struct DataTransform {
  std::string type;  // "filter"
  std::string expr;
  bool operator==(const DataTransform&) const = default;
};

struct DatasetDecl {
  std::string name;
  Json values;         // inline rows (array) or null
  std::string url;     // file/URI to load rows from
  std::string format;  // "json", "ndjson" or "csv" (for url)
  std::string source;  // upstream dataset
  std::vector<DataTransform> transform;
  bool operator==(const DatasetDecl&) const = default;
};

struct ScaleDecl {
  std::string name;
  ScaleType type = ScaleType::Linear;
  Json domain;
  Json range;
  bool clamp = false;
  Json extras = Json::object();  // zero/nice/padding etc., passed through
  bool operator==(const ScaleDecl&) const = default;
};

/// Chart marks are opaque to the engine except for their `{"signal": ...}`
/// encodings and, for seek surfaces, the scale they invert through.
struct MarkDecl {
  std::string name;
  std::string type;
  Json raw;
  std::optional<std::string> seek_scale;  // role: seek-surface
  std::map<std::string, std::string> signal_encodings;
  bool operator==(const MarkDecl&) const = default;
};

struct StaticSource {
  std::string uri;
  bool operator==(const StaticSource&) const = default;
};

enum class SortOrder { Ascending, Descending };

namespace transform {
struct Filter {
  std::string predicate;
  bool operator==(const Filter&) const = default;
};
struct Sort {
  std::string key;
  SortOrder order = SortOrder::Ascending;
  bool operator==(const Sort&) const = default;
};
struct Clip {
  std::string start;
  std::string end;
  bool operator==(const Clip&) const = default;
};
struct Erode {
  double radius = 0;
  bool operator==(const Erode&) const = default;
};
struct Dilate {
  double radius = 0;
  bool operator==(const Dilate&) const = default;
};
}  // namespace transform

using PlaylistTransform =
    std::variant<transform::Filter, transform::Sort, transform::Clip, transform::Erode, transform::Dilate>;

struct PlaylistSpec {
  std::string from;              // dataset name, or empty when `values` is used
  Json values;                   // literal entry list
  std::string manifest = "manifest";  // tuple field carrying the manifest URI
  std::vector<PlaylistTransform> transforms;
  bool operator==(const PlaylistSpec&) const = default;
};

inline const char* kDefaultOnKeep = "@new_seg.start + (@prev.time - @prev_seg.start)";
inline const char* kDefaultOnRemove = "lead(@prev_seg, 1).valid ? lead(@prev_seg, 1).start : lag(@prev_seg, 1).start";

struct CursorPolicy {
  std::string on_keep = kDefaultOnKeep;
  std::string on_remove = kDefaultOnRemove;
  bool operator==(const CursorPolicy&) const = default;
};

enum class AnnotationKind { BoundingBox, Label };

struct AnnotationMarkSpec {
  AnnotationKind kind = AnnotationKind::BoundingBox;
  std::string from;
  std::map<std::string, std::string> encodings;
  std::optional<std::string> filter;
  bool operator==(const AnnotationMarkSpec&) const = default;
};

struct Layout {
  double x = 0, y = 0, width = 0, height = 0;
  bool operator==(const Layout&) const = default;
};

struct Resolution {
  double width = 0, height = 0;
  bool operator==(const Resolution&) const = default;
};

struct PlayerSpec {
  std::string name;
  std::variant<StaticSource, PlaylistSpec> source;
  CursorPolicy cursor;
  std::vector<AnnotationMarkSpec> marks;
  std::optional<std::string> attach;
  std::optional<Layout> layout;
  double fps = 30.0;
  std::optional<std::string> keyframes;  // keyframe sidecar for static sources
  std::optional<Resolution> resolution;

  const PlaylistSpec* playlist() const { return std::get_if<PlaylistSpec>(&source); }
  bool operator==(const PlayerSpec&) const = default;
};

struct Spec {
  std::optional<double> width;
  std::optional<double> height;
  std::vector<SignalDecl> signals;
  std::vector<DatasetDecl> data;
  std::vector<ScaleDecl> scales;
  std::vector<MarkDecl> marks;
  std::vector<PlayerSpec> players;
  Json extras = Json::object();  // passthrough top-level Vega properties

  const PlayerSpec* find_player(std::string_view name) const {
    for (const auto& p : players)
      if (p.name == name) return &p;
    return nullptr;
  }
  const DatasetDecl* find_dataset(std::string_view name) const {
    for (const auto& d : data)
      if (d.name == name) return &d;
    return nullptr;
  }
  bool operator==(const Spec&) const = default;
};

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

enum class Severity { Error, Warning };
enum class DiagnosticKind { Schema, Reference };

struct Diagnostic {
  Severity severity = Severity::Error;
  DiagnosticKind kind = DiagnosticKind::Schema;
  std::string path;
  std::string message;
  bool operator==(const Diagnostic&) const = default;
};

inline std::string to_string(const Diagnostic& d) {
  return std::string(d.severity == Severity::Error ? "error" : "warning") + " " + d.path + ": " + d.message;
}

// ---------------------------------------------------------------------------
// Parsing (schema level)
// ---------------------------------------------------------------------------

namespace detail {

class DocReader {
 public:
  static void check_keys(const Json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      bool ok = false;
      for (const char* a : allowed) ok = ok || it.key() == a;
      if (!ok) throw SchemaError(path + "." + it.key(), "unknown field");
    }
  }

  static const Json& object(const Json& v, const std::string& path) {
    if (!v.is_object()) throw SchemaError(path, "expected an object");
    return v;
  }
  static const Json& array(const Json& v, const std::string& path) {
    if (!v.is_array()) throw SchemaError(path, "expected an array");
    return v;
  }
  static std::string string(const Json& v, const std::string& path) {
    if (!v.is_string()) throw SchemaError(path, "expected a string");
    return v.get<std::string>();
  }
  static std::string expr_string(const Json& v, const std::string& path) {
    std::string s = string(v, path);
    if (trim(s).empty()) throw SchemaError(path, "empty expression");
    return s;
  }
  static double number(const Json& v, const std::string& path) {
    if (!v.is_number()) throw SchemaError(path, "expected a number");
    return v.get<double>();
  }
  static std::string opt_string(const Json& obj, const char* key, const std::string& path) {
    return obj.contains(key) ? string(obj[key], path + "." + key) : std::string{};
  }

  static SignalDecl signal(const Json& j, const std::string& path) {
    object(j, path);
    check_keys(j, path, {"name", "value", "update", "on", "bind", "description", "init"});
    SignalDecl s;
    if (!j.contains("name")) throw SchemaError(path + ".name", "missing field");
    s.name = string(j["name"], path + ".name");
    if (j.contains("value")) s.value = j["value"];
    if (j.contains("init")) s.update = expr_string(j["init"], path + ".init");
    if (j.contains("update")) s.update = expr_string(j["update"], path + ".update");
    if (j.contains("bind")) s.bind = j["bind"];
    if (j.contains("on")) {
      const Json& on = array(j["on"], path + ".on");
      for (std::size_t i = 0; i < on.size(); ++i) {
        std::string hp = path + ".on[" + std::to_string(i) + "]";
        object(on[i], hp);
        check_keys(on[i], hp, {"events", "update"});
        if (!on[i].contains("events")) throw SchemaError(hp + ".events", "missing field");
        if (!on[i].contains("update")) throw SchemaError(hp + ".update", "missing field");
        EventHandler h{string(on[i]["events"], hp + ".events"), expr_string(on[i]["update"], hp + ".update")};
        try {
          parse_event_selectors(h.events);
        } catch (const SchemaError& e) {
          throw SchemaError(hp + ".events", e.what());
        }
        s.on.push_back(std::move(h));
      }
    }
    return s;
  }

  static DatasetDecl dataset(const Json& j, const std::string& path) {
    object(j, path);
    check_keys(j, path, {"name", "values", "url", "format", "source", "transform"});
    DatasetDecl d;
    if (!j.contains("name")) throw SchemaError(path + ".name", "missing field");
    d.name = string(j["name"], path + ".name");
    if (j.contains("values")) d.values = array(j["values"], path + ".values");
    d.url = opt_string(j, "url", path);
    d.source = opt_string(j, "source", path);
    if (j.contains("format")) {
      const Json& f = j["format"];
      d.format = f.is_object() ? opt_string(f, "type", path + ".format") : string(f, path + ".format");
    }
    if (j.contains("transform")) {
      const Json& ts = array(j["transform"], path + ".transform");
      for (std::size_t i = 0; i < ts.size(); ++i) {
        std::string tp = path + ".transform[" + std::to_string(i) + "]";
        object(ts[i], tp);
        check_keys(ts[i], tp, {"type", "expr"});
        std::string type = string(ts[i].value("type", Json()), tp + ".type");
        if (type != "filter") throw SchemaError(tp + ".type", "unsupported data transform '" + type + "'");
        if (!ts[i].contains("expr")) throw SchemaError(tp + ".expr", "missing field");
        d.transform.push_back({type, expr_string(ts[i]["expr"], tp + ".expr")});
      }
    }
    return d;
  }

  static ScaleType scale_type(const std::string& t, const std::string& path) {
    if (t == "linear") return ScaleType::Linear;
    if (t == "time" || t == "utc") return ScaleType::Time;
    if (t == "band") return ScaleType::Band;
    if (t == "point") return ScaleType::Point;
    if (t == "ordinal") return ScaleType::Ordinal;
    throw SchemaError(path, "unsupported scale type '" + t + "'");
  }

  static ScaleDecl scale(const Json& j, const std::string& path) {
    object(j, path);
    ScaleDecl s;
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& k = it.key();
      if (k == "name") s.name = string(*it, path + ".name");
      else if (k == "type") s.type = scale_type(string(*it, path + ".type"), path + ".type");
      else if (k == "domain") s.domain = *it;
      else if (k == "range") s.range = *it;
      else if (k == "clamp") {
        if (!it->is_boolean()) throw SchemaError(path + ".clamp", "expected a boolean");
        s.clamp = it->get<bool>();
      } else if (k == "zero" || k == "nice" || k == "padding" || k == "round" || k == "reverse" ||
                 k == "paddingInner" || k == "paddingOuter") {
        s.extras[k] = *it;
      } else {
        throw SchemaError(path + "." + k, "unknown field");
      }
    }
    if (s.name.empty()) throw SchemaError(path + ".name", "missing field");
    return s;
  }

  static void collect_signal_encodings(const Json& encode, std::map<std::string, std::string>& out) {
    if (!encode.is_object()) return;
    for (auto set = encode.begin(); set != encode.end(); ++set) {
      if (!set->is_object()) continue;
      for (auto ch = set->begin(); ch != set->end(); ++ch)
        if (ch->is_object() && ch->contains("signal") && (*ch)["signal"].is_string())
          out[set.key() + "." + ch.key()] = (*ch)["signal"].get<std::string>();
    }
  }

  static MarkDecl mark(const Json& j, const std::string& path) {
    object(j, path);
    MarkDecl m;
    m.raw = j;
    m.name = j.contains("name") ? string(j["name"], path + ".name") : std::string{};
    m.type = j.contains("type") ? string(j["type"], path + ".type") : std::string{};
    if (j.value("role", "") == "seek-surface") {
      if (!j.contains("scale")) throw SchemaError(path + ".scale", "seek surfaces need a scale");
      m.seek_scale = string(j["scale"], path + ".scale");
    }
    if (j.contains("encode")) collect_signal_encodings(j["encode"], m.signal_encodings);
    return m;
  }

  static PlaylistTransform playlist_transform(const Json& j, const std::string& path) {
    object(j, path);
    std::string type = j.contains("type") ? string(j["type"], path + ".type") : std::string{};
    auto radius = [&]() {
      check_keys(j, path, {"type", "radius"});
      if (!j.contains("radius")) throw SchemaError(path + ".radius", "missing field");
      return number(j["radius"], path + ".radius");
    };
    if (type == "filter") {
      check_keys(j, path, {"type", "expr"});
      if (!j.contains("expr")) throw SchemaError(path + ".expr", "missing field");
      return transform::Filter{expr_string(j["expr"], path + ".expr")};
    }
    if (type == "sort") {
      check_keys(j, path, {"type", "key", "order"});
      if (!j.contains("key")) throw SchemaError(path + ".key", "missing field");
      transform::Sort s{expr_string(j["key"], path + ".key")};
      if (j.contains("order")) {
        std::string o = string(j["order"], path + ".order");
        if (o == "descending") s.order = SortOrder::Descending;
        else if (o != "ascending") throw SchemaError(path + ".order", "expected ascending or descending");
      }
      return s;
    }
    if (type == "clip") {
      check_keys(j, path, {"type", "start", "end"});
      if (!j.contains("start") || !j.contains("end")) throw SchemaError(path, "clip needs start and end");
      auto bound = [&](const char* key) {
        const Json& b = j[key];
        if (b.is_number()) return format_number(b.get<double>());
        return expr_string(b, path + "." + key);
      };
      return transform::Clip{bound("start"), bound("end")};
    }
    if (type == "erode") return transform::Erode{radius()};
    if (type == "dilate") return transform::Dilate{radius()};
    throw SchemaError(path + ".type", "unknown playlist transform '" + type + "'");
  }

  static PlaylistSpec playlist(const Json& j, const std::string& path) {
    object(j, path);
    check_keys(j, path, {"from", "values", "manifest", "transform"});
    PlaylistSpec p;
    p.from = opt_string(j, "from", path);
    if (j.contains("values")) p.values = array(j["values"], path + ".values");
    if (p.from.empty() == p.values.is_null())
      throw SchemaError(path, "playlist needs exactly one of 'from' or 'values'");
    if (j.contains("manifest")) p.manifest = string(j["manifest"], path + ".manifest");
    if (j.contains("transform")) {
      const Json& ts = array(j["transform"], path + ".transform");
      for (std::size_t i = 0; i < ts.size(); ++i)
        p.transforms.push_back(playlist_transform(ts[i], path + ".transform[" + std::to_string(i) + "]"));
    }
    return p;
  }

  static AnnotationMarkSpec annotation(const Json& j, const std::string& path) {
    object(j, path);
    check_keys(j, path, {"type", "from", "encode", "filter"});
    AnnotationMarkSpec m;
    std::string type = j.contains("type") ? string(j["type"], path + ".type") : std::string{};
    if (type == "bbox" || type == "boundingbox" || type == "box") m.kind = AnnotationKind::BoundingBox;
    else if (type == "label") m.kind = AnnotationKind::Label;
    else throw SchemaError(path + ".type", "unknown annotation mark '" + type + "'");
    if (!j.contains("from")) throw SchemaError(path + ".from", "missing field");
    const Json& from = j["from"];
    m.from = from.is_object() ? string(from.value("data", Json()), path + ".from.data") : string(from, path + ".from");
    if (j.contains("encode")) {
      const Json& enc = object(j["encode"], path + ".encode");
      for (auto it = enc.begin(); it != enc.end(); ++it)
        m.encodings[it.key()] = expr_string(*it, path + ".encode." + it.key());
    }
    if (j.contains("filter")) m.filter = expr_string(j["filter"], path + ".filter");
    return m;
  }

  static PlayerSpec player(const Json& j, const std::string& path) {
    object(j, path);
    check_keys(j, path, {"name", "source", "playlist", "cursor", "marks", "attach", "layout", "fps", "keyframes",
                         "resolution"});
    PlayerSpec p;
    if (!j.contains("name")) throw SchemaError(path + ".name", "missing field");
    p.name = string(j["name"], path + ".name");
    bool has_source = j.contains("source"), has_playlist = j.contains("playlist");
    if (has_source == has_playlist) throw SchemaError(path, "player needs exactly one of 'source' or 'playlist'");
    if (has_source) p.source = StaticSource{string(j["source"], path + ".source")};
    else p.source = playlist(j["playlist"], path + ".playlist");
    if (j.contains("cursor")) {
      const Json& c = object(j["cursor"], path + ".cursor");
      check_keys(c, path + ".cursor", {"onKeep", "onRemove"});
      if (c.contains("onKeep")) p.cursor.on_keep = expr_string(c["onKeep"], path + ".cursor.onKeep");
      if (c.contains("onRemove")) p.cursor.on_remove = expr_string(c["onRemove"], path + ".cursor.onRemove");
    }
    if (j.contains("marks")) {
      const Json& ms = array(j["marks"], path + ".marks");
      for (std::size_t i = 0; i < ms.size(); ++i)
        p.marks.push_back(annotation(ms[i], path + ".marks[" + std::to_string(i) + "]"));
    }
    if (j.contains("attach")) p.attach = string(j["attach"], path + ".attach");
    if (j.contains("layout")) {
      const Json& l = object(j["layout"], path + ".layout");
      check_keys(l, path + ".layout", {"x", "y", "width", "height"});
      Layout lay;
      if (l.contains("x")) lay.x = number(l["x"], path + ".layout.x");
      if (l.contains("y")) lay.y = number(l["y"], path + ".layout.y");
      if (l.contains("width")) lay.width = number(l["width"], path + ".layout.width");
      if (l.contains("height")) lay.height = number(l["height"], path + ".layout.height");
      p.layout = lay;
    }
    if (j.contains("fps")) p.fps = number(j["fps"], path + ".fps");
    if (j.contains("keyframes")) p.keyframes = string(j["keyframes"], path + ".keyframes");
    if (j.contains("resolution")) {
      const Json& r = object(j["resolution"], path + ".resolution");
      check_keys(r, path + ".resolution", {"width", "height"});
      p.resolution = Resolution{number(r.value("width", Json()), path + ".resolution.width"),
                                number(r.value("height", Json()), path + ".resolution.height")};
    }
    return p;
  }
};

inline const char* kPassthroughTopLevel[] = {"$schema", "description", "padding", "autosize", "background",
                                             "axes",    "legends",     "title",   "config",   "usermeta",
                                             "projections", "encode"};

}  // namespace detail

/// Schema-level parse: structure and types only, no cross-reference checks.
/// Throws SyntaxError or SchemaError.
inline Spec parse_spec_document(const Json& doc) {
  using R = detail::DocReader;
  R::object(doc, "");
  Spec spec;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string& k = it.key();
    const std::string path = k;
    auto each = [&](auto&& fn) {
      const Json& arr = R::array(*it, path);
      for (std::size_t i = 0; i < arr.size(); ++i) fn(arr[i], path + "[" + std::to_string(i) + "]");
    };
    if (k == "width") spec.width = R::number(*it, path);
    else if (k == "height") spec.height = R::number(*it, path);
    else if (k == "signals") each([&](const Json& j, const std::string& p) { spec.signals.push_back(R::signal(j, p)); });
    else if (k == "data") each([&](const Json& j, const std::string& p) { spec.data.push_back(R::dataset(j, p)); });
    else if (k == "scales") each([&](const Json& j, const std::string& p) { spec.scales.push_back(R::scale(j, p)); });
    else if (k == "marks") each([&](const Json& j, const std::string& p) { spec.marks.push_back(R::mark(j, p)); });
    else if (k == "players") each([&](const Json& j, const std::string& p) { spec.players.push_back(R::player(j, p)); });
    else if (std::find_if(std::begin(detail::kPassthroughTopLevel), std::end(detail::kPassthroughTopLevel),
                          [&](const char* s) { return k == s; }) != std::end(detail::kPassthroughTopLevel))
      spec.extras[k] = *it;
    else
      throw SchemaError(path, "unknown field");
  }
  return spec;
}

inline Json parse_json_text(std::string_view text) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw SyntaxError(std::string("malformed document: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

namespace detail {

class Validator {
 public:
  explicit Validator(const Spec& spec) : spec_(spec) {}

  std::vector<Diagnostic> run() {
    declared_signals();
    players();
    signals();
    datasets();
    scales();
    marks();
    return std::move(out_);
  }

 private:
  const Spec& spec_;
  std::vector<Diagnostic> out_;
  std::set<std::string> signal_names_;
  std::set<std::string> scale_names_;

  void error(DiagnosticKind kind, std::string path, std::string msg) {
    out_.push_back({Severity::Error, kind, std::move(path), std::move(msg)});
  }

  void declared_signals() {
    if (spec_.width) signal_names_.insert("width");
    if (spec_.height) signal_names_.insert("height");
    for (const auto& s : spec_.signals)
      if (s.name.empty() || s.name[0] != '@') signal_names_.insert(s.name);
    for (const auto& sc : spec_.scales) scale_names_.insert(sc.name);
    for (const auto& m : spec_.marks)
      if (m.seek_scale) scale_names_.insert(m.name);
  }

  bool player_signal_exists(const std::string& ref) const {
    auto parts = split_player_ref(ref);
    return parts && spec_.find_player(parts->first) && find_player_signal(parts->second);
  }

  /// Parses `text` and checks every reference in it. `allowed_at` names the
  /// extra @-bindings valid in this context (cursor policies).
  ExprPtr check_expr(const std::string& text, const std::string& path,
                     const std::set<std::string>& allowed_at = {}, bool allow_plain = true) {
    ExprPtr e;
    try {
      e = parse_expr(text);
    } catch (const ParseError& err) {
      error(DiagnosticKind::Schema, path, err.what());
      return nullptr;
    }
    for (const auto& ref : signal_refs(e)) {
      if (ref[0] == '@') {
        auto dot = ref.find('.');
        std::string object = ref.substr(1, dot == std::string::npos ? std::string::npos : dot - 1);
        if (allowed_at.count(object)) continue;
        if (!allowed_at.empty() && !allow_plain) {
          error(DiagnosticKind::Reference, path,
                object == "new_seg" ? "@new_seg is undefined when the segment was removed"
                                    : "'" + ref + "' is not available here");
          continue;
        }
        if (!spec_.find_player(object)) {
          error(DiagnosticKind::Reference, path, "unknown player in '" + ref + "'");
        } else if (dot == std::string::npos || !find_player_signal(ref.substr(dot + 1))) {
          error(DiagnosticKind::Reference, path, "unknown player signal '" + ref + "'");
        }
      } else if (!allow_plain) {
        error(DiagnosticKind::Reference, path, "'" + ref + "' is not available here");
      } else if (!signal_names_.count(ref)) {
        error(DiagnosticKind::Reference, path, "unknown signal '" + ref + "'");
      }
    }
    for (const auto& sc : scale_refs(e))
      if (!scale_names_.count(sc)) error(DiagnosticKind::Reference, path, "unknown scale '" + sc + "'");
    return e;
  }

  void players() {
    std::map<std::string, std::size_t> seen;
    for (std::size_t i = 0; i < spec_.players.size(); ++i) {
      const PlayerSpec& p = spec_.players[i];
      std::string path = "players[" + std::to_string(i) + "]";
      if (p.name.empty()) error(DiagnosticKind::Schema, path + ".name", "player name must be nonempty");
      else if (seen.count(p.name))
        error(DiagnosticKind::Schema, path + ".name", "duplicate player name '" + p.name + "'");
      else seen[p.name] = i;
      if (p.name.find('.') != std::string::npos)
        error(DiagnosticKind::Schema, path + ".name", "player names cannot contain '.'");
      if (p.layout && (p.layout->width <= 0 || p.layout->height <= 0))
        error(DiagnosticKind::Schema, path + ".layout", "layout width/height must be positive");
      if (!(p.fps > 0)) error(DiagnosticKind::Schema, path + ".fps", "fps must be positive");
      if (p.resolution && (p.resolution->width <= 0 || p.resolution->height <= 0))
        error(DiagnosticKind::Schema, path + ".resolution", "resolution must be positive");
      if (const auto* src = std::get_if<StaticSource>(&p.source); src && src->uri.empty())
        error(DiagnosticKind::Schema, path + ".source", "empty source");
      if (const PlaylistSpec* pl = p.playlist()) playlist(*pl, path + ".playlist");
      cursor(p.cursor, path + ".cursor");
      for (std::size_t m = 0; m < p.marks.size(); ++m) annotation(p.marks[m], path + ".marks[" + std::to_string(m) + "]");
    }
  }

  void playlist(const PlaylistSpec& pl, const std::string& path) {
    if (!pl.from.empty() && !spec_.find_dataset(pl.from))
      error(DiagnosticKind::Reference, path + ".from", "unknown dataset '" + pl.from + "'");
    if (pl.from.empty() && !pl.values.is_array())
      error(DiagnosticKind::Schema, path, "playlist needs 'from' or 'values'");
    if (pl.values.is_array())
      for (std::size_t i = 0; i < pl.values.size(); ++i)
        if (!pl.values[i].is_object() || !pl.values[i].contains(pl.manifest) || !pl.values[i][pl.manifest].is_string())
          error(DiagnosticKind::Schema, path + ".values[" + std::to_string(i) + "]",
                "entry needs a '" + pl.manifest + "' manifest URI");
    for (std::size_t i = 0; i < pl.transforms.size(); ++i) {
      std::string tp = path + ".transform[" + std::to_string(i) + "]";
      std::visit(
          [&](const auto& t) {
            using T = std::decay_t<decltype(t)>;
            if constexpr (std::is_same_v<T, transform::Filter>) check_expr(t.predicate, tp + ".expr");
            else if constexpr (std::is_same_v<T, transform::Sort>) check_expr(t.key, tp + ".key");
            else if constexpr (std::is_same_v<T, transform::Clip>) {
              check_expr(t.start, tp + ".start");
              check_expr(t.end, tp + ".end");
            } else {
              if (!(t.radius >= 0)) error(DiagnosticKind::Schema, tp + ".radius", "radius must be >= 0");
            }
          },
          pl.transforms[i]);
    }
  }

  void cursor(const CursorPolicy& c, const std::string& path) {
    check_expr(c.on_keep, path + ".onKeep", {"prev", "new", "prev_seg", "new_seg"}, false);
    check_expr(c.on_remove, path + ".onRemove", {"prev", "new", "prev_seg"}, false);
  }

  void annotation(const AnnotationMarkSpec& m, const std::string& path) {
    if (!spec_.find_dataset(m.from)) error(DiagnosticKind::Reference, path + ".from", "unknown dataset '" + m.from + "'");
    if (m.kind == AnnotationKind::Label && !m.encodings.count("text"))
      error(DiagnosticKind::Schema, path + ".encode", "label marks need a text encoding");
    for (const auto& [ch, text] : m.encodings) check_expr(text, path + ".encode." + ch);
    if (m.filter) check_expr(*m.filter, path + ".filter");
  }

  void signals() {
    std::set<std::string> seen;
    for (std::size_t i = 0; i < spec_.signals.size(); ++i) {
      const SignalDecl& s = spec_.signals[i];
      std::string path = "signals[" + std::to_string(i) + "]";
      if (s.name.empty()) {
        error(DiagnosticKind::Schema, path + ".name", "signal name must be nonempty");
        continue;
      }
      if (s.name[0] == '@') {
        auto parts = split_player_ref(s.name);
        if (!parts || !spec_.find_player(parts->first)) {
          error(DiagnosticKind::Reference, path + ".name", "unknown player in '" + s.name + "'");
        } else if (const PlayerSignalInfo* info = find_player_signal(parts->second); !info) {
          error(DiagnosticKind::Reference, path + ".name", "unknown player signal '" + s.name + "'");
        } else if (!info->writable) {
          error(DiagnosticKind::Schema, path + ".name", "'" + s.name + "' is read-only");
        }
      } else if (!seen.insert(s.name).second) {
        error(DiagnosticKind::Schema, path + ".name", "duplicate signal '" + s.name + "'");
      }
      if (s.update) check_expr(*s.update, path + ".update");
      for (std::size_t h = 0; h < s.on.size(); ++h) {
        std::string hp = path + ".on[" + std::to_string(h) + "]";
        check_expr(s.on[h].update, hp + ".update");
        try {
          for (const auto& sel : parse_event_selectors(s.on[h].events)) check_selector_source(sel, hp + ".events");
        } catch (const SchemaError& e) {
          error(DiagnosticKind::Schema, hp + ".events", e.what());
        }
      }
    }
  }

  void check_selector_source(const EventSelector& sel, const std::string& path) {
    auto check = [&](const SimpleSelector& s) {
      if (!s.source.empty() && s.source[0] == '@') {
        std::string name = s.source.substr(1);
        bool found = std::any_of(spec_.marks.begin(), spec_.marks.end(), [&](const MarkDecl& m) { return m.name == name; });
        if (!found) error(DiagnosticKind::Reference, path, "unknown mark '" + name + "'");
      }
    };
    check(sel.stream);
    if (sel.between_start) check(*sel.between_start);
    if (sel.between_end) check(*sel.between_end);
  }

  void datasets() {
    std::set<std::string> seen;
    for (std::size_t i = 0; i < spec_.data.size(); ++i) {
      const DatasetDecl& d = spec_.data[i];
      std::string path = "data[" + std::to_string(i) + "]";
      if (d.name.empty()) error(DiagnosticKind::Schema, path + ".name", "dataset name must be nonempty");
      else if (!seen.insert(d.name).second) error(DiagnosticKind::Schema, path + ".name", "duplicate dataset '" + d.name + "'");
      if (!d.source.empty() && !spec_.find_dataset(d.source))
        error(DiagnosticKind::Reference, path + ".source", "unknown dataset '" + d.source + "'");
      if (!d.format.empty() && d.format != "json" && d.format != "ndjson" && d.format != "csv")
        error(DiagnosticKind::Schema, path + ".format", "unsupported format '" + d.format + "'");
      for (std::size_t t = 0; t < d.transform.size(); ++t)
        check_expr(d.transform[t].expr, path + ".transform[" + std::to_string(t) + "].expr");
    }
  }

  void scale_bound(const Json& v, const std::string& path) {
    if (v.is_object() && v.contains("signal") && v["signal"].is_string()) check_expr(v["signal"].get<std::string>(), path + ".signal");
  }

  void scales() {
    std::set<std::string> seen;
    for (std::size_t i = 0; i < spec_.scales.size(); ++i) {
      const ScaleDecl& s = spec_.scales[i];
      std::string path = "scales[" + std::to_string(i) + "]";
      if (!seen.insert(s.name).second) error(DiagnosticKind::Schema, path + ".name", "duplicate scale '" + s.name + "'");
      for (const char* key : {"domain", "range"}) {
        const Json& v = key == std::string("domain") ? s.domain : s.range;
        std::string p = path + "." + key;
        if (v.is_array()) {
          for (std::size_t k = 0; k < v.size(); ++k) scale_bound(v[k], p + "[" + std::to_string(k) + "]");
        } else if (v.is_object() && v.contains("data")) {
          if (!v["data"].is_string() || !spec_.find_dataset(v["data"].get<std::string>()))
            error(DiagnosticKind::Reference, p + ".data", "unknown dataset");
        } else if (v.is_object()) {
          scale_bound(v, p);
        } else if (v.is_string()) {
          if (v != "width" && v != "height") error(DiagnosticKind::Schema, p, "unsupported range name");
        } else if (!v.is_null()) {
          error(DiagnosticKind::Schema, p, "unsupported " + std::string(key));
        }
      }
    }
  }

  void marks() {
    for (std::size_t i = 0; i < spec_.marks.size(); ++i) {
      const MarkDecl& m = spec_.marks[i];
      std::string path = "marks[" + std::to_string(i) + "]";
      if (m.seek_scale && !std::any_of(spec_.scales.begin(), spec_.scales.end(),
                                       [&](const ScaleDecl& s) { return s.name == *m.seek_scale; }))
        error(DiagnosticKind::Reference, path + ".scale", "unknown scale '" + *m.seek_scale + "'");
      for (const auto& [channel, text] : m.signal_encodings) {
        auto dot = channel.find('.');
        check_expr(text, path + ".encode." + channel.substr(0, dot) + "." + channel.substr(dot + 1) + ".signal");
      }
    }
  }
};

}  // namespace detail

/// Checks every invariant of a parsed document. Pure; the result is empty iff
/// the document is valid.
inline std::vector<Diagnostic> validate_spec(const Spec& spec) { return detail::Validator(spec).run(); }

/// Parses and validates a document. Throws SyntaxError, SchemaError or
/// ReferenceError (for the first error diagnostic).
inline Spec parse_spec(std::string_view document) {
  Spec spec = parse_spec_document(parse_json_text(document));
  for (const auto& d : validate_spec(spec)) {
    if (d.severity != Severity::Error) continue;
    if (d.kind == DiagnosticKind::Reference) throw ReferenceError(d.path, d.message);
    throw SchemaError(d.path, d.message);
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline Json to_json(const PlaylistTransform& t) {
  return std::visit(
      [](const auto& x) -> Json {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, transform::Filter>) return {{"type", "filter"}, {"expr", x.predicate}};
        else if constexpr (std::is_same_v<T, transform::Sort>)
          return {{"type", "sort"}, {"key", x.key}, {"order", x.order == SortOrder::Ascending ? "ascending" : "descending"}};
        else if constexpr (std::is_same_v<T, transform::Clip>) return {{"type", "clip"}, {"start", x.start}, {"end", x.end}};
        else if constexpr (std::is_same_v<T, transform::Erode>) return {{"type", "erode"}, {"radius", x.radius}};
        else return {{"type", "dilate"}, {"radius", x.radius}};
      },
      t);
}

inline Json to_json(const PlayerSpec& p) {
  Json j = {{"name", p.name}, {"fps", p.fps}};
  if (const auto* s = std::get_if<StaticSource>(&p.source)) {
    j["source"] = s->uri;
  } else {
    const PlaylistSpec& pl = std::get<PlaylistSpec>(p.source);
    Json pj = {{"manifest", pl.manifest}, {"transform", Json::array()}};
    if (!pl.from.empty()) pj["from"] = pl.from;
    else pj["values"] = pl.values;
    for (const auto& t : pl.transforms) pj["transform"].push_back(to_json(t));
    j["playlist"] = pj;
  }
  j["cursor"] = {{"onKeep", p.cursor.on_keep}, {"onRemove", p.cursor.on_remove}};
  if (!p.marks.empty()) {
    j["marks"] = Json::array();
    for (const auto& m : p.marks) {
      Json mj = {{"type", m.kind == AnnotationKind::BoundingBox ? "bbox" : "label"}, {"from", m.from}};
      if (!m.encodings.empty()) mj["encode"] = m.encodings;
      if (m.filter) mj["filter"] = *m.filter;
      j["marks"].push_back(mj);
    }
  }
  if (p.attach) j["attach"] = *p.attach;
  if (p.layout) j["layout"] = {{"x", p.layout->x}, {"y", p.layout->y}, {"width", p.layout->width}, {"height", p.layout->height}};
  if (p.keyframes) j["keyframes"] = *p.keyframes;
  if (p.resolution) j["resolution"] = {{"width", p.resolution->width}, {"height", p.resolution->height}};
  return j;
}

inline Json to_json(const Spec& spec) {
  Json doc = spec.extras.is_object() ? spec.extras : Json::object();
  if (spec.width) doc["width"] = *spec.width;
  if (spec.height) doc["height"] = *spec.height;
  if (!spec.signals.empty()) {
    Json arr = Json::array();
    for (const auto& s : spec.signals) {
      Json j = {{"name", s.name}};
      if (!s.value.is_null()) j["value"] = s.value;
      if (s.update) j["update"] = *s.update;
      if (!s.on.empty()) {
        j["on"] = Json::array();
        for (const auto& h : s.on) j["on"].push_back({{"events", h.events}, {"update", h.update}});
      }
      if (!s.bind.is_null()) j["bind"] = s.bind;
      arr.push_back(j);
    }
    doc["signals"] = arr;
  }
  if (!spec.data.empty()) {
    Json arr = Json::array();
    for (const auto& d : spec.data) {
      Json j = {{"name", d.name}};
      if (!d.values.is_null()) j["values"] = d.values;
      if (!d.url.empty()) j["url"] = d.url;
      if (!d.format.empty()) j["format"] = d.format;
      if (!d.source.empty()) j["source"] = d.source;
      if (!d.transform.empty()) {
        j["transform"] = Json::array();
        for (const auto& t : d.transform) j["transform"].push_back({{"type", t.type}, {"expr", t.expr}});
      }
      arr.push_back(j);
    }
    doc["data"] = arr;
  }
  if (!spec.scales.empty()) {
    Json arr = Json::array();
    for (const auto& s : spec.scales) {
      Json j = s.extras.is_object() ? s.extras : Json::object();
      j["name"] = s.name;
      j["type"] = to_string(s.type);
      if (!s.domain.is_null()) j["domain"] = s.domain;
      if (!s.range.is_null()) j["range"] = s.range;
      if (s.clamp) j["clamp"] = true;
      arr.push_back(j);
    }
    doc["scales"] = arr;
  }
  if (!spec.marks.empty()) {
    Json arr = Json::array();
    for (const auto& m : spec.marks) arr.push_back(m.raw);
    doc["marks"] = arr;
  }
  Json players = Json::array();
  for (const auto& p : spec.players) players.push_back(to_json(p));
  doc["players"] = players;
  return doc;
}

/// Canonical document text: sorted object keys, declaration-ordered arrays.
inline std::string serialize_spec(const Spec& spec) { return to_json(spec).dump(2) + "\n"; }

}  // namespace vidflow
