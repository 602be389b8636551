#pragma once

// Frame-indexed detections resolved into overlay render lists.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "vidflow/dataflow.hpp"
#include "vidflow/error.hpp"
#include "vidflow/expr.hpp"
#include "vidflow/spec.hpp"

namespace vidflow {

struct Detection {
  long frame_index = 0;
  std::array<double, 4> xyxy{};  // x1, y1, x2, y2 in source pixels
  double confidence = 0;
  long class_id = 0;
  std::string class_name;
  std::optional<long> tracker_id;
  Value datum;  // the source row plus x1/y1/x2/y2, as seen by expressions
};

namespace detail {
inline double det_number(const Value& row, const char* key, const std::string& path) {
  if (!row.contains(key) || !row[key].is_number()) throw SchemaError(path + "." + key, "expected a number");
  return row[key].get<double>();
}
}  // namespace detail

/// Reads one detection row. Bounds come from `xyxy` ([x1,y1,x2,y2]) or from
/// flat x1/y1/x2/y2 columns. Throws SchemaError.
inline Detection detection_from_row(const Value& row, const std::string& path = "detection") {
  if (!row.is_object()) throw SchemaError(path, "expected an object");
  Detection d;
  d.frame_index = static_cast<long>(detail::det_number(row, "frame_index", path));
  if (row.contains("xyxy")) {
    const Value& b = row["xyxy"];
    if (!b.is_array() || b.size() != 4) throw SchemaError(path + ".xyxy", "expected [x1, y1, x2, y2]");
    for (std::size_t i = 0; i < 4; ++i) {
      if (!b[i].is_number()) throw SchemaError(path + ".xyxy", "expected numbers");
      d.xyxy[i] = b[i].get<double>();
    }
  } else {
    d.xyxy = {detail::det_number(row, "x1", path), detail::det_number(row, "y1", path), detail::det_number(row, "x2", path),
              detail::det_number(row, "y2", path)};
  }
  if (d.xyxy[0] > d.xyxy[2] || d.xyxy[1] > d.xyxy[3]) throw SchemaError(path + ".xyxy", "expected x1 <= x2 and y1 <= y2");
  d.confidence = row.contains("confidence") ? detail::det_number(row, "confidence", path) : 1.0;
  if (d.confidence < 0 || d.confidence > 1) throw SchemaError(path + ".confidence", "expected a value in [0, 1]");
  if (row.contains("class_id") && row["class_id"].is_number()) d.class_id = row["class_id"].get<long>();
  if (row.contains("class_name") && row["class_name"].is_string()) d.class_name = row["class_name"].get<std::string>();
  if (row.contains("tracker_id") && row["tracker_id"].is_number()) d.tracker_id = row["tracker_id"].get<long>();
  d.datum = row;
  d.datum["x1"] = d.xyxy[0];
  d.datum["y1"] = d.xyxy[1];
  d.datum["x2"] = d.xyxy[2];
  d.datum["y2"] = d.xyxy[3];
  d.datum["xyxy"] = Value::array({d.xyxy[0], d.xyxy[1], d.xyxy[2], d.xyxy[3]});
  return d;
}

inline std::vector<Detection> detections_from_rows(const Value& rows) {
  if (!rows.is_array()) throw SchemaError("detections", "expected an array of rows");
  std::vector<Detection> out;
  out.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out.push_back(detection_from_row(rows[i], "detections[" + std::to_string(i) + "]"));
  return out;
}

enum class PrimitiveKind { Rect, Text };

struct OverlayPrimitive {
  PrimitiveKind kind = PrimitiveKind::Rect;
  std::size_t mark = 0;       // index into the player's marks
  std::size_t detection = 0;  // index into the dataset
  std::optional<long> tracker_id;
  std::array<double, 4> xyxy{};  // Rect
  std::string stroke = "#ff3b30";
  double thickness = 2;
  double x = 0, y = 0;  // Text anchor
  std::string placement = "top-left";
  std::string content;
  std::string color = "#ffffff";

  Value to_json() const {
    Value j{{"mark", mark}, {"detection", detection}, {"tracker_id", tracker_id ? Value(*tracker_id) : Value(nullptr)}};
    if (kind == PrimitiveKind::Rect) {
      j["kind"] = "rect";
      j["xyxy"] = Value::array({xyxy[0], xyxy[1], xyxy[2], xyxy[3]});
      j["stroke"] = stroke;
      j["thickness"] = thickness;
    } else {
      j["kind"] = "text";
      j["x"] = x;
      j["y"] = y;
      j["placement"] = placement;
      j["content"] = content;
      j["color"] = color;
    }
    return j;
  }
};

inline Value to_json(const std::vector<OverlayPrimitive>& prims) {
  Value a = Value::array();
  for (const auto& p : prims) a.push_back(p.to_json());
  return a;
}

struct CompiledAnnotationMark {
  AnnotationKind kind = AnnotationKind::BoundingBox;
  std::string from;
  ExprPtr filter;
  ExprPtr stroke, thickness, text, color, dx, dy;

  /// Throws ParseError. Channels: stroke, strokeWidth (BoundingBox); text,
  /// color, dx, dy (Label).
  static CompiledAnnotationMark from_spec(const AnnotationMarkSpec& s) {
    CompiledAnnotationMark m;
    m.kind = s.kind;
    m.from = s.from;
    if (s.filter) m.filter = parse_expr(*s.filter);
    auto channel = [&](const char* name) -> ExprPtr {
      auto it = s.encodings.find(name);
      return it == s.encodings.end() ? nullptr : parse_expr(it->second);
    };
    m.stroke = channel("stroke");
    m.thickness = channel("strokeWidth");
    m.text = channel("text");
    m.color = channel("color");
    m.dx = channel("dx");
    m.dy = channel("dy");
    return m;
  }
};

inline std::vector<CompiledAnnotationMark> compile_marks(const std::vector<AnnotationMarkSpec>& specs) {
  std::vector<CompiledAnnotationMark> out;
  for (const auto& s : specs) out.push_back(CompiledAnnotationMark::from_spec(s));
  return out;
}

/// Overlay primitives for `frame`: one per (detection, mark) that passes the
/// mark's filter, grouped by mark in mark order and by detection in dataset
/// order. Coordinates are clamped to `resolution` when given. Throws EvalError.
inline std::vector<OverlayPrimitive> resolve_frame(const std::vector<Detection>& detections, long frame,
                                                   const std::vector<CompiledAnnotationMark>& marks, const EvalEnv& env,
                                                   std::optional<Resolution> resolution = std::nullopt) {
  std::vector<OverlayPrimitive> out;
  auto cx = [&](double v) { return resolution ? std::clamp(v, 0.0, resolution->width) : v; };
  auto cy = [&](double v) { return resolution ? std::clamp(v, 0.0, resolution->height) : v; };
  for (std::size_t mi = 0; mi < marks.size(); ++mi) {
    const auto& m = marks[mi];
    for (std::size_t di = 0; di < detections.size(); ++di) {
      const Detection& d = detections[di];
      if (d.frame_index != frame) continue;
      OverlayPrimitive p;
      p.mark = mi;
      p.detection = di;
      p.tracker_id = d.tracker_id;
      EvalEnv l = env;
      l.datum = &d.datum;
      if (m.filter && !truthy(eval_expr(m.filter, l))) continue;
      if (m.kind == AnnotationKind::BoundingBox) {
        p.kind = PrimitiveKind::Rect;
        p.xyxy = {cx(d.xyxy[0]), cy(d.xyxy[1]), cx(d.xyxy[2]), cy(d.xyxy[3])};
        if (m.stroke) p.stroke = display_string(eval_expr(m.stroke, l));
        if (m.thickness) p.thickness = std::max(0.0, eval_number(m.thickness, l));
      } else {
        p.kind = PrimitiveKind::Text;
        double dx = m.dx ? eval_number(m.dx, l) : 0.0;
        double dy = m.dy ? eval_number(m.dy, l) : 0.0;
        p.x = cx(d.xyxy[0] + dx);
        p.y = cy(d.xyxy[1] + dy);
        p.content = m.text ? display_string(eval_expr(m.text, l)) : d.class_name;
        if (m.color) p.color = display_string(eval_expr(m.color, l));
      }
      out.push_back(std::move(p));
    }
  }
  return out;
}

inline long frame_for_time(double time, double fps) { return frame_index(time, fps); }

}  // namespace vidflow
