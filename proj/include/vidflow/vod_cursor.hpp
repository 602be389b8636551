#pragma once

// Cursor consistency across playlist recompiles: decides the playback
// position in a new playlist from the position in the previous one.

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "vidflow/expr.hpp"
#include "vidflow/spec.hpp"
#include "vidflow/vod.hpp"

namespace vidflow {

/// An entry's span as seen by cursor expressions.
struct SegmentRef {
  long index = -1;
  double start = 0;
  double end = 0;
  std::string key;
  bool valid = false;
  std::string ordering;  // "prev" or "new": which ordering lead/lag walk

  Value to_json() const {
    return Value{{"index", index}, {"start", start}, {"end", end}, {"key", valid ? Value(key) : Value(nullptr)},
                 {"valid", valid}, {"ordering", ordering}};
  }
};

struct CursorTransition {
  double prev_time = 0;
  double prev_itime = 0;
  double prev_duration = 0;
  double new_duration = 0;
  SegmentRef prev_seg;
  std::optional<SegmentRef> new_seg;  // present iff the entry was kept
  /// For each entry of the previous playlist: its bounds in the new playlist
  /// (invalid when removed).
  std::vector<SegmentRef> prev_entries_in_new;
  /// Entries of the new playlist.
  std::vector<SegmentRef> new_entries;

  bool kept() const { return new_seg.has_value(); }
};

inline SegmentRef entry_ref(const CompiledPlaylist& p, std::size_t i, const char* ordering) {
  return {static_cast<long>(i), to_seconds(p.entry_spans[i].first), to_seconds(p.entry_spans[i].second),
          p.entries[i].key, true, ordering};
}

/// Builds the transition for a cursor at `time`/`itime` in `prev` moving to `next`.
inline CursorTransition make_cursor_transition(const CompiledPlaylist& prev, const CompiledPlaylist& next, double time,
                                               double itime) {
  CursorTransition tr;
  tr.prev_time = time;
  tr.prev_itime = itime;
  tr.prev_duration = prev.duration_seconds();
  tr.new_duration = next.duration_seconds();
  for (std::size_t i = 0; i < next.entries.size(); ++i) tr.new_entries.push_back(entry_ref(next, i, "new"));
  for (std::size_t i = 0; i < prev.entries.size(); ++i) {
    auto j = next.find_entry(prev.entries[i].key);
    tr.prev_entries_in_new.push_back(j ? entry_ref(next, *j, "new") : SegmentRef{});
  }
  tr.prev_seg.ordering = "prev";
  if (!prev.flattened.empty()) {
    double t = std::clamp(time, 0.0, prev.duration_seconds());
    std::size_t e = map_time(prev, t).entry;
    tr.prev_seg = entry_ref(prev, e, "prev");
    if (tr.prev_entries_in_new[e].valid) tr.new_seg = tr.prev_entries_in_new[e];
  }
  return tr;
}

struct CompiledCursorPolicy {
  ExprPtr on_keep;
  ExprPtr on_remove;

  static CompiledCursorPolicy from(const CursorPolicy& p) { return {parse_expr(p.on_keep), parse_expr(p.on_remove)}; }
};

namespace detail {

inline Value cursor_neighbor(const CursorTransition& tr, const Value& seg, long k, bool lead) {
  if (!seg.is_object()) throw EvalError("root", "lead/lag expect a segment");
  if (k < 0) {
    k = -k;
    lead = !lead;
  }
  if (k == 0) return seg;
  std::string ordering = seg.value("ordering", "new");
  long index = seg.contains("index") && seg["index"].is_number() ? seg["index"].get<long>() : -1;
  const long step = lead ? 1 : -1;
  long found = 0;
  if (ordering == "prev") {
    long n = static_cast<long>(tr.prev_entries_in_new.size());
    for (long i = index + step; i >= 0 && i < n; i += step)
      if (tr.prev_entries_in_new[i].valid && ++found == k) return tr.prev_entries_in_new[i].to_json();
  } else {
    long n = static_cast<long>(tr.new_entries.size());
    long i = index + step * k;
    if (index >= 0 && i >= 0 && i < n) return tr.new_entries[i].to_json();
  }
  SegmentRef miss;
  miss.start = miss.end = lead ? tr.new_duration : 0.0;
  miss.ordering = "new";
  return miss.to_json();
}

}  // namespace detail

/// Evaluates onKeep or onRemove for the transition; the result is clamped
/// to [0, new duration]. Throws EvalError.
inline double apply_cursor_policy(const CompiledCursorPolicy& policy, const CursorTransition& tr) {
  Value prev{{"time", tr.prev_time}, {"itime", tr.prev_itime}, {"duration", tr.prev_duration}};
  Value next{{"duration", tr.new_duration}};
  Value prev_seg = tr.prev_seg.to_json();
  Value new_seg = tr.new_seg ? tr.new_seg->to_json() : Value(nullptr);
  EvalEnv env;
  env.signal = [&](std::string_view name) -> const Value* {
    if (name == "@prev") return &prev;
    if (name == "@new") return &next;
    if (name == "@prev_seg") return &prev_seg;
    if (name == "@new_seg" && tr.new_seg) return &new_seg;
    return nullptr;
  };
  env.window = [&](const Value& seg, long k, bool lead) { return detail::cursor_neighbor(tr, seg, k, lead); };
  double t = eval_number(tr.kept() ? policy.on_keep : policy.on_remove, env);
  if (std::isnan(t)) throw EvalError("root", "cursor policy produced NaN");
  return std::clamp(t, 0.0, tr.new_duration);
}

inline double apply_cursor_policy(const CursorPolicy& policy, const CursorTransition& tr) {
  return apply_cursor_policy(CompiledCursorPolicy::from(policy), tr);
}

}  // namespace vidflow
