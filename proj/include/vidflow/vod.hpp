#pragma once

// HLS VOD playlists: parsing, the playlist transform algebra, manifest
// synthesis and global/local time mapping.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vidflow/error.hpp"
#include "vidflow/expr.hpp"
#include "vidflow/spec.hpp"

namespace vidflow {

/// Exact durations: integer microseconds.
using Ticks = std::int64_t;
inline constexpr Ticks kTicksPerSecond = 1'000'000;

inline Ticks to_ticks(double seconds) { return static_cast<Ticks>(std::llround(seconds * kTicksPerSecond)); }
inline double to_seconds(Ticks t) { return static_cast<double>(t) / kTicksPerSecond; }

/// Parses a non-negative decimal ("2", "2.000", "1.8333333") into ticks,
/// rounding half up beyond microsecond precision. nullopt when malformed.
inline std::optional<Ticks> parse_decimal_ticks(std::string_view s) {
  if (s.empty()) return std::nullopt;
  Ticks whole = 0, frac = 0;
  int frac_digits = 0;
  bool seen_digit = false, dot = false, round_up = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    char c = s[i];
    if (c == '.' && !dot) {
      dot = true;
      continue;
    }
    if (c < '0' || c > '9') return std::nullopt;
    seen_digit = true;
    if (!dot) {
      if (whole > 1'000'000'000'000) return std::nullopt;
      whole = whole * 10 + (c - '0');
    } else if (frac_digits < 6) {
      frac = frac * 10 + (c - '0');
      ++frac_digits;
    } else if (frac_digits == 6) {
      round_up = c >= '5';
      ++frac_digits;
    }
  }
  if (!seen_digit) return std::nullopt;
  for (int d = std::min(frac_digits, 6); d < 6; ++d) frac *= 10;
  return whole * kTicksPerSecond + frac + (round_up ? 1 : 0);
}

/// Formats ticks with exactly five decimals (half-up rounding).
inline std::string format_ticks5(Ticks t) {
  Ticks units = (t + 5) / 10;  // 1e-5 s
  char buf[48];
  std::snprintf(buf, sizeof buf, "%lld.%05lld", static_cast<long long>(units / 100000),
                static_cast<long long>(units % 100000));
  return buf;
}

struct Segment {
  std::string uri;
  Ticks duration = 0;
  bool discontinuity_before = false;
  std::string source_id;
  Ticks source_offset = 0;       // start within the source stream
  std::size_t source_index = 0;  // position within the source stream
  Ticks global_offset = 0;       // start within a compiled playlist
  std::size_t entry = 0;         // owning entry within a compiled playlist

  double seconds() const { return to_seconds(duration); }
};

struct SourceStream {
  std::string id;
  std::vector<Segment> segments;
  Ticks total = 0;
  int version = 0;

  double total_duration() const { return to_seconds(total); }
  /// Largest segment duration; the grid unit for morphology.
  Ticks nominal_segment() const {
    Ticks m = 0;
    for (const auto& s : segments) m = std::max(m, s.duration);
    return m;
  }
};

inline std::string resolve_uri(std::string_view base, std::string_view uri) {
  if (base.empty() || uri.find("://") != std::string_view::npos || (!uri.empty() && uri[0] == '/')) return std::string(uri);
  std::string b(base);
  if (b.back() != '/') b += '/';
  return b + std::string(uri);
}

/// Directory part of a manifest URI ("events/a.m3u8" -> "events").
inline std::string uri_directory(std::string_view uri) {
  auto slash = uri.rfind('/');
  return slash == std::string_view::npos ? std::string{} : std::string(uri.substr(0, slash));
}

/// Parses an HLS media playlist (VOD). Relative segment URIs are resolved
/// against `base`. Throws ManifestError.
inline SourceStream parse_manifest(std::string_view text, std::string_view base = {}, std::string id = {}) {
  SourceStream out;
  out.id = std::move(id);
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  bool header = false, ended = false, pending_disc = false;
  Ticks pending = 0;  // 0 while no #EXTINF is waiting for its URI
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (!header) {
      if (line != "#EXTM3U") throw ManifestError("missing #EXTM3U header", line_no);
      header = true;
      continue;
    }
    if (ended) continue;
    if (line[0] == '#') {
      if (line.rfind("#EXTINF:", 0) == 0) {
        if (pending > 0) throw ManifestError("#EXTINF without a segment URI", line_no);
        std::string v = line.substr(8);
        auto comma = v.find(',');
        std::string num = v.substr(0, comma);
        auto ticks = parse_decimal_ticks(num);
        if (!ticks) throw ManifestError("malformed #EXTINF duration '" + num + "'", line_no);
        if (*ticks <= 0) throw ManifestError("#EXTINF duration must be positive", line_no);
        pending = *ticks;
      } else if (line == "#EXT-X-ENDLIST") {
        ended = true;
      } else if (line == "#EXT-X-DISCONTINUITY") {
        pending_disc = true;
      } else if (line.rfind("#EXT-X-STREAM-INF", 0) == 0 || line.rfind("#EXT-X-I-FRAME-STREAM-INF", 0) == 0 ||
                 line.rfind("#EXT-X-MEDIA:", 0) == 0) {
        throw ManifestError("master playlists are not supported", line_no);
      } else if (line.rfind("#EXT-X-BYTERANGE", 0) == 0) {
        throw ManifestError("byte-range segments are not supported", line_no);
      } else if (line.rfind("#EXT-X-KEY:", 0) == 0) {
        if (line.find("METHOD=NONE") == std::string::npos)
          throw ManifestError("encrypted segments are not supported", line_no);
      } else if (line.rfind("#EXT-X-VERSION:", 0) == 0) {
        out.version = std::atoi(line.c_str() + 15);
      }
      continue;
    }
    if (pending == 0) throw ManifestError("segment URI without #EXTINF", line_no);
    Segment s;
    s.uri = resolve_uri(base, line);
    s.duration = pending;
    s.discontinuity_before = pending_disc;
    s.source_id = out.id;
    s.source_offset = out.total;
    s.source_index = out.segments.size();
    out.total += s.duration;
    out.segments.push_back(std::move(s));
    pending = 0;
    pending_disc = false;
  }
  if (!header) throw ManifestError("missing #EXTM3U header", line_no == 0 ? 1 : line_no);
  if (pending > 0) throw ManifestError("#EXTINF without a segment URI", line_no);
  if (!ended) throw ManifestError("missing #EXT-X-ENDLIST (live playlists are not supported)", line_no);
  return out;
}

// ---------------------------------------------------------------------------
// Transform algebra
// ---------------------------------------------------------------------------

/// One source with its data row, as fed to the transform pipeline.
struct PlaylistInput {
  std::shared_ptr<const SourceStream> stream;
  Value tuple;
  std::string key;  // stable identity across recompiles
};

/// Assigns identity keys: the tuple's "id" when present, else the source
/// id; repeated keys get "#2", "#3", ...
inline void assign_keys(std::vector<PlaylistInput>& inputs) {
  std::map<std::string, int> seen;
  for (auto& in : inputs) {
    std::string k = in.tuple.is_object() && in.tuple.contains("id") ? display_string(in.tuple["id"]) : in.stream->id;
    int n = ++seen[k];
    in.key = n == 1 ? k : k + "#" + std::to_string(n);
  }
}

struct PlaylistEntry {
  std::shared_ptr<const SourceStream> stream;
  Value tuple;
  std::string key;
  std::vector<char> mask;  // per-segment inclusion over the source grid

  const std::string& source_id() const { return stream->id; }
  Ticks included() const {
    Ticks t = 0;
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i]) t += stream->segments[i].duration;
    return t;
  }
  /// [first, last] included source range in source ticks.
  std::pair<Ticks, Ticks> clip_range() const {
    Ticks a = -1, b = 0;
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i]) {
        if (a < 0) a = stream->segments[i].source_offset;
        b = stream->segments[i].source_offset + stream->segments[i].duration;
      }
    return {std::max<Ticks>(a, 0), b};
  }
};

struct CompiledPlaylist {
  std::vector<PlaylistEntry> entries;
  std::vector<Segment> flattened;
  std::vector<std::pair<Ticks, Ticks>> entry_spans;  // global [start, end) per entry
  Ticks duration = 0;
  std::uint64_t epoch = 0;

  double duration_seconds() const { return to_seconds(duration); }
  std::size_t discontinuities() const {
    return static_cast<std::size_t>(std::count_if(flattened.begin(), flattened.end(),
                                                  [](const Segment& s) { return s.discontinuity_before; }));
  }
  std::optional<std::size_t> find_entry(std::string_view key) const {
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (entries[i].key == key) return i;
    return std::nullopt;
  }
};

enum class MorphOp { Erode, Dilate };

/// 1-D binary morphology with a window of half-width `radius` units;
/// positions outside the mask count as excluded.
inline std::vector<char> erode_dilate(const std::vector<char>& mask, std::size_t radius, MorphOp op) {
  const std::size_t n = mask.size();
  if (radius == 0) return mask;
  std::vector<char> out(n, 0);
  // Prefix sums make each window O(1).
  std::vector<std::size_t> prefix(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + (mask[i] ? 1 : 0);
  for (std::size_t i = 0; i < n; ++i) {
    long lo = static_cast<long>(i) - static_cast<long>(radius);
    long hi = static_cast<long>(i) + static_cast<long>(radius);
    std::size_t clo = static_cast<std::size_t>(std::max(lo, 0L));
    std::size_t chi = static_cast<std::size_t>(std::min(hi, static_cast<long>(n) - 1));
    std::size_t ones = prefix[chi + 1] - prefix[clo];
    if (op == MorphOp::Dilate) out[i] = ones > 0;
    else out[i] = lo >= 0 && hi < static_cast<long>(n) && ones == static_cast<std::size_t>(hi - lo + 1);
  }
  return out;
}

/// Radius in grid units: ceil(radius / segment duration).
inline std::size_t radius_units(double radius_seconds, Ticks segment) {
  Ticks r = to_ticks(radius_seconds);
  if (r <= 0 || segment <= 0) return 0;
  return static_cast<std::size_t>((r + segment - 1) / segment);
}

namespace detail {

inline ExprPtr parse_playlist_expr(const std::string& text) {
  return rename_signals(parse_expr(text), [](const std::string& n) { return rewrite_read(n); });
}

inline int compare_keys(const Value& a, const Value& b) {
  auto rank = [](const Value& v) { return v.is_number() ? 0 : v.is_string() ? 1 : v.is_boolean() ? 2 : 3; };
  int ra = rank(a), rb = rank(b);
  if (ra != rb) return ra < rb ? -1 : 1;
  if (ra == 0) {
    double x = a.get<double>(), y = b.get<double>();
    return x < y ? -1 : x > y ? 1 : 0;
  }
  if (ra == 1) return a.get_ref<const std::string&>().compare(b.get_ref<const std::string&>());
  if (ra == 2) return int(a.get<bool>()) - int(b.get<bool>());
  return 0;
}

}  // namespace detail

/// Flattens entries into a segment timeline with global offsets and
/// discontinuity flags at every splice point.
inline CompiledPlaylist flatten(std::vector<PlaylistEntry> entries) {
  CompiledPlaylist out;
  entries.erase(std::remove_if(entries.begin(), entries.end(),
                               [](const PlaylistEntry& e) { return std::find(e.mask.begin(), e.mask.end(), 1) == e.mask.end(); }),
                entries.end());
  Ticks t = 0;
  for (std::size_t ei = 0; ei < entries.size(); ++ei) {
    const PlaylistEntry& e = entries[ei];
    Ticks start = t;
    for (std::size_t i = 0; i < e.mask.size(); ++i) {
      if (!e.mask[i]) continue;
      Segment s = e.stream->segments[i];
      s.global_offset = t;
      s.entry = ei;
      if (out.flattened.empty()) {
        s.discontinuity_before = false;
      } else {
        const Segment& prev = out.flattened.back();
        bool spliced = prev.entry != ei || prev.source_id != s.source_id || prev.source_index + 1 != s.source_index;
        s.discontinuity_before = spliced || s.discontinuity_before;
      }
      t += s.duration;
      out.flattened.push_back(std::move(s));
    }
    out.entry_spans.emplace_back(start, t);
  }
  out.duration = t;
  out.entries = std::move(entries);
  return out;
}

/// Applies transforms in declaration order. `env` supplies signal values;
/// each entry's tuple is bound as `datum`. Throws EvalError or ClipError.
inline CompiledPlaylist apply_transforms(const std::vector<PlaylistInput>& inputs,
                                         const std::vector<PlaylistTransform>& transforms, const EvalEnv& env = {}) {
  std::vector<PlaylistEntry> entries;
  entries.reserve(inputs.size());
  for (const auto& in : inputs)
    entries.push_back({in.stream, in.tuple, in.key, std::vector<char>(in.stream->segments.size(), 1)});

  for (const auto& t : transforms) {
    std::visit(
        [&](const auto& x) {
          using T = std::decay_t<decltype(x)>;
          EvalEnv local = env;
          if constexpr (std::is_same_v<T, transform::Filter>) {
            ExprPtr pred = detail::parse_playlist_expr(x.predicate);
            std::vector<PlaylistEntry> kept;
            kept.reserve(entries.size());
            for (auto& e : entries) {
              local.datum = &e.tuple;
              if (truthy(eval_expr(pred, local))) kept.push_back(std::move(e));
            }
            entries = std::move(kept);
          } else if constexpr (std::is_same_v<T, transform::Sort>) {
            ExprPtr key = detail::parse_playlist_expr(x.key);
            std::vector<std::pair<Value, std::size_t>> keys;
            keys.reserve(entries.size());
            for (std::size_t i = 0; i < entries.size(); ++i) {
              local.datum = &entries[i].tuple;
              keys.emplace_back(eval_expr(key, local), i);
            }
            std::stable_sort(keys.begin(), keys.end(), [&](const auto& a, const auto& b) {
              int c = detail::compare_keys(a.first, b.first);
              return x.order == SortOrder::Ascending ? c < 0 : c > 0;
            });
            std::vector<PlaylistEntry> sorted;
            sorted.reserve(entries.size());
            for (auto& k : keys) sorted.push_back(std::move(entries[k.second]));
            entries = std::move(sorted);
          } else if constexpr (std::is_same_v<T, transform::Clip>) {
            ExprPtr a = detail::parse_playlist_expr(x.start), b = detail::parse_playlist_expr(x.end);
            for (auto& e : entries) {
              local.datum = &e.tuple;
              Ticks total = e.stream->total;
              Ticks s = std::clamp(to_ticks(eval_number(a, local)), Ticks{0}, total);
              Ticks f = std::clamp(to_ticks(eval_number(b, local)), Ticks{0}, total);
              if (s >= f) throw ClipError("clip start must precede end for entry '" + e.key + "'");
              for (std::size_t i = 0; i < e.mask.size(); ++i) {
                const Segment& seg = e.stream->segments[i];
                bool overlaps = seg.source_offset < f && seg.source_offset + seg.duration > s;
                e.mask[i] = e.mask[i] && overlaps;
              }
            }
          } else {
            MorphOp op = std::is_same_v<T, transform::Erode> ? MorphOp::Erode : MorphOp::Dilate;
            for (auto& e : entries) e.mask = erode_dilate(e.mask, radius_units(x.radius, e.stream->nominal_segment()), op);
          }
        },
        t);
  }
  return flatten(std::move(entries));
}

/// HLS media playlist text for a compiled playlist. Segment URIs are
/// prefixed with `uri_prefix`.
inline std::string synthesize_manifest(const CompiledPlaylist& p, std::string_view uri_prefix = {}) {
  Ticks longest = 0;
  for (const auto& s : p.flattened) longest = std::max(longest, s.duration);
  std::string out = "#EXTM3U\n#EXT-X-VERSION:3\n#EXT-X-PLAYLIST-TYPE:VOD\n#EXT-X-TARGETDURATION:";
  out += std::to_string((longest + kTicksPerSecond - 1) / kTicksPerSecond) + "\n";
  for (const auto& s : p.flattened) {
    if (s.discontinuity_before) out += "#EXT-X-DISCONTINUITY\n";
    out += "#EXTINF:" + format_ticks5(s.duration) + ",\n";
    out += std::string(uri_prefix) + s.uri + "\n";
  }
  out += "#EXT-X-ENDLIST\n";
  return out;
}

// ---------------------------------------------------------------------------
// Time mapping
// ---------------------------------------------------------------------------

struct TimeMapping {
  std::string source_id;
  std::string key;
  std::size_t entry = 0;
  double local_time = 0;  // seconds within the source stream
  std::size_t segment_index = 0;
};

/// Flattened segment containing global tick `g` (boundaries belong to the
/// following segment; the final instant belongs to the last segment).
inline std::size_t segment_at(const CompiledPlaylist& p, Ticks g) {
  auto it = std::upper_bound(p.flattened.begin(), p.flattened.end(), g,
                             [](Ticks v, const Segment& s) { return v < s.global_offset; });
  return static_cast<std::size_t>(std::distance(p.flattened.begin(), it)) - 1;
}

inline TimeMapping map_time(const CompiledPlaylist& p, double global_time) {
  if (p.flattened.empty()) throw OutOfRange("empty playlist");
  if (!(global_time >= 0) || global_time > p.duration_seconds() + 1e-9)
    throw OutOfRange("time " + format_number(global_time) + " outside [0, " + format_number(p.duration_seconds()) + "]");
  Ticks g = std::min(to_ticks(global_time), p.duration);
  std::size_t i = segment_at(p, g);
  const Segment& s = p.flattened[i];
  return {s.source_id, p.entries[s.entry].key, s.entry, to_seconds(s.source_offset + (g - s.global_offset)), i};
}

/// Inverse of map_time for the first occurrence of `source_id` covering `local_time`.
inline double map_global(const CompiledPlaylist& p, std::string_view source_id, double local_time) {
  Ticks l = to_ticks(local_time);
  const Segment* last_match = nullptr;
  for (const auto& s : p.flattened) {
    if (s.source_id != source_id) continue;
    if (l >= s.source_offset && l < s.source_offset + s.duration) return to_seconds(s.global_offset + (l - s.source_offset));
    if (l == s.source_offset + s.duration) last_match = &s;
  }
  if (last_match) return to_seconds(last_match->global_offset + last_match->duration);
  throw OutOfRange("'" + std::string(source_id) + "' has no segment at " + format_number(local_time));
}

// ---------------------------------------------------------------------------
// Atomic playlist slot with epochs
// ---------------------------------------------------------------------------

class PlaylistSlot {
 public:
  /// Installs a new playlist; returns its epoch (strictly increasing).
  std::uint64_t install(CompiledPlaylist p) {
    std::lock_guard lock(mu_);
    p.epoch = ++epoch_;
    current_ = std::make_shared<const CompiledPlaylist>(std::move(p));
    return epoch_;
  }

  std::shared_ptr<const CompiledPlaylist> get() const {
    std::lock_guard lock(mu_);
    return current_;
  }

  /// The current playlist, provided `epoch` (when given) is current. Throws StaleEpoch.
  std::shared_ptr<const CompiledPlaylist> get(std::optional<std::uint64_t> epoch) const {
    std::lock_guard lock(mu_);
    if (epoch && *epoch != epoch_) throw StaleEpoch(*epoch, epoch_);
    return current_;
  }

  std::uint64_t epoch() const {
    std::lock_guard lock(mu_);
    return epoch_;
  }

  TimeMapping map_time(std::uint64_t epoch, double t) const {
    auto p = get(epoch);
    if (!p) throw OutOfRange("no playlist installed");
    return vidflow::map_time(*p, t);
  }

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const CompiledPlaylist> current_;
  std::uint64_t epoch_ = 0;
};

}  // namespace vidflow
