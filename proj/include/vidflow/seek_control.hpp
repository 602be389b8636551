#pragma once

// Per-player seek controller: tracks intended and presented time, snaps
// continuous scrubs to keyframes that trail the intent, and settles to an
// exact seek after inactivity.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vidflow/continuity.hpp"
#include "vidflow/error.hpp"
#include "vidflow/vod.hpp"

namespace vidflow {

class KeyframeIndex {
 public:
  KeyframeIndex() = default;

  /// Throws ConfigError unless `times` is strictly increasing and non-negative.
  explicit KeyframeIndex(std::vector<double> times) : k_(std::move(times)) {
    for (std::size_t i = 0; i < k_.size(); ++i) {
      if (!std::isfinite(k_[i]) || k_[i] < 0) throw ConfigError("keyframe times must be finite and >= 0");
      if (i > 0 && !(k_[i] > k_[i - 1])) throw ConfigError("keyframe times must be strictly increasing");
    }
  }

  /// Segment starts of a playlist (segments begin on keyframes).
  static KeyframeIndex from_playlist(const CompiledPlaylist& p) {
    std::vector<double> k;
    for (const auto& s : p.flattened) k.push_back(to_seconds(s.global_offset));
    return KeyframeIndex(std::move(k));
  }

  /// Parses a JSON array of seconds.
  static KeyframeIndex from_json(const Value& v) {
    if (!v.is_array()) throw ConfigError("keyframe index must be a JSON array of seconds");
    std::vector<double> k;
    for (const auto& x : v) {
      if (!x.is_number()) throw ConfigError("keyframe index must be a JSON array of seconds");
      k.push_back(x.get<double>());
    }
    return KeyframeIndex(std::move(k));
  }

  const std::vector<double>& times() const { return k_; }
  bool empty() const { return k_.empty(); }
  std::size_t size() const { return k_.size(); }

  /// Largest keyframe in [lo, hi].
  std::optional<double> max_in(double lo, double hi) const {
    if (lo > hi) return std::nullopt;
    auto it = std::upper_bound(k_.begin(), k_.end(), hi);
    if (it == k_.begin()) return std::nullopt;
    --it;
    if (*it < lo) return std::nullopt;
    return *it;
  }

  /// Smallest keyframe in [lo, hi].
  std::optional<double> min_in(double lo, double hi) const {
    if (lo > hi) return std::nullopt;
    auto it = std::lower_bound(k_.begin(), k_.end(), lo);
    if (it == k_.end() || *it > hi) return std::nullopt;
    return *it;
  }

  /// Keyframe at or before t (the one decoding of t starts from).
  std::optional<double> governing(double t) const {
    auto it = std::upper_bound(k_.begin(), k_.end(), t);
    if (it == k_.begin()) return std::nullopt;
    return *(it - 1);
  }

  /// Keyframe closest to t (earlier one on ties).
  std::optional<double> nearest(double t) const {
    if (k_.empty()) return std::nullopt;
    auto it = std::lower_bound(k_.begin(), k_.end(), t);
    if (it == k_.end()) return k_.back();
    if (it == k_.begin()) return *it;
    double after = *it, before = *(it - 1);
    return t - before <= after - t ? before : after;
  }

 private:
  std::vector<double> k_;
};

enum class ScrubMode { Idle, Scrubbing, SettlePending };

inline const char* to_string(ScrubMode m) {
  switch (m) {
    case ScrubMode::Idle: return "idle";
    case ScrubMode::Scrubbing: return "scrubbing";
    case ScrubMode::SettlePending: return "settle_pending";
  }
  return "idle";
}

struct ScrubState {
  double p = 0;              // presented time
  double t = 0;              // intended time
  int dir = 1;               // +1 forward, -1 backward
  double t_s = 0;            // intent at scrub start or last reversal
  double last_activity = 0;  // ms
  ScrubMode mode = ScrubMode::Idle;
};

struct Interval {
  double lo = 0;
  double hi = 0;
  bool empty() const { return lo > hi; }
  bool contains(double x) const { return x >= lo && x <= hi; }
};

/// The region of keyframes that trail the intent: [max(p, t_s), t] going
/// forward, [t, min(p, t_s)] going backward.
inline Interval keyframe_interval(const ScrubState& s) {
  if (s.dir >= 0) return {std::max(s.p, s.t_s), s.t};
  return {s.t, std::min(s.p, s.t_s)};
}

enum class DecisionKind { Exact, Keyframe, Suppressed };

inline const char* to_string(DecisionKind k) {
  switch (k) {
    case DecisionKind::Exact: return "exact";
    case DecisionKind::Keyframe: return "keyframe";
    case DecisionKind::Suppressed: return "suppressed";
  }
  return "exact";
}

struct SeekDecision {
  DecisionKind kind = DecisionKind::Suppressed;
  double time = 0;
  std::string reason;
};

/// Keyframe snap for a scrubbing state. `pending` is the target already
/// dispatched (or presented); an equal decision is Suppressed.
inline SeekDecision snap_keyframe(const ScrubState& s, const KeyframeIndex& k, std::optional<double> pending = std::nullopt) {
  Interval iv = keyframe_interval(s);
  SeekDecision d;
  std::optional<double> hit = iv.empty() ? std::nullopt : s.dir >= 0 ? k.max_in(iv.lo, iv.hi) : k.min_in(iv.lo, iv.hi);
  if (hit) {
    d = {DecisionKind::Keyframe, *hit, s.dir >= 0 ? "latest keyframe in trailing interval" : "earliest keyframe in trailing interval"};
  } else {
    d = {DecisionKind::Exact, s.t, "no keyframe in trailing interval"};
  }
  if (pending && *pending == d.time) return {DecisionKind::Suppressed, d.time, "same as pending target"};
  return d;
}

/// Media side of a player, implemented by the simulator and remote players.
class PlayerPort {
 public:
  virtual ~PlayerPort() = default;
  virtual void submit_seek(double time, std::uint64_t epoch) = 0;
  virtual void set_playing(bool playing) = 0;
};

struct ControllerConfig {
  double settle_threshold_ms = 150.0;
};

struct CommandResult {
  SeekDecision decision;
  double intent_time = 0;               // reported to the dataflow immediately
  std::optional<std::uint64_t> epoch;  // set when a seek was dispatched
};

class BridgeController {
 public:
  BridgeController(KeyframeIndex keyframes = {}, double duration = 0, ControllerConfig cfg = {})
      : k_(std::move(keyframes)), duration_(duration), cfg_(cfg) {}

  void attach(PlayerPort* port) { port_ = port; }
  const ScrubState& state() const { return s_; }
  const KeyframeIndex& keyframes() const { return k_; }
  double duration() const { return duration_; }
  std::uint64_t epoch() const { return epoch_; }
  bool in_flight() const { return in_flight_; }
  const ControllerConfig& config() const { return cfg_; }

  void set_duration(double d) { duration_ = d; }

  /// New media timeline (playlist recompile): scrub state resets to Idle.
  void reset(KeyframeIndex k, double duration) {
    k_ = std::move(k);
    duration_ = duration;
    s_.mode = ScrubMode::Idle;
    last_target_.reset();
    in_flight_ = false;
  }

  double clamp_intent(double t) const {
    if (!std::isfinite(t)) t = 0;
    t = std::max(0.0, t);
    return duration_ > 0 ? std::min(t, duration_) : t;
  }

  CommandResult on_seek_command(double time, ContinuityClass cls, double now_ms) {
    double t = clamp_intent(time);
    CommandResult r;
    r.intent_time = t;
    double prev = s_.t;
    s_.t = t;
    s_.last_activity = now_ms;
    if (cls == ContinuityClass::Discrete) {
      s_.mode = ScrubMode::Idle;
      r.decision = {DecisionKind::Exact, t, "discrete seek"};
      if (is_pending(t)) r.decision = {DecisionKind::Suppressed, t, "same as pending target"};
    } else {
      int step = t > prev ? 1 : t < prev ? -1 : 0;
      if (s_.mode == ScrubMode::Idle) {
        s_.t_s = prev;
        if (step != 0) s_.dir = step;
      } else if (step != 0 && step != s_.dir) {
        s_.dir = step;
        s_.t_s = prev;
      }
      s_.mode = ScrubMode::Scrubbing;
      r.decision = snap_keyframe(s_, k_, pending_target());
    }
    r.epoch = dispatch(r.decision);
    return r;
  }

  /// Settles a quiet scrub with an exact seek to the intent (at most once per scrub).
  std::optional<CommandResult> on_tick(double now_ms) {
    if (s_.mode == ScrubMode::Idle) return std::nullopt;
    if (now_ms - s_.last_activity < cfg_.settle_threshold_ms) return std::nullopt;
    s_.mode = ScrubMode::Idle;
    CommandResult r;
    r.intent_time = s_.t;
    r.decision = {DecisionKind::Exact, s_.t, "settle after inactivity"};
    if (is_pending(s_.t)) r.decision = {DecisionKind::Suppressed, s_.t, "already at intent"};
    r.epoch = dispatch(r.decision);
    return r;
  }

  /// A frame was presented. Returns the new presented time, or nullopt for
  /// reports from superseded seeks.
  std::optional<double> on_presented(double time, std::uint64_t epoch) {
    if (epoch != epoch_) return std::nullopt;
    s_.p = time;
    in_flight_ = false;
    if (s_.mode == ScrubMode::Scrubbing) s_.mode = ScrubMode::SettlePending;
    return time;
  }

 private:
  KeyframeIndex k_;
  double duration_;
  ControllerConfig cfg_;
  ScrubState s_;
  PlayerPort* port_ = nullptr;
  std::uint64_t epoch_ = 0;
  std::optional<double> last_target_;
  bool in_flight_ = false;

  /// The last dispatched target, while it is still in flight or on screen.
  std::optional<double> pending_target() const {
    if (last_target_ && (in_flight_ || s_.p == *last_target_)) return last_target_;
    return std::nullopt;
  }
  bool is_pending(double t) const {
    auto p = pending_target();
    return p && *p == t;
  }

  std::optional<std::uint64_t> dispatch(const SeekDecision& d) {
    if (d.kind == DecisionKind::Suppressed) return std::nullopt;
    ++epoch_;
    last_target_ = d.time;
    in_flight_ = true;
    if (port_) port_->submit_seek(d.time, epoch_);
    return epoch_;
  }
};

}  // namespace vidflow
