#pragma once

// Discrete-event simulation of a seeking video player on a virtual clock,
// trace generation and replay, and scrubbing metrics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "vidflow/dataflow.hpp"
#include "vidflow/error.hpp"
#include "vidflow/seek_control.hpp"

namespace vidflow::sim {

using Micros = std::int64_t;

inline Micros ms_to_us(double ms) { return static_cast<Micros>(std::llround(ms * 1000.0)); }
inline double us_to_s(Micros us) { return static_cast<double>(us) / 1e6; }
inline double us_to_ms(Micros us) { return static_cast<double>(us) / 1e3; }

struct MediaModel {
  double duration = 0;
  double fps = 30;
  KeyframeIndex keyframes;
  std::vector<double> segment_starts;  // ascending, first is 0
  std::vector<std::size_t> cached;     // segment indices cached before the run

  std::size_t segment_of(double t) const {
    auto it = std::upper_bound(segment_starts.begin(), segment_starts.end(), t);
    return it == segment_starts.begin() ? 0 : static_cast<std::size_t>(it - segment_starts.begin() - 1);
  }

  void validate() const {
    if (!std::isfinite(duration) || duration <= 0) throw ConfigError("media duration must be finite and > 0");
    if (!std::isfinite(fps) || fps <= 0) throw ConfigError("media fps must be finite and > 0");
    if (!keyframes.empty() && keyframes.times().back() > duration) throw ConfigError("keyframe beyond media duration");
    for (std::size_t i = 0; i < segment_starts.size(); ++i) {
      if (!std::isfinite(segment_starts[i])) throw ConfigError("segment boundary must be finite");
      if (i > 0 && !(segment_starts[i] > segment_starts[i - 1])) throw ConfigError("segment boundaries must increase");
    }
  }
};

/// 734 s at 24 fps with a keyframe every 4.37 s (rounded to frames) and a
/// segment every two keyframes.
inline MediaModel tos_like_media() {
  MediaModel m;
  m.duration = 734.0;
  m.fps = 24.0;
  std::vector<double> k;
  for (int i = 0;; ++i) {
    double t = std::round(i * 4.37 * m.fps) / m.fps;
    if (t > m.duration) break;
    k.push_back(t);
  }
  for (std::size_t i = 0; i < k.size(); i += 2) m.segment_starts.push_back(k[i]);
  m.keyframes = KeyframeIndex(std::move(k));
  return m;
}

/// Reads {"duration", "fps", "keyframes": [...], "segment_starts"?: [...]}.
/// Without segment_starts every keyframe starts a segment.
inline MediaModel media_from_json(const Value& j) {
  if (!j.is_object()) throw ConfigError("media model must be a JSON object");
  MediaModel m;
  try {
    m.duration = j.at("duration").get<double>();
    m.fps = j.value("fps", 30.0);
    m.keyframes = KeyframeIndex::from_json(j.at("keyframes"));
    if (j.contains("segment_starts")) {
      m.segment_starts = j["segment_starts"].get<std::vector<double>>();
    } else {
      m.segment_starts = m.keyframes.times();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("media model: ") + e.what());
  }
  m.validate();
  return m;
}

inline Value to_json(const MediaModel& m) {
  return Value{{"duration", m.duration}, {"fps", m.fps}, {"keyframes", m.keyframes.times()}, {"segment_starts", m.segment_starts}};
}

struct LatencyModel {
  double fetch_latency = 0.030;
  double decode_per_frame = 0.004;
  double seek_overhead = 0.010;

  void validate() const {
    for (double v : {fetch_latency, decode_per_frame, seek_overhead})
      if (!std::isfinite(v) || v < 0) throw ConfigError("latency parameters must be finite and >= 0");
  }
};

enum class TraceKind { Directed, Search, Exploration };

inline const char* to_string(TraceKind k) {
  switch (k) {
    case TraceKind::Directed: return "directed";
    case TraceKind::Search: return "search";
    case TraceKind::Exploration: return "exploration";
  }
  return "directed";
}

inline TraceKind parse_trace_kind(std::string_view s) {
  if (s == "directed") return TraceKind::Directed;
  if (s == "search") return TraceKind::Search;
  if (s == "exploration") return TraceKind::Exploration;
  throw ConfigError("unknown trace kind '" + std::string(s) + "'");
}

struct TraceSample {
  std::int64_t t_ms = 0;
  double intent = 0;
};

struct ScrubTrace {
  std::string label;
  std::vector<TraceSample> samples;
  std::optional<double> target;  // directed traces only

  void validate() const {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (!std::isfinite(samples[i].intent)) throw ConfigError("trace intent must be finite");
      if (i > 0 && samples[i].t_ms <= samples[i - 1].t_ms) throw ConfigError("trace timestamps must be strictly increasing");
    }
  }
  double duration_s() const { return samples.empty() ? 0 : (samples.back().t_ms - samples.front().t_ms) / 1000.0; }
};

inline std::string to_ndjson(const ScrubTrace& tr) {
  std::string out;
  for (const auto& s : tr.samples) out += Value{{"t_ms", s.t_ms}, {"intent_s", s.intent}}.dump() + "\n";
  return out;
}

inline ScrubTrace trace_from_rows(const Value& rows, std::string label = {}) {
  ScrubTrace tr;
  tr.label = std::move(label);
  for (const auto& r : rows) {
    if (!r.is_object() || !r.contains("t_ms") || !r.contains("intent_s")) throw ConfigError("trace rows need t_ms and intent_s");
    tr.samples.push_back({static_cast<std::int64_t>(std::llround(r["t_ms"].get<double>())), r["intent_s"].get<double>()});
  }
  tr.validate();
  return tr;
}

enum class Policy { Direct, NearestKeyframe, Rapid };

inline const char* to_string(Policy p) {
  switch (p) {
    case Policy::Direct: return "direct";
    case Policy::NearestKeyframe: return "keyframe";
    case Policy::Rapid: return "rapid";
  }
  return "direct";
}

inline Policy parse_policy(std::string_view s) {
  if (s == "direct") return Policy::Direct;
  if (s == "keyframe" || s == "nearest-keyframe") return Policy::NearestKeyframe;
  if (s == "rapid") return Policy::Rapid;
  throw ConfigError("unknown policy '" + std::string(s) + "'");
}

struct LoggedSeek {
  Micros t_us = 0;
  double target = 0;
  std::uint64_t epoch = 0;
  DecisionKind kind = DecisionKind::Exact;
  Micros completes_us = 0;
};

struct LoggedPoint {
  Micros t_us = 0;
  double time = 0;
};

struct SimLog {
  std::string policy;
  double initial_presented = 0;
  std::vector<LoggedPoint> intents;
  std::vector<LoggedSeek> seeks;
  std::vector<LoggedPoint> presented;
  std::size_t cancelled = 0;

  bool empty() const { return intents.empty() && seeks.empty() && presented.empty(); }

  Value to_json() const {
    Value j{{"policy", policy}, {"initial_presented", initial_presented}, {"cancelled", cancelled}};
    Value in = Value::array(), sk = Value::array(), pr = Value::array();
    for (const auto& p : intents) in.push_back({{"t_us", p.t_us}, {"time", p.time}});
    for (const auto& s : seeks)
      sk.push_back({{"t_us", s.t_us}, {"target", s.target}, {"epoch", s.epoch}, {"kind", vidflow::to_string(s.kind)},
                    {"completes_us", s.completes_us}});
    for (const auto& p : presented) pr.push_back({{"t_us", p.t_us}, {"time", p.time}});
    j["intents"] = std::move(in);
    j["seeks"] = std::move(sk);
    j["presented"] = std::move(pr);
    return j;
  }
};

struct SimOptions {
  ControllerConfig controller;
};

namespace detail {

/// Seek pipeline of a single player: one seek in flight, segment fetches
/// run to completion into the cache even when their seek is cancelled.
class SimPlayer : public PlayerPort {
 public:
  SimPlayer(const MediaModel& media, const LatencyModel& lat, Micros& now) : media_(media), lat_(lat), now_(now) {
    for (auto s : media.cached) available_[s] = 0;
  }

  void submit_seek(double time, std::uint64_t epoch) override {
    if (in_flight_) ++cancelled_;
    Micros start = now_ + to_us(lat_.seek_overhead);
    std::size_t seg = media_.segment_of(time);
    Micros ready = start;
    auto it = available_.find(seg);
    if (it == available_.end()) {
      ready = start + to_us(lat_.fetch_latency);
      available_[seg] = ready;
    } else {
      ready = std::max(start, it->second);
    }
    in_flight_ = InFlight{time, epoch, ready + to_us(lat_.decode_per_frame * static_cast<double>(frames_to_decode(time)))};
  }

  void set_playing(bool) override {}

  long frames_to_decode(double time) const {
    double k = media_.keyframes.governing(time).value_or(0.0);
    return frame_index(time, media_.fps) - frame_index(k, media_.fps) + 1;
  }

  struct InFlight {
    double target;
    std::uint64_t epoch;
    Micros completes;
  };
  const std::optional<InFlight>& in_flight() const { return in_flight_; }
  void clear() { in_flight_.reset(); }
  std::size_t cancelled() const { return cancelled_; }

 private:
  static Micros to_us(double s) { return static_cast<Micros>(std::llround(s * 1e6)); }

  const MediaModel& media_;
  const LatencyModel& lat_;
  Micros& now_;
  std::map<std::size_t, Micros> available_;
  std::optional<InFlight> in_flight_;
  std::size_t cancelled_ = 0;
};

}  // namespace detail

/// Replays `trace` against a simulated player. The player starts presenting
/// the first intent with its segment cached.
inline SimLog simulate(const MediaModel& media, const LatencyModel& latency, Policy policy, const ScrubTrace& trace,
                       const SimOptions& opts = {}) {
  media.validate();
  latency.validate();
  trace.validate();
  if (!std::isfinite(opts.controller.settle_threshold_ms) || opts.controller.settle_threshold_ms < 0)
    throw ConfigError("settle threshold must be finite and >= 0");
  SimLog log;
  log.policy = to_string(policy);
  if (trace.samples.empty()) return log;

  MediaModel m = media;
  double first = std::clamp(trace.samples.front().intent, 0.0, m.duration);
  m.cached.push_back(m.segment_of(first));
  log.initial_presented = first;

  Micros now = 0;
  detail::SimPlayer player(m, latency, now);
  BridgeController ctl(m.keyframes, m.duration, opts.controller);
  ctl.attach(&player);
  // Seed the controller with the starting position.
  ctl.on_seek_command(first, ContinuityClass::Discrete, 0);
  if (auto f = player.in_flight()) ctl.on_presented(first, f->epoch);
  player.clear();
  const std::size_t cancelled_before = player.cancelled();

  std::optional<double> last_written;
  const Micros threshold_us = ms_to_us(opts.controller.settle_threshold_ms);

  auto record_dispatch = [&](const CommandResult& r) {
    if (!r.epoch) return;
    log.seeks.push_back({now, r.decision.time, *r.epoch, r.decision.kind, player.in_flight()->completes});
  };

  enum class Kind { Present = 0, Sample = 1, Tick = 2 };
  struct Ev {
    Micros t;
    Kind kind;
    std::size_t seq;
    std::size_t index;
    bool operator>(const Ev& o) const {
      if (t != o.t) return t > o.t;
      if (kind != o.kind) return kind > o.kind;
      return seq > o.seq;
    }
  };
  std::priority_queue<Ev, std::vector<Ev>, std::greater<Ev>> q;
  std::size_t seq = 0;
  for (std::size_t i = 0; i < trace.samples.size(); ++i) q.push({trace.samples[i].t_ms * 1000, Kind::Sample, seq++, i});
  std::optional<std::uint64_t> scheduled_epoch;

  auto schedule_presentation = [&] {
    if (auto f = player.in_flight(); f && scheduled_epoch != f->epoch) {
      q.push({f->completes, Kind::Present, seq++, static_cast<std::size_t>(f->epoch)});
      scheduled_epoch = f->epoch;
    }
  };

  while (!q.empty()) {
    Ev ev = q.top();
    q.pop();
    now = ev.t;
    switch (ev.kind) {
      case Kind::Sample: {
        double intent = ctl.clamp_intent(trace.samples[ev.index].intent);
        if (last_written && *last_written == intent) break;
        last_written = intent;
        CommandResult r;
        if (policy == Policy::Direct) {
          r = ctl.on_seek_command(intent, ContinuityClass::Discrete, us_to_ms(now));
        } else if (policy == Policy::NearestKeyframe) {
          double k = m.keyframes.nearest(intent).value_or(intent);
          r = ctl.on_seek_command(k, ContinuityClass::Discrete, us_to_ms(now));
          r.intent_time = intent;
        } else {
          r = ctl.on_seek_command(intent, ContinuityClass::Continuous, us_to_ms(now));
          q.push({now + threshold_us, Kind::Tick, seq++, 0});
        }
        log.intents.push_back({now, r.intent_time});
        record_dispatch(r);
        schedule_presentation();
        break;
      }
      case Kind::Tick: {
        if (auto r = ctl.on_tick(us_to_ms(now))) {
          record_dispatch(*r);
          schedule_presentation();
        }
        break;
      }
      case Kind::Present: {
        auto f = player.in_flight();
        if (!f || f->epoch != ev.index) break;
        player.clear();
        if (auto p = ctl.on_presented(f->target, f->epoch)) log.presented.push_back({now, *p});
        break;
      }
    }
  }
  log.cancelled = player.cancelled() - cancelled_before;
  return log;
}

struct ScrubMetrics {
  double avg_deviation = 0;
  double updates_per_s = 0;
  std::size_t frame_changes = 0;
  std::size_t samples = 0;
  std::vector<double> bucket_edges;   // lower edges; bucket i = [edges[i], edges[i+1])
  std::vector<std::size_t> histogram;

  Value to_json() const {
    return Value{{"avg_deviation", avg_deviation}, {"updates_per_s", updates_per_s}, {"frame_changes", frame_changes},
                 {"samples", samples}, {"bucket_edges", bucket_edges}, {"histogram", histogram}};
  }
};

inline const std::vector<double>& default_bucket_edges() {
  static const std::vector<double> e{0, 1, 5, 15, 30, 60};
  return e;
}

/// Deviation is sampled uniformly at `sample_rate_hz` over the trace span;
/// the last bucket is open-ended.
inline ScrubMetrics compute_metrics(const ScrubTrace& trace, const SimLog& log, double fps, double sample_rate_hz = 60.0,
                                    std::vector<double> edges = default_bucket_edges()) {
  if (!std::isfinite(sample_rate_hz) || sample_rate_hz <= 0) throw ConfigError("sample rate must be finite and > 0");
  ScrubMetrics m;
  m.bucket_edges = edges;
  m.histogram.assign(edges.size(), 0);
  if (trace.samples.empty()) return m;
  const Micros t0 = trace.samples.front().t_ms * 1000, t1 = trace.samples.back().t_ms * 1000;

  std::size_t ii = 0, pi = 0;
  double intent = trace.samples.front().intent;
  double presented = log.initial_presented;
  double total = 0;
  for (std::size_t j = 0;; ++j) {
    Micros tau = t0 + static_cast<Micros>(std::llround(static_cast<double>(j) * 1e6 / sample_rate_hz));
    if (tau > t1) break;
    while (ii < trace.samples.size() && trace.samples[ii].t_ms * 1000 <= tau) intent = trace.samples[ii++].intent;
    while (pi < log.presented.size() && log.presented[pi].t_us <= tau) presented = log.presented[pi++].time;
    double d = std::fabs(intent - presented);
    total += d;
    ++m.samples;
    auto b = std::upper_bound(edges.begin(), edges.end(), d);
    if (b != edges.begin()) ++m.histogram[static_cast<std::size_t>(b - edges.begin() - 1)];
  }
  m.avg_deviation = m.samples ? total / static_cast<double>(m.samples) : 0;

  long frame = frame_index(log.initial_presented, fps);
  for (const auto& p : log.presented) {
    if (p.t_us < t0 || p.t_us > t1) continue;
    long f = frame_index(p.time, fps);
    if (f != frame) ++m.frame_changes;
    frame = f;
  }
  double span = trace.duration_s();
  m.updates_per_s = span > 0 ? static_cast<double>(m.frame_changes) / span : 0;
  return m;
}

namespace detail {

class TraceBuilder {
 public:
  TraceBuilder(std::uint64_t seed, double duration) : rng_(seed), duration_(duration) {}

  double uniform(double lo, double hi) { return lo + (hi - lo) * std::generate_canonical<double, 53>(rng_); }
  bool coin(double p) { return uniform(0, 1) < p; }

  void start(double at) {
    pos_ = clamp(at);
    emit();
  }

  /// Minimum-jerk move to `to` over `seconds`, sampled at 60 Hz.
  void move(double to, double seconds) {
    to = clamp(to);
    const double from = pos_;
    const std::int64_t t_start = t_ms_;
    const int n = std::max(1, static_cast<int>(std::lround(seconds * 60.0)));
    for (int i = 1; i <= n; ++i) {
      double s = static_cast<double>(i) / n;
      double shape = s * s * s * (10 - 15 * s + 6 * s * s);
      t_ms_ = t_start + std::llround(i * seconds * 1000.0 / n);
      pos_ = from + (to - from) * shape;
      emit();
    }
    pos_ = to;
  }

  void dwell(double seconds) { t_ms_ += std::llround(seconds * 1000.0); }

  /// Closes a trailing dwell with a sample at the final position.
  void hold() { emit(); }

  double pos() const { return pos_; }
  double duration() const { return duration_; }
  double clamp(double t) const { return std::clamp(t, 0.0, duration_); }
  std::vector<TraceSample> take() { return std::move(samples_); }

 private:
  void emit() {
    if (!samples_.empty() && t_ms_ <= samples_.back().t_ms) t_ms_ = samples_.back().t_ms + 1;
    samples_.push_back({t_ms_, pos_});
  }

  std::mt19937_64 rng_;
  double duration_;
  double pos_ = 0;
  std::int64_t t_ms_ = 0;
  std::vector<TraceSample> samples_;
};

inline ScrubTrace directed_trace(TraceBuilder& b) {
  ScrubTrace tr;
  tr.label = "directed";
  const double d = b.duration();
  b.start(b.uniform(0, d));
  double target = b.pos();
  for (int leg = 0, legs = 2 + static_cast<int>(b.uniform(0, 2)); leg < legs; ++leg) {
    do target = b.uniform(0, d);
    while (std::fabs(target - b.pos()) < 0.15 * d);
    double dist = target - b.pos();
    double overshoot = b.clamp(target + dist * b.uniform(0.03, 0.08));
    b.move(overshoot, b.uniform(0.6, 1.1));
    b.dwell(b.uniform(0.05, 0.2));
    b.move(target, b.uniform(0.3, 0.5));
    b.dwell(b.uniform(1.0, 2.5));
  }
  b.hold();
  tr.samples = b.take();
  tr.target = target;
  return tr;
}

inline ScrubTrace search_trace(TraceBuilder& b) {
  ScrubTrace tr;
  tr.label = "search";
  const double d = b.duration();
  b.start(b.uniform(0.2 * d, 0.8 * d));
  int dir = b.coin(0.5) ? 1 : -1;
  for (int i = 0, n = 5 + static_cast<int>(b.uniform(0, 3)); i < n; ++i) {
    double len = b.uniform(30, 150);
    double to = b.pos() + dir * len;
    if (to <= 0 || to >= d) dir = -dir, to = b.pos() + dir * len;
    b.move(to, b.uniform(0.4, 1.0));
    b.dwell(b.uniform(0.3, 1.2));
    dir = -dir;
  }
  b.dwell(b.uniform(1.0, 2.0));
  b.hold();
  tr.samples = b.take();
  return tr;
}

inline ScrubTrace exploration_trace(TraceBuilder& b) {
  ScrubTrace tr;
  tr.label = "exploration";
  const double d = b.duration();
  b.start(b.uniform(0, d));
  for (int i = 0, n = 5 + static_cast<int>(b.uniform(0, 4)); i < n; ++i) {
    double to = b.uniform(0, d);
    b.move(to, b.uniform(0.8, 2.0));
    b.dwell(b.uniform(0.4, 1.5));
  }
  b.dwell(b.uniform(1.0, 2.0));
  b.hold();
  tr.samples = b.take();
  return tr;
}

}  // namespace detail

/// Seeded scrub traces over a media of `duration` seconds.
inline std::vector<ScrubTrace> generate_traces(std::uint64_t seed, TraceKind kind, std::size_t count, double duration = 734.0) {
  if (count == 0) throw ConfigError("trace count must be > 0");
  if (!std::isfinite(duration) || duration <= 0) throw ConfigError("trace duration must be finite and > 0");
  std::vector<ScrubTrace> out;
  for (std::size_t i = 0; i < count; ++i) {
    detail::TraceBuilder b(seed * 1000003ULL + static_cast<std::uint64_t>(kind) * 7919ULL + i, duration);
    switch (kind) {
      case TraceKind::Directed: out.push_back(detail::directed_trace(b)); break;
      case TraceKind::Search: out.push_back(detail::search_trace(b)); break;
      case TraceKind::Exploration: out.push_back(detail::exploration_trace(b)); break;
    }
  }
  return out;
}

/// Five traces of each kind.
inline std::vector<ScrubTrace> standard_traces(std::uint64_t seed = 1, double duration = 734.0) {
  std::vector<ScrubTrace> all;
  for (TraceKind k : {TraceKind::Directed, TraceKind::Search, TraceKind::Exploration}) {
    auto t = generate_traces(seed, k, 5, duration);
    all.insert(all.end(), t.begin(), t.end());
  }
  return all;
}

inline std::string metrics_csv_header() {
  std::string h = "trace,policy,avg_deviation,updates_per_s,frame_changes,samples";
  for (double e : default_bucket_edges()) {
    std::ostringstream s;
    s << ",dev_ge_" << e;
    h += s.str();
  }
  return h + "\n";
}

inline std::string metrics_csv_row(const std::string& trace, Policy p, const ScrubMetrics& m) {
  std::ostringstream s;
  s << std::setprecision(10) << trace << ',' << to_string(p) << ',' << m.avg_deviation << ',' << m.updates_per_s << ','
    << m.frame_changes << ',' << m.samples;
  for (auto c : m.histogram) s << ',' << c;
  s << '\n';
  return s.str();
}

inline std::string log_csv(const SimLog& log) {
  std::ostringstream s;
  s << std::setprecision(12) << "t_us,event,time,epoch\n";
  for (const auto& p : log.intents) s << p.t_us << ",intent," << p.time << ",\n";
  for (const auto& k : log.seeks) s << k.t_us << ",seek_" << vidflow::to_string(k.kind) << ',' << k.target << ',' << k.epoch << '\n';
  for (const auto& p : log.presented) s << p.t_us << ",presented," << p.time << ",\n";
  return s.str();
}

}  // namespace vidflow::sim
