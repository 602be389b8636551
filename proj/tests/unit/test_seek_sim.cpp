#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "../oracles/gen.hpp"
#include "../oracles/keyframe_oracle.hpp"
#include "vidflow/player_sim.hpp"
#include "vidflow/rows.hpp"

using namespace vidflow;

namespace {

ScrubState state(double p, double t, double t_s, int dir) {
  ScrubState s;
  s.p = p;
  s.t = t;
  s.t_s = t_s;
  s.dir = dir;
  s.mode = ScrubMode::Scrubbing;
  return s;
}

/// Controller positioned at `p` with nothing in flight.
BridgeController presented_at(const KeyframeIndex& k, double duration, double p) {
  BridgeController c(k, duration);
  auto r = c.on_seek_command(p, ContinuityClass::Discrete, 0);
  if (r.epoch) c.on_presented(p, *r.epoch);
  return c;
}

std::vector<double> random_keyframes(oracle::Gen& g, double duration) {
  std::vector<double> k{0};
  while (true) {
    double next = k.back() + g.grid(0.25, 6, 0.25);
    if (next > duration) break;
    k.push_back(next);
  }
  return k;
}

sim::ScrubTrace trace_of(std::vector<sim::TraceSample> s) {
  sim::ScrubTrace t;
  t.label = "hand";
  t.samples = std::move(s);
  return t;
}

}  // namespace

// --- keyframe interval and snap ------------------------------------------------

TEST(KeyframeInterval, Examples) {
  Interval f = keyframe_interval(state(1, 9, 0, 1));
  EXPECT_EQ(f.lo, 1);
  EXPECT_EQ(f.hi, 9);
  Interval b = keyframe_interval(state(10, 3, 12, -1));
  EXPECT_EQ(b.lo, 3);
  EXPECT_EQ(b.hi, 10);
  Interval z = keyframe_interval(state(5, 5, 5, 1));
  EXPECT_EQ(z.lo, 5);
  EXPECT_EQ(z.hi, 5);
  EXPECT_TRUE(keyframe_interval(state(6, 5, 0, 1)).empty());
}

TEST(SnapKeyframe, Examples) {
  KeyframeIndex k({0, 4, 8, 12});
  SeekDecision fwd = snap_keyframe(state(1, 9, 1, 1), k);
  EXPECT_EQ(fwd.kind, DecisionKind::Keyframe);
  EXPECT_EQ(fwd.time, 8);
  SeekDecision back = snap_keyframe(state(10, 3, 10, -1), k);
  EXPECT_EQ(back.kind, DecisionKind::Keyframe);
  EXPECT_EQ(back.time, 4);
  SeekDecision none = snap_keyframe(state(5, 9, 5, 1), KeyframeIndex({0, 20}));
  EXPECT_EQ(none.kind, DecisionKind::Exact);
  EXPECT_EQ(none.time, 9);
  EXPECT_EQ(snap_keyframe(state(1, 9, 1, 1), k, 8.0).kind, DecisionKind::Suppressed);
}

TEST(SnapKeyframe, MatchesBruteForce) {
  oracle::Gen g(21);
  for (int iter = 0; iter < 5000; ++iter) {
    std::vector<double> K = random_keyframes(g, 60);
    KeyframeIndex idx(K);
    double p = g.grid(0, 60, 0.125), t = g.grid(0, 60, 0.125), ts = g.grid(0, 60, 0.125);
    int dir = g.coin() ? 1 : -1;
    SeekDecision d = snap_keyframe(state(p, t, ts, dir), idx);
    oracle::SnapResult o = oracle::snap(K, p, t, ts, dir);
    ASSERT_EQ(d.kind == DecisionKind::Keyframe, o.keyframe);
    ASSERT_EQ(d.time, o.time);
    if (o.keyframe) {
      auto [lo, hi] = oracle::interval(p, t, ts, dir);
      ASSERT_GE(d.time, lo);
      ASSERT_LE(d.time, hi);
    }
  }
}

TEST(KeyframeIndex, RejectsUnorderedTimes) {
  EXPECT_THROW(KeyframeIndex({0, 2, 2}), ConfigError);
  EXPECT_THROW(KeyframeIndex({-1, 2}), ConfigError);
  EXPECT_THROW(KeyframeIndex::from_json(Value{"x"}), ConfigError);
  KeyframeIndex k({0, 4, 8});
  EXPECT_EQ(k.governing(5.0), 4.0);
  EXPECT_EQ(k.nearest(6.5), 8.0);
}

// --- bridge controller -----------------------------------------------------------

TEST(Controller, DiscreteSeekIsExact) {
  BridgeController c(KeyframeIndex({0, 4, 8}), 734);
  CommandResult r = c.on_seek_command(200, ContinuityClass::Discrete, 0);
  EXPECT_EQ(r.decision.kind, DecisionKind::Exact);
  EXPECT_EQ(r.decision.time, 200);
  EXPECT_EQ(r.intent_time, 200);
  EXPECT_EQ(r.epoch, 1u);
  EXPECT_EQ(c.state().mode, ScrubMode::Idle);
}

TEST(Controller, ContinuousFromIdleSnapsToKeyframe) {
  BridgeController c = presented_at(KeyframeIndex({0, 4, 8, 12}), 734, 1.0);
  CommandResult r = c.on_seek_command(9.0, ContinuityClass::Continuous, 10);
  EXPECT_EQ(r.decision.kind, DecisionKind::Keyframe);
  EXPECT_EQ(r.decision.time, 8);
  EXPECT_EQ(r.intent_time, 9.0);
  EXPECT_EQ(c.state().mode, ScrubMode::Scrubbing);
  EXPECT_EQ(c.state().t_s, 1.0);
}

TEST(Controller, IntentIsClamped) {
  BridgeController c(KeyframeIndex({0}), 100);
  EXPECT_EQ(c.on_seek_command(-3, ContinuityClass::Discrete, 0).intent_time, 0);
  EXPECT_EQ(c.on_seek_command(250, ContinuityClass::Continuous, 1).intent_time, 100);
  EXPECT_EQ(c.on_seek_command(std::nan(""), ContinuityClass::Discrete, 2).intent_time, 0);
}

TEST(Controller, SettlesOncePerScrubAtThreshold) {
  BridgeController c = presented_at(KeyframeIndex({0, 4, 8, 12}), 734, 1.0);
  c.on_seek_command(9.0, ContinuityClass::Continuous, 1000);
  EXPECT_FALSE(c.on_tick(1149.999));
  auto settle = c.on_tick(1150);
  ASSERT_TRUE(settle);
  EXPECT_EQ(settle->decision.kind, DecisionKind::Exact);
  EXPECT_EQ(settle->decision.time, 9.0);
  EXPECT_EQ(c.state().mode, ScrubMode::Idle);
  EXPECT_FALSE(c.on_tick(1300));
  EXPECT_FALSE(c.on_tick(5000));
  // A new scrub gets its own settle.
  c.on_seek_command(11.0, ContinuityClass::Continuous, 6000);
  EXPECT_TRUE(c.on_tick(6150));
}

TEST(Controller, ActivityPostponesSettle) {
  BridgeController c = presented_at(KeyframeIndex({0, 4, 8}), 734, 0);
  c.on_seek_command(2, ContinuityClass::Continuous, 0);
  c.on_seek_command(3, ContinuityClass::Continuous, 100);
  EXPECT_FALSE(c.on_tick(150));
  EXPECT_TRUE(c.on_tick(250));
}

TEST(Controller, ReversalResetsScrubStart) {
  BridgeController c = presented_at(KeyframeIndex({0, 4, 8, 12}), 734, 1.0);
  auto r1 = c.on_seek_command(9.0, ContinuityClass::Continuous, 0);
  c.on_presented(8.0, *r1.epoch);
  auto r2 = c.on_seek_command(5.0, ContinuityClass::Continuous, 20);
  EXPECT_EQ(c.state().dir, -1);
  EXPECT_EQ(c.state().t_s, 9.0);
  // Backward interval [5, min(8, 9)] holds only keyframe 8, already on screen.
  EXPECT_EQ(r2.decision.kind, DecisionKind::Suppressed);
  auto r3 = c.on_seek_command(3.0, ContinuityClass::Continuous, 40);
  EXPECT_EQ(r3.decision.kind, DecisionKind::Keyframe);
  EXPECT_EQ(r3.decision.time, 4.0);
}

TEST(Controller, StalePresentationIsDropped) {
  BridgeController c(KeyframeIndex({0, 4}), 100);
  auto a = c.on_seek_command(10, ContinuityClass::Discrete, 0);
  auto b = c.on_seek_command(20, ContinuityClass::Discrete, 1);
  EXPECT_FALSE(c.on_presented(10, *a.epoch));
  EXPECT_EQ(c.state().p, 0);
  EXPECT_EQ(c.on_presented(20, *b.epoch), 20.0);
  EXPECT_EQ(c.state().p, 20);
  // Re-requesting the frame on screen dispatches nothing.
  EXPECT_EQ(c.on_seek_command(20, ContinuityClass::Discrete, 2).decision.kind, DecisionKind::Suppressed);
}

TEST(Controller, ScrubDecisionsTrailTheIntent) {
  oracle::Gen g(22);
  for (int run = 0; run < 200; ++run) {
    std::vector<double> K = random_keyframes(g, 120);
    BridgeController c(KeyframeIndex(K), 120);
    std::optional<std::uint64_t> last_epoch;
    std::optional<double> last_target;
    double now = 0;
    for (int step = 0; step < 60; ++step) {
      now += g.integer(1, 200);
      if (g.coin(0.15)) {
        if (auto r = c.on_tick(now); r && r->epoch) {
          last_epoch = r->epoch;
          last_target = r->decision.time;
        }
        continue;
      }
      if (last_epoch && g.coin(0.4)) c.on_presented(*last_target, *last_epoch);
      double t = g.grid(0, 120, 0.05);
      auto r = c.on_seek_command(t, ContinuityClass::Continuous, now);
      const ScrubState& s = c.state();
      ASSERT_EQ(s.t, t);
      oracle::SnapResult o = oracle::snap(K, s.p, s.t, s.t_s, s.dir);
      if (r.decision.kind == DecisionKind::Suppressed) {
        ASSERT_EQ(r.decision.time, o.time);
        ASSERT_EQ(last_target, o.time);
      } else {
        ASSERT_EQ(r.decision.kind == DecisionKind::Keyframe, o.keyframe);
        ASSERT_EQ(r.decision.time, o.time);
        auto [lo, hi] = oracle::interval(s.p, s.t, s.t_s, s.dir);
        // The snapped frame never passes the intent.
        if (o.keyframe) ASSERT_TRUE(s.dir > 0 ? r.decision.time <= t && r.decision.time >= lo : r.decision.time >= t && r.decision.time <= hi);
        last_epoch = r.epoch;
        last_target = r.decision.time;
      }
    }
  }
}

TEST(Controller, NotifiesAttachedPort) {
  struct Port : PlayerPort {
    std::vector<std::pair<double, std::uint64_t>> seeks;
    void submit_seek(double t, std::uint64_t e) override { seeks.emplace_back(t, e); }
    void set_playing(bool) override {}
  } port;
  BridgeController c(KeyframeIndex({0}), 10);
  c.attach(&port);
  c.on_seek_command(3, ContinuityClass::Discrete, 0);
  c.on_seek_command(3, ContinuityClass::Discrete, 1);
  ASSERT_EQ(port.seeks.size(), 1u);
  EXPECT_EQ(port.seeks[0], std::make_pair(3.0, std::uint64_t{1}));
}

// --- simulator ----------------------------------------------------------------------

TEST(Simulator, SeekCostExamples) {
  sim::MediaModel m;
  m.duration = 20;
  m.fps = 30;
  m.keyframes = KeyframeIndex({0, 10});
  m.segment_starts = {0, 5};
  sim::LatencyModel lat;  // 10 ms overhead, 30 ms fetch, 4 ms per frame
  // Ten frames past a cached keyframe: overhead + 11 decodes.
  auto a = sim::simulate(m, lat, sim::Policy::Direct, trace_of({{0, 0.0}, {100, 10.0 / 30}}));
  ASSERT_EQ(a.seeks.size(), 1u);
  EXPECT_EQ(a.seeks[0].completes_us - a.seeks[0].t_us, 10'000 + 11 * 4'000);
  ASSERT_EQ(a.presented.size(), 1u);
  EXPECT_EQ(a.presented[0].t_us, 154'000);
  // A keyframe in an uncached segment: overhead + fetch + one decode.
  auto b = sim::simulate(m, lat, sim::Policy::Direct, trace_of({{0, 0.0}, {100, 10.0}}));
  EXPECT_EQ(b.seeks[0].completes_us - b.seeks[0].t_us, 10'000 + 30'000 + 4'000);
}

TEST(Simulator, SeekCostFollowsDecodeDistance) {
  oracle::Gen g(23);
  for (int run = 0; run < 50; ++run) {
    sim::MediaModel m;
    m.duration = 120;
    m.fps = 24;
    std::vector<double> K;
    for (double k : random_keyframes(g, 120)) K.push_back(std::round(k * 24) / 24);
    m.keyframes = KeyframeIndex(K);
    m.segment_starts = {0};
    std::vector<sim::TraceSample> s{{0, 0.0}};
    for (int i = 1; i < 20; ++i) s.push_back({i * 1000, g.grid(0, 120, 0.01)});
    auto log = sim::simulate(m, sim::LatencyModel{}, sim::Policy::Direct, trace_of(s));
    for (const auto& sk : log.seeks) {
      double gov = 0;
      for (double k : K)
        if (k <= sk.target) gov = k;
      long frames = static_cast<long>(std::floor(sk.target * 24 + 0.5)) - static_cast<long>(std::floor(gov * 24 + 0.5)) + 1;
      ASSERT_EQ(sk.completes_us - sk.t_us, 10'000 + 4'000 * frames) << sk.target;
    }
  }
}

TEST(Simulator, EmptyTraceGivesEmptyLog) {
  auto log = sim::simulate(sim::tos_like_media(), {}, sim::Policy::Rapid, sim::ScrubTrace{});
  EXPECT_TRUE(log.intents.empty());
  EXPECT_TRUE(log.seeks.empty());
  EXPECT_TRUE(log.presented.empty());
}

TEST(Simulator, IsDeterministic) {
  auto traces = sim::generate_traces(4, sim::TraceKind::Search, 2);
  for (auto p : {sim::Policy::Direct, sim::Policy::NearestKeyframe, sim::Policy::Rapid}) {
    auto a = sim::simulate(sim::tos_like_media(), {}, p, traces[1]);
    auto b = sim::simulate(sim::tos_like_media(), {}, p, traces[1]);
    EXPECT_EQ(a.to_json(), b.to_json());
  }
}

TEST(Simulator, RejectsBadConfiguration) {
  sim::MediaModel m = sim::tos_like_media();
  sim::LatencyModel bad;
  bad.fetch_latency = -1;
  auto t = trace_of({{0, 1.0}, {10, 2.0}});
  EXPECT_THROW(sim::simulate(m, bad, sim::Policy::Rapid, t), ConfigError);
  EXPECT_THROW(sim::simulate(m, {}, sim::Policy::Rapid, trace_of({{10, 1.0}, {10, 2.0}})), ConfigError);
  m.duration = 0;
  EXPECT_THROW(sim::simulate(m, {}, sim::Policy::Rapid, t), ConfigError);
  EXPECT_THROW(sim::parse_policy("fast"), ConfigError);
}

TEST(Simulator, PresentationsFollowSeeks) {
  for (const auto& tr : sim::generate_traces(2, sim::TraceKind::Exploration, 3)) {
    auto log = sim::simulate(sim::tos_like_media(), {}, sim::Policy::Rapid, tr);
    for (std::size_t i = 1; i < log.presented.size(); ++i) ASSERT_GE(log.presented[i].t_us, log.presented[i - 1].t_us);
    for (const auto& p : log.presented) {
      bool matched = false;
      for (const auto& s : log.seeks) matched = matched || (s.completes_us == p.t_us && s.target == p.time);
      ASSERT_TRUE(matched);
    }
    // Every intent settles: the final presented frame is the final intent.
    ASSERT_FALSE(log.presented.empty());
    EXPECT_EQ(log.presented.back().time, std::clamp(tr.samples.back().intent, 0.0, 734.0));
  }
}

// --- metrics ------------------------------------------------------------------------

TEST(Metrics, PerfectTrackingHasZeroDeviation) {
  auto tr = trace_of({{0, 1.0}, {100, 2.0}, {200, 3.0}, {300, 3.0}});
  sim::SimLog log;
  log.initial_presented = 1.0;
  for (const auto& s : tr.samples) log.presented.push_back({s.t_ms * 1000, s.intent});
  auto m = sim::compute_metrics(tr, log, 30);
  EXPECT_EQ(m.avg_deviation, 0);
  EXPECT_EQ(m.histogram[0], m.samples);
  EXPECT_EQ(m.frame_changes, 2u);
}

TEST(Metrics, HandBuiltLog) {
  auto tr = trace_of({{0, 0.0}, {500, 10.0}, {1000, 10.0}});
  sim::SimLog log;
  log.initial_presented = 0;
  log.presented.push_back({700'000, 10.0});
  auto m = sim::compute_metrics(tr, log, 30, 10.0);
  // Samples at 0, 100, ..., 1000 ms; off by 10 s at 500 and 600 ms.
  EXPECT_EQ(m.samples, 11u);
  EXPECT_DOUBLE_EQ(m.avg_deviation, 20.0 / 11.0);
  EXPECT_EQ(m.histogram, (std::vector<std::size_t>{9, 0, 2, 0, 0, 0}));
  EXPECT_EQ(m.frame_changes, 1u);
  EXPECT_DOUBLE_EQ(m.updates_per_s, 1.0);
}

TEST(Metrics, HistogramCountsEverySample) {
  oracle::Gen g(24);
  for (const auto& tr : sim::generate_traces(g.integer(1, 1000), sim::TraceKind::Directed, 3)) {
    auto log = sim::simulate(sim::tos_like_media(), {}, sim::Policy::Direct, tr);
    auto m = sim::compute_metrics(tr, log, 24);
    std::size_t sum = 0;
    for (auto c : m.histogram) sum += c;
    EXPECT_EQ(sum, m.samples);
    EXPECT_GE(m.avg_deviation, 0);
  }
}

// --- traces ---------------------------------------------------------------------------

TEST(Traces, SameSeedSameTraces) {
  auto a = sim::standard_traces(7), b = sim::standard_traces(7), c = sim::standard_traces(8);
  ASSERT_EQ(a.size(), 15u);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(sim::to_ndjson(a[i]), sim::to_ndjson(b[i]));
    differs = differs || sim::to_ndjson(a[i]) != sim::to_ndjson(c[i]);
  }
  EXPECT_TRUE(differs);
}

TEST(Traces, FivePerKindWithinMedia) {
  auto all = sim::standard_traces(3);
  std::map<std::string, int> per;
  for (const auto& t : all) {
    ++per[t.label];
    EXPECT_NO_THROW(t.validate());
    for (const auto& s : t.samples) {
      ASSERT_GE(s.intent, 0);
      ASSERT_LE(s.intent, 734);
    }
  }
  EXPECT_EQ(per, (std::map<std::string, int>{{"directed", 5}, {"exploration", 5}, {"search", 5}}));
}

TEST(Traces, DirectedTracesEndNearTarget) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed)
    for (const auto& t : sim::generate_traces(seed, sim::TraceKind::Directed, 5)) {
      ASSERT_TRUE(t.target);
      EXPECT_NEAR(t.samples.back().intent, *t.target, 1.0);
    }
}

TEST(Traces, NdjsonRoundTrip) {
  auto t = sim::generate_traces(5, sim::TraceKind::Search, 1)[0];
  auto back = sim::trace_from_rows(parse_ndjson(sim::to_ndjson(t)), t.label);
  ASSERT_EQ(back.samples.size(), t.samples.size());
  for (std::size_t i = 0; i < t.samples.size(); ++i) {
    EXPECT_EQ(back.samples[i].t_ms, t.samples[i].t_ms);
    EXPECT_DOUBLE_EQ(back.samples[i].intent, t.samples[i].intent);
  }
}

TEST(Csv, HeaderAndRowsAlign) {
  auto tr = sim::generate_traces(1, sim::TraceKind::Directed, 1)[0];
  auto m = sim::compute_metrics(tr, sim::simulate(sim::tos_like_media(), {}, sim::Policy::Rapid, tr), 24);
  auto cols = [](const std::string& line) { return std::count(line.begin(), line.end(), ',') + 1; };
  std::string header = sim::metrics_csv_header(), row = sim::metrics_csv_row("d-0", sim::Policy::Rapid, m);
  EXPECT_EQ(cols(header), cols(row));
  EXPECT_EQ(row.rfind("d-0,rapid,", 0), 0u);
  std::string log = sim::log_csv(sim::simulate(sim::tos_like_media(), {}, sim::Policy::Rapid, tr));
  EXPECT_EQ(log.rfind("t_us,event,time,epoch\n", 0), 0u);
}
