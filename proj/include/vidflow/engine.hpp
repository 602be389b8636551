#pragma once

// A running session: dataflow runtime, one seek controller and playlist
// slot per player, and the ordered outbox of bus messages. Callers
// serialize all mutating calls.

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vidflow/annotate.hpp"
#include "vidflow/bus.hpp"
#include "vidflow/dataflow.hpp"
#include "vidflow/rows.hpp"
#include "vidflow/seek_control.hpp"
#include "vidflow/spec.hpp"
#include "vidflow/vod.hpp"
#include "vidflow/vod_cursor.hpp"

namespace vidflow {

struct SessionOptions {
  std::filesystem::path base_dir = ".";    // resolves dataset urls and keyframe sidecars
  std::filesystem::path media_root = ".";  // resolves source manifests
  ControllerConfig controller;
  ContinuityRules rules;
  /// Reads a source manifest by uri; defaults to media_root/uri.
  std::function<std::string(const std::string&)> read_media;
};

class Session {
 public:
  /// Throws SchemaError, ReferenceError or CompileError.
  explicit Session(Spec spec, SessionOptions opts = {}, double now_ms = 0) : opts_(std::move(opts)) {
    CompileOptions co;
    co.rules = opts_.rules;
    co.base_dir = opts_.base_dir;
    graph_ = std::make_shared<const DataflowGraph>(compile(spec, co));
    rt_ = std::make_unique<DataflowRuntime>(graph_);
    for (const auto& p : graph_->spec().players) {
      auto st = std::make_unique<PlayerState>();
      st->spec = &p;
      st->ctl = BridgeController({}, 0, opts_.controller);
      if (p.keyframes) st->ctl.reset(KeyframeIndex::from_json(load_rows(opts_.base_dir / *p.keyframes, "json")), 0);
      st->marks = compile_marks(p.marks);
      players_.emplace(p.name, std::move(st));
    }
    outbox_.push_back(bus_message("spec_loaded", std::nullopt, {{"spec", to_json(graph_->spec())}}));
    process(rt_->initialize(now_ms), now_ms);
  }

  const DataflowGraph& graph() const { return *graph_; }
  const DataflowRuntime& runtime() const { return *rt_; }
  const Spec& spec() const { return graph_->spec(); }

  /// Messages produced since the last drain, in emission order.
  std::vector<BusMessage> drain() { return std::exchange(outbox_, {}); }
  const std::vector<BusMessage>& pending() const { return outbox_; }

  void inject_event(const Value& event, double now_ms) { process(rt_->inject_event(event, now_ms), now_ms); }

  void set_signal(const std::string& name, const Value& v, double now_ms) { process(rt_->set_signal(name, v, now_ms), now_ms); }

  /// A frame was presented. Reports from superseded seeks are ignored.
  void on_presented(const std::string& player, double time, std::uint64_t epoch, double now_ms) {
    auto& st = state(player);
    if (auto p = st.ctl.on_presented(time, epoch)) process(rt_->apply_bridge_update({player, "current_time", *p}, now_ms), now_ms);
  }

  void on_ready(const std::string& player, double duration, double now_ms) {
    auto& st = state(player);
    if (!st.spec->playlist()) st.ctl.set_duration(duration);
    PulseLog log = rt_->apply_bridge_update({player, "duration", duration}, now_ms);
    log.append(rt_->apply_bridge_update({player, "ready", true}, now_ms));
    process(std::move(log), now_ms);
  }

  void on_ended(const std::string& player, double now_ms) {
    state(player);
    process(rt_->apply_bridge_update({player, "ended", true}, now_ms), now_ms);
  }

  void on_playing(const std::string& player, bool playing, double now_ms) {
    state(player);
    process(rt_->apply_bridge_update({player, "playing_state", playing}, now_ms), now_ms);
  }

  /// Drives settle timers.
  void tick(double now_ms) {
    for (auto& [name, st] : players_)
      if (auto r = st->ctl.on_tick(now_ms)) dispatch(name, *r, now_ms);
  }

  /// Applies an inbound bus message. Throws UnknownPlayer, SchemaError.
  void handle(const BusMessage& m, double now_ms) {
    auto need_player = [&]() -> const std::string& {
      if (!m.player) throw SchemaError("message.player", "missing field");
      return *m.player;
    };
    if (!m.payload.is_object()) throw SchemaError("message", "payload fields must form a JSON object");
    if (m.type == "event") {
      inject_event(m.payload.contains("event") ? m.payload["event"] : m.payload, now_ms);
    } else if (m.type == "presented") {
      on_presented(need_player(), m.payload["time"].get<double>(), m.payload["epoch"].get<std::uint64_t>(), now_ms);
    } else if (m.type == "ready") {
      on_ready(need_player(), m.payload.value("duration", 0.0), now_ms);
    } else if (m.type == "ended") {
      on_ended(need_player(), now_ms);
    } else if (m.type == "playing") {
      on_playing(need_player(), m.payload.value("playing", false), now_ms);
    } else if (m.type == "signal_update") {
      set_signal(m.payload.value("name", ""), m.payload.value("value", Value()), now_ms);
    } else {
      throw SchemaError("message.type", "'" + m.type + "' is not accepted from clients");
    }
  }

  /// The synthesized manifest of a playlist player. Throws UnknownPlayer,
  /// StaleEpoch, or OutOfRange when the player has no playlist yet.
  std::string manifest(const std::string& player, std::optional<std::uint64_t> epoch = std::nullopt,
                       std::string_view uri_prefix = {}) const {
    auto p = playlist(player, epoch);
    return synthesize_manifest(*p, uri_prefix);
  }

  std::shared_ptr<const CompiledPlaylist> playlist(const std::string& player, std::optional<std::uint64_t> epoch = std::nullopt) const {
    const auto& st = state(player);
    if (!st.spec->playlist()) throw OutOfRange("player '" + player + "' has a static source");
    auto p = st.slot.get(epoch);
    if (!p) throw OutOfRange("player '" + player + "' has no playlist yet");
    return p;
  }

  std::uint64_t manifest_epoch(const std::string& player) const { return state(player).slot.epoch(); }

  const BridgeController& controller(const std::string& player) const { return state(player).ctl; }

  /// Overlay primitives for a frame of `player`. Throws UnknownPlayer, EvalError.
  std::vector<OverlayPrimitive> overlays(const std::string& player, long frame) const {
    const auto& st = state(player);
    std::vector<OverlayPrimitive> out;
    EvalEnv env = rt_->env();
    for (std::size_t i = 0; i < st.marks.size(); ++i) {
      auto dets = detections_from_rows(rt_->value("data:" + st.marks[i].from));
      for (auto p : resolve_frame(dets, frame, {st.marks[i]}, env, st.spec->resolution)) {
        p.mark = i;
        out.push_back(std::move(p));
      }
    }
    return out;
  }

 private:
  struct PlayerState {
    const PlayerSpec* spec = nullptr;
    BridgeController ctl;
    PlaylistSlot slot;
    std::vector<CompiledAnnotationMark> marks;
  };

  SessionOptions opts_;
  std::shared_ptr<const DataflowGraph> graph_;
  std::unique_ptr<DataflowRuntime> rt_;
  std::map<std::string, std::unique_ptr<PlayerState>> players_;
  std::map<std::string, std::shared_ptr<const SourceStream>> sources_;
  std::vector<BusMessage> outbox_;

  PlayerState& state(const std::string& player) {
    auto it = players_.find(player);
    if (it == players_.end()) throw UnknownPlayer(player);
    return *it->second;
  }
  const PlayerState& state(const std::string& player) const {
    auto it = players_.find(player);
    if (it == players_.end()) throw UnknownPlayer(player);
    return *it->second;
  }

  static bool published(const Node& n) {
    return n.kind == NodeKind::Signal || n.kind == NodeKind::ReadProxy || n.kind == NodeKind::Derived ||
           n.kind == NodeKind::Encoding;
  }

  void process(PulseLog log, double now_ms) {
    for (const auto& e : log.entries) {
      const Node* n = graph_->find(e.node);
      if (!n || !published(*n)) continue;
      Value payload{{"name", e.node}, {"value", e.new_value}, {"t", e.t}};
      outbox_.push_back(bus_message("signal_update", n->player.empty() ? std::nullopt : std::optional(n->player), payload));
    }
    for (const auto& e : log.errors)
      outbox_.push_back(bus_message("error", std::nullopt,
                                    {{"node", e.node}, {"rule", e.rule}, {"path", e.path}, {"message", e.message}, {"t", e.t}}));
    for (const auto& c : log.commands) {
      if (auto* s = std::get_if<SeekCommand>(&c)) {
        auto r = state(s->player).ctl.on_seek_command(s->time, s->cls, now_ms);
        dispatch(s->player, r, now_ms);
      } else if (auto* p = std::get_if<SetPlayingCommand>(&c)) {
        outbox_.push_back(bus_message("set_playing", p->player, {{"playing", p->playing}}));
      } else if (auto* pc = std::get_if<PlaylistChanged>(&c)) {
        recompile(pc->player, now_ms);
      }
    }
  }

  /// Reports the intent, then emits the seek (if one was dispatched).
  void dispatch(const std::string& player, const CommandResult& r, double now_ms) {
    process(rt_->apply_bridge_update({player, "intent_time", r.intent_time}, now_ms), now_ms);
    if (r.epoch)
      outbox_.push_back(bus_message("seek", player,
                                    {{"time", r.decision.time},
                                     {"mode", r.decision.kind == DecisionKind::Keyframe ? "keyframe" : "exact"},
                                     {"epoch", *r.epoch},
                                     {"reason", r.decision.reason}}));
  }

  std::shared_ptr<const SourceStream> source(const std::string& uri) {
    auto it = sources_.find(uri);
    if (it != sources_.end()) return it->second;
    std::string text = opts_.read_media ? opts_.read_media(uri) : read_file(opts_.media_root / uri);
    auto s = std::make_shared<const SourceStream>(parse_manifest(text, uri_directory(uri), uri));
    sources_.emplace(uri, s);
    return s;
  }

  void recompile(const std::string& player, double now_ms) {
    auto& st = state(player);
    const PlaylistSpec& pl = *st.spec->playlist();
    const Value& pv = rt_->value(proxy_name(player, "playlist"));
    CompiledPlaylist next;
    try {
      std::vector<PlaylistInput> inputs;
      const Value& rows = pv["rows"];
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const Value& row = rows[i];
        if (!row.is_object() || !row.contains(pl.manifest) || !row[pl.manifest].is_string())
          throw SchemaError("players." + player + ".playlist", "row " + std::to_string(i) + " has no '" + pl.manifest + "' string");
        inputs.push_back({source(row[pl.manifest].get<std::string>()), row, {}});
      }
      assign_keys(inputs);
      next = apply_transforms(inputs, pl.transforms, rt_->env());
    } catch (const Error& e) {
      outbox_.push_back(bus_message("error", player, {{"node", proxy_name(player, "playlist")}, {"message", e.what()}}));
      return;
    }
    auto prev = st.slot.get();
    std::optional<double> intent;
    if (prev) {
      const Value& t = rt_->value(proxy_name(player, "current_time"));
      const Value& it = rt_->value(proxy_name(player, "intent_time"));
      double time = t.is_number() ? t.get<double>() : 0, itime = it.is_number() ? it.get<double>() : time;
      try {
        intent = apply_cursor_policy(st.spec->cursor, make_cursor_transition(*prev, next, time, itime));
      } catch (const Error& e) {
        outbox_.push_back(bus_message("error", player, {{"node", proxy_name(player, "cursor")}, {"message", e.what()}}));
        intent = 0.0;
      }
    }
    double duration = next.duration_seconds();
    KeyframeIndex k = KeyframeIndex::from_playlist(next);
    std::uint64_t epoch = st.slot.install(std::move(next));
    st.ctl.reset(std::move(k), duration);
    outbox_.push_back(bus_message("manifest_epoch", player,
                                  {{"epoch", epoch},
                                   {"duration", duration},
                                   {"url", "/players/" + player + "/manifest.m3u8?epoch=" + std::to_string(epoch)}}));
    process(rt_->apply_bridge_update({player, "duration", duration}, now_ms), now_ms);
    if (intent) dispatch(player, st.ctl.on_seek_command(*intent, ContinuityClass::Discrete, now_ms), now_ms);
  }
};

/// Parses, validates and starts a session from a spec file; relative paths
/// resolve against the spec file's directory.
inline std::unique_ptr<Session> load_session(const std::filesystem::path& spec_path, SessionOptions opts = {}, double now_ms = 0) {
  Spec spec = parse_spec(read_file(spec_path));
  opts.base_dir = spec_path.parent_path().empty() ? std::filesystem::path(".") : spec_path.parent_path();
  return std::make_unique<Session>(std::move(spec), std::move(opts), now_ms);
}

}  // namespace vidflow
