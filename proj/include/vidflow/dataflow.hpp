#pragma once

// Reactive dataflow graph with the split-signal rewrite for player state.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "vidflow/continuity.hpp"
#include "vidflow/error.hpp"
#include "vidflow/expr.hpp"
#include "vidflow/rows.hpp"
#include "vidflow/spec.hpp"

namespace vidflow {

// ---------------------------------------------------------------------------
// Player proxy naming
// ---------------------------------------------------------------------------

inline constexpr const char* kReadProxies[] = {"current_time", "intent_time", "playing_state",
                                               "duration",     "ready",       "ended"};

/// Write proxy for a writable player signal ("time"/"itime" -> seek_to, "playing" -> play_intent).
inline std::string write_proxy(const std::string& player, const std::string& signal) {
  return proxy_name(player, signal == "playing" ? "play_intent" : "seek_to");
}

inline long frame_index(double time, double fps) { return static_cast<long>(std::floor(time * fps + 0.5)); }

// ---------------------------------------------------------------------------
// Compiled graph
// ---------------------------------------------------------------------------

enum class NodeKind { Signal, ReadProxy, WriteProxy, Derived, Scale, Dataset, Encoding, Playlist };

inline const char* to_string(NodeKind k) {
  switch (k) {
    case NodeKind::Signal: return "signal";
    case NodeKind::ReadProxy: return "read_proxy";
    case NodeKind::WriteProxy: return "write_proxy";
    case NodeKind::Derived: return "derived";
    case NodeKind::Scale: return "scale";
    case NodeKind::Dataset: return "dataset";
    case NodeKind::Encoding: return "encoding";
    case NodeKind::Playlist: return "playlist";
  }
  return "?";
}

struct UpdateRule {
  std::string id;                     // document path of the rule
  std::vector<EventSelector> events;  // empty for dependency-driven bindings
  ExprPtr expr;                       // after the split-signal rewrite
  std::string source;                 // original expression text
  std::string target;                 // written player signal ("time", "itime", "playing")
  ContinuityVerdict continuity;
};

struct Node {
  std::string name;
  NodeKind kind = NodeKind::Signal;
  std::string player;
  Value initial;
  std::vector<UpdateRule> handlers;
  std::vector<UpdateRule> bindings;
  std::vector<std::size_t> deps;        // bindings/compute read these (trigger re-evaluation)
  std::vector<std::size_t> after;       // ordering-only predecessors (handler reads)
  std::vector<std::size_t> dependents;
  Continuity continuity = Continuity::Discrete;

  // Derived frame index.
  double fps = 0;
  // Scale.
  ScaleDecl scale;
  Value domain_template, range_template;
  std::vector<ExprPtr> scale_exprs;
  // Dataset.
  Value base_rows;
  std::vector<ExprPtr> filters;
  // Playlist.
  std::vector<std::string> playlist_signals;
};

inline Node make_node(std::string name, NodeKind kind, std::string player = {}) {
  Node n;
  n.name = std::move(name);
  n.kind = kind;
  n.player = std::move(player);
  return n;
}

/// A seek-writing edge: an update rule whose target is a `seek_to` proxy.
struct SeekEdge {
  std::string id;
  std::string player;
  std::string target;
  std::string events;  // selector text, empty for bindings
  std::string source;
  ContinuityVerdict continuity;
};

struct CompileOptions {
  ContinuityRules rules;
  std::filesystem::path base_dir = ".";
  /// Loads rows for datasets with a url; defaults to reading base_dir/url.
  std::function<Value(const DatasetDecl&)> loader;
};

class DataflowGraph {
 public:
  const Spec& spec() const { return spec_; }
  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<std::size_t>& topo_order() const { return order_; }
  const ContinuityRules& rules() const { return rules_; }

  std::optional<std::size_t> index_of(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  const Node* find(std::string_view name) const {
    auto i = index_of(name);
    return i ? &nodes_[*i] : nullptr;
  }
  /// Scale node name for a scale or seek-surface mark name.
  std::optional<std::string> resolve_scale(std::string_view name) const {
    std::string n(name);
    if (auto it = scale_alias_.find(n); it != scale_alias_.end()) n = it->second;
    if (index_.count("scale:" + n)) return "scale:" + n;
    return std::nullopt;
  }
  std::vector<SeekEdge> seek_edges() const {
    std::vector<SeekEdge> out;
    for (const auto& n : nodes_) {
      if (n.kind != NodeKind::WriteProxy || n.name.size() < 8 || n.name.substr(n.name.size() - 8) != ".seek_to") continue;
      auto add = [&](const UpdateRule& r) {
        std::string ev;
        for (std::size_t i = 0; i < r.events.size(); ++i) ev += (i ? ", " : "") + selector_text(r.events[i]);
        out.push_back({r.id, n.player, r.target, ev, r.source, r.continuity});
      };
      for (const auto& r : n.handlers) add(r);
      for (const auto& r : n.bindings) add(r);
    }
    std::sort(out.begin(), out.end(), [](const SeekEdge& a, const SeekEdge& b) { return a.id < b.id; });
    return out;
  }

  static std::string selector_text(const EventSelector& s) {
    auto simple = [](const SimpleSelector& x) { return x.source.empty() ? x.type : x.source + ":" + x.type; };
    if (s.between_start) return "[" + simple(*s.between_start) + ", " + simple(*s.between_end) + "] > " + simple(s.stream);
    return simple(s.stream);
  }

 private:
  friend class GraphBuilder;
  Spec spec_;
  ContinuityRules rules_;
  std::vector<Node> nodes_;
  std::vector<std::size_t> order_;
  std::unordered_map<std::string, std::size_t> index_;
  std::map<std::string, std::string> scale_alias_;
};

// ---------------------------------------------------------------------------
// Compilation
// ---------------------------------------------------------------------------

class GraphBuilder {
 public:
  GraphBuilder(const Spec& spec, const CompileOptions& opts) : opts_(opts) {
    g_.spec_ = spec;
    g_.rules_ = opts.rules;
  }

  DataflowGraph build() {
    const Spec& spec = g_.spec_;
    check_player_writes();
    if (spec.width) add_constant("width", *spec.width);
    if (spec.height) add_constant("height", *spec.height);
    for (std::size_t i = 0; i < spec.signals.size(); ++i)
      if (spec.signals[i].name[0] != '@') add_user_signal(spec.signals[i]);
    for (const auto& p : spec.players) add_player(p);
    for (const auto& m : spec.marks)
      if (m.seek_scale) g_.scale_alias_[m.name] = *m.seek_scale;
    for (const auto& s : spec.scales) add_node(make_node("scale:" + s.name, NodeKind::Scale));
    for (const auto& d : spec.data) add_node(make_node("data:" + d.name, NodeKind::Dataset));

    // Expressions are attached once every node name exists.
    for (std::size_t i = 0; i < spec.signals.size(); ++i) attach_signal_rules(spec.signals[i], i);
    for (const auto& s : spec.scales) attach_scale(s);
    for (const auto& d : spec.data) attach_dataset(d);
    for (std::size_t i = 0; i < spec.marks.size(); ++i) attach_mark(spec.marks[i], i);
    for (const auto& p : spec.players) attach_playlist(p);

    sort_topologically();
    classify_nodes();
    return std::move(g_);
  }

 private:
  DataflowGraph g_;
  const CompileOptions& opts_;

  std::size_t add_node(Node n) {
    if (g_.index_.count(n.name)) throw CompileError(CompileErrorKind::Invalid, "duplicate node '" + n.name + "'");
    g_.index_[n.name] = g_.nodes_.size();
    g_.nodes_.push_back(std::move(n));
    return g_.nodes_.size() - 1;
  }

  Node& node(const std::string& name) { return g_.nodes_[g_.index_.at(name)]; }

  void check_player_writes() {
    for (const auto& s : g_.spec_.signals) {
      if (s.name.empty()) throw CompileError(CompileErrorKind::Invalid, "signal without a name");
      if (s.name[0] != '@') continue;
      auto parts = split_player_ref(s.name);
      if (!parts || !g_.spec_.find_player(parts->first))
        throw CompileError(CompileErrorKind::UnresolvedRef, "unknown player in '" + s.name + "'");
      const PlayerSignalInfo* info = find_player_signal(parts->second);
      if (!info) throw CompileError(CompileErrorKind::UnresolvedRef, "unknown player signal '" + s.name + "'");
      if (!info->writable) throw CompileError(CompileErrorKind::WriteToReadOnly, "'" + s.name + "' is read-only");
    }
  }

  void add_constant(const std::string& name, double v) {
    Node n = make_node(name, NodeKind::Signal);
    n.initial = v;
    n.continuity = Continuity::Constant;
    add_node(std::move(n));
  }

  void add_user_signal(const SignalDecl& s) {
    Node n = make_node(s.name, NodeKind::Signal);
    n.initial = s.value;
    add_node(std::move(n));
  }

  void add_player(const PlayerSpec& p) {
    Value init[] = {0.0, 0.0, false, 0.0, false, false};
    for (std::size_t i = 0; i < std::size(kReadProxies); ++i) {
      Node n = make_node(proxy_name(p.name, kReadProxies[i]), NodeKind::ReadProxy, p.name);
      n.initial = init[i];
      add_node(std::move(n));
    }
    for (const char* sig : {"seek_to", "play_intent"}) add_node(make_node(proxy_name(p.name, sig), NodeKind::WriteProxy, p.name));
    for (auto [name, from] : {std::pair{"frame", "current_time"}, std::pair{"iframe", "intent_time"}}) {
      Node n = make_node(proxy_name(p.name, name), NodeKind::Derived, p.name);
      n.fps = p.fps;
      n.initial = 0.0;
      n.deps.push_back(g_.index_.at(proxy_name(p.name, from)));
      add_node(std::move(n));
    }
    if (p.playlist()) add_node(make_node(proxy_name(p.name, "playlist"), NodeKind::Playlist, p.name));
  }

  ExprPtr compile_expr(const std::string& text, const std::string& where) {
    ExprPtr e;
    try {
      e = parse_expr(text);
    } catch (const ParseError& err) {
      std::string msg = err.what();
      auto kind = msg.find("unknown function") != std::string::npos ? CompileErrorKind::UnknownFunction
                                                                     : CompileErrorKind::Invalid;
      throw CompileError(kind, where + ": " + msg);
    }
    return rename_signals(e, [](const std::string& n) { return rewrite_read(n); });
  }

  /// Node indices an expression reads. Throws UnresolvedRef.
  std::vector<std::size_t> reads(const ExprPtr& e, const std::string& where) {
    std::vector<std::size_t> out;
    for (const auto& ref : signal_refs(e)) {
      auto it = g_.index_.find(ref);
      if (it == g_.index_.end()) throw CompileError(CompileErrorKind::UnresolvedRef, where + ": unknown signal '" + ref + "'");
      if (g_.nodes_[it->second].kind == NodeKind::WriteProxy)
        throw CompileError(CompileErrorKind::Invalid, where + ": cannot read write proxy '" + ref + "'");
      out.push_back(it->second);
    }
    for (const auto& sc : scale_refs(e)) {
      auto name = g_.resolve_scale(sc);
      if (!name) throw CompileError(CompileErrorKind::UnresolvedRef, where + ": unknown scale '" + sc + "'");
      out.push_back(g_.index_.at(*name));
    }
    return out;
  }

  static void add_unique(std::vector<std::size_t>& v, const std::vector<std::size_t>& xs, std::size_t self) {
    for (auto x : xs)
      if (x != self && std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
  }

  void attach_signal_rules(const SignalDecl& s, std::size_t decl_index) {
    std::string base = "signals[" + std::to_string(decl_index) + "]";
    std::string target_name = s.name;
    std::string written;
    if (s.name[0] == '@') {
      auto parts = split_player_ref(s.name);
      written = parts->second;
      target_name = write_proxy(parts->first, parts->second);
    }
    std::size_t self = g_.index_.at(target_name);
    for (std::size_t h = 0; h < s.on.size(); ++h) {
      std::string id = base + ".on[" + std::to_string(h) + "]";
      UpdateRule r;
      r.id = id;
      try {
        r.events = parse_event_selectors(s.on[h].events);
      } catch (const SchemaError& e) {
        throw CompileError(CompileErrorKind::Invalid, id + ": " + e.what());
      }
      r.expr = compile_expr(s.on[h].update, id);
      r.source = s.on[h].update;
      r.target = written;
      add_unique(g_.nodes_[self].after, reads(r.expr, id), self);
      g_.nodes_[self].handlers.push_back(std::move(r));
    }
    if (s.update) {
      std::string id = base + ".update";
      UpdateRule r{id, {}, compile_expr(*s.update, id), *s.update, written, {}};
      auto rd = reads(r.expr, id);
      if (std::find(rd.begin(), rd.end(), self) != rd.end())
        throw CompileError(CompileErrorKind::Cycle, id + ": '" + s.name + "' depends on itself");
      add_unique(g_.nodes_[self].deps, rd, self);
      g_.nodes_[self].bindings.push_back(std::move(r));
    }
  }

  /// Replaces `{"signal": expr}` objects with `{"$expr": i}` placeholders.
  Value template_of(const Value& v, Node& n, const std::string& where) {
    if (v.is_object() && v.contains("signal") && v["signal"].is_string()) {
      ExprPtr e = compile_expr(v["signal"].get<std::string>(), where);
      add_unique(n.deps, reads(e, where), SIZE_MAX);
      n.scale_exprs.push_back(e);
      return Value{{"$expr", n.scale_exprs.size() - 1}};
    }
    if (v.is_array()) {
      Value out = Value::array();
      for (std::size_t i = 0; i < v.size(); ++i) out.push_back(template_of(v[i], n, where + "[" + std::to_string(i) + "]"));
      return out;
    }
    return v;
  }

  void attach_scale(const ScaleDecl& s) {
    Node& n = node("scale:" + s.name);
    n.scale = s;
    std::string where = "scales." + s.name;
    if (s.domain.is_object() && s.domain.contains("data")) {
      std::string ds = "data:" + s.domain.value("data", "");
      if (!g_.index_.count(ds)) throw CompileError(CompileErrorKind::UnresolvedRef, where + ": unknown dataset");
      add_unique(n.deps, {g_.index_.at(ds)}, SIZE_MAX);
      n.domain_template = s.domain;
    } else {
      n.domain_template = template_of(s.domain, n, where + ".domain");
    }
    if (s.range.is_string()) {
      std::string sig = s.range.get<std::string>();
      if (!g_.index_.count(sig)) throw CompileError(CompileErrorKind::UnresolvedRef, where + ": range '" + sig + "' needs a " + sig);
      add_unique(n.deps, {g_.index_.at(sig)}, SIZE_MAX);
      n.range_template = s.range;
    } else {
      n.range_template = template_of(s.range, n, where + ".range");
    }
  }

  void attach_dataset(const DatasetDecl& d) {
    Node& n = node("data:" + d.name);
    std::string where = "data." + d.name;
    if (!d.source.empty()) {
      if (!g_.index_.count("data:" + d.source))
        throw CompileError(CompileErrorKind::UnresolvedRef, where + ": unknown source '" + d.source + "'");
      add_unique(n.deps, {g_.index_.at("data:" + d.source)}, SIZE_MAX);
    } else if (d.values.is_array()) {
      n.base_rows = d.values;
    } else if (!d.url.empty()) {
      try {
        n.base_rows = opts_.loader ? opts_.loader(d) : load_rows(opts_.base_dir / d.url, d.format);
      } catch (const CompileError&) {
        throw;
      } catch (const Error& e) {
        throw CompileError(CompileErrorKind::Invalid, where + ": " + e.what());
      }
    } else {
      n.base_rows = Value::array();
    }
    for (std::size_t i = 0; i < d.transform.size(); ++i) {
      std::string id = where + ".transform[" + std::to_string(i) + "]";
      ExprPtr e = compile_expr(d.transform[i].expr, id);
      add_unique(n.deps, reads(e, id), SIZE_MAX);
      n.filters.push_back(e);
    }
  }

  void attach_mark(const MarkDecl& m, std::size_t i) {
    // Data-driven marks are evaluated per datum by the renderer.
    if (m.raw.contains("from")) return;
    std::string mark = m.name.empty() ? "marks[" + std::to_string(i) + "]" : m.name;
    for (const auto& [channel, text] : m.signal_encodings) {
      std::string name = "mark:" + mark + "." + channel;
      Node n = make_node(name, NodeKind::Encoding);
      UpdateRule r{name, {}, compile_expr(text, name), text, "", {}};
      add_unique(n.deps, reads(r.expr, name), SIZE_MAX);
      n.bindings.push_back(std::move(r));
      add_node(std::move(n));
    }
  }

  void attach_playlist(const PlayerSpec& p) {
    const PlaylistSpec* pl = p.playlist();
    if (!pl) return;
    Node& n = node(proxy_name(p.name, "playlist"));
    if (!pl->from.empty()) {
      if (!g_.index_.count("data:" + pl->from))
        throw CompileError(CompileErrorKind::UnresolvedRef, "players." + p.name + ": unknown dataset '" + pl->from + "'");
      add_unique(n.deps, {g_.index_.at("data:" + pl->from)}, SIZE_MAX);
    } else {
      n.base_rows = pl->values;
    }
    std::set<std::string> sigs;
    auto scan = [&](const std::string& text, const std::string& id) {
      ExprPtr e = compile_expr(text, id);
      add_unique(n.deps, reads(e, id), SIZE_MAX);
      for (const auto& r : signal_refs(e)) sigs.insert(r);
    };
    for (std::size_t i = 0; i < pl->transforms.size(); ++i) {
      std::string id = "players." + p.name + ".transform[" + std::to_string(i) + "]";
      std::visit(
          [&](const auto& t) {
            using T = std::decay_t<decltype(t)>;
            if constexpr (std::is_same_v<T, transform::Filter>) scan(t.predicate, id);
            else if constexpr (std::is_same_v<T, transform::Sort>) scan(t.key, id);
            else if constexpr (std::is_same_v<T, transform::Clip>) {
              scan(t.start, id);
              scan(t.end, id);
            }
          },
          pl->transforms[i]);
    }
    n.playlist_signals.assign(sigs.begin(), sigs.end());
  }

  void sort_topologically() {
    auto& nodes = g_.nodes_;
    std::size_t n = nodes.size();
    std::vector<std::vector<std::size_t>> succ(n);
    std::vector<std::size_t> indeg(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      std::set<std::size_t> preds(nodes[i].deps.begin(), nodes[i].deps.end());
      preds.insert(nodes[i].after.begin(), nodes[i].after.end());
      for (auto p : preds) {
        succ[p].push_back(i);
        ++indeg[i];
      }
      for (auto d : nodes[i].deps) nodes[d].dependents.push_back(i);
    }
    std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
    for (std::size_t i = 0; i < n; ++i)
      if (indeg[i] == 0) ready.push(i);
    while (!ready.empty()) {
      std::size_t i = ready.top();
      ready.pop();
      g_.order_.push_back(i);
      for (auto s : succ[i])
        if (--indeg[s] == 0) ready.push(s);
    }
    if (g_.order_.size() != n) {
      std::string names;
      for (std::size_t i = 0; i < n; ++i)
        if (indeg[i] > 0) names += (names.empty() ? "" : ", ") + nodes[i].name;
      throw CompileError(CompileErrorKind::Cycle, "dependency cycle through " + names);
    }
  }

  void classify_nodes() {
    auto& nodes = g_.nodes_;
    ContinuityContext ctx;
    ctx.signal = [&](std::string_view name) -> std::optional<Continuity> {
      auto i = g_.index_of(name);
      if (!i) return std::nullopt;
      return nodes[*i].continuity;
    };
    ctx.scale = [&](std::string_view name) -> std::optional<ScaleType> {
      auto s = g_.resolve_scale(name);
      if (!s) return std::nullopt;
      return nodes[g_.index_.at(*s)].scale.type;
    };
    const ContinuityRules& rules = g_.rules_;
    for (std::size_t i : g_.order_) {
      Node& n = nodes[i];
      if (n.kind == NodeKind::Signal && n.name != "width" && n.name != "height") {
        Continuity acc = Continuity::Constant;
        for (auto& r : n.handlers) {
          r.continuity = classify(r.events, r.expr, ctx, rules);
          std::vector<ContinuityReason> scratch;
          Continuity ev = classify_events(r.events, rules, scratch);
          Continuity ex = classify_expr(r.expr, ctx, rules, scratch);
          acc = join(acc, ev == Continuity::Discrete ? Continuity::Discrete : ex);
        }
        for (auto& r : n.bindings) {
          std::vector<ContinuityReason> scratch;
          acc = join(acc, classify_expr(r.expr, ctx, rules, scratch));
          r.continuity = classify_binding(r.expr, ctx, rules);
        }
        n.continuity = acc;
      } else if (n.kind == NodeKind::WriteProxy) {
        for (auto& r : n.handlers) r.continuity = classify(r.events, r.expr, ctx, rules);
        for (auto& r : n.bindings) r.continuity = classify_binding(r.expr, ctx, rules);
      } else if (n.kind == NodeKind::Signal) {
        n.continuity = Continuity::Constant;
      } else {
        n.continuity = Continuity::Discrete;
      }
    }
  }
};

/// Compiles a spec into an immutable dataflow graph. Throws CompileError.
inline DataflowGraph compile(const Spec& spec, const CompileOptions& opts = {}) { return GraphBuilder(spec, opts).build(); }

/// Continuity verdict of every seek-writing edge, keyed by rule id.
inline std::map<std::string, ContinuityVerdict> classify_graph(const DataflowGraph& graph) {
  std::map<std::string, ContinuityVerdict> out;
  for (auto& e : graph.seek_edges()) out[e.id] = e.continuity;
  return out;
}

/// Human-readable verdicts for every seek edge.
inline std::string explain_graph(const DataflowGraph& graph) {
  std::string out;
  for (const auto& e : graph.seek_edges()) {
    out += e.id + " -> @" + e.player + "." + e.target;
    if (!e.events.empty()) out += " on " + e.events;
    out += "\n  expr: " + e.source + "\n  verdict: " + explain(e.continuity) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pulse log and bridge commands
// ---------------------------------------------------------------------------

struct SeekCommand {
  std::string player;
  double time = 0;
  ContinuityClass cls = ContinuityClass::Discrete;
  std::string rule;
  bool operator==(const SeekCommand&) const = default;
};
struct SetPlayingCommand {
  std::string player;
  bool playing = false;
  bool operator==(const SetPlayingCommand&) const = default;
};
/// The rows or parameters feeding a player's playlist changed.
struct PlaylistChanged {
  std::string player;
  bool operator==(const PlaylistChanged&) const = default;
};

using BridgeCommand = std::variant<SeekCommand, SetPlayingCommand, PlaylistChanged>;

inline Value to_json(const BridgeCommand& c) {
  return std::visit(
      [](const auto& x) -> Value {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, SeekCommand>)
          return {{"command", "seek"}, {"player", x.player}, {"time", x.time}, {"class", to_string(x.cls)}, {"rule", x.rule}};
        else if constexpr (std::is_same_v<T, SetPlayingCommand>)
          return {{"command", "set_playing"}, {"player", x.player}, {"playing", x.playing}};
        else
          return {{"command", "playlist_changed"}, {"player", x.player}};
      },
      c);
}

struct PulseEntry {
  double t = 0;
  std::string node;
  Value old_value;
  Value new_value;
};

struct PulseError {
  double t = 0;
  std::string node;
  std::string rule;
  std::string path;
  std::string message;
};

struct PulseLog {
  std::vector<PulseEntry> entries;
  std::vector<BridgeCommand> commands;
  std::vector<PulseError> errors;
  std::vector<std::string> evaluated;  // node names in evaluation order

  bool empty() const { return entries.empty() && commands.empty() && errors.empty(); }

  void append(PulseLog&& other) {
    for (auto& e : other.entries) entries.push_back(std::move(e));
    for (auto& c : other.commands) commands.push_back(std::move(c));
    for (auto& e : other.errors) errors.push_back(std::move(e));
    for (auto& e : other.evaluated) evaluated.push_back(std::move(e));
  }

  const PulseEntry* last_update(std::string_view node) const {
    for (auto it = entries.rbegin(); it != entries.rend(); ++it)
      if (it->node == node) return &*it;
    return nullptr;
  }

  /// Line-delimited JSON: updates, then commands, then errors.
  std::string to_ndjson() const {
    std::string out;
    for (const auto& e : entries)
      out += Value{{"t", e.t}, {"node", e.node}, {"old", e.old_value}, {"new", e.new_value}}.dump() + "\n";
    for (const auto& c : commands) out += to_json(c).dump() + "\n";
    for (const auto& e : errors)
      out += Value{{"t", e.t}, {"error", e.message}, {"node", e.node}, {"rule", e.rule}, {"path", e.path}}.dump() + "\n";
    return out;
  }
};

struct BridgeUpdate {
  std::string player;
  std::string signal;  // one of kReadProxies
  Value value;
};

// ---------------------------------------------------------------------------
// Runtime
// ---------------------------------------------------------------------------

inline bool same_value(const Value& a, const Value& b) {
  if (a.is_number() && b.is_number()) return a.get<double>() == b.get<double>();
  return a == b;
}

/// Mutable state of a compiled graph. Not thread-safe; callers serialize
/// events and bridge updates.
class DataflowRuntime {
 public:
  explicit DataflowRuntime(std::shared_ptr<const DataflowGraph> graph) : g_(std::move(graph)) {
    values_.resize(g_->nodes().size());
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] = g_->nodes()[i].initial;
  }

  const DataflowGraph& graph() const { return *g_; }

  /// Evaluates every node once from its initial state.
  PulseLog initialize(double now = 0) {
    std::vector<char> dirty(values_.size(), 1);
    return run(dirty, {}, nullptr, now, "");
  }

  const Value& value(std::string_view name) const {
    auto i = g_->index_of(name);
    if (!i) throw UnknownSignal(std::string(name));
    return values_[*i];
  }

  const Scale* scale(std::string_view name) const {
    auto s = g_->resolve_scale(name);
    if (!s) return nullptr;
    auto it = scales_.find(*s);
    return it == scales_.end() ? nullptr : &it->second;
  }

  /// Snapshot of all signal-like node values by name.
  Value snapshot() const {
    Value out = Value::object();
    for (std::size_t i = 0; i < values_.size(); ++i) {
      const Node& n = g_->nodes()[i];
      if (n.kind == NodeKind::Signal || n.kind == NodeKind::ReadProxy || n.kind == NodeKind::Derived ||
          n.kind == NodeKind::Encoding)
        out[n.name] = values_[i];
    }
    return out;
  }

  /// Evaluation environment over current values.
  EvalEnv env() const {
    EvalEnv env;
    env.signal = [this](std::string_view name) -> const Value* {
      auto i = g_->index_of(name);
      if (!i) i = g_->index_of(rewrite_read(std::string(name)));
      return i ? &values_[*i] : nullptr;
    };
    env.scale = [this](std::string_view name) { return scale(name); };
    return env;
  }

  /// Dispatches an interaction event: `{"type", "x", "y", "source", "marktype", "datum", ...}`.
  PulseLog inject_event(const Value& event, double now) {
    std::string type = event.value("type", "");
    std::vector<char> dirty(values_.size(), 0);
    std::map<std::size_t, const UpdateRule*> fired;
    for (std::size_t i : g_->topo_order()) {
      const Node& n = g_->nodes()[i];
      for (const auto& r : n.handlers) {
        bool hit = false;
        for (std::size_t s = 0; s < r.events.size(); ++s)
          if (selector_fires(r, s, event)) hit = true;
        if (hit) fired[i] = &r;  // later handlers override earlier ones
      }
    }
    update_between_state(event);
    for (auto& [i, r] : fired) dirty[i] = 1;
    return run(dirty, fired, &event, now, "");
  }

  /// Applies a presented-state update from a player bridge.
  PulseLog apply_bridge_update(const BridgeUpdate& u, double now) {
    if (!g_->spec().find_player(u.player)) throw UnknownPlayer(u.player);
    if (std::find(std::begin(kReadProxies), std::end(kReadProxies), u.signal) == std::end(kReadProxies))
      throw UnknownSignal(u.signal);
    std::size_t i = *g_->index_of(proxy_name(u.player, u.signal));
    PulseLog log;
    if (same_value(values_[i], u.value)) return log;
    double t = stamp(now);
    log.entries.push_back({t, g_->nodes()[i].name, values_[i], u.value});
    values_[i] = u.value;
    std::vector<char> dirty(values_.size(), 0);
    for (auto d : g_->nodes()[i].dependents) dirty[d] = 1;
    std::string suppress = u.signal == "playing_state" ? proxy_name(u.player, "play_intent")
                         : (u.signal == "current_time" || u.signal == "intent_time") ? proxy_name(u.player, "seek_to")
                                                                                      : std::string{};
    log.append(run(dirty, {}, nullptr, now, suppress));
    return log;
  }

  /// Sets a user signal from outside the graph (UI bindings).
  PulseLog set_signal(const std::string& name, const Value& v, double now) {
    auto i = g_->index_of(name);
    if (!i || g_->nodes()[*i].kind != NodeKind::Signal) throw UnknownSignal(name);
    PulseLog log;
    if (same_value(values_[*i], v)) return log;
    log.entries.push_back({stamp(now), name, values_[*i], v});
    values_[*i] = v;
    std::vector<char> dirty(values_.size(), 0);
    for (auto d : g_->nodes()[*i].dependents) dirty[d] = 1;
    log.append(run(dirty, {}, nullptr, now, ""));
    return log;
  }

 private:
  std::shared_ptr<const DataflowGraph> g_;
  std::vector<Value> values_;
  std::map<std::string, Scale> scales_;
  std::map<std::pair<std::string, std::size_t>, bool> between_active_;
  double last_t_ = 0;

  double stamp(double now) {
    last_t_ = std::max(last_t_, now);
    return last_t_;
  }

  static bool simple_matches(const SimpleSelector& s, const Value& event) {
    if (event.value("type", "") != s.type) return false;
    if (s.source.empty() || s.source == "window" || s.source == "view") return true;
    if (s.source[0] == '@') return event.value("source", "") == s.source.substr(1);
    return event.value("marktype", "") == s.source;
  }

  bool selector_fires(const UpdateRule& r, std::size_t s, const Value& event) const {
    const EventSelector& sel = r.events[s];
    if (!simple_matches(sel.stream, event)) return false;
    if (!sel.between_start) return true;
    auto it = between_active_.find({r.id, s});
    return it != between_active_.end() && it->second;
  }

  void update_between_state(const Value& event) {
    for (const auto& n : g_->nodes())
      for (const auto& r : n.handlers)
        for (std::size_t s = 0; s < r.events.size(); ++s) {
          const EventSelector& sel = r.events[s];
          if (!sel.between_start) continue;
          if (simple_matches(*sel.between_end, event)) between_active_[{r.id, s}] = false;
          else if (simple_matches(*sel.between_start, event)) between_active_[{r.id, s}] = true;
        }
  }

  Value eval_scale(const Node& n, const EvalEnv& env) {
    std::function<Value(const Value&)> fill = [&](const Value& t) -> Value {
      if (t.is_object() && t.contains("$expr")) return eval_expr(n.scale_exprs[t["$expr"].get<std::size_t>()], env);
      if (t.is_array()) {
        Value out = Value::array();
        for (const auto& x : t) out.push_back(fill(x));
        return out;
      }
      return t;
    };
    Scale s;
    s.type = n.scale.type;
    s.clamp = n.scale.clamp;
    if (n.domain_template.is_object() && n.domain_template.contains("data")) {
      const Value& rows = values_[*g_->index_of("data:" + n.domain_template["data"].get<std::string>())];
      std::string field = n.domain_template.value("field", "");
      Value dom = Value::array();
      if (is_continuous(s.type)) {
        double lo = INFINITY, hi = -INFINITY;
        for (const auto& r : rows)
          if (r.contains(field) && r[field].is_number()) {
            lo = std::min(lo, r[field].get<double>());
            hi = std::max(hi, r[field].get<double>());
          }
        dom = lo <= hi ? Value{lo, hi} : Value{0.0, 0.0};
      } else {
        for (const auto& r : rows)
          if (r.contains(field) && std::find(dom.begin(), dom.end(), r[field]) == dom.end()) dom.push_back(r[field]);
      }
      s.domain = dom;
    } else {
      s.domain = fill(n.domain_template);
    }
    if (is_continuous(s.type)) {
      if (!s.domain.is_array() || s.domain.size() < 2 || !s.domain.front().is_number() || !s.domain.back().is_number())
        throw EvalError("domain", "continuous scales need a numeric [lo, hi] domain");
      s.domain = Value{s.domain.front(), s.domain.back()};
    }
    Value range;
    if (n.range_template.is_string()) {
      double extent = values_[*g_->index_of(n.range_template.get<std::string>())].get<double>();
      range = n.range_template == "height" ? Value{extent, 0.0} : Value{0.0, extent};
    } else {
      range = fill(n.range_template);
    }
    if (!range.is_array() || range.size() < 2 || !range.front().is_number() || !range.back().is_number())
      throw EvalError("range", "scales need a numeric [lo, hi] range");
    s.range_lo = range.front().get<double>();
    s.range_hi = range.back().get<double>();
    scales_[n.name] = s;
    return Value{{"type", to_string(s.type)}, {"domain", s.domain}, {"range", range}};
  }

  Value eval_dataset(const Node& n, const EvalEnv& base) {
    Value rows = n.deps.empty() || g_->nodes()[n.deps[0]].kind != NodeKind::Dataset ? n.base_rows : values_[n.deps[0]];
    if (!rows.is_array()) rows = Value::array();
    if (n.filters.empty()) return rows;
    Value out = Value::array();
    EvalEnv env = base;
    for (const auto& row : rows) {
      env.datum = &row;
      bool keep = true;
      for (const auto& f : n.filters) keep = keep && truthy(eval_expr(f, env));
      if (keep) out.push_back(row);
    }
    return out;
  }

  Value eval_playlist(const Node& n, const EvalEnv& env) {
    Value rows = n.deps.empty() || g_->nodes()[n.deps[0]].kind != NodeKind::Dataset ? n.base_rows : values_[n.deps[0]];
    Value sigs = Value::object();
    for (const auto& s : n.playlist_signals)
      if (const Value* v = env.signal(s)) sigs[s] = *v;
    return Value{{"rows", rows}, {"signals", sigs}};
  }

  PulseLog run(std::vector<char>& dirty, const std::map<std::size_t, const UpdateRule*>& fired, const Value* event,
               double now, const std::string& suppress) {
    PulseLog log;
    double t = stamp(now);
    EvalEnv env = this->env();
    env.event = event;
    const Value* datum = event && event->contains("datum") ? &(*event)["datum"] : nullptr;
    for (std::size_t i : g_->topo_order()) {
      if (!dirty[i]) continue;
      const Node& n = g_->nodes()[i];
      auto f = fired.find(i);
      const UpdateRule* rule = f != fired.end() ? f->second : nullptr;
      if (n.kind == NodeKind::ReadProxy) continue;
      if (!rule && n.bindings.empty() && (n.kind == NodeKind::Signal || n.kind == NodeKind::WriteProxy)) continue;
      log.evaluated.push_back(n.name);
      const std::string rule_id = rule ? rule->id : (n.bindings.empty() ? n.name : n.bindings.front().id);
      Value next;
      try {
        EvalEnv local = env;
        local.datum = rule ? datum : nullptr;
        switch (n.kind) {
          case NodeKind::Signal:
          case NodeKind::Encoding:
          case NodeKind::WriteProxy:
            next = eval_expr(rule ? rule->expr : n.bindings.front().expr, local);
            break;
          case NodeKind::Derived: {
            const Value& src = values_[n.deps[0]];
            next = src.is_number() ? Value(frame_index(src.get<double>(), n.fps)) : Value(nullptr);
            break;
          }
          case NodeKind::Scale: next = eval_scale(n, local); break;
          case NodeKind::Dataset: next = eval_dataset(n, local); break;
          case NodeKind::Playlist: next = eval_playlist(n, local); break;
          case NodeKind::ReadProxy: break;
        }
      } catch (const EvalError& e) {
        log.errors.push_back({t, n.name, rule_id, e.path(), e.detail()});
        continue;
      }
      if (n.kind == NodeKind::WriteProxy) {
        if (n.name == suppress) continue;
        const UpdateRule& r = rule ? *rule : n.bindings.front();
        if (r.target == "playing") {
          log.commands.push_back(SetPlayingCommand{n.player, truthy(next)});
        } else if (next.is_number() && std::isfinite(next.get<double>())) {
          log.commands.push_back(SeekCommand{n.player, next.get<double>(), r.continuity.cls, r.id});
        } else {
          log.errors.push_back({t, n.name, r.id, "root", "seek target is not a finite number"});
        }
        continue;
      }
      if (same_value(values_[i], next)) continue;
      log.entries.push_back({t, n.name, values_[i], next});
      values_[i] = std::move(next);
      for (auto d : n.dependents) dirty[d] = 1;
      if (n.kind == NodeKind::Playlist) log.commands.push_back(PlaylistChanged{n.player});
    }
    return log;
  }
};

}  // namespace vidflow
