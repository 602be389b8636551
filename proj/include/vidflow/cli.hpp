#pragma once

// Command-line front end: validate, compile, transform, simulate, traces, serve.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "vidflow/engine.hpp"
#include "vidflow/player_sim.hpp"
#include "vidflow/service.hpp"

namespace vidflow::cli {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
}

inline std::filesystem::path default_media_root() {
  const char* env = std::getenv("VIDFLOW_MEDIA_ROOT");
  return env && *env ? std::filesystem::path(env) : std::filesystem::path(".");
}

/// Prints diagnostics; returns 0 when there are no errors.
inline int cmd_validate(const std::string& path, std::ostream& out) {
  std::vector<Diagnostic> diags;
  try {
    diags = validate_spec(parse_spec_document(parse_json_text(read_file(path))));
  } catch (const SchemaError& e) {
    diags.push_back({Severity::Error, DiagnosticKind::Schema, e.path(), e.what()});
  } catch (const SyntaxError& e) {
    diags.push_back({Severity::Error, DiagnosticKind::Schema, "", e.what()});
  }
  bool failed = false;
  for (const auto& d : diags) {
    out << to_string(d) << "\n";
    failed = failed || d.severity == Severity::Error;
  }
  if (!failed) out << "ok\n";
  return failed ? 1 : 0;
}

inline std::string describe_graph(const DataflowGraph& g) {
  std::string out;
  for (std::size_t i : g.topo_order()) {
    const Node& n = g.nodes()[i];
    out += n.name + " [" + to_string(n.kind) + "]";
    if (!n.deps.empty()) {
      out += " <-";
      for (auto d : n.deps) out += " " + g.nodes()[d].name;
    }
    out += "\n";
    for (const auto* rules : {&n.handlers, &n.bindings})
      for (const auto& r : *rules) {
        out += "  " + r.id + ": " + to_string(r.expr);
        if (n.kind == NodeKind::WriteProxy) out += "  (" + std::string(to_string(r.continuity.cls)) + ")";
        out += "\n";
      }
  }
  return out;
}

inline int cmd_compile(const std::string& path, bool explain, std::ostream& out) {
  std::filesystem::path p(path);
  CompileOptions co;
  co.base_dir = p.parent_path().empty() ? "." : p.parent_path();
  DataflowGraph g = compile(parse_spec(read_file(p)), co);
  out << describe_graph(g);
  if (explain) out << "\ncontinuity:\n" << explain_graph(g);
  return 0;
}

inline int cmd_transform(const std::string& path, const std::string& player, const std::string& select,
                         const std::filesystem::path& media_root, const std::string& prefix, std::ostream& out) {
  std::filesystem::path p(path);
  Spec spec = parse_spec(read_file(p));
  PlayerSpec* target = nullptr;
  for (auto& pl : spec.players)
    if (pl.playlist() && (player.empty() || pl.name == player)) {
      target = &pl;
      break;
    }
  if (!target) throw UnknownPlayer(player.empty() ? "(no playlist player)" : player);
  if (!select.empty()) std::get<PlaylistSpec>(target->source).transforms.push_back(transform::Filter{select});
  SessionOptions so;
  so.base_dir = p.parent_path().empty() ? "." : p.parent_path();
  so.media_root = media_root;
  std::string name = target->name;
  Session s(std::move(spec), so);
  for (const auto& m : s.drain())
    if (m.type == "error") throw Error(m.payload.value("message", "transform failed"));
  out << s.manifest(name, std::nullopt, prefix);
  return 0;
}

inline sim::MediaModel load_media(const std::string& media) {
  if (media.empty() || media == "tos") return sim::tos_like_media();
  return sim::media_from_json(parse_json_text(read_file(media)));
}

inline int cmd_simulate(const std::vector<std::string>& policies, const std::string& trace_path, const std::string& media,
                        const std::string& out_path, const std::string& log_path, double settle_ms, std::ostream& out) {
  sim::MediaModel m = load_media(media);
  std::vector<sim::ScrubTrace> traces;
  if (trace_path.empty()) {
    traces = sim::standard_traces(1, m.duration);
  } else {
    traces.push_back(sim::trace_from_rows(parse_ndjson(read_file(trace_path)), std::filesystem::path(trace_path).stem().string()));
  }
  sim::SimOptions opts;
  opts.controller.settle_threshold_ms = settle_ms;
  Value results = Value::array();
  Value logs = Value::array();
  std::string csv = sim::metrics_csv_header();
  for (std::size_t i = 0; i < traces.size(); ++i) {
    std::string label = traces[i].label + (trace_path.empty() ? "-" + std::to_string(i % 5) : "");
    for (const auto& pname : policies) {
      sim::Policy pol = sim::parse_policy(pname);
      sim::SimLog log = sim::simulate(m, sim::LatencyModel{}, pol, traces[i], opts);
      sim::ScrubMetrics mt = sim::compute_metrics(traces[i], log, m.fps);
      Value r = mt.to_json();
      r["trace"] = label;
      r["policy"] = sim::to_string(pol);
      results.push_back(r);
      csv += sim::metrics_csv_row(label, pol, mt);
      if (!log_path.empty()) {
        Value lj = log.to_json();
        lj["trace"] = label;
        logs.push_back(std::move(lj));
      }
    }
  }
  if (out_path.empty()) {
    out << csv;
  } else {
    std::filesystem::path o(out_path);
    write_text(o, o.extension() == ".csv" ? csv : results.dump(2) + "\n");
    out << "wrote " << o.string() << "\n";
  }
  if (!log_path.empty()) write_text(log_path, logs.dump() + "\n");
  return 0;
}

inline int cmd_traces(std::uint64_t seed, const std::string& kind, std::size_t count, const std::string& dir, double duration,
                      std::ostream& out) {
  std::vector<sim::ScrubTrace> traces;
  if (kind == "all") traces = sim::standard_traces(seed, duration);
  else traces = sim::generate_traces(seed, sim::parse_trace_kind(kind), count, duration);
  std::map<std::string, int> seen;
  for (const auto& t : traces) {
    std::filesystem::path p = std::filesystem::path(dir) / (t.label + "-" + std::to_string(seen[t.label]++) + ".ndjson");
    write_text(p, sim::to_ndjson(t));
    out << p.string() << "\n";
  }
  return 0;
}

inline int cmd_serve(const std::string& path, const std::string& address, unsigned short port,
                     const std::filesystem::path& media_root, const std::string& ui_root, std::ostream& out) {
  service::ServiceOptions so;
  so.address = address;
  so.port = port;
  so.media_root = media_root;
  if (!ui_root.empty()) so.ui_root = ui_root;
  std::filesystem::path p(path);
  so.session.base_dir = p.parent_path().empty() ? "." : p.parent_path();
  so.session.media_root = media_root;
  auto session = load_session(p, so.session);
  service::Server server(std::move(session), so);
  out << "serving on http://" << address << ":" << server.port() << "\n" << std::flush;
  server.run();
  return 0;
}

/// Runs the CLI; returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"vidflow: declarative video visualization engine"};
  app.require_subcommand(1);

  std::string spec_path, player, select, prefix, media, trace, out_path, log_path, dir = "traces", kind = "all", address = "127.0.0.1",
                                                                                       ui_root;
  std::string media_root = default_media_root().string();
  std::vector<std::string> policies;
  bool explain = false;
  double settle_ms = 150, duration = 734;
  std::uint64_t seed = 1;
  std::size_t count = 5;
  unsigned short port = 8080;

  auto* validate = app.add_subcommand("validate", "Check a spec and print diagnostics");
  validate->add_option("spec", spec_path, "Spec file")->required();

  auto* compile_cmd = app.add_subcommand("compile", "Print the rewritten signal graph");
  compile_cmd->add_option("spec", spec_path, "Spec file")->required();
  compile_cmd->add_flag("--explain", explain, "Print continuity verdicts for seek edges");

  auto* transform_cmd = app.add_subcommand("transform", "Print a player's synthesized manifest");
  transform_cmd->add_option("spec", spec_path, "Spec file")->required();
  transform_cmd->add_option("--player", player, "Player name (default: first playlist player)");
  transform_cmd->add_option("--select", select, "Extra filter predicate over datum");
  transform_cmd->add_option("--media-root", media_root, "Directory source manifests resolve against");
  transform_cmd->add_option("--prefix", prefix, "Prefix for segment URIs");

  auto* simulate_cmd = app.add_subcommand("simulate", "Replay scrub traces against the player simulator");
  simulate_cmd->add_option("--policy", policies, "direct, keyframe or rapid (repeatable)")->required();
  simulate_cmd->add_option("--trace", trace, "NDJSON trace {t_ms, intent_s}; default: the 15 generated traces");
  simulate_cmd->add_option("--media", media, "Media model JSON, or 'tos' for the built-in model");
  simulate_cmd->add_option("--out", out_path, "Metrics output (.json or .csv); default: CSV on stdout");
  simulate_cmd->add_option("--log", log_path, "Write simulation logs as JSON");
  simulate_cmd->add_option("--settle-ms", settle_ms, "Settle threshold in ms");

  auto* traces_cmd = app.add_subcommand("traces", "Generate scrub traces as NDJSON");
  traces_cmd->add_option("--seed", seed, "Random seed");
  traces_cmd->add_option("--kind", kind, "directed, search, exploration or all");
  traces_cmd->add_option("--count", count, "Traces per kind");
  traces_cmd->add_option("--duration", duration, "Media duration in seconds");
  traces_cmd->add_option("--out-dir", dir, "Output directory");

  auto* serve_cmd = app.add_subcommand("serve", "Serve manifests, the loaded document and the WebSocket bus");
  serve_cmd->add_option("spec", spec_path, "Spec file")->required();
  serve_cmd->add_option("--address", address, "Bind address");
  serve_cmd->add_option("--port", port, "Port (0 picks one)");
  serve_cmd->add_option("--media-root", media_root, "Media directory (default $VIDFLOW_MEDIA_ROOT or .)");
  serve_cmd->add_option("--ui-root", ui_root, "Static frontend directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*validate) return cmd_validate(spec_path, out);
    if (*compile_cmd) return cmd_compile(spec_path, explain, out);
    if (*transform_cmd) return cmd_transform(spec_path, player, select, media_root, prefix, out);
    if (*simulate_cmd) return cmd_simulate(policies, trace, media, out_path, log_path, settle_ms, out);
    if (*traces_cmd) return cmd_traces(seed, kind, count, dir, duration, out);
    if (*serve_cmd) return cmd_serve(spec_path, address, port, media_root, ui_root, out);
  } catch (const CompileError& e) {
    err << "compile error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace vidflow::cli
