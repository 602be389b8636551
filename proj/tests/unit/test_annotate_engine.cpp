#include <gtest/gtest.h>

#include "../oracles/gen.hpp"
#include "../oracles/rect_oracle.hpp"
#include "vidflow/engine.hpp"

using namespace vidflow;

namespace {

const std::filesystem::path kFixtures = VIDFLOW_FIXTURES;

std::unique_ptr<Session> annotate_session() { return load_session(kFixtures / "specs/fig3_annotate.json"); }

std::unique_ptr<Session> brush_session() {
  SessionOptions o;
  o.media_root = kFixtures / "media";
  return load_session(kFixtures / "specs/fig8_brush.json", o);
}

const BusMessage* find(const std::vector<BusMessage>& ms, const std::string& type, const std::string& name = {}) {
  for (const auto& m : ms)
    if (m.type == type && (name.empty() || m.payload.value("name", "") == name)) return &m;
  return nullptr;
}

std::ptrdiff_t index_of(const std::vector<BusMessage>& ms, const BusMessage* m) { return m ? m - ms.data() : -1; }

Value pointer(const std::string& type, const std::string& source, double x) {
  return {{"type", type}, {"source", source}, {"x", x}};
}

}  // namespace

// --- overlays --------------------------------------------------------------------

TEST(Annotate, BoxAndLabelPerDetection) {
  auto s = annotate_session();
  auto prims = s->overlays("cam", 0);
  ASSERT_EQ(prims.size(), 4u);
  EXPECT_EQ(prims[0].kind, PrimitiveKind::Rect);
  EXPECT_EQ(prims[1].kind, PrimitiveKind::Rect);
  EXPECT_EQ(prims[2].kind, PrimitiveKind::Text);
  EXPECT_EQ(prims[3].kind, PrimitiveKind::Text);
  EXPECT_EQ(prims[0].stroke, "#ff9500");
  EXPECT_EQ(prims[1].stroke, "#34c759");
  EXPECT_EQ(prims[2].content, "car 0.91");
  EXPECT_EQ(prims[3].content, "person 0.62");
  EXPECT_EQ(prims[2].x, 100);
  EXPECT_EQ(prims[2].y, 196);
  EXPECT_EQ(prims[0].mark, 0u);
  EXPECT_EQ(prims[2].mark, 1u);
}

TEST(Annotate, ConfidenceSliderFiltersAll) {
  auto s = annotate_session();
  s->set_signal("minConfidence", 0.9, 1);
  EXPECT_EQ(s->overlays("cam", 0).size(), 2u);  // the 0.91 car
  EXPECT_TRUE(s->overlays("cam", 1).empty());
  s->set_signal("minConfidence", 0.95, 2);
  EXPECT_TRUE(s->overlays("cam", 0).empty());
}

TEST(Annotate, EmptyFrameHasNoPrimitives) {
  auto s = annotate_session();
  EXPECT_TRUE(s->overlays("cam", 999).empty());
}

TEST(Annotate, CoordinatesClampToResolution) {
  auto s = annotate_session();
  s->set_signal("minConfidence", 0.0, 1);
  for (const auto& p : s->overlays("cam", 1)) {
    if (p.kind != PrimitiveKind::Rect) continue;
    EXPECT_LE(p.xyxy[2], 1280);
    EXPECT_LE(p.xyxy[3], 720);
  }
  auto rects = s->overlays("cam", 1);
  EXPECT_EQ(rects[2].xyxy, (std::array<double, 4>{1200, 650, 1280, 720}));
}

TEST(Annotate, FrameForTime) {
  EXPECT_EQ(frame_for_time(0, 24), 0);
  EXPECT_EQ(frame_for_time(1.5, 24), 36);
  EXPECT_EQ(frame_for_time(47.0, 30), 1410);
}

TEST(Annotate, DetectionRowsAreValidated) {
  EXPECT_THROW(detection_from_row(Value{{"frame_index", 0}, {"xyxy", {5, 0, 1, 1}}}), SchemaError);
  EXPECT_THROW(detection_from_row(Value{{"frame_index", 0}, {"xyxy", {0, 0, 1, 1}}, {"confidence", 1.5}}), SchemaError);
  EXPECT_THROW(detection_from_row(Value{{"xyxy", {0, 0, 1, 1}}}), SchemaError);
  Detection d = detection_from_row(Value{{"frame_index", 3}, {"x1", 1}, {"y1", 2}, {"x2", 3}, {"y2", 4}});
  EXPECT_EQ(d.xyxy, (std::array<double, 4>{1, 2, 3, 4}));
  EXPECT_EQ(d.confidence, 1.0);
}

TEST(Annotate, RegionFilterMatchesRectangleIntersection) {
  oracle::Gen g(31);
  AnnotationMarkSpec spec;
  spec.from = "d";
  spec.filter = "datum.x1 <= region[2] && datum.x2 >= region[0] && datum.y1 <= region[3] && datum.y2 >= region[1]";
  auto marks = compile_marks({spec});
  for (int iter = 0; iter < 300; ++iter) {
    Value rows = Value::array();
    std::vector<std::array<double, 4>> boxes;
    for (long i = 0, n = g.integer(0, 12); i < n; ++i) {
      double x = g.grid(0, 600, 1), y = g.grid(0, 400, 1);
      std::array<double, 4> b{x, y, x + g.grid(0, 200, 1), y + g.grid(0, 200, 1)};
      boxes.push_back(b);
      rows.push_back({{"frame_index", 7}, {"xyxy", {b[0], b[1], b[2], b[3]}}, {"confidence", 0.5}});
    }
    double rx = g.grid(0, 600, 1), ry = g.grid(0, 400, 1);
    std::array<double, 4> r{rx, ry, rx + g.grid(0, 300, 1), ry + g.grid(0, 300, 1)};
    Value region = Value::array({r[0], r[1], r[2], r[3]});
    EvalEnv env;
    env.signal = [&](std::string_view n) -> const Value* { return n == "region" ? &region : nullptr; };
    auto prims = resolve_frame(detections_from_rows(rows), 7, marks, env);
    std::vector<std::size_t> got, expect;
    for (const auto& p : prims) got.push_back(p.detection);
    for (std::size_t i = 0; i < boxes.size(); ++i)
      if (oracle::intersects(boxes[i], r)) expect.push_back(i);
    ASSERT_EQ(got, expect);
  }
}

TEST(Annotate, ResolveFrameIsPureAndOrderStable) {
  Value rows = Value::array();
  for (int i = 0; i < 5; ++i) rows.push_back({{"frame_index", 0}, {"xyxy", {i, i, i + 1, i + 1}}, {"class_name", "c" + std::to_string(i)}});
  AnnotationMarkSpec box, label;
  label.kind = AnnotationKind::Label;
  auto marks = compile_marks({box, label});
  auto a = resolve_frame(detections_from_rows(rows), 0, marks, {});
  auto b = resolve_frame(detections_from_rows(rows), 0, marks, {});
  EXPECT_EQ(to_json(a), to_json(b));
  ASSERT_EQ(a.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(a[i].mark, i / 5);
    EXPECT_EQ(a[i].detection, i % 5);
  }
  EXPECT_EQ(a[7].content, "c2");
}

// --- bus messages -----------------------------------------------------------------

TEST(Bus, EveryTypeRoundTrips) {
  oracle::Gen g(32);
  for (int iter = 0; iter < 500; ++iter) {
    std::string type = kBusTypes[g.integer(0, std::size(kBusTypes) - 1)];
    Value payload = Value::object();
    if (type == "seek" || type == "presented") {
      payload["epoch"] = static_cast<std::uint64_t>(g.integer(0, 1 << 20));
      payload["time"] = g.grid(0, 734, 0.001);
    }
    if (type == "seek") payload["mode"] = g.coin() ? "exact" : "keyframe";
    if (g.coin()) payload["value"] = g.coin() ? Value(g.real(-1e6, 1e6)) : Value(Value::array({1, "x", nullptr}));
    if (g.coin()) payload["name"] = "s" + std::to_string(g.integer(0, 9));
    BusMessage m{type, g.coin() ? std::optional<std::string>("p") : std::nullopt, payload};
    ASSERT_EQ(BusMessage::parse(m.dump()), m) << m.dump();
  }
}

TEST(Bus, RejectsMalformedFrames) {
  EXPECT_THROW(BusMessage::parse("{"), SyntaxError);
  EXPECT_THROW(BusMessage::parse(R"({"type": "launch"})"), SchemaError);
  EXPECT_THROW(BusMessage::parse(R"({"player": "p"})"), SchemaError);
  EXPECT_THROW(BusMessage::parse(R"({"type": "seek", "time": 1, "mode": "exact"})"), SchemaError);
  EXPECT_THROW(BusMessage::parse(R"({"type": "seek", "time": 1, "epoch": 2, "mode": "fast"})"), SchemaError);
  EXPECT_THROW(BusMessage::parse(R"({"type": "presented", "epoch": -1, "time": 1})"), SchemaError);
  EXPECT_THROW(BusMessage::parse(R"({"type": "presented", "epoch": 1})"), SchemaError);
  EXPECT_NO_THROW(BusMessage::parse(R"({"type": "presented", "player": "p", "epoch": 1, "time": 2.5})"));
}

// --- engine session -----------------------------------------------------------------

TEST(Session, StartupAnnouncesSpecAndPlaylist) {
  auto s = brush_session();
  auto out = s->drain();
  ASSERT_FALSE(out.empty());
  EXPECT_EQ(out[0].type, "spec_loaded");
  const BusMessage* ep = find(out, "manifest_epoch");
  ASSERT_NE(ep, nullptr);
  EXPECT_EQ(ep->player, "video");
  EXPECT_EQ(ep->payload["epoch"], 1);
  EXPECT_DOUBLE_EQ(ep->payload["duration"].get<double>(), 24.0);
  EXPECT_EQ(s->manifest_epoch("video"), 1u);
}

TEST(Session, BrushFilterSplicesAndSignalsFirst) {
  auto s = brush_session();
  s->drain();
  s->set_signal("brush", Value::array({10, 20}), 5);
  auto out = s->drain();
  const BusMessage* brush = find(out, "signal_update", "brush");
  const BusMessage* ep = find(out, "manifest_epoch");
  ASSERT_NE(brush, nullptr);
  ASSERT_NE(ep, nullptr);
  EXPECT_LT(index_of(out, brush), index_of(out, ep));
  EXPECT_EQ(ep->payload["epoch"], 2);
  EXPECT_EQ(ep->payload["url"], "/players/video/manifest.m3u8?epoch=2");
  EXPECT_EQ(s->manifest("video"), read_file(kFixtures / "golden/fig7.m3u8"));
  EXPECT_EQ(s->manifest("video", 2), s->manifest("video", 2));
  EXPECT_THROW(s->manifest("video", 1), StaleEpoch);
  EXPECT_THROW(s->manifest("nobody"), UnknownPlayer);
  // The duration read proxy follows the new playlist.
  EXPECT_EQ(s->runtime().value("@video.duration"), 10.0);
}

TEST(Session, DiscreteSeekReportsIntentThenSeek) {
  auto s = load_session(kFixtures / "specs/fig2_sync.json");
  s->drain();
  s->inject_event(pointer("pointerdown", "seekSurface", 400), 10);
  auto out = s->drain();
  const BusMessage* intent = find(out, "signal_update", "@video.intent_time");
  const BusMessage* seek = find(out, "seek");
  ASSERT_NE(intent, nullptr);
  ASSERT_NE(seek, nullptr);
  EXPECT_LT(index_of(out, intent), index_of(out, seek));
  EXPECT_EQ(intent->payload["value"], 60.0);
  EXPECT_EQ(seek->payload["time"], 60.0);
  EXPECT_EQ(seek->payload["mode"], "exact");
  EXPECT_EQ(find(out, "signal_update", "@video.current_time"), nullptr);
  EXPECT_EQ(find(out, "signal_update", "intentX")->payload["value"], 400.0);

  auto epoch = seek->payload["epoch"].get<std::uint64_t>();
  s->handle(BusMessage::parse(R"({"type": "presented", "player": "video", "time": 60, "epoch": )" + std::to_string(epoch) + "}"), 90);
  auto after = s->drain();
  EXPECT_EQ(find(after, "seek"), nullptr);  // bridge updates never echo
  ASSERT_NE(find(after, "signal_update", "@video.current_time"), nullptr);
  EXPECT_EQ(find(after, "signal_update", "frameLabel")->payload["value"], "frame 1800");
  EXPECT_EQ(s->runtime().value("presentedX"), 400.0);
}

TEST(Session, StalePresentationIsIgnored) {
  auto s = load_session(kFixtures / "specs/fig2_sync.json");
  s->inject_event(pointer("pointerdown", "seekSurface", 100), 10);
  s->inject_event(pointer("pointerdown", "seekSurface", 200), 20);
  auto out = s->drain();
  std::vector<std::uint64_t> epochs;
  for (const auto& m : out)
    if (m.type == "seek") epochs.push_back(m.payload["epoch"].get<std::uint64_t>());
  ASSERT_EQ(epochs.size(), 2u);
  s->on_presented("video", 15.0, epochs[0], 30);
  EXPECT_TRUE(s->drain().empty());
  EXPECT_EQ(s->runtime().value("@video.current_time"), 0.0);
  s->on_presented("video", 30.0, epochs[1], 40);
  EXPECT_EQ(s->runtime().value("@video.current_time"), 30.0);
}

TEST(Session, ScrubSnapsThenSettlesAfterQuietPeriod) {
  Json doc = parse_json_text(read_file(kFixtures / "specs/fig2_sync.json"));
  doc["players"][0]["keyframes"] = "../media/tos_keyframes.json";
  SessionOptions o;
  o.base_dir = kFixtures / "specs";
  auto s = std::make_unique<Session>(parse_spec(doc.dump()), o);
  s->inject_event(pointer("pointerdown", "seekSurface", 0), 0);
  s->inject_event(pointer("pointermove", "window", 100), 16);
  s->inject_event(pointer("pointermove", "window", 200), 32);
  auto scrub = s->drain();
  std::vector<std::string> modes;
  for (const auto& m : scrub)
    if (m.type == "seek") modes.push_back(m.payload["mode"]);
  EXPECT_EQ(modes, (std::vector<std::string>{"exact", "keyframe", "keyframe"}));
  s->tick(100);
  EXPECT_TRUE(s->drain().empty());
  s->tick(182);
  auto out = s->drain();
  const BusMessage* seek = find(out, "seek");
  ASSERT_NE(seek, nullptr);
  EXPECT_EQ(seek->payload["time"], 30.0);
  EXPECT_EQ(seek->payload["mode"], "exact");
  EXPECT_EQ(seek->payload["reason"], "settle after inactivity");
  s->tick(1000);
  EXPECT_TRUE(s->drain().empty());
}

TEST(Session, SettleIsSkippedWhenIntentAlreadyRequested) {
  auto s = load_session(kFixtures / "specs/fig2_sync.json");
  s->inject_event(pointer("pointerdown", "seekSurface", 0), 0);
  s->inject_event(pointer("pointermove", "window", 200), 16);
  s->drain();
  s->tick(500);
  auto out = s->drain();
  EXPECT_EQ(find(out, "seek"), nullptr);
}

TEST(Session, HandleRejectsServerOnlyTypes) {
  auto s = load_session(kFixtures / "specs/fig2_sync.json");
  EXPECT_THROW(s->handle(bus_message("seek", "video", {{"time", 1}, {"epoch", 1u}, {"mode", "exact"}}), 0), SchemaError);
  EXPECT_THROW(s->handle(bus_message("ready", std::nullopt, Value::object()), 0), SchemaError);
  EXPECT_THROW(s->handle(bus_message("ready", "video", nullptr), 0), SchemaError);
  EXPECT_THROW(s->handle(bus_message("ended", "ghost", Value::object()), 0), UnknownPlayer);
  s->handle(bus_message("ready", "video", {{"duration", 40.0}}), 0);
  EXPECT_EQ(s->runtime().value("@video.duration"), 40.0);
  EXPECT_EQ(s->controller("video").duration(), 40.0);
}

TEST(Session, RecompileMovesCursorByPolicy) {
  Json doc = parse_json_text(read_file(kFixtures / "specs/fig8_brush.json"));
  doc["signals"].push_back({{"name", "@video.time"}, {"on", Json::array({{{"events", "click"}, {"update", "event.t"}}})}});
  SessionOptions o;
  o.base_dir = kFixtures / "specs";
  o.media_root = kFixtures / "media";
  auto s = std::make_unique<Session>(parse_spec(doc.dump()), o);
  s->drain();
  // Present 7.0 (1 s into e2), then drop e1: the cursor stays on e2.
  s->inject_event({{"type", "click"}, {"t", 7.0}}, 1);
  auto first = s->drain();
  auto seek = find(first, "seek");
  ASSERT_NE(seek, nullptr);
  s->on_presented("video", 7.0, seek->payload["epoch"].get<std::uint64_t>(), 2);
  s->set_signal("brush", Value::array({15, 100}), 3);
  auto out = s->drain();
  const BusMessage* ep = find(out, "manifest_epoch");
  const BusMessage* move = find(out, "seek");
  ASSERT_NE(ep, nullptr);
  ASSERT_NE(move, nullptr);
  EXPECT_LT(index_of(out, ep), index_of(out, move));
  EXPECT_EQ(move->payload["time"], 1.0);
  EXPECT_EQ(move->payload["mode"], "exact");
}
