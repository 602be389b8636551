#include <gtest/gtest.h>

#include <cmath>

#include "../oracles/gen.hpp"
#include "vidflow/dataflow.hpp"

using namespace vidflow;

namespace {

std::string fixture(const std::string& rel) { return read_file(std::string(VIDFLOW_FIXTURES) + "/" + rel); }

Value eval_text(const std::string& text, const EvalEnv& env = {}) { return eval_expr(parse_expr(text), env); }

}  // namespace

// --- grammar ---------------------------------------------------------------

TEST(ParseSpec, MinimalDocumentHasOneStaticPlayer) {
  Spec s = parse_spec(R"({"players": [{"name": "p", "source": "tos.mp4"}]})");
  ASSERT_EQ(s.players.size(), 1u);
  EXPECT_EQ(s.players[0].name, "p");
  ASSERT_TRUE(std::holds_alternative<StaticSource>(s.players[0].source));
  EXPECT_EQ(std::get<StaticSource>(s.players[0].source).uri, "tos.mp4");
  EXPECT_EQ(s.players[0].cursor, CursorPolicy{});
}

TEST(ParseSpec, BrushDocumentHasOneFilterTransform) {
  Spec s = parse_spec(fixture("specs/fig8_brush.json"));
  const PlaylistSpec* pl = s.players.at(0).playlist();
  ASSERT_NE(pl, nullptr);
  ASSERT_EQ(pl->transforms.size(), 1u);
  EXPECT_TRUE(std::holds_alternative<transform::Filter>(pl->transforms[0]));
}

TEST(ParseSpec, WriteToDurationIsRejected) {
  EXPECT_THROW(parse_spec(R"({"players": [{"name": "p", "source": "a.mp4"}],
                              "signals": [{"name": "@p.duration", "on": [{"events": "click", "update": "3"}]}]})"),
               SchemaError);
}

TEST(ParseSpec, MalformedDocumentIsSyntaxError) {
  EXPECT_THROW(parse_spec("{\"players\": ["), SyntaxError);
}

TEST(ParseSpec, UnknownFieldIsSchemaError) {
  EXPECT_THROW(parse_spec(R"({"players": [{"name": "p", "source": "a.mp4", "colour": 1}]})"), SchemaError);
}

TEST(ParseSpec, DanglingPlayerReferenceIsReferenceError) {
  EXPECT_THROW(parse_spec(R"({"players": [{"name": "p", "source": "a.mp4"}],
                              "signals": [{"name": "x", "update": "@q.time"}]})"),
               ReferenceError);
}

TEST(ParseSpec, SourceAndPlaylistAreExclusive) {
  EXPECT_THROW(parse_spec(R"({"players": [{"name": "p"}]})"), SchemaError);
  EXPECT_THROW(parse_spec(R"({"players": [{"name": "p", "source": "a", "playlist": {"values": []}}]})"), SchemaError);
}

TEST(ValidateSpec, FixturesAreClean) {
  for (const char* f : {"specs/fig2_sync.json", "specs/fig8_brush.json", "specs/fig3_annotate.json"})
    EXPECT_TRUE(validate_spec(parse_spec_document(parse_json_text(fixture(f)))).empty()) << f;
}

TEST(ValidateSpec, DuplicatePlayerNamesReportSecondPath) {
  Spec s = parse_spec_document(parse_json_text(
      R"({"players": [{"name": "p", "source": "a.mp4"}, {"name": "p", "source": "b.mp4"}]})"));
  auto d = validate_spec(s);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].severity, Severity::Error);
  EXPECT_EQ(d[0].path, "players[1].name");
}

TEST(ValidateSpec, OnRemoveCannotReadNewSegment) {
  Spec s = parse_spec_document(parse_json_text(R"({"players": [{"name": "p",
      "playlist": {"values": [{"manifest": "a.m3u8"}]},
      "cursor": {"onRemove": "@new_seg.start"}}]})"));
  auto d = validate_spec(s);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].path, "players[0].cursor.onRemove");
}

TEST(ValidateSpec, LayoutMustBePositive) {
  Spec s = parse_spec_document(
      parse_json_text(R"({"players": [{"name": "p", "source": "a", "layout": {"width": 0, "height": 10}}]})"));
  EXPECT_FALSE(validate_spec(s).empty());
}

TEST(ValidateSpec, IsPureAndPathsExist) {
  Json doc = parse_json_text(R"({"signals": [{"name": "a", "update": "@zz.time"}, {"name": "a", "value": 1}],
      "players": [{"name": "p", "source": "a"}, {"name": "", "source": "b"}]})");
  Spec s = parse_spec_document(doc);
  auto d1 = validate_spec(s), d2 = validate_spec(s);
  EXPECT_EQ(d1, d2);
  ASSERT_GE(d1.size(), 3u);
  for (const auto& d : d1) {
    // Diagnostic paths are dotted/indexed JSON pointers into the document.
    std::string ptr;
    for (char c : d.path) ptr += c == '.' || c == '[' ? '/' : c == ']' ? '\0' : c;
    ptr.erase(std::remove(ptr.begin(), ptr.end(), '\0'), ptr.end());
    EXPECT_TRUE(doc.contains(Json::json_pointer("/" + ptr))) << d.path;
  }
}

TEST(SerializeSpec, MinimalRoundTrip) {
  Spec s = parse_spec(R"({"players": [{"name": "p", "source": "tos.mp4"}]})");
  EXPECT_EQ(parse_spec(serialize_spec(s)), s);
}

TEST(SerializeSpec, FixturesRoundTrip) {
  for (const char* f : {"specs/fig2_sync.json", "specs/fig8_brush.json", "specs/fig3_annotate.json"}) {
    Spec s = parse_spec(fixture(f));
    EXPECT_EQ(parse_spec(serialize_spec(s)), s) << f;
    EXPECT_EQ(serialize_spec(parse_spec(serialize_spec(s))), serialize_spec(s)) << f;
  }
}

TEST(SerializeSpec, GeneratedSpecsWithAllTransformsRoundTrip) {
  oracle::Gen g(11);
  const std::vector<std::string> preds{"datum.speed > 10", "datum.kind == 'a' && datum.speed < 50", "true"};
  for (int i = 0; i < 200; ++i) {
    Json pl = {{"values", Json::array({{{"manifest", "a.m3u8"}, {"speed", g.integer(0, 60)}}})},
               {"transform", Json::array()}};
    int n = static_cast<int>(g.integer(0, 6));
    for (int k = 0; k < n; ++k) {
      switch (g.integer(0, 4)) {
        case 0: pl["transform"].push_back({{"type", "filter"}, {"expr", g.pick(preds)}}); break;
        case 1:
          pl["transform"].push_back({{"type", "sort"}, {"key", "datum.speed"}, {"order", g.coin() ? "ascending" : "descending"}});
          break;
        case 2: pl["transform"].push_back({{"type", "clip"}, {"start", g.integer(0, 3)}, {"end", "datum.speed + 4"}}); break;
        case 3: pl["transform"].push_back({{"type", "erode"}, {"radius", g.grid(0, 6, 0.5)}}); break;
        default: pl["transform"].push_back({{"type", "dilate"}, {"radius", g.grid(0, 6, 0.5)}}); break;
      }
    }
    Json doc = {{"players", Json::array({{{"name", "p" + std::to_string(i)}, {"playlist", pl}}})}};
    if (g.coin())
      doc["players"][0]["cursor"] = {{"onKeep", "@new_seg.start"}, {"onRemove", "lag(@prev_seg, 2).start + 1"}};
    Spec s = parse_spec(doc.dump());
    Spec back = parse_spec(serialize_spec(s));
    ASSERT_EQ(back, s) << doc.dump();
    EXPECT_TRUE(equal(parse_expr(back.players[0].cursor.on_keep), parse_expr(s.players[0].cursor.on_keep)));
    EXPECT_TRUE(equal(parse_expr(back.players[0].cursor.on_remove), parse_expr(s.players[0].cursor.on_remove)));
  }
}

TEST(EventSelectors, BetweenSelectorParses) {
  auto sels = parse_event_selectors("[@hist:pointerdown, window:pointerup] > window:pointermove, @s:click");
  ASSERT_EQ(sels.size(), 2u);
  EXPECT_EQ(sels[0].stream.type, "pointermove");
  ASSERT_TRUE(sels[0].between_start);
  EXPECT_EQ(sels[0].between_start->source, "@hist");
  EXPECT_EQ(sels[1].stream.source, "@s");
  EXPECT_EQ(sels[1].stream.type, "click");
}

// --- expressions -------------------------------------------------------------

TEST(Expr, ClampUpper) { EXPECT_EQ(eval_text("max(0, min(100, 250))"), 100); }

TEST(Expr, LinearInversion) {
  Scale s;
  s.domain = {0, 734};
  s.range_lo = 0;
  s.range_hi = 400;
  EvalEnv env;
  env.scale = [&](std::string_view n) -> const Scale* { return n == "x" ? &s : nullptr; };
  EXPECT_DOUBLE_EQ(eval_text("@x.invert(200)", env).get<double>(), 367.0);
  EXPECT_DOUBLE_EQ(eval_text("scale('x', 367)", env).get<double>(), 200.0);
}

TEST(Expr, FrameIndex) {
  EXPECT_EQ(frame_index(1.5, 24), 36);
  EXPECT_EQ(frame_index(0, 24), 0);
  EXPECT_EQ(frame_index(47.0, 30), 1410);
}

TEST(Expr, Arithmetic) {
  EXPECT_EQ(eval_text("1 + 2 * 3 - 4 / 2"), 5.0);
  EXPECT_EQ(eval_text("-(3) + 1"), -2.0);
  EXPECT_EQ(eval_text("clamp(-3, 0, 10)"), 0.0);
  EXPECT_EQ(eval_text("2 > 1 ? 'yes' : 'no'"), "yes");
  EXPECT_EQ(eval_text("'a' + 1"), "a1");
  EXPECT_EQ(eval_text("format(0.913, '.2f')"), "0.91");
  EXPECT_EQ(eval_text("[1, 2, 3][1]"), 2);
  EXPECT_EQ(eval_text("inrange(5, [10, 0])"), true);
}

TEST(Expr, EventAndDatumFields) {
  Value ev{{"x", 12.5}}, d{{"t", 3}};
  EvalEnv env;
  env.event = &ev;
  env.datum = &d;
  EXPECT_EQ(eval_text("event.x * 2 + datum.t", env), 28.0);
}

TEST(Expr, EvalErrorCarriesPath) {
  try {
    eval_text("1 + min('a', 2)");
    FAIL();
  } catch (const EvalError& e) {
    EXPECT_EQ(e.path(), "root.rhs.args[0]");
  }
}

TEST(Expr, UnknownFunctionIsParseError) { EXPECT_THROW(parse_expr("wiggle(1)"), ParseError); }

TEST(Expr, PrintParseIsIdentity) {
  for (const char* t : {"@seekSurface.invert(max(0, min(width, event.x)))", "a ? -b : (c + d) * e / 2",
                        "lead(@prev_seg, 1).valid ? lead(@prev_seg, 1).start : lag(@prev_seg, 1).start",
                        "datum.class_name + ' ' + format(datum.confidence, '.2f')", "!(a && b) || c != 'x'"}) {
    ExprPtr e = parse_expr(t);
    EXPECT_TRUE(equal(e, parse_expr(to_string(e)))) << t;
  }
}
